//! Linear-kernel CKA and the centroid-based class separability score.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, euclidean, Matrix};
use crate::space::Label;

/// Self-HSIC values below this make CKA undefined.
pub const DEGENERATE_HSIC: f64 = 1e-15;

/// Symmetric `N×N` kernel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix(Matrix);

impl GramMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::SizeMismatch(m.rows(), m.cols()));
        }
        if m.rows() < 2 {
            return Err(Error::TooFewRows);
        }
        let n = m.rows();
        for i in 0..n {
            for j in (i + 1)..n {
                if (m.get(i, j) - m.get(j, i)).abs() > 1e-10 {
                    return Err(Error::InvalidParameter(format!("gram matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self(m))
    }

    pub fn size(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

/// `S = R Rᵀ`.
pub fn linear_gram(r: &Matrix) -> Result<GramMatrix> {
    let n = r.rows();
    if n < 2 {
        return Err(Error::TooFewRows);
    }
    let upper: Vec<Vec<f64>> =
        (0..n).into_par_iter().map(|i| (i..n).map(|j| dot(r.row(i), r.row(j))).collect()).collect();
    let mut data = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + off;
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    Ok(GramMatrix(Matrix::from_parts_unchecked(n, n, data)))
}

/// `tr(S H S' H) / (N - 1)²` with `H = I - 11ᵀ/N`.
///
/// `H S' H` is formed by double-centering `S'` with its row, column and
/// grand means, so `H` itself is never built.
pub fn hsic(s: &GramMatrix, s2: &GramMatrix) -> Result<f64> {
    let n = s.size();
    if s2.size() != n {
        return Err(Error::SizeMismatch(n, s2.size()));
    }
    let (a, b) = (s.matrix(), s2.matrix());
    let nf = n as f64;
    let row_means: Vec<f64> = b.iter_rows().map(|r| r.iter().sum::<f64>() / nf).collect();
    let mut col_means = vec![0.0; n];
    for r in b.iter_rows() {
        for (c, v) in col_means.iter_mut().zip(r) {
            *c += v;
        }
    }
    col_means.iter_mut().for_each(|c| *c /= nf);
    let grand = row_means.iter().sum::<f64>() / nf;

    // tr(A · C) = Σ_ij A_ij C_ji where C = H S' H.
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            for (j, rm) in row_means.iter().enumerate() {
                let centered = b.get(j, i) - rm - col_means[i] + grand;
                acc += a.get(i, j) * centered;
            }
            acc
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    Ok(total / ((nf - 1.0) * (nf - 1.0)))
}

/// Linear CKA between two representations of the same samples, row-aligned.
pub fn cka(r: &Matrix, r2: &Matrix) -> Result<f64> {
    if r.rows() != r2.rows() {
        return Err(Error::SizeMismatch(r.rows(), r2.rows()));
    }
    let s = linear_gram(r)?;
    let s2 = linear_gram(r2)?;
    let ss = hsic(&s, &s)?;
    let tt = hsic(&s2, &s2)?;
    if ss < DEGENERATE_HSIC || tt < DEGENERATE_HSIC {
        return Err(Error::DegenerateSpace);
    }
    let st = hsic(&s, &s2)?;
    Ok((st / (ss * tt).sqrt()).clamp(0.0, 1.0))
}

/// Reorders `b`'s rows to follow `a_ids`, keeping only ids present in both.
/// Returns the shared ids with both matrices restricted to them.
pub fn align_by_id(a_ids: &[String], a: &Matrix, b_ids: &[String], b: &Matrix) -> (Vec<String>, Matrix, Matrix) {
    let b_index: HashMap<&str, usize> = b_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut ids = Vec::new();
    let mut rows_a = Vec::new();
    let mut rows_b = Vec::new();
    for (i, id) in a_ids.iter().enumerate() {
        if let Some(&j) = b_index.get(id.as_str()) {
            ids.push(id.clone());
            rows_a.push(i);
            rows_b.push(j);
        }
    }
    (ids, a.select_rows(&rows_a), b.select_rows(&rows_b))
}

struct ClassStats {
    centroid: Vec<f64>,
    intra: f64,
}

fn class_stats(x: &Matrix, labels: &[Label]) -> Result<BTreeMap<Label, ClassStats>> {
    if labels.len() != x.rows() {
        return Err(Error::DimensionMismatch { expected: x.rows(), actual: labels.len() });
    }
    let mut members: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        members.entry(l).or_default().push(i);
    }
    Ok(members
        .into_iter()
        .map(|(label, rows)| {
            let mut centroid = vec![0.0; x.cols()];
            for &i in &rows {
                centroid.iter_mut().zip(x.row(i)).for_each(|(c, v)| *c += v);
            }
            let n = rows.len() as f64;
            centroid.iter_mut().for_each(|c| *c /= n);
            let intra = rows.iter().map(|&i| euclidean(x.row(i), &centroid)).sum::<f64>() / n;
            (label, ClassStats { centroid, intra })
        })
        .collect())
}

fn pair_score(a: &ClassStats, b: &ClassStats) -> Result<f64> {
    let inter = euclidean(&a.centroid, &b.centroid);
    let spread = 0.5 * (a.intra + b.intra);
    if spread == 0.0 {
        return if inter == 0.0 { Err(Error::ZeroOverZero) } else { Ok(f64::INFINITY) };
    }
    Ok(inter / spread)
}

/// Distance between the two class centroids over the mean of the two
/// classes' average distance to their own centroid.
///
/// Returns `f64::INFINITY` when both classes have zero spread but distinct
/// centroids.
pub fn separability_pair(x: &Matrix, labels: &[Label], c1: Label, c2: Label) -> Result<f64> {
    let stats = class_stats(x, labels)?;
    let a = stats.get(&c1).ok_or(Error::EmptyClass(c1))?;
    let b = stats.get(&c2).ok_or(Error::EmptyClass(c2))?;
    pair_score(a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryMode {
    #[default]
    Mean,
    Min,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilitySummary {
    /// Mean or minimum over the finite pair scores; infinite when every
    /// qualifying pair had zero spread.
    pub value: f64,
    /// Number of finite pairs that went into `value`.
    pub pairs: usize,
    /// Pairs left out because they scored infinity.
    pub infinite_pairs: Vec<(Label, Label)>,
}

/// Aggregates [`separability_pair`] over every unordered class pair accepted
/// by `filter` (all pairs when `None`).
pub fn separability_summary(
    x: &Matrix,
    labels: &[Label],
    mode: SummaryMode,
    filter: Option<&dyn Fn(Label, Label) -> bool>,
) -> Result<SeparabilitySummary> {
    let stats = class_stats(x, labels)?;
    if stats.len() < 2 {
        return Err(Error::InvalidParameter("separability needs at least two classes".into()));
    }
    let classes: Vec<&Label> = stats.keys().collect();
    let mut scores = Vec::new();
    let mut infinite_pairs = Vec::new();
    for (i, &&a) in classes.iter().enumerate() {
        for &&b in &classes[i + 1..] {
            if filter.is_some_and(|f| !f(a, b)) {
                continue;
            }
            let s = pair_score(&stats[&a], &stats[&b])?;
            if s.is_infinite() {
                infinite_pairs.push((a, b));
            } else {
                scores.push(s);
            }
        }
    }
    if scores.is_empty() && infinite_pairs.is_empty() {
        return Err(Error::NoPairs);
    }
    let value = if scores.is_empty() {
        f64::INFINITY
    } else {
        match mode {
            SummaryMode::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
            SummaryMode::Min => scores.iter().copied().fold(f64::INFINITY, f64::min),
        }
    };
    Ok(SeparabilitySummary { value, pairs: scores.len(), infinite_pairs })
}
