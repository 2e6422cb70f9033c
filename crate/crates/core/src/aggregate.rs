//! Merging several spaces into one.
//!
//! [`rlsa_aggregate`] averages each sample's relative rows over the spaces
//! that contain it. [`naive_mean_aggregate`] does the same on absolute rows,
//! and [`absolute_union`] keeps every absolute row as-is. The two absolute
//! variants are the baselines the relative merge is compared against.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::space::{conflicting_labels, AggregatedSpace, AggregationMode, EmbeddingSpace, Label, RelativeSpace};

struct Source<'a> {
    task_id: &'a str,
    ids: &'a [String],
    labels: &'a [Label],
    rows: &'a Matrix,
}

struct Accum {
    label: Label,
    sum: Vec<f64>,
    sources: Vec<String>,
}

/// Per-sample mean over all sources containing the sample, sorted by id.
fn mean_by_id(sources: &[Source<'_>], dim: usize, mode: AggregationMode) -> AggregatedSpace {
    let mut acc: BTreeMap<&str, Accum> = BTreeMap::new();
    for s in sources {
        for (i, id) in s.ids.iter().enumerate() {
            let entry = acc.entry(id.as_str()).or_insert_with(|| Accum {
                label: s.labels[i],
                sum: vec![0.0; dim],
                sources: Vec::new(),
            });
            for (a, v) in entry.sum.iter_mut().zip(s.rows.row(i)) {
                *a += v;
            }
            entry.sources.push(s.task_id.to_string());
        }
    }
    let mut data = Vec::with_capacity(acc.len() * dim);
    let mut sample_ids = Vec::with_capacity(acc.len());
    let mut labels = Vec::with_capacity(acc.len());
    let mut srcs = Vec::with_capacity(acc.len());
    for (id, a) in acc {
        let k = a.sources.len() as f64;
        data.extend(a.sum.iter().map(|v| v / k));
        sample_ids.push(id.to_string());
        labels.push(a.label);
        srcs.push(a.sources);
    }
    AggregatedSpace {
        representation: Matrix::from_parts_unchecked(sample_ids.len(), dim, data),
        sample_ids,
        labels,
        sources: srcs,
        mode,
        anchor_ids: None,
    }
}

fn check_labels<S: crate::space::Labeled>(spaces: &[S]) -> Result<()> {
    let conflicts = conflicting_labels(spaces);
    if conflicts.is_empty() {
        Ok(())
    } else {
        Err(Error::LabelConflict(conflicts))
    }
}

fn common_dim(dims: impl Iterator<Item = usize>) -> Result<usize> {
    let mut dims = dims;
    let first = dims.next().ok_or_else(|| Error::InvalidParameter("no spaces to aggregate".into()))?;
    for d in dims {
        if d != first {
            return Err(Error::DimensionMismatch { expected: first, actual: d });
        }
    }
    Ok(first)
}

/// Relative latent space aggregation: the mean of a sample's relative
/// representations over the `K` spaces it appears in. Samples seen once keep
/// their row unchanged. Output rows are sorted by sample id.
pub fn rlsa_aggregate(spaces: &[RelativeSpace]) -> Result<AggregatedSpace> {
    let first = spaces.first().ok_or_else(|| Error::InvalidParameter("no spaces to aggregate".into()))?;
    if spaces.iter().any(|s| s.anchor_ids != first.anchor_ids) {
        return Err(Error::AnchorMismatch);
    }
    check_labels(spaces)?;
    let sources: Vec<Source> = spaces
        .iter()
        .map(|s| Source { task_id: &s.task_id, ids: &s.sample_ids, labels: &s.labels, rows: &s.similarities })
        .collect();
    let mut out = mean_by_id(&sources, first.anchor_ids.len(), AggregationMode::Relative);
    out.anchor_ids = Some(first.anchor_ids.clone());
    Ok(out)
}

/// Baseline: the same per-sample mean, taken directly on absolute embeddings.
pub fn naive_mean_aggregate(spaces: &[EmbeddingSpace]) -> Result<AggregatedSpace> {
    let dim = common_dim(spaces.iter().map(EmbeddingSpace::dim))?;
    check_labels(spaces)?;
    let sources: Vec<Source> = spaces
        .iter()
        .map(|s| Source { task_id: &s.task_id, ids: &s.sample_ids, labels: &s.labels, rows: &s.embeddings })
        .collect();
    Ok(mean_by_id(&sources, dim, AggregationMode::NaiveMean))
}

/// Baseline: every (space, sample) row kept as its own row, in input order.
/// A sample present in several spaces appears once per space, tagged with
/// that space's task id.
pub fn absolute_union(spaces: &[EmbeddingSpace]) -> Result<AggregatedSpace> {
    let dim = common_dim(spaces.iter().map(EmbeddingSpace::dim))?;
    let total: usize = spaces.iter().map(EmbeddingSpace::len).sum();
    let mut data = Vec::with_capacity(total * dim);
    let mut sample_ids = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    let mut sources = Vec::with_capacity(total);
    for s in spaces {
        data.extend_from_slice(s.embeddings.as_slice());
        sample_ids.extend(s.sample_ids.iter().cloned());
        labels.extend_from_slice(&s.labels);
        sources.extend(std::iter::repeat_n(vec![s.task_id.clone()], s.len()));
    }
    Ok(AggregatedSpace {
        representation: Matrix::from_parts_unchecked(total, dim, data),
        sample_ids,
        labels,
        sources,
        mode: AggregationMode::AbsoluteUnion,
        anchor_ids: None,
    })
}
