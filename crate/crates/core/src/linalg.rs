//! Dense row-major matrices and the few numerical primitives the rest of the
//! crate is built on: cosine similarity, seeded orthogonal matrices and PCA.
//!
//! Everything here is a pure function of its inputs. Randomness only enters
//! through an explicit [`Seed`].

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this are treated as zero.
pub const NORM_EPS: f64 = 1e-12;

/// Row-major matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, actual: data.len() });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equally long rows. An empty slice gives a 0×0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch { expected: cols, actual: r.len() });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch { expected: self.cols, actual: other.rows });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * alpha).collect() }
    }

    /// Adds `offset` to every row.
    pub fn add_row_vector(&self, offset: &[f64]) -> Result<Matrix> {
        if offset.len() != self.cols {
            return Err(Error::DimensionMismatch { expected: self.cols, actual: offset.len() });
        }
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.cols.max(1)) {
            for (v, o) in row.iter_mut().zip(offset) {
                *v += o;
            }
        }
        Ok(out)
    }

    /// Copies the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: indices.len(), cols: self.cols, data }
    }

    /// Horizontally concatenates `self` and `other`.
    pub fn hstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::DimensionMismatch { expected: self.rows, actual: other.rows });
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Matrix { rows: self.rows, cols, data })
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for row in self.iter_rows() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.rows.max(1) as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    /// Largest absolute entrywise difference. Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub(crate) fn from_parts_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

/// Explicit seed for every random draw in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

impl Seed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Derives an independent child seed for a named sub-stream.
    pub fn derive(self, tag: u64) -> Seed {
        Seed(splitmix64(self.0 ^ splitmix64(tag.wrapping_add(0x9E37_79B9_7F4A_7C15))))
    }

    /// Derives a child seed from a string key (task id, sample id, ...).
    pub fn derive_str(self, key: &str) -> Seed {
        self.derive(fnv1a(key.as_bytes()))
    }
}

impl From<u64> for Seed {
    fn from(value: u64) -> Self {
        Seed(value)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Fisher-Yates shuffle drawing `u64` indices so the permutation does not
/// depend on the platform's pointer width.
pub fn shuffle<T, R: Rng>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i as u64) as usize;
        items.swap(i, j);
    }
}

pub fn gaussian_vec<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

pub fn euclidean(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), actual: v.len() });
    }
    if u.is_empty() {
        return Err(Error::InvalidParameter("cosine of empty vectors".into()));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu < NORM_EPS || nv < NORM_EPS {
        return Err(Error::ZeroNormVector);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Seeded `d×d` orthogonal matrix: a Gaussian matrix orthonormalized by
/// modified Gram-Schmidt with one re-orthogonalization pass.
pub fn random_orthogonal(d: usize, seed: Seed) -> Result<Matrix> {
    if d == 0 {
        return Err(Error::InvalidParameter("orthogonal matrix dimension must be >= 1".into()));
    }
    let mut rng = seed.rng();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v = gaussian_vec(d, &mut rng);
        for _ in 0..2 {
            for b in &basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = norm(&v);
        // A draw (numerically) inside the span so far is discarded and redrawn.
        if n < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n);
        basis.push(v);
    }
    Matrix::from_rows(&basis)
}

/// Determinant via LU; used to check orthogonal matrices.
pub fn determinant(m: &Matrix) -> Result<f64> {
    if m.rows != m.cols {
        return Err(Error::DimensionMismatch { expected: m.rows, actual: m.cols });
    }
    Ok(m.to_nalgebra().determinant())
}

/// Projects `x` onto its top-`k` principal axes.
///
/// The covariance of the column-centered data is eigendecomposed exactly;
/// components are ordered by decreasing eigenvalue and each one is signed so
/// that its largest-magnitude loading is positive.
pub fn pca_project(x: &Matrix, k: usize) -> Result<Matrix> {
    Ok(Pca::fit(x, k)?.transform_fitted())
}

/// Fitted principal axes, kept around so callers can inspect eigenvalues.
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `k×d`, one component per row.
    pub components: Matrix,
    pub eigenvalues: Vec<f64>,
    centered: Matrix,
}

impl Pca {
    pub fn fit(x: &Matrix, k: usize) -> Result<Self> {
        if x.rows < 2 {
            return Err(Error::TooFewRows);
        }
        if k == 0 || k > x.cols {
            return Err(Error::InvalidParameter(format!("k = {k} must be in 1..={}", x.cols)));
        }
        let mean = x.column_means();
        let centered = x.add_row_vector(&mean.iter().map(|m| -m).collect::<Vec<_>>())?;
        if centered.data.iter().all(|v| *v == 0.0) {
            return Err(Error::DegenerateInput("all rows are identical".into()));
        }
        let c = centered.to_nalgebra();
        let cov = (c.transpose() * &c) / (x.rows as f64 - 1.0);
        let eig = SymmetricEigen::new(cov);

        let mut order: Vec<usize> = (0..x.cols).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let mut components = Vec::with_capacity(k);
        let mut eigenvalues = Vec::with_capacity(k);
        for &idx in order.iter().take(k) {
            let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
            let lead = v
                .iter()
                .copied()
                .fold(0.0_f64, |best, x| if x.abs() > best.abs() + 1e-12 { x } else { best });
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            components.push(v);
            eigenvalues.push(eig.eigenvalues[idx]);
        }
        Ok(Self { mean, components: Matrix::from_rows(&components)?, eigenvalues, centered })
    }

    fn transform_fitted(&self) -> Matrix {
        project_centered(&self.centered, &self.components)
    }

    /// Projects new rows using the fitted mean and axes.
    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        let neg: Vec<f64> = self.mean.iter().map(|m| -m).collect();
        Ok(project_centered(&x.add_row_vector(&neg)?, &self.components))
    }
}

fn project_centered(centered: &Matrix, components: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(centered.rows, components.rows);
    for i in 0..centered.rows {
        for j in 0..components.rows {
            out.data[i * components.rows + j] = dot(centered.row(i), components.row(j));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn max_offdiag_qqt(q: &Matrix) -> f64 {
        let qqt = q.matmul(&q.transpose()).unwrap();
        qqt.max_abs_diff(&Matrix::identity(q.rows()))
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[2.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNormVector)));
        assert!(matches!(cosine_similarity(&[1e-13, 0.0], &[1.0, 0.0]), Err(Error::ZeroNormVector)));
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn matrix_rejects_nan() {
        assert!(matches!(Matrix::new(1, 2, vec![1.0, f64::NAN]), Err(Error::NonFinite { index: 1 })));
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn orthogonal_one_dimensional() {
        for s in 0..5 {
            let q = random_orthogonal(1, Seed(s)).unwrap();
            assert_eq!(q.get(0, 0).abs(), 1.0);
        }
    }

    #[test]
    fn orthogonal_is_orthogonal_and_deterministic() {
        let q = random_orthogonal(8, Seed(7)).unwrap();
        assert!(max_offdiag_qqt(&q) <= 1e-10);
        assert_eq!(q, random_orthogonal(8, Seed(7)).unwrap());
        assert_ne!(q, random_orthogonal(8, Seed(8)).unwrap());
        assert!((determinant(&q).unwrap().abs() - 1.0).abs() < 1e-8);
        assert!(random_orthogonal(0, Seed(0)).is_err());
    }

    #[test]
    fn pca_rank_one_example() {
        let x = Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]).unwrap();
        let p = pca_project(&x, 1).unwrap();
        let s2 = std::f64::consts::SQRT_2;
        for (got, want) in p.as_slice().iter().zip([-s2, 0.0, s2]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn pca_identical_rows_is_degenerate() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]).unwrap();
        assert!(matches!(pca_project(&x, 1), Err(Error::DegenerateInput(_))));
        let one = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert!(matches!(pca_project(&one, 1), Err(Error::TooFewRows)));
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 2.0]]).unwrap();
        assert!(pca_project(&x, 3).is_err());
    }

    #[test]
    fn pca_eigenvalues_descend_and_signs_fixed() {
        let mut rng = Seed(3).rng();
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| {
                let g = gaussian_vec(4, &mut rng);
                vec![3.0 * g[0], 2.0 * g[1], g[2], 0.5 * g[3]]
            })
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let pca = Pca::fit(&x, 4).unwrap();
        assert!(pca.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        for c in pca.components.iter_rows() {
            let lead = c.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap();
            assert!(lead > 0.0);
        }
    }

    fn arb_matrix(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> impl Strategy<Value = Matrix> {
        (rows, cols).prop_flat_map(|(r, c)| {
            prop::collection::vec(-10.0..10.0f64, r * c).prop_map(move |d| Matrix::new(r, c, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn cosine_scale_invariant(u in prop::collection::vec(-5.0..5.0f64, 6), v in prop::collection::vec(-5.0..5.0f64, 6), alpha in 1e-3..1e3f64) {
            prop_assume!(norm(&u) > 1e-3 && norm(&v) > 1e-3);
            let scaled: Vec<f64> = v.iter().map(|x| x * alpha).collect();
            let a = cosine_similarity(&u, &v).unwrap();
            let b = cosine_similarity(&u, &scaled).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn cosine_rotation_invariant(u in prop::collection::vec(-5.0..5.0f64, 5), v in prop::collection::vec(-5.0..5.0f64, 5), seed in any::<u64>()) {
            prop_assume!(norm(&u) > 1e-3 && norm(&v) > 1e-3);
            let q = random_orthogonal(5, Seed(seed)).unwrap();
            let m = Matrix::from_rows(&[u.clone(), v.clone()]).unwrap().matmul(&q).unwrap();
            let a = cosine_similarity(&u, &v).unwrap();
            let b = cosine_similarity(m.row(0), m.row(1)).unwrap();
            prop_assert!((a - b).abs() <= 1e-9);
        }

        #[test]
        fn orthogonal_det_is_unit(d in 1usize..12, seed in any::<u64>()) {
            let q = random_orthogonal(d, Seed(seed)).unwrap();
            prop_assert!(max_offdiag_qqt(&q) <= 1e-10);
            prop_assert!((determinant(&q).unwrap().abs() - 1.0).abs() <= 1e-8);
        }

        #[test]
        fn pca_translation_invariant(x in arb_matrix(8..14, 2..5), shift in prop::collection::vec(-100.0..100.0f64, 5)) {
            let k = x.cols();
            let Ok(base) = pca_project(&x, k) else { return Ok(()); };
            // Near-degenerate eigenvalues make the axes ill-defined; skip those draws.
            let pca = Pca::fit(&x, k).unwrap();
            let gaps_ok = pca.eigenvalues.windows(2).all(|w| w[0] - w[1] > 1e-3)
                && pca.eigenvalues.iter().all(|e| *e > 1e-3);
            prop_assume!(gaps_ok);
            let moved = pca_project(&x.add_row_vector(&shift[..k]).unwrap(), k).unwrap();
            prop_assert!(base.max_abs_diff(&moved) <= 1e-9);
        }

        #[test]
        fn full_pca_preserves_distances(x in arb_matrix(3..10, 2..5)) {
            let Ok(p) = pca_project(&x, x.cols()) else { return Ok(()); };
            for i in 0..x.rows() {
                for j in 0..x.rows() {
                    let a = euclidean(x.row(i), x.row(j));
                    let b = euclidean(p.row(i), p.row(j));
                    prop_assert!((a - b).abs() <= 1e-9);
                }
            }
        }
    }
}
