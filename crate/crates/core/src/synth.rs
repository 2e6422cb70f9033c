//! Synthetic ground-truth spaces.
//!
//! A base space of Gaussian class clusters stands in for an end-to-end
//! model. Task-specific spaces are derived from it by a rotation and
//! isotropic scaling (which relative coordinates cannot see), optionally
//! perturbed by translation, a per-task bias ("footprint") and noise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gaussian_vec, norm, random_orthogonal, Matrix, Seed};
use crate::space::{EmbeddingSpace, Label};

/// Rows with norm below this are redrawn.
const MIN_ROW_NORM: f64 = 1e-6;

/// Parameters of the map from the base space into one task's space:
/// `x ↦ (x·Q)·scale + translation + footprint + ε`, `ε ~ N(0, noise²·I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTransformSpec {
    pub task_id: String,
    pub orthogonal_seed: Seed,
    pub scale: f64,
    pub noise: f64,
    /// Noise is drawn per sample id from this seed, so a sample gets the same
    /// embedding whichever subset it is derived with.
    pub noise_seed: Seed,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub footprint: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation: Option<Vec<f64>>,
}

impl TaskTransformSpec {
    /// A pure rotation drawn from `seed`.
    pub fn rotation(task_id: impl Into<String>, seed: Seed) -> Self {
        Self {
            task_id: task_id.into(),
            orthogonal_seed: seed,
            scale: 1.0,
            noise: 0.0,
            noise_seed: seed.derive(1),
            footprint: None,
            translation: None,
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_footprint(mut self, b: Vec<f64>) -> Self {
        self.footprint = Some(b);
        self
    }

    pub fn with_translation(mut self, t: Vec<f64>) -> Self {
        self.translation = Some(t);
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("scale {} must be > 0", self.scale)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise {} must be >= 0", self.noise)));
        }
        for v in [&self.footprint, &self.translation].into_iter().flatten() {
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, actual: v.len() });
            }
        }
        Ok(())
    }
}

/// Zero-padded id of the `i`-th generated sample.
pub fn sample_id(i: usize) -> String {
    format!("s{i:06}")
}

/// `num_classes` clusters with centroids uniform on the unit sphere and
/// isotropic Gaussian spread, `per_class` samples each, ids in class order.
pub fn generate_base_space(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    cluster_spread: f64,
    seed: Seed,
) -> Result<EmbeddingSpace> {
    if num_classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::InvalidParameter("class count, samples per class and dimension must be >= 1".into()));
    }
    if !(cluster_spread > 0.0 && cluster_spread.is_finite()) {
        return Err(Error::InvalidParameter("cluster spread must be > 0".into()));
    }
    let mut rng = seed.rng();
    let centroids: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| loop {
            let v = gaussian_vec(dim, &mut rng);
            let n = norm(&v);
            if n > MIN_ROW_NORM {
                break v.into_iter().map(|x| x / n).collect();
            }
        })
        .collect();
    let n = num_classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (c, centroid) in centroids.iter().enumerate() {
        for _ in 0..per_class {
            let row = loop {
                let g = gaussian_vec(dim, &mut rng);
                let row: Vec<f64> = centroid.iter().zip(&g).map(|(m, e)| m + cluster_spread * e).collect();
                if norm(&row) >= MIN_ROW_NORM {
                    break row;
                }
            };
            data.extend(row);
            labels.push(c as Label);
        }
    }
    EmbeddingSpace::new(Matrix::new(n, dim, data)?, (0..n).map(sample_id).collect(), labels, "base")
}

/// Embeds `sample_ids` (a subset of `base`, in the given order) with the
/// task model described by `spec`.
pub fn derive_task_space(base: &EmbeddingSpace, sample_ids: &[String], spec: &TaskTransformSpec) -> Result<EmbeddingSpace> {
    let d = base.dim();
    spec.validate(d)?;
    let subset = base.subset(sample_ids)?;
    let q = random_orthogonal(d, spec.orthogonal_seed)?;
    let mut x = subset.embeddings.matmul(&q)?.scale(spec.scale);
    let mut offset = vec![0.0; d];
    for v in [&spec.translation, &spec.footprint].into_iter().flatten() {
        offset.iter_mut().zip(v).for_each(|(o, b)| *o += b);
    }
    if offset.iter().any(|o| *o != 0.0) {
        x = x.add_row_vector(&offset)?;
    }
    if spec.noise > 0.0 {
        let mut data = x.into_vec();
        for (row, id) in data.chunks_mut(d).zip(sample_ids) {
            let eps = gaussian_vec(d, &mut spec.noise_seed.derive_str(id).rng());
            row.iter_mut().zip(eps).for_each(|(v, e)| *v += spec.noise * e);
        }
        x = Matrix::new(sample_ids.len(), d, data)?;
    }
    EmbeddingSpace::new(x, subset.sample_ids, subset.labels, spec.task_id.clone())
}
