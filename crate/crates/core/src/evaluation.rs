//! Downstream probes for measuring how usable a space is for classification.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{euclidean, gaussian_vec, Matrix, Seed};
use crate::space::{Label, MetricReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    NearestCentroid,
    #[default]
    Logistic,
}

impl ClassifierKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::NearestCentroid => "nearest_centroid",
            ClassifierKind::Logistic => "logistic",
        }
    }
}

/// A fitted probe.
#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierModel {
    NearestCentroid {
        classes: Vec<Label>,
        /// One row per entry of `classes`.
        centroids: Matrix,
    },
    Logistic {
        classes: Vec<Label>,
        /// `classes.len() × input_dim`.
        weights: Matrix,
        bias: Vec<f64>,
        iterations: usize,
        final_loss: f64,
    },
}

impl ClassifierModel {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            ClassifierModel::NearestCentroid { .. } => ClassifierKind::NearestCentroid,
            ClassifierModel::Logistic { .. } => ClassifierKind::Logistic,
        }
    }

    pub fn classes(&self) -> &[Label] {
        match self {
            ClassifierModel::NearestCentroid { classes, .. } | ClassifierModel::Logistic { classes, .. } => classes,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ClassifierModel::NearestCentroid { centroids, .. } => centroids.cols(),
            ClassifierModel::Logistic { weights, .. } => weights.cols(),
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<Label>> {
        if x.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), actual: x.cols() });
        }
        Ok(x.iter_rows().map(|row| self.predict_row(row)).collect())
    }

    fn predict_row(&self, row: &[f64]) -> Label {
        match self {
            ClassifierModel::NearestCentroid { classes, centroids } => {
                let mut best = (f64::INFINITY, classes[0]);
                for (c, centroid) in classes.iter().zip(centroids.iter_rows()) {
                    let d = euclidean(row, centroid);
                    if d < best.0 {
                        best = (d, *c);
                    }
                }
                best.1
            }
            ClassifierModel::Logistic { classes, weights, bias, .. } => {
                let mut best = (f64::NEG_INFINITY, classes[0]);
                for (k, c) in classes.iter().enumerate() {
                    let z = bias[k] + weights.row(k).iter().zip(row).map(|(w, x)| w * x).sum::<f64>();
                    if z > best.0 {
                        best = (z, *c);
                    }
                }
                best.1
            }
        }
    }
}

/// Hyper-parameters for [`fit_logistic`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the loss by less than this.
    pub tolerance: f64,
    pub l2: f64,
    /// Echoed into reports; fitting starts from zero weights.
    pub seed: Seed,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.1, max_iterations: 5000, tolerance: 1e-8, l2: 1e-4, seed: Seed(0) }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter("learning rate must be > 0".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("iteration cap must be >= 1".into()));
        }
        if !(self.l2 >= 0.0 && self.tolerance >= 0.0) {
            return Err(Error::InvalidParameter("l2 and tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

fn class_index(labels: &[Label]) -> (Vec<Label>, Vec<usize>) {
    let classes: Vec<Label> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let pos: BTreeMap<Label, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    (classes, labels.iter().map(|l| pos[l]).collect())
}

pub fn fit_nearest_centroid(x: &Matrix, labels: &[Label]) -> Result<ClassifierModel> {
    if labels.len() != x.rows() {
        return Err(Error::DimensionMismatch { expected: x.rows(), actual: labels.len() });
    }
    if labels.is_empty() {
        return Err(Error::InvalidParameter("no training samples".into()));
    }
    let (classes, idx) = class_index(labels);
    let d = x.cols();
    let mut sums = vec![0.0; classes.len() * d];
    let mut counts = vec![0usize; classes.len()];
    for (row, &k) in x.iter_rows().zip(&idx) {
        counts[k] += 1;
        sums[k * d..(k + 1) * d].iter_mut().zip(row).for_each(|(s, v)| *s += v);
    }
    for (k, &n) in counts.iter().enumerate() {
        sums[k * d..(k + 1) * d].iter_mut().for_each(|s| *s /= n as f64);
    }
    Ok(ClassifierModel::NearestCentroid { centroids: Matrix::new(classes.len(), d, sums)?, classes })
}

/// Mean softmax cross-entropy plus `l2/2 · ‖W‖²` (bias unpenalized).
///
/// Parameters are flattened as the `C×d` weight matrix in row-major order
/// followed by the `C` biases.
pub struct LogisticObjective {
    x: DMatrix<f64>,
    targets: Vec<usize>,
    classes: usize,
    l2: f64,
}

impl LogisticObjective {
    pub fn new(x: &Matrix, labels: &[Label], l2: f64) -> Result<(Self, Vec<Label>)> {
        if labels.len() != x.rows() {
            return Err(Error::DimensionMismatch { expected: x.rows(), actual: labels.len() });
        }
        let (classes, targets) = class_index(labels);
        Ok((Self { x: x.to_nalgebra(), targets, classes: classes.len(), l2 }, classes))
    }

    pub fn num_params(&self) -> usize {
        self.classes * (self.x.ncols() + 1)
    }

    pub fn loss(&self, params: &[f64]) -> f64 {
        self.evaluate(params, None)
    }

    pub fn loss_and_gradient(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.num_params()];
        let loss = self.evaluate(params, Some(&mut grad));
        (loss, grad)
    }

    fn evaluate(&self, params: &[f64], grad: Option<&mut Vec<f64>>) -> f64 {
        let (c, d, n) = (self.classes, self.x.ncols(), self.x.nrows());
        let (w, b) = params.split_at(c * d);
        let inv_n = 1.0 / n as f64;
        // N×C logits; reused in place for the softmax residual.
        let mut z = &self.x * DMatrix::from_row_slice(c, d, w).transpose();
        let mut ce = 0.0;
        for (i, &y) in self.targets.iter().enumerate() {
            let mut max = f64::NEG_INFINITY;
            for k in 0..c {
                z[(i, k)] += b[k];
                max = max.max(z[(i, k)]);
            }
            let sum_exp: f64 = (0..c).map(|k| (z[(i, k)] - max).exp()).sum();
            let log_z = max + sum_exp.ln();
            ce += log_z - z[(i, y)];
            for k in 0..c {
                z[(i, k)] = ((z[(i, k)] - log_z).exp() - if k == y { 1.0 } else { 0.0 }) * inv_n;
            }
        }
        let reg: f64 = 0.5 * self.l2 * w.iter().map(|v| v * v).sum::<f64>();
        if let Some(g) = grad {
            let gw = z.transpose() * &self.x;
            for k in 0..c {
                for j in 0..d {
                    g[k * d + j] = gw[(k, j)] + self.l2 * w[k * d + j];
                }
                g[c * d + k] = z.column(k).sum();
            }
        }
        ce * inv_n + reg
    }
}

/// Multinomial logistic regression by full-batch gradient descent from a
/// zero start. A step that would raise the loss is rejected and the learning
/// rate halved, so the accepted loss sequence never increases.
pub fn fit_logistic(x: &Matrix, labels: &[Label], cfg: &TrainConfig) -> Result<ClassifierModel> {
    Ok(fit_logistic_traced(x, labels, cfg)?.0)
}

/// Like [`fit_logistic`], also returning the loss after every accepted step
/// (starting with the loss at zero weights).
pub fn fit_logistic_traced(x: &Matrix, labels: &[Label], cfg: &TrainConfig) -> Result<(ClassifierModel, Vec<f64>)> {
    cfg.validate()?;
    let (objective, classes) = LogisticObjective::new(x, labels, cfg.l2)?;
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    let mut params = vec![0.0; objective.num_params()];
    let (mut loss, mut grad) = objective.loss_and_gradient(&params);
    let mut trace = vec![loss];
    let mut lr = cfg.learning_rate;
    let mut candidate = vec![0.0; params.len()];
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        candidate.iter_mut().zip(params.iter().zip(&grad)).for_each(|(c, (p, g))| *c = p - lr * g);
        let (new_loss, new_grad) = objective.loss_and_gradient(&candidate);
        if !new_loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: iterations });
        }
        if new_loss > loss {
            lr *= 0.5;
            if lr < 1e-14 {
                break;
            }
            continue;
        }
        let improvement = loss - new_loss;
        std::mem::swap(&mut params, &mut candidate);
        loss = new_loss;
        grad = new_grad;
        trace.push(loss);
        if improvement < cfg.tolerance {
            break;
        }
    }
    let d = x.cols();
    let c = classes.len();
    let bias = params[c * d..].to_vec();
    params.truncate(c * d);
    let model = ClassifierModel::Logistic {
        classes,
        weights: Matrix::new(c, d, params)?,
        bias,
        iterations,
        final_loss: loss,
    };
    Ok((model, trace))
}

/// Which evaluation rows belong to a named subset.
#[derive(Debug, Clone, PartialEq)]
pub enum Selector {
    Classes(BTreeSet<Label>),
    Samples(BTreeSet<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subset {
    pub name: String,
    pub selector: Selector,
}

impl Subset {
    pub fn classes(name: &str, classes: impl IntoIterator<Item = Label>) -> Self {
        Self { name: name.into(), selector: Selector::Classes(classes.into_iter().collect()) }
    }

    pub fn samples(name: &str, ids: impl IntoIterator<Item = String>) -> Self {
        Self { name: name.into(), selector: Selector::Samples(ids.into_iter().collect()) }
    }
}

/// Overall accuracy, plus one `accuracy` entry per non-empty subset. Entries
/// carry the probe kind as their mode; empty subsets are simply omitted.
pub fn evaluate_accuracy(
    model: &ClassifierModel,
    x: &Matrix,
    labels: &[Label],
    sample_ids: Option<&[String]>,
    subsets: &[Subset],
) -> Result<MetricReport> {
    if labels.len() != x.rows() {
        return Err(Error::DimensionMismatch { expected: x.rows(), actual: labels.len() });
    }
    if x.rows() == 0 {
        return Err(Error::InvalidParameter("no evaluation samples".into()));
    }
    let predicted = model.predict(x)?;
    let correct: Vec<bool> = predicted.iter().zip(labels).map(|(p, l)| p == l).collect();
    let mode = model.kind().as_str();
    let mut report = MetricReport::default();
    report.push("accuracy", mode, "overall", fraction(correct.iter().copied()));
    for subset in subsets {
        let members: Vec<usize> = match &subset.selector {
            Selector::Classes(cs) => (0..labels.len()).filter(|&i| cs.contains(&labels[i])).collect(),
            Selector::Samples(ids) => {
                let sample_ids = sample_ids.ok_or(Error::MissingSampleIds)?;
                (0..labels.len()).filter(|&i| ids.contains(&sample_ids[i])).collect()
            }
        };
        if members.is_empty() {
            report.notes.push(format!("subset `{}` is empty", subset.name));
            continue;
        }
        report.push("accuracy", mode, &subset.name, fraction(members.iter().map(|&i| correct[i])));
    }
    Ok(report)
}

fn fraction(hits: impl Iterator<Item = bool>) -> f64 {
    let (mut n, mut k) = (0usize, 0usize);
    for h in hits {
        n += 1;
        k += h as usize;
    }
    k as f64 / n as f64
}

/// Appends a per-task code to every row: a one-hot indicator over the sorted
/// distinct task ids when `dim` equals their count, otherwise a fixed
/// Gaussian vector of length `dim` drawn per task from `seed`.
pub fn augment_with_task_embedding(x: &Matrix, task_ids: &[String], dim: usize, seed: Seed) -> Result<Matrix> {
    if dim == 0 {
        return Err(Error::InvalidParameter("task embedding dimension must be >= 1".into()));
    }
    if task_ids.len() != x.rows() {
        return Err(Error::DimensionMismatch { expected: x.rows(), actual: task_ids.len() });
    }
    let tasks: Vec<&String> = task_ids.iter().collect::<BTreeSet<_>>().into_iter().collect();
    let codes: BTreeMap<&String, Vec<f64>> = tasks
        .iter()
        .enumerate()
        .map(|(t, id)| {
            let code = if dim == tasks.len() {
                (0..dim).map(|j| if j == t { 1.0 } else { 0.0 }).collect()
            } else {
                gaussian_vec(dim, &mut seed.derive_str(id).rng())
            };
            (*id, code)
        })
        .collect();
    let suffix: Vec<f64> = task_ids.iter().flat_map(|t| codes[t].iter().copied()).collect();
    x.hstack(&Matrix::new(x.rows(), dim, suffix)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian_vec;

    fn blobs(seed: u64, centers: &[[f64; 2]], per: usize, spread: f64) -> (Matrix, Vec<Label>) {
        let mut rng = Seed(seed).rng();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..per {
                let g = gaussian_vec(2, &mut rng);
                rows.push([center[0] + spread * g[0], center[1] + spread * g[1]]);
                labels.push(c as Label);
            }
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    fn accuracy(model: &ClassifierModel, x: &Matrix, labels: &[Label]) -> f64 {
        evaluate_accuracy(model, x, labels, None, &[]).unwrap().entries[0].value
    }

    #[test]
    fn nearest_centroid_separable() {
        let (x, y) = blobs(1, &[[0.0, 0.0], [10.0, 10.0]], 20, 0.5);
        let m = fit_nearest_centroid(&x, &y).unwrap();
        assert_eq!(accuracy(&m, &x, &y), 1.0);
    }

    #[test]
    fn nearest_centroid_single_class_and_ties() {
        let x = Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0]]).unwrap();
        let m = fit_nearest_centroid(&x, &[4, 4]).unwrap();
        assert_eq!(m.predict(&Matrix::from_rows(&[[-9.0, 3.0]]).unwrap()).unwrap(), vec![4]);

        let x = Matrix::from_rows(&[[-1.0, 0.0], [1.0, 0.0]]).unwrap();
        let m = fit_nearest_centroid(&x, &[5, 2]).unwrap();
        assert_eq!(m.predict(&Matrix::from_rows(&[[0.0, 3.0]]).unwrap()).unwrap(), vec![2]);
    }

    #[test]
    fn logistic_separable_reaches_full_accuracy() {
        let (x, y) = blobs(2, &[[-2.0, 0.0], [2.0, 0.0]], 30, 0.5);
        let m = fit_logistic(&x, &y, &TrainConfig::default()).unwrap();
        assert_eq!(accuracy(&m, &x, &y), 1.0);
    }

    #[test]
    fn logistic_single_class_rejected() {
        let x = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        assert!(matches!(fit_logistic(&x, &[1, 1], &TrainConfig::default()), Err(Error::SingleClass)));
        let bad = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
        assert!(fit_logistic(&x, &[0, 1], &bad).is_err());
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let mut rng = Seed(13).rng();
        let x = Matrix::new(10, 4, gaussian_vec(40, &mut rng)).unwrap();
        let y: Vec<Label> = (0..10).map(|i| (i % 3) as Label).collect();
        let (obj, _) = LogisticObjective::new(&x, &y, 1e-2).unwrap();
        let params = gaussian_vec(obj.num_params(), &mut rng);
        let (_, grad) = obj.loss_and_gradient(&params);
        let h = 1e-5;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            let up = obj.loss(&p);
            p[i] -= 2.0 * h;
            let down = obj.loss(&p);
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / grad[i].abs().max(fd.abs()).max(1e-8);
            assert!(rel <= 1e-6, "param {i}: analytic {} vs fd {fd}", grad[i]);
        }
    }

    #[test]
    fn logistic_loss_never_increases_and_is_deterministic() {
        let (x, y) = blobs(4, &[[0.0, 0.0], [1.0, 0.5], [0.3, 1.2]], 15, 0.6);
        let cfg = TrainConfig { learning_rate: 50.0, max_iterations: 300, ..TrainConfig::default() };
        let (m1, trace) = fit_logistic_traced(&x, &y, &cfg).unwrap();
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        let (m2, _) = fit_logistic_traced(&x, &y, &cfg).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn accuracy_breakdowns() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0], [3.0], [4.0], [5.0], [6.0], [7.0]]).unwrap();
        let labels: Vec<Label> = vec![0, 1, 2, 3, 0, 1, 2, 3];
        // A one-centroid model predicts the same class everywhere.
        let constant = ClassifierModel::NearestCentroid { classes: vec![2], centroids: Matrix::new(1, 1, vec![0.0]).unwrap() };
        let subsets = [Subset::classes("shared", [0, 1]), Subset::classes("non_shared", [2, 3]), Subset::classes("none", [9])];
        let r = evaluate_accuracy(&constant, &x, &labels, None, &subsets).unwrap();
        assert_eq!(r.get("accuracy", "nearest_centroid", "overall"), Some(0.25));
        assert_eq!(r.get("accuracy", "nearest_centroid", "shared"), Some(0.0));
        assert_eq!(r.get("accuracy", "nearest_centroid", "non_shared"), Some(0.5));
        assert_eq!(r.get("accuracy", "nearest_centroid", "none"), None);
        let overall = r.get("accuracy", "nearest_centroid", "overall").unwrap();
        assert_eq!(overall, (4.0 * 0.0 + 4.0 * 0.5) / 8.0);

        let perfect = fit_nearest_centroid(&x, &[0, 1, 2, 3, 4, 5, 6, 7]).unwrap();
        let own: Vec<Label> = (0..8).collect();
        let ids: Vec<String> = (0..8).map(|i| format!("s{i}")).collect();
        let r = evaluate_accuracy(&perfect, &x, &own, Some(&ids), &[Subset::samples("few", ["s1".into(), "s3".into()])]).unwrap();
        assert_eq!(r.get("accuracy", "nearest_centroid", "overall"), Some(1.0));
        assert_eq!(r.get("accuracy", "nearest_centroid", "few"), Some(1.0));
        assert!(matches!(
            evaluate_accuracy(&perfect, &x, &own, None, &[Subset::samples("few", ["s1".into()])]),
            Err(Error::MissingSampleIds)
        ));
        assert!(matches!(
            evaluate_accuracy(&perfect, &Matrix::zeros(8, 2), &own, None, &[]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn task_embedding_shapes() {
        let x = Matrix::new(4, 8, vec![0.5; 32]).unwrap();
        let tasks: Vec<String> = ["b", "a", "b", "a"].iter().map(|s| s.to_string()).collect();
        let out = augment_with_task_embedding(&x, &tasks, 2, Seed(0)).unwrap();
        assert_eq!((out.rows(), out.cols()), (4, 10));
        assert_eq!(&out.row(0)[8..], &[0.0, 1.0]);
        assert_eq!(&out.row(1)[8..], &[1.0, 0.0]);

        let same = vec!["t".to_string(); 4];
        let out = augment_with_task_embedding(&x, &same, 3, Seed(9)).unwrap();
        assert_eq!(out.cols(), 11);
        for i in 1..4 {
            assert_eq!(&out.row(i)[8..], &out.row(0)[8..]);
        }
        assert!(augment_with_task_embedding(&x, &same, 0, Seed(0)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn nearest_centroid_ignores_rigid_motions(seed in 0u64..1000, shift in proptest::collection::vec(-5.0f64..5.0, 4)) {
            let mut rng = Seed(seed).rng();
            let x = Matrix::new(30, 4, gaussian_vec(120, &mut rng)).unwrap();
            let labels: Vec<Label> = (0..30).map(|i| (i % 3) as Label).collect();
            let probe = Matrix::new(10, 4, gaussian_vec(40, &mut rng)).unwrap();
            let q = crate::linalg::random_orthogonal(4, Seed(seed).derive(1)).unwrap();
            let moved = |m: &Matrix| m.matmul(&q).unwrap().add_row_vector(&shift).unwrap();
            let before = fit_nearest_centroid(&x, &labels).unwrap().predict(&probe).unwrap();
            let after = fit_nearest_centroid(&moved(&x), &labels).unwrap().predict(&moved(&probe)).unwrap();
            proptest::prop_assert_eq!(before, after);
        }
    }
}
