//! Absolute, relative and aggregated spaces plus their validation rules.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix, NORM_EPS};

/// Class label.
pub type Label = u32;

/// A model's embedding of a set of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSpace {
    pub embeddings: Matrix,
    pub sample_ids: Vec<String>,
    pub labels: Vec<Label>,
    pub task_id: String,
}

impl EmbeddingSpace {
    /// Builds a space and checks every invariant.
    pub fn new(
        embeddings: Matrix,
        sample_ids: Vec<String>,
        labels: Vec<Label>,
        task_id: impl Into<String>,
    ) -> Result<Self> {
        let space = Self { embeddings, sample_ids, labels, task_id: task_id.into() };
        space.validate().into_result()?;
        Ok(space)
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn validate(&self) -> Validation {
        let mut v = Vec::new();
        check_lengths(self.embeddings.rows(), &self.sample_ids, &self.labels, &mut v);
        check_unique(&self.sample_ids, &mut v);
        for (i, row) in self.embeddings.iter_rows().enumerate() {
            if norm(row) < NORM_EPS {
                v.push(Violation::new(ViolationKind::ZeroNorm, Some(i), "embedding row has zero norm"));
            }
        }
        Validation(v)
    }

    /// Row index for every sample id.
    pub fn index(&self) -> HashMap<&str, usize> {
        self.sample_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }

    /// Restricts the space to `ids`, in that order.
    pub fn subset(&self, ids: &[String]) -> Result<EmbeddingSpace> {
        let index = self.index();
        let rows = ids
            .iter()
            .map(|id| index.get(id.as_str()).copied().ok_or_else(|| Error::UnknownSampleId(id.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(EmbeddingSpace {
            embeddings: self.embeddings.select_rows(&rows),
            sample_ids: ids.to_vec(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            task_id: self.task_id.clone(),
        })
    }
}

/// Cosine similarities of every sample to an ordered anchor set.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeSpace {
    pub similarities: Matrix,
    pub sample_ids: Vec<String>,
    pub labels: Vec<Label>,
    pub task_id: String,
    pub anchor_ids: Vec<String>,
}

impl RelativeSpace {
    pub fn len(&self) -> usize {
        self.similarities.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Validation {
        let mut v = Vec::new();
        check_lengths(self.similarities.rows(), &self.sample_ids, &self.labels, &mut v);
        check_unique(&self.sample_ids, &mut v);
        if self.anchor_ids.is_empty() {
            v.push(Violation::new(ViolationKind::EmptyAnchors, None, "anchor set is empty"));
        }
        if self.anchor_ids.len() != self.similarities.cols() {
            v.push(Violation::new(
                ViolationKind::AnchorColumnMismatch,
                None,
                format!("{} anchor ids for {} columns", self.anchor_ids.len(), self.similarities.cols()),
            ));
        }
        let mut seen = HashSet::new();
        for id in &self.anchor_ids {
            if !seen.insert(id) {
                v.push(Violation::new(ViolationKind::DuplicateAnchor, None, format!("anchor `{id}` repeated")));
            }
        }
        for (i, row) in self.similarities.iter_rows().enumerate() {
            if let Some(x) = row.iter().find(|x| !(-1.0..=1.0).contains(*x)) {
                v.push(Violation::new(ViolationKind::OutOfRange, Some(i), format!("similarity {x} outside [-1, 1]")));
            }
        }
        Validation(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    Relative,
    NaiveMean,
    AbsoluteUnion,
}

impl AggregationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregationMode::Relative => "relative",
            AggregationMode::NaiveMean => "naive_mean",
            AggregationMode::AbsoluteUnion => "absolute_union",
        }
    }
}

impl fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Result of merging several spaces.
///
/// For [`AggregationMode::AbsoluteUnion`] a sample id may repeat, once per
/// source; every other mode has one row per distinct sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedSpace {
    pub representation: Matrix,
    pub sample_ids: Vec<String>,
    pub labels: Vec<Label>,
    /// Task ids of the input spaces that contributed to each row.
    pub sources: Vec<Vec<String>>,
    pub mode: AggregationMode,
    /// Column anchors, only for relative aggregates.
    pub anchor_ids: Option<Vec<String>>,
}

impl AggregatedSpace {
    pub fn len(&self) -> usize {
        self.representation.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn source_count(&self, row: usize) -> usize {
        self.sources[row].len()
    }

    pub fn validate(&self) -> Validation {
        let mut v = Vec::new();
        check_lengths(self.representation.rows(), &self.sample_ids, &self.labels, &mut v);
        if self.sources.len() != self.sample_ids.len() {
            v.push(Violation::new(ViolationKind::LengthMismatch, None, "sources length differs from sample count"));
        }
        for (i, s) in self.sources.iter().enumerate() {
            if s.is_empty() {
                v.push(Violation::new(ViolationKind::NoSource, Some(i), "row has no source space"));
            }
        }
        if self.mode != AggregationMode::AbsoluteUnion {
            check_unique(&self.sample_ids, &mut v);
        }
        if self.mode == AggregationMode::Relative {
            match &self.anchor_ids {
                Some(a) if a.len() == self.representation.cols() => {}
                _ => v.push(Violation::new(
                    ViolationKind::AnchorColumnMismatch,
                    None,
                    "relative aggregate must carry one anchor id per column",
                )),
            }
        }
        Validation(v)
    }

    /// Restricts to rows whose id is in `ids`, keeping the aggregate's order.
    pub fn rows_for(&self, ids: &BTreeSet<String>) -> Vec<usize> {
        (0..self.len()).filter(|&i| ids.contains(&self.sample_ids[i])).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    LengthMismatch,
    DuplicateId,
    ZeroNorm,
    OutOfRange,
    EmptyAnchors,
    DuplicateAnchor,
    AnchorColumnMismatch,
    NoSource,
    NonFinite,
}

/// One broken invariant, optionally pinned to a row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub row: Option<usize>,
    pub reason: String,
}

impl Violation {
    pub fn new(kind: ViolationKind, row: Option<usize>, reason: impl Into<String>) -> Self {
        Self { kind, row, reason: reason.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.row {
            Some(r) => write!(f, "{:?} at row {r}: {}", self.kind, self.reason),
            None => write!(f, "{:?}: {}", self.kind, self.reason),
        }
    }
}

/// Outcome of a validation pass; empty means the space is well formed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Validation(pub Vec<Violation>);

impl Validation {
    pub fn is_ok(&self) -> bool {
        self.0.is_empty()
    }

    pub fn violations(&self) -> &[Violation] {
        &self.0
    }

    pub fn into_result(self) -> Result<()> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(Error::ValidationFailed(self.0))
        }
    }
}

/// Either kind of space as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnySpace {
    Absolute(EmbeddingSpace),
    Relative(RelativeSpace),
}

impl AnySpace {
    pub fn validate(&self) -> Validation {
        match self {
            AnySpace::Absolute(s) => s.validate(),
            AnySpace::Relative(s) => s.validate(),
        }
    }

    pub fn matrix(&self) -> &Matrix {
        match self {
            AnySpace::Absolute(s) => &s.embeddings,
            AnySpace::Relative(s) => &s.similarities,
        }
    }

    pub fn sample_ids(&self) -> &[String] {
        match self {
            AnySpace::Absolute(s) => &s.sample_ids,
            AnySpace::Relative(s) => &s.sample_ids,
        }
    }

    pub fn labels(&self) -> &[Label] {
        match self {
            AnySpace::Absolute(s) => &s.labels,
            AnySpace::Relative(s) => &s.labels,
        }
    }
}

/// Validates either kind of space.
pub fn validate_space(space: &AnySpace) -> Validation {
    space.validate()
}

/// Anything that assigns labels to sample ids.
pub trait Labeled {
    fn sample_ids(&self) -> &[String];
    fn labels(&self) -> &[Label];
}

impl Labeled for EmbeddingSpace {
    fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }
    fn labels(&self) -> &[Label] {
        &self.labels
    }
}

impl Labeled for RelativeSpace {
    fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }
    fn labels(&self) -> &[Label] {
        &self.labels
    }
}

impl Labeled for AnySpace {
    fn sample_ids(&self) -> &[String] {
        AnySpace::sample_ids(self)
    }
    fn labels(&self) -> &[Label] {
        AnySpace::labels(self)
    }
}

/// Sample ids whose label differs between spaces, with every label seen.
/// Sorted by sample id.
pub fn conflicting_labels<S: Labeled>(spaces: &[S]) -> Vec<(String, Vec<Label>)> {
    let mut seen: BTreeMap<&str, BTreeSet<Label>> = BTreeMap::new();
    for space in spaces {
        for (id, &label) in space.sample_ids().iter().zip(space.labels()) {
            seen.entry(id.as_str()).or_default().insert(label);
        }
    }
    seen.into_iter()
        .filter(|(_, labels)| labels.len() > 1)
        .map(|(id, labels)| (id.to_string(), labels.into_iter().collect()))
        .collect()
}

fn check_lengths(rows: usize, ids: &[String], labels: &[Label], v: &mut Vec<Violation>) {
    if ids.len() != rows {
        v.push(Violation::new(
            ViolationKind::LengthMismatch,
            None,
            format!("{} sample ids for {rows} rows", ids.len()),
        ));
    }
    if labels.len() != rows {
        v.push(Violation::new(ViolationKind::LengthMismatch, None, format!("{} labels for {rows} rows", labels.len())));
    }
}

fn check_unique(ids: &[String], v: &mut Vec<Violation>) {
    let mut first: HashMap<&str, usize> = HashMap::new();
    for (i, id) in ids.iter().enumerate() {
        if let Some(prev) = first.insert(id.as_str(), i) {
            v.push(Violation::new(
                ViolationKind::DuplicateId,
                Some(i),
                format!("sample id `{id}` already used at row {prev}"),
            ));
            first.insert(id.as_str(), prev);
        }
    }
}

/// One named scalar in a [`MetricReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub metric: String,
    /// Which space the value describes (`relative`, `naive_mean`, `reference`, ...).
    pub mode: String,
    pub subset: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub anchors: Option<usize>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub seeds: BTreeMap<String, u64>,
}

/// Ordered collection of metric values plus an echo of the configuration
/// that produced them.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub entries: Vec<MetricEntry>,
    #[serde(default)]
    pub config: BTreeMap<String, serde_json::Value>,
    /// Free-form remarks, e.g. class pairs left out of a separability mean.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl MetricReport {
    pub fn push(&mut self, metric: &str, mode: &str, subset: &str, value: f64) -> &mut MetricEntry {
        debug_assert!(value.is_finite(), "{metric}/{mode}/{subset} = {value}");
        self.entries.push(MetricEntry {
            metric: metric.into(),
            mode: mode.into(),
            subset: subset.into(),
            value,
            anchors: None,
            seeds: BTreeMap::new(),
        });
        self.entries.last_mut().unwrap()
    }

    pub fn get(&self, metric: &str, mode: &str, subset: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.metric == metric && e.mode == mode && e.subset == subset)
            .map(|e| e.value)
    }

    pub fn extend(&mut self, other: MetricReport) {
        self.entries.extend(other.entries);
        self.notes.extend(other.notes);
    }

    /// Stamps anchor count and seeds onto every entry that lacks them.
    pub fn stamp(&mut self, anchors: Option<usize>, seeds: &BTreeMap<String, u64>) {
        for e in &mut self.entries {
            if e.anchors.is_none() {
                e.anchors = anchors;
            }
            if e.seeds.is_empty() {
                e.seeds = seeds.clone();
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    fn good() -> EmbeddingSpace {
        let m = Matrix::new(4, 3, (1..=12).map(f64::from).collect()).unwrap();
        EmbeddingSpace::new(m, ids(4), vec![0, 0, 1, 1], "t").unwrap()
    }

    #[test]
    fn well_formed_space_is_ok() {
        assert!(good().validate().is_ok());
    }

    #[test]
    fn duplicate_id_is_reported() {
        let mut s = good();
        s.sample_ids[2] = "s0".into();
        let v = s.validate();
        assert_eq!(v.violations().len(), 1);
        assert_eq!(v.violations()[0].kind, ViolationKind::DuplicateId);
        assert_eq!(v.violations()[0].row, Some(2));
    }

    #[test]
    fn zero_row_is_reported_with_index() {
        let m = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0], [0.0, 2.0]]).unwrap();
        let err = EmbeddingSpace::new(m, ids(3), vec![0, 1, 2], "t").unwrap_err();
        let Error::ValidationFailed(v) = err else { panic!("expected validation failure") };
        assert_eq!(v, vec![Violation::new(ViolationKind::ZeroNorm, Some(1), "embedding row has zero norm")]);
    }

    #[test]
    fn length_mismatch_is_reported() {
        let mut s = good();
        s.labels.pop();
        assert_eq!(s.validate().violations()[0].kind, ViolationKind::LengthMismatch);
    }

    #[test]
    fn relative_range_and_anchor_checks() {
        let r = RelativeSpace {
            similarities: Matrix::from_rows(&[[0.5, 1.2]]).unwrap(),
            sample_ids: ids(1),
            labels: vec![0],
            task_id: "t".into(),
            anchor_ids: vec!["a".into()],
        };
        let kinds: Vec<_> = r.validate().0.into_iter().map(|v| v.kind).collect();
        assert_eq!(kinds, vec![ViolationKind::AnchorColumnMismatch, ViolationKind::OutOfRange]);
    }

    #[test]
    fn conflicting_label_cases() {
        let a = good();
        let mut b = good();
        assert!(conflicting_labels(&[a.clone(), b.clone()]).is_empty());

        b.labels[1] = 7;
        assert_eq!(conflicting_labels(&[a.clone(), b]), vec![("s1".to_string(), vec![0, 7])]);

        let mut c = good();
        c.sample_ids = (10..14).map(|i| format!("s{i}")).collect();
        c.labels = vec![9; 4];
        assert!(conflicting_labels(&[a, c]).is_empty());
    }

    #[test]
    fn subset_keeps_requested_order() {
        let s = good();
        let sub = s.subset(&["s2".into(), "s0".into()]).unwrap();
        assert_eq!(sub.embeddings.row(0), s.embeddings.row(2));
        assert_eq!(sub.labels, vec![1, 0]);
        assert!(matches!(s.subset(&["nope".into()]), Err(Error::UnknownSampleId(_))));
    }
}
