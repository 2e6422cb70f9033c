//! End-to-end runs driven by a TOML document.
//!
//! Stages run in order: `synth` or `load`, `partition`, `embed`,
//! `select_anchors`, `project`, `aggregate`, `metrics`, `classify`, `output`.
//! Any error is wrapped with the name of the stage that raised it.
//!
//! ```toml
//! [synth]
//! num_classes = 20
//! per_class = 40
//! dim = 32
//! cluster_spread = 0.2
//! noise = 0.01
//! seed = 1
//!
//! [partition]
//! scheme = "shared_novel"
//! shared = 10
//! novel = 5
//! seed = 2
//!
//! [anchors]
//! count = 64
//! seed = 3
//!
//! [output]
//! dir = "out"
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregate::{absolute_union, naive_mean_aggregate, rlsa_aggregate};
use crate::error::{Error, Result, StageExt};
use crate::evaluation::{
    augment_with_task_embedding, evaluate_accuracy, fit_logistic, fit_nearest_centroid, ClassifierKind, Subset,
    TrainConfig,
};
use crate::io::{aggregated_to_space, pca_csv, pca_svg, read_embedding_space, write_space};
use crate::linalg::{gaussian_vec, norm, pca_project, shuffle, Matrix, Seed};
use crate::metrics::{align_by_id, cka, separability_summary, SummaryMode};
use crate::partition::{
    apply_plan, make_disjoint_plan, make_imbalanced_plan, make_nested_plan, make_shared_novel_plan, AnchorPoolPolicy,
    PartitionPlan, PlanDocument, Scheme, DEFAULT_ANCHOR_FRACTION, DEFAULT_EVAL_FRACTION,
};
use crate::relative::{
    project_relative_with, select_anchor_ids, select_anchors_stratified, AnchorSet,
    DEFAULT_ANCHOR_COUNT,
};
use crate::space::{AggregatedSpace, AggregationMode, EmbeddingSpace, Label, MetricReport, RelativeSpace};
use crate::synth::{derive_task_space, generate_base_space, TaskTransformSpec};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<InputConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionConfig>,
    #[serde(default)]
    pub anchors: AnchorConfig,
    #[serde(default)]
    pub aggregate: AggregateConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Synthetic base space plus the per-task transforms applied to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub cluster_spread: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise: f64,
    /// Per-task isotropic scale, cycled over tasks; 1 when empty.
    #[serde(default)]
    pub scales: Vec<f64>,
    /// Norm of each task's footprint bias; the direction is seeded per task.
    #[serde(default)]
    pub footprint: f64,
    /// Norm of each task's translation; the direction is seeded per task.
    #[serde(default)]
    pub translation: f64,
}

/// Externally produced spaces. Every task file must embed the anchors too,
/// so the anchor pool is the set of ids present in all of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub tasks: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
    #[serde(default = "default_eval_fraction")]
    pub eval_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub scheme: Scheme,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub novel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minority_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_classes: Option<usize>,
    #[serde(default = "default_anchor_fraction")]
    pub anchor_fraction: f64,
    #[serde(default = "default_eval_fraction")]
    pub eval_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorStrategy {
    Uniform,
    /// Round-robin over classes so every class is represented.
    Stratified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorConfig {
    #[serde(default = "default_anchor_count")]
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to stratified for held-out pools and uniform otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<AnchorStrategy>,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self { count: DEFAULT_ANCHOR_COUNT, seed: 0, strategy: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateConfig {
    #[serde(default = "all_modes")]
    pub modes: Vec<AggregationMode>,
}

impl Default for AggregateConfig {
    fn default() -> Self {
        Self { modes: all_modes() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default = "yes")]
    pub cka: bool,
    #[serde(default = "both_summaries")]
    pub separability: Vec<SummaryMode>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { cka: true, separability: both_summaries() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default)]
    pub kind: ClassifierKind,
    #[serde(default, flatten)]
    pub train: TrainConfig,
    /// Also probe the reference with a task code appended.
    #[serde(default = "yes")]
    pub task_embedding: bool,
    /// Length of the task code; one-hot over tasks when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_embedding_dim: Option<usize>,
    /// Names of the representations to probe; all of them when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<Vec<String>>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            kind: ClassifierKind::default(),
            train: TrainConfig::default(),
            task_embedding: true,
            task_embedding_dim: None,
            probes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Relative paths resolve against the config file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_report_name")]
    pub report: String,
    #[serde(default = "yes")]
    pub pca: bool,
    #[serde(default)]
    pub svg: bool,
    #[serde(default = "default_pca_components")]
    pub pca_components: usize,
    /// Also write the aggregated spaces as `.lsa` files.
    #[serde(default)]
    pub spaces: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            report: default_report_name(),
            pca: true,
            svg: false,
            pca_components: default_pca_components(),
            spaces: false,
        }
    }
}

fn default_eval_fraction() -> f64 {
    DEFAULT_EVAL_FRACTION
}
fn default_anchor_fraction() -> f64 {
    DEFAULT_ANCHOR_FRACTION
}
fn default_anchor_count() -> usize {
    DEFAULT_ANCHOR_COUNT
}
fn all_modes() -> Vec<AggregationMode> {
    vec![AggregationMode::Relative, AggregationMode::NaiveMean, AggregationMode::AbsoluteUnion]
}
fn both_summaries() -> Vec<SummaryMode> {
    vec![SummaryMode::Mean, SummaryMode::Min]
}
fn yes() -> bool {
    true
}
fn default_report_name() -> String {
    "report.json".into()
}
fn default_pca_components() -> usize {
    2
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.synth, &self.input) {
            (Some(_), Some(_)) => return Err(Error::Config("use either [synth] or [input], not both".into())),
            (None, None) => return Err(Error::Config("one of [synth] or [input] is required".into())),
            (Some(_), None) if self.partition.is_none() => {
                return Err(Error::Config("[synth] needs a [partition] block".into()))
            }
            (None, Some(i)) if i.tasks.is_empty() => return Err(Error::Config("[input] lists no tasks".into())),
            _ => {}
        }
        if self.aggregate.modes.is_empty() {
            return Err(Error::Config("[aggregate] selects no modes".into()));
        }
        if self.classifier.enabled {
            self.classifier.train.validate()?;
        }
        Ok(())
    }

    /// Resolves relative input and output paths against `dir`.
    pub fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let Some(input) = &mut self.input {
            input.tasks.iter_mut().for_each(fix);
            if let Some(r) = &mut input.reference {
                fix(r);
            }
        }
        self.output.dir = Some(self.output.dir.take().map_or_else(|| dir.join("out"), |mut d| {
            fix(&mut d);
            d
        }));
    }
}

/// Everything a run produced, before anything is written.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: MetricReport,
    pub plan: Option<PlanDocument>,
    pub anchors: AnchorSet,
    pub task_spaces: Vec<EmbeddingSpace>,
    pub relative_spaces: Vec<RelativeSpace>,
    pub aggregates: Vec<AggregatedSpace>,
    /// Reference space restricted to the aggregated samples.
    pub reference: Option<EmbeddingSpace>,
    pub reference_relative: Option<RelativeSpace>,
}

impl PipelineRun {
    pub fn aggregate(&self, mode: AggregationMode) -> Option<&AggregatedSpace> {
        self.aggregates.iter().find(|a| a.mode == mode)
    }
}

/// Loads `path`, runs it and writes the outputs. Returns the files written.
pub fn run_pipeline(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let mut cfg = PipelineConfig::load(path).stage("config")?;
    cfg.rebase(path.parent().unwrap_or(Path::new(".")));
    let run = run(&cfg)?;
    write_outputs(&run, &cfg).stage("output")
}

struct Inputs {
    tasks: Vec<EmbeddingSpace>,
    /// Per task, where anchor embeddings are looked up.
    anchor_sources: Vec<EmbeddingSpace>,
    reference: Option<EmbeddingSpace>,
    anchor_pool: Vec<String>,
    stratify: bool,
    train_ids: BTreeSet<String>,
    eval_ids: BTreeSet<String>,
    shared_classes: Option<BTreeSet<Label>>,
    eval_classes: Option<Vec<Label>>,
    /// First task (in task order) that embeds each sample.
    task_of: BTreeMap<String, String>,
    plan: Option<PlanDocument>,
}

/// Runs every stage in memory.
pub fn run(cfg: &PipelineConfig) -> Result<PipelineRun> {
    cfg.validate().stage("config")?;
    let mut seeds = BTreeMap::new();
    let inputs = match (&cfg.synth, &cfg.input) {
        (Some(s), _) => synth_inputs(s, cfg.partition.as_ref().expect("validated"), &mut seeds)?,
        (None, Some(i)) => file_inputs(i, &mut seeds).stage("load")?,
        _ => unreachable!("validated"),
    };
    seeds.insert("anchors".into(), cfg.anchors.seed);

    let anchors = {
        let seed = Seed(cfg.anchors.seed);
        let strategy = cfg.anchors.strategy.unwrap_or(if inputs.stratify {
            AnchorStrategy::Stratified
        } else {
            AnchorStrategy::Uniform
        });
        match strategy {
            AnchorStrategy::Uniform => select_anchor_ids(&inputs.anchor_pool, cfg.anchors.count, seed),
            AnchorStrategy::Stratified => inputs.anchor_sources[0]
                .subset(&inputs.anchor_pool)
                .and_then(|pool| select_anchors_stratified(&pool, cfg.anchors.count, seed)),
        }
        .stage("select_anchors")?
    };

    let relative_spaces: Vec<RelativeSpace> = inputs
        .tasks
        .iter()
        .zip(&inputs.anchor_sources)
        .map(|(t, src)| project_relative_with(t, &anchors, src))
        .collect::<Result<_>>()
        .stage("project")?;

    let aggregates: Vec<AggregatedSpace> = cfg
        .aggregate
        .modes
        .iter()
        .map(|mode| match mode {
            AggregationMode::Relative => rlsa_aggregate(&relative_spaces),
            AggregationMode::NaiveMean => naive_mean_aggregate(&inputs.tasks),
            AggregationMode::AbsoluteUnion => absolute_union(&inputs.tasks),
        })
        .collect::<Result<_>>()
        .stage("aggregate")?;

    let (reference, reference_relative) = match &inputs.reference {
        Some(r) => {
            let ids: Vec<String> = aggregates[0].sample_ids.iter().collect::<BTreeSet<_>>().into_iter().cloned().collect();
            let sub = r.subset(&ids).stage("project")?;
            let rel = project_relative_with(&sub, &anchors, r).stage("project")?;
            (Some(sub), Some(rel))
        }
        None => (None, None),
    };

    let mut runner = Runner {
        cfg,
        inputs: &inputs,
        report: MetricReport::default(),
    };
    runner.metrics(&aggregates, reference.as_ref(), reference_relative.as_ref()).stage("metrics")?;
    if cfg.classifier.enabled {
        seeds.insert("classifier".into(), cfg.classifier.train.seed.0);
        runner.classify(&aggregates, reference.as_ref(), reference_relative.as_ref()).stage("classify")?;
    }
    let mut report = runner.report;
    report.stamp(Some(anchors.len()), &seeds);
    if let serde_json::Value::Object(map) = serde_json::to_value(cfg).expect("config serializes") {
        report.config = map.into_iter().collect();
    }
    report.config.insert("classifier_kind".into(), cfg.classifier.kind.as_str().into());

    Ok(PipelineRun {
        report,
        plan: inputs.plan.clone(),
        anchors,
        task_spaces: inputs.tasks,
        relative_spaces,
        aggregates,
        reference,
        reference_relative,
    })
}

fn seeded_direction(dim: usize, norm_target: f64, seed: Seed) -> Option<Vec<f64>> {
    if norm_target == 0.0 {
        return None;
    }
    let v = gaussian_vec(dim, &mut seed.rng());
    let n = norm(&v);
    Some(v.into_iter().map(|x| x * norm_target / n).collect())
}

/// Transform of the `k`-th task; every seed is derived from the synth seed and the task name.
pub fn task_transform(s: &SynthConfig, k: usize, name: &str) -> TaskTransformSpec {
    let seed = Seed(s.seed);
    let scale = if s.scales.is_empty() { 1.0 } else { s.scales[k % s.scales.len()] };
    let mut spec = TaskTransformSpec::rotation(name, seed.derive_str(&format!("rotation/{name}")))
        .with_scale(scale)
        .with_noise(s.noise);
    spec.noise_seed = seed.derive_str(&format!("noise/{name}"));
    spec.footprint = seeded_direction(s.dim, s.footprint, seed.derive_str(&format!("footprint/{name}")));
    spec.translation = seeded_direction(s.dim, s.translation, seed.derive_str(&format!("translation/{name}")));
    spec
}

/// Builds the plan a `[partition]` block describes.
pub fn build_plan(p: &PartitionConfig, num_classes: usize) -> Result<PartitionPlan> {
    let need = |v: Option<usize>, name: &str| {
        v.ok_or_else(|| Error::Config(format!("scheme {:?} needs `{name}`", p.scheme)))
    };
    let seed = Seed(p.seed);
    let plan = match p.scheme {
        Scheme::SharedNovel => make_shared_novel_plan(num_classes, need(p.shared, "shared")?, need(p.novel, "novel")?, seed)?,
        Scheme::ImbalancedSharedClasses => {
            make_imbalanced_plan(num_classes, p.minority_fraction.unwrap_or(0.2), seed)?
        }
        Scheme::FullyDisjoint => make_disjoint_plan(num_classes, seed)?,
        Scheme::NestedClasses => make_nested_plan(
            num_classes,
            need(p.start, "start")?,
            p.max_classes.unwrap_or(num_classes),
            seed,
        )?,
    };
    Ok(plan.with_anchor_fraction(p.anchor_fraction).with_eval_fraction(p.eval_fraction))
}

fn synth_inputs(s: &SynthConfig, p: &PartitionConfig, seeds: &mut BTreeMap<String, u64>) -> Result<Inputs> {
    seeds.insert("synth".into(), s.seed);
    seeds.insert("partition".into(), p.seed);
    let base = generate_base_space(s.num_classes, s.per_class, s.dim, s.cluster_spread, Seed(s.seed)).stage("synth")?;
    let plan = build_plan(p, s.num_classes).stage("partition")?;
    let assignment = apply_plan(&base.sample_ids, &base.labels, &plan).stage("partition")?;

    let mut tasks = Vec::new();
    let mut anchor_sources = Vec::new();
    let mut task_of = BTreeMap::new();
    for (k, t) in assignment.tasks.iter().enumerate() {
        let spec = task_transform(s, k, &t.name);
        let mut ids: Vec<String> = t.train_ids.iter().chain(&t.eval_ids).cloned().collect();
        ids.sort();
        for id in &ids {
            task_of.entry(id.clone()).or_insert_with(|| t.name.clone());
        }
        let space = derive_task_space(&base, &ids, &spec).stage("embed")?;
        let source = match assignment.anchor_pool_policy {
            AnchorPoolPolicy::FromShared => space.clone(),
            AnchorPoolPolicy::HeldOutUnseen => {
                let mut src = derive_task_space(&base, &assignment.anchor_pool, &spec).stage("embed")?;
                src.task_id = format!("{}/anchors", t.name);
                src
            }
        };
        tasks.push(space);
        anchor_sources.push(source);
    }
    let train_ids = assignment.tasks.iter().flat_map(|t| t.train_ids.iter().cloned()).collect();
    let shared = (plan.scheme == Scheme::SharedNovel).then(|| plan.shared_classes.iter().copied().collect());
    Ok(Inputs {
        stratify: plan.anchor_pool_policy == AnchorPoolPolicy::HeldOutUnseen,
        anchor_pool: assignment.anchor_pool.clone(),
        train_ids,
        eval_ids: assignment.eval_ids.iter().cloned().collect(),
        shared_classes: shared,
        eval_classes: plan.eval_classes.clone(),
        task_of,
        tasks,
        anchor_sources,
        reference: Some(base),
        plan: Some(PlanDocument { plan, assignment }),
    })
}

fn file_inputs(i: &InputConfig, seeds: &mut BTreeMap<String, u64>) -> Result<Inputs> {
    seeds.insert("input_split".into(), i.seed);
    if !(0.0..1.0).contains(&i.eval_fraction) {
        return Err(Error::Config("eval_fraction must be in [0, 1)".into()));
    }
    let tasks: Vec<EmbeddingSpace> = i.tasks.iter().map(read_embedding_space).collect::<Result<_>>()?;
    let reference = i.reference.as_ref().map(read_embedding_space).transpose()?;
    let mut common: BTreeSet<String> = tasks[0].sample_ids.iter().cloned().collect();
    for t in &tasks[1..] {
        let ids: BTreeSet<&String> = t.sample_ids.iter().collect();
        common.retain(|id| ids.contains(id));
    }
    let mut task_of = BTreeMap::new();
    for t in &tasks {
        for id in &t.sample_ids {
            task_of.entry(id.clone()).or_insert_with(|| t.task_id.clone());
        }
    }
    let mut all: Vec<String> = task_of.keys().cloned().collect();
    shuffle(&mut all, &mut Seed(i.seed).rng());
    let n_eval = (all.len() as f64 * i.eval_fraction).round() as usize;
    let eval_ids: BTreeSet<String> = all[..n_eval].iter().cloned().collect();
    let train_ids: BTreeSet<String> = all[n_eval..].iter().cloned().collect();
    Ok(Inputs {
        anchor_sources: tasks.clone(),
        tasks,
        reference,
        anchor_pool: common.into_iter().collect(),
        stratify: false,
        train_ids,
        eval_ids,
        shared_classes: None,
        eval_classes: None,
        task_of,
        plan: None,
    })
}

type PairFilter<'f> = &'f dyn Fn(Label, Label) -> bool;

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    inputs: &'a Inputs,
    report: MetricReport,
}

/// A matrix with row ids and labels; the common shape every probe and metric reads.
struct View<'a> {
    name: &'static str,
    matrix: &'a Matrix,
    ids: &'a [String],
    labels: &'a [Label],
}

fn views<'a>(
    aggregates: &'a [AggregatedSpace],
    reference: Option<&'a EmbeddingSpace>,
    reference_relative: Option<&'a RelativeSpace>,
) -> Vec<View<'a>> {
    let mut out: Vec<View<'a>> = aggregates
        .iter()
        .map(|a| View { name: a.mode.as_str(), matrix: &a.representation, ids: &a.sample_ids, labels: &a.labels })
        .collect();
    if let Some(r) = reference_relative {
        out.push(View { name: "reference_relative", matrix: &r.similarities, ids: &r.sample_ids, labels: &r.labels });
    }
    if let Some(r) = reference {
        out.push(View { name: "reference_absolute", matrix: &r.embeddings, ids: &r.sample_ids, labels: &r.labels });
    }
    out
}

impl Runner<'_> {
    fn id_subsets(&self, ids: &[String], labels: &[Label]) -> Vec<(&'static str, Vec<usize>)> {
        let mut out = vec![("overall", (0..ids.len()).collect())];
        if let Some(shared) = &self.inputs.shared_classes {
            let (s, n): (Vec<usize>, Vec<usize>) = (0..ids.len()).partition(|&i| shared.contains(&labels[i]));
            out.push(("shared", s));
            out.push(("non_shared", n));
        }
        out
    }

    fn metrics(
        &mut self,
        aggregates: &[AggregatedSpace],
        reference: Option<&EmbeddingSpace>,
        reference_relative: Option<&RelativeSpace>,
    ) -> Result<()> {
        if self.cfg.metrics.cka {
            for agg in aggregates {
                let target = match agg.mode {
                    AggregationMode::Relative => reference_relative.map(|r| (&r.sample_ids, &r.similarities)),
                    AggregationMode::NaiveMean => reference.map(|r| (&r.sample_ids, &r.embeddings)),
                    AggregationMode::AbsoluteUnion => {
                        self.report.notes.push("cka skipped for absolute_union: sample ids repeat".into());
                        None
                    }
                };
                let Some((ref_ids, ref_m)) = target else { continue };
                let (ids, a, b) = align_by_id(&agg.sample_ids, &agg.representation, ref_ids, ref_m);
                let labels: Vec<Label> = {
                    let idx: BTreeMap<&String, Label> = agg.sample_ids.iter().zip(&agg.labels).map(|(i, &l)| (i, l)).collect();
                    ids.iter().map(|i| idx[i]).collect()
                };
                for (subset, rows) in self.id_subsets(&ids, &labels) {
                    if rows.len() < 2 {
                        self.report.notes.push(format!("cka/{}/{subset}: fewer than two samples", agg.mode));
                        continue;
                    }
                    match cka(&a.select_rows(&rows), &b.select_rows(&rows)) {
                        Ok(v) => {
                            self.report.push("cka", agg.mode.as_str(), subset, v);
                        }
                        Err(Error::DegenerateSpace) => {
                            self.report.notes.push(format!("cka/{}/{subset}: degenerate space", agg.mode))
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
        }

        let shared = self.inputs.shared_classes.clone();
        let non_shared_filter = shared.as_ref().map(|s| {
            let s = s.clone();
            move |a: Label, b: Label| !s.contains(&a) || !s.contains(&b)
        });
        for view in views(aggregates, reference, reference_relative) {
            for &mode in &self.cfg.metrics.separability {
                let metric = match mode {
                    SummaryMode::Mean => "separability_mean",
                    SummaryMode::Min => "separability_min",
                };
                let mut variants: Vec<(&str, Option<PairFilter>)> = vec![("all_pairs", None)];
                if let Some(f) = &non_shared_filter {
                    variants.push(("non_shared_pairs", Some(f)));
                }
                for (subset, filter) in variants {
                    let s = separability_summary(view.matrix, view.labels, mode, filter)?;
                    if s.value.is_finite() {
                        self.report.push(metric, view.name, subset, s.value);
                    } else {
                        self.report.notes.push(format!("{metric}/{}/{subset}: every pair has zero spread", view.name));
                    }
                    if !s.infinite_pairs.is_empty() {
                        self.report.notes.push(format!(
                            "{metric}/{}/{subset}: {} zero-spread pairs left out",
                            view.name,
                            s.infinite_pairs.len()
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    fn wants(&self, name: &str) -> bool {
        self.cfg.classifier.probes.as_ref().is_none_or(|p| p.iter().any(|n| n == name))
    }

    fn probe(&mut self, name: &str, x: &Matrix, ids: &[String], labels: &[Label]) -> Result<()> {
        if !self.wants(name) {
            return Ok(());
        }
        let pick = |set: &BTreeSet<String>| -> Vec<usize> { (0..ids.len()).filter(|&i| set.contains(&ids[i])).collect() };
        let (tr, ev) = (pick(&self.inputs.train_ids), pick(&self.inputs.eval_ids));
        if tr.is_empty() || ev.is_empty() {
            self.report.notes.push(format!("accuracy/{name}: empty train or eval split"));
            return Ok(());
        }
        let sub = |rows: &[usize]| -> (Matrix, Vec<Label>, Vec<String>) {
            (x.select_rows(rows), rows.iter().map(|&i| labels[i]).collect(), rows.iter().map(|&i| ids[i].clone()).collect())
        };
        let (xtr, ytr, _) = sub(&tr);
        let (xev, yev, idev) = sub(&ev);
        let model = match self.cfg.classifier.kind {
            ClassifierKind::NearestCentroid => fit_nearest_centroid(&xtr, &ytr)?,
            ClassifierKind::Logistic => fit_logistic(&xtr, &ytr, &self.cfg.classifier.train)?,
        };
        let mut subsets = Vec::new();
        if let Some(shared) = &self.inputs.shared_classes {
            let all: BTreeSet<Label> = labels.iter().copied().collect();
            subsets.push(Subset::classes("shared", shared.iter().copied()));
            subsets.push(Subset::classes("non_shared", all.difference(shared).copied()));
        }
        if let Some(core) = &self.inputs.eval_classes {
            subsets.push(Subset::classes("core_classes", core.iter().copied()));
        }
        let mut r = evaluate_accuracy(&model, &xev, &yev, Some(&idev), &subsets)?;
        for e in &mut r.entries {
            e.mode = name.to_string();
        }
        for n in &mut r.notes {
            *n = format!("accuracy/{name}: {n}");
        }
        self.report.extend(r);
        Ok(())
    }

    fn classify(
        &mut self,
        aggregates: &[AggregatedSpace],
        reference: Option<&EmbeddingSpace>,
        reference_relative: Option<&RelativeSpace>,
    ) -> Result<()> {
        for v in views(aggregates, reference, reference_relative) {
            self.probe(v.name, v.matrix, v.ids, v.labels)?;
        }
        if let (Some(r), true) = (reference, self.cfg.classifier.task_embedding) {
            let tasks: Vec<String> = r.sample_ids.iter().map(|id| self.inputs.task_of[id].clone()).collect();
            let distinct = tasks.iter().collect::<BTreeSet<_>>().len();
            let dim = self.cfg.classifier.task_embedding_dim.unwrap_or(distinct);
            let x = augment_with_task_embedding(&r.embeddings, &tasks, dim, self.cfg.classifier.train.seed)?;
            self.probe("reference_task_embedding", &x, &r.sample_ids, &r.labels)?;
        }
        Ok(())
    }
}

/// Writes the report, the plan, PCA scatters and optionally the aggregated spaces.
pub fn write_outputs(run: &PipelineRun, cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let dir = cfg.output.dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    put(&cfg.output.report, run.report.to_json() + "\n")?;
    if let Some(plan) = &run.plan {
        put("plan.json", plan.to_json() + "\n")?;
    }
    if cfg.output.pca {
        let mut targets: Vec<(&str, &Matrix, &[String], &[Label])> = run
            .aggregates
            .iter()
            .map(|a| (a.mode.as_str(), &a.representation, a.sample_ids.as_slice(), a.labels.as_slice()))
            .collect();
        if let Some(r) = &run.reference {
            targets.push(("reference", &r.embeddings, &r.sample_ids, &r.labels));
        }
        for (name, m, ids, labels) in targets {
            let k = cfg.output.pca_components.min(m.cols());
            let p = pca_project(m, k)?;
            put(&format!("pca_{name}.csv"), pca_csv(ids, labels, &p))?;
            if cfg.output.svg {
                put(&format!("pca_{name}.svg"), pca_svg(labels, &p, &format!("PCA of {name}")))?;
            }
        }
    }
    if cfg.output.spaces {
        for a in &run.aggregates {
            let path = dir.join(format!("aggregate_{}.lsa", a.mode));
            write_space(&aggregated_to_space(a, a.mode.as_str())?, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}
