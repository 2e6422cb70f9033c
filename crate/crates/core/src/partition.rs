//! Task partition schemes and the anchor-pool / evaluation holdouts.
//!
//! A [`PartitionPlan`] says which classes (and what share of each class's
//! samples) every task sees. [`apply_plan`] resolves it against concrete
//! sample ids into a [`TaskAssignment`].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{shuffle, Seed};
use crate::space::Label;

pub const DEFAULT_ANCHOR_FRACTION: f64 = 0.05;
pub const DEFAULT_EVAL_FRACTION: f64 = 0.2;

// Sub-stream tags for the plan seed.
const CLASS_SHUFFLE: u64 = 1;
const SAMPLE_SHUFFLE: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    SharedNovel,
    ImbalancedSharedClasses,
    FullyDisjoint,
    NestedClasses,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorPoolPolicy {
    /// Anchors are drawn from training samples of the classes every task shares.
    FromShared,
    /// A stratified slice of every class is withheld from all tasks and used as the pool.
    HeldOutUnseen,
}

/// How much of a class's samples a task takes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Share {
    /// Every sample; several tasks may take the same class this way.
    All,
    /// A disjoint slice. Slices are handed out in task order, so fractions of
    /// one class summing to 1 split it exactly.
    Fraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRule {
    pub class: Label,
    pub share: Share,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPlan {
    pub name: String,
    pub rules: Vec<ClassRule>,
}

impl TaskPlan {
    fn all(name: String, classes: impl IntoIterator<Item = Label>) -> Self {
        let mut classes: Vec<Label> = classes.into_iter().collect();
        classes.sort_unstable();
        Self { name, rules: classes.into_iter().map(|class| ClassRule { class, share: Share::All }).collect() }
    }

    pub fn classes(&self) -> Vec<Label> {
        self.rules.iter().map(|r| r.class).collect()
    }
}

/// Scheme parameters, echoed into reports.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanParams {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub shared: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub novel: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub minority_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub start: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub max_classes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub scheme: Scheme,
    pub num_classes: usize,
    pub params: PlanParams,
    /// Classes present in every task.
    pub shared_classes: Vec<Label>,
    pub tasks: Vec<TaskPlan>,
    /// Classes the probe is restricted to, when the scheme calls for it.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eval_classes: Option<Vec<Label>>,
    pub anchor_pool_policy: AnchorPoolPolicy,
    pub anchor_fraction: f64,
    pub eval_fraction: f64,
    pub seed: Seed,
}

impl PartitionPlan {
    pub fn with_anchor_fraction(mut self, f: f64) -> Self {
        self.anchor_fraction = f;
        self
    }

    pub fn with_eval_fraction(mut self, f: f64) -> Self {
        self.eval_fraction = f;
        self
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Every class some task uses, ascending.
    pub fn referenced_classes(&self) -> BTreeSet<Label> {
        self.tasks.iter().flat_map(|t| t.rules.iter().map(|r| r.class)).collect()
    }

    /// Structural checks shared by every scheme.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.anchor_fraction) || !(0.0..1.0).contains(&self.eval_fraction) {
            return Err(Error::InvalidParameter("holdout fractions must be in [0, 1)".into()));
        }
        if self.anchor_fraction + self.eval_fraction >= 1.0 {
            return Err(Error::InvalidParameter("holdouts leave no training samples".into()));
        }
        for t in &self.tasks {
            for r in &t.rules {
                if r.class as usize >= self.num_classes {
                    return Err(Error::InvalidCounts(format!("class {} outside [0, {})", r.class, self.num_classes)));
                }
                if let Share::Fraction(f) = r.share {
                    if !(f > 0.0 && f <= 1.0) {
                        return Err(Error::InvalidParameter(format!("fraction {f} must be in (0, 1]")));
                    }
                }
            }
        }
        Ok(())
    }

    fn base(scheme: Scheme, num_classes: usize, policy: AnchorPoolPolicy, seed: Seed) -> Self {
        Self {
            scheme,
            num_classes,
            params: PlanParams::default(),
            shared_classes: Vec::new(),
            tasks: Vec::new(),
            eval_classes: None,
            anchor_pool_policy: policy,
            anchor_fraction: DEFAULT_ANCHOR_FRACTION,
            eval_fraction: DEFAULT_EVAL_FRACTION,
            seed,
        }
    }
}

fn shuffled_classes(num_classes: usize, seed: Seed) -> Vec<Label> {
    let mut classes: Vec<Label> = (0..num_classes as Label).collect();
    shuffle(&mut classes, &mut seed.derive(CLASS_SHUFFLE).rng());
    classes
}

fn sorted(mut v: Vec<Label>) -> Vec<Label> {
    v.sort_unstable();
    v
}

/// `K = (C - S) / N` tasks, each with the `S` shared classes plus `N` novel
/// classes of its own. Which classes are shared, and which novel classes go
/// to which task, is drawn from `seed`.
pub fn make_shared_novel_plan(num_classes: usize, shared: usize, novel: usize, seed: Seed) -> Result<PartitionPlan> {
    if shared == 0 || shared >= num_classes || novel == 0 {
        return Err(Error::InvalidCounts(format!("need 0 < S < C and N >= 1 (C={num_classes}, S={shared}, N={novel})")));
    }
    let remaining = num_classes - shared;
    if !remaining.is_multiple_of(novel) {
        return Err(Error::NotDivisible { remaining, novel });
    }
    let order = shuffled_classes(num_classes, seed);
    let shared_classes = sorted(order[..shared].to_vec());
    let tasks = order[shared..]
        .chunks(novel)
        .enumerate()
        .map(|(k, own)| TaskPlan::all(format!("task_{k}"), shared_classes.iter().chain(own).copied()))
        .collect();
    let mut plan = PartitionPlan::base(Scheme::SharedNovel, num_classes, AnchorPoolPolicy::FromShared, seed);
    plan.params = PlanParams { shared: Some(shared), novel: Some(novel), ..PlanParams::default() };
    plan.shared_classes = shared_classes;
    plan.tasks = tasks;
    Ok(plan)
}

/// Two tasks over all classes with opposite imbalance: the first takes
/// `minority_fraction` of every class in `0..C/2` and the complement share of
/// every class in `C/2..C`; the second takes the rest.
pub fn make_imbalanced_plan(num_classes: usize, minority_fraction: f64, seed: Seed) -> Result<PartitionPlan> {
    if !num_classes.is_multiple_of(2) {
        return Err(Error::OddClassCount(num_classes));
    }
    if num_classes == 0 {
        return Err(Error::InvalidCounts("need at least two classes".into()));
    }
    if !(minority_fraction > 0.0 && minority_fraction < 0.5) {
        return Err(Error::InvalidParameter(format!("minority fraction {minority_fraction} must be in (0, 0.5)")));
    }
    let half = (num_classes / 2) as Label;
    let rules = |first: f64| -> Vec<ClassRule> {
        (0..num_classes as Label)
            .map(|class| ClassRule {
                class,
                share: Share::Fraction(if class < half { first } else { 1.0 - first }),
            })
            .collect()
    };
    let mut plan =
        PartitionPlan::base(Scheme::ImbalancedSharedClasses, num_classes, AnchorPoolPolicy::HeldOutUnseen, seed);
    plan.params = PlanParams { minority_fraction: Some(minority_fraction), ..PlanParams::default() };
    plan.shared_classes = (0..num_classes as Label).collect();
    plan.tasks = vec![
        TaskPlan { name: "task_0".into(), rules: rules(minority_fraction) },
        TaskPlan { name: "task_1".into(), rules: rules(1.0 - minority_fraction) },
    ];
    Ok(plan)
}

/// Two tasks over the two halves of a seeded class permutation; samples and
/// classes are both disjoint. Anchors come from a stratified held-out pool.
pub fn make_disjoint_plan(num_classes: usize, seed: Seed) -> Result<PartitionPlan> {
    if !num_classes.is_multiple_of(2) {
        return Err(Error::OddClassCount(num_classes));
    }
    if num_classes == 0 {
        return Err(Error::InvalidCounts("need at least two classes".into()));
    }
    let order = shuffled_classes(num_classes, seed);
    let (a, b) = order.split_at(num_classes / 2);
    let mut plan = PartitionPlan::base(Scheme::FullyDisjoint, num_classes, AnchorPoolPolicy::HeldOutUnseen, seed);
    plan.tasks = vec![TaskPlan::all("task_0".into(), a.to_vec()), TaskPlan::all("task_1".into(), b.to_vec())];
    Ok(plan)
}

/// Nested class sets `{c_1..c_start} ⊂ {c_1..c_start+1} ⊂ … ⊂ {c_1..c_M}` over
/// a seeded class order; the probe is evaluated on the first `start` classes.
pub fn make_nested_plan(num_classes: usize, start: usize, max_classes: usize, seed: Seed) -> Result<PartitionPlan> {
    if !(3 <= start && start <= max_classes && max_classes <= num_classes) {
        return Err(Error::InvalidCounts(format!(
            "need 3 <= start <= M <= C (start={start}, M={max_classes}, C={num_classes})"
        )));
    }
    let order = shuffled_classes(num_classes, seed);
    let core = sorted(order[..start].to_vec());
    let mut plan = PartitionPlan::base(Scheme::NestedClasses, num_classes, AnchorPoolPolicy::FromShared, seed);
    plan.params = PlanParams { start: Some(start), max_classes: Some(max_classes), ..PlanParams::default() };
    plan.tasks = (start..=max_classes)
        .enumerate()
        .map(|(k, size)| TaskPlan::all(format!("task_{k}"), order[..size].iter().copied()))
        .collect();
    plan.shared_classes = core.clone();
    plan.eval_classes = Some(core);
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    pub name: String,
    pub classes: Vec<Label>,
    pub train_ids: Vec<String>,
    /// Evaluation samples this task's model is responsible for embedding.
    pub eval_ids: Vec<String>,
}

/// Concrete sample ids per task plus the global holdouts. All id lists are sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAssignment {
    pub scheme: Scheme,
    pub anchor_pool_policy: AnchorPoolPolicy,
    pub tasks: Vec<TaskSet>,
    pub anchor_pool: Vec<String>,
    pub eval_ids: Vec<String>,
    pub seed: Seed,
}

impl TaskAssignment {
    /// Lists every broken invariant; empty when the assignment is sound.
    pub fn check_invariants(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let eval: BTreeSet<&String> = self.eval_ids.iter().collect();
        let pool: BTreeSet<&String> = self.anchor_pool.iter().collect();
        for t in &self.tasks {
            let train: BTreeSet<&String> = t.train_ids.iter().collect();
            if let Some(id) = train.intersection(&eval).next() {
                problems.push(format!("{}: training id `{id}` is also held out for evaluation", t.name));
            }
            if t.eval_ids.iter().any(|id| !eval.contains(id)) {
                problems.push(format!("{}: task eval ids are not a subset of the evaluation set", t.name));
            }
            match self.anchor_pool_policy {
                AnchorPoolPolicy::HeldOutUnseen => {
                    if let Some(id) = train.intersection(&pool).next() {
                        problems.push(format!("{}: anchor `{id}` is a training sample", t.name));
                    }
                }
                AnchorPoolPolicy::FromShared => {
                    if let Some(id) = pool.iter().find(|id| !train.contains(*id)) {
                        problems.push(format!("{}: shared anchor `{id}` is not in its training set", t.name));
                    }
                }
            }
        }
        if let Some(id) = pool.intersection(&eval).next() {
            problems.push(format!("anchor `{id}` is also held out for evaluation"));
        }
        if matches!(self.scheme, Scheme::FullyDisjoint | Scheme::ImbalancedSharedClasses) {
            for (i, a) in self.tasks.iter().enumerate() {
                let a_ids: BTreeSet<&String> = a.train_ids.iter().collect();
                for b in &self.tasks[i + 1..] {
                    if b.train_ids.iter().any(|id| a_ids.contains(id)) {
                        problems.push(format!("{} and {} share training samples", a.name, b.name));
                    }
                }
            }
        }
        problems
    }

    pub fn task(&self, name: &str) -> Option<&TaskSet> {
        self.tasks.iter().find(|t| t.name == name)
    }
}

/// Plan plus its resolution, as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub plan: PartitionPlan,
    pub assignment: TaskAssignment,
}

impl PlanDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn rounded(n: usize, f: f64) -> usize {
    ((n as f64) * f).round() as usize
}

/// Hands out disjoint slices of `ids` to the tasks with a fraction rule for
/// `class`, and the whole list to tasks taking all of it.
fn distribute(class: Label, ids: &[String], plan: &PartitionPlan, out: &mut [Vec<String>], what: &str) -> Result<()> {
    let m = ids.len();
    let mut cum: f64 = 0.0;
    for (k, task) in plan.tasks.iter().enumerate() {
        for r in task.rules.iter().filter(|r| r.class == class) {
            match r.share {
                Share::All => out[k].extend_from_slice(ids),
                Share::Fraction(f) => {
                    let start = rounded(m, cum.min(1.0));
                    cum += f;
                    let end = rounded(m, cum.min(1.0));
                    if end <= start && what == "train" {
                        return Err(Error::InsufficientSamples {
                            class,
                            reason: format!("{} gets no training samples out of {m}", task.name),
                        });
                    }
                    out[k].extend_from_slice(&ids[start..end.max(start)]);
                }
            }
        }
    }
    Ok(())
}

/// Resolves `plan` against concrete samples.
///
/// Per class (samples sorted by id, then shuffled from the plan seed): the
/// anchor holdout is carved first when the policy withholds anchors, then
/// the evaluation holdout, and the remainder is distributed to the tasks.
/// Evaluation samples are distributed by the same rules so each one is
/// embedded by the task(s) that would see its class.
pub fn apply_plan(sample_ids: &[String], labels: &[Label], plan: &PartitionPlan) -> Result<TaskAssignment> {
    if sample_ids.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: sample_ids.len(), actual: labels.len() });
    }
    plan.validate()?;
    let mut by_class: BTreeMap<Label, Vec<String>> = BTreeMap::new();
    for (id, &l) in sample_ids.iter().zip(labels) {
        by_class.entry(l).or_default().push(id.clone());
    }
    let mut rng = plan.seed.derive(SAMPLE_SHUFFLE).rng();
    let held_out = plan.anchor_pool_policy == AnchorPoolPolicy::HeldOutUnseen;

    let mut train: Vec<Vec<String>> = vec![Vec::new(); plan.tasks.len()];
    let mut task_eval: Vec<Vec<String>> = vec![Vec::new(); plan.tasks.len()];
    let mut anchor_pool = Vec::new();
    let mut eval_ids = Vec::new();

    for class in plan.referenced_classes() {
        let mut ids = by_class.remove(&class).unwrap_or_default();
        if ids.is_empty() {
            return Err(Error::InsufficientSamples { class, reason: "no samples".into() });
        }
        ids.sort();
        shuffle(&mut ids, &mut rng);
        let n = ids.len();
        let n_anchor = if held_out { rounded(n, plan.anchor_fraction).max(1) } else { 0 };
        let n_eval = rounded(n, plan.eval_fraction);
        if n_anchor + n_eval >= n {
            return Err(Error::InsufficientSamples {
                class,
                reason: format!("{n} samples cannot cover {n_anchor} anchor + {n_eval} evaluation holdouts"),
            });
        }
        let (anchors, rest) = ids.split_at(n_anchor);
        let (eval, rest) = rest.split_at(n_eval);
        anchor_pool.extend_from_slice(anchors);
        eval_ids.extend_from_slice(eval);
        distribute(class, rest, plan, &mut train, "train")?;
        distribute(class, eval, plan, &mut task_eval, "eval")?;
    }

    let tasks: Vec<TaskSet> = plan
        .tasks
        .iter()
        .zip(train.into_iter().zip(task_eval))
        .map(|(t, (mut train_ids, mut eval))| {
            train_ids.sort();
            eval.sort();
            TaskSet { name: t.name.clone(), classes: t.classes(), train_ids, eval_ids: eval }
        })
        .collect();

    if !held_out {
        // Shared-class training samples are in every task by construction.
        let shared: BTreeSet<Label> = plan.shared_classes.iter().copied().collect();
        let label_of: BTreeMap<&str, Label> = sample_ids.iter().map(String::as_str).zip(labels.iter().copied()).collect();
        anchor_pool = tasks
            .first()
            .map(|t| t.train_ids.iter().filter(|id| shared.contains(&label_of[id.as_str()])).cloned().collect())
            .unwrap_or_default();
    }
    anchor_pool.sort();
    eval_ids.sort();
    Ok(TaskAssignment {
        scheme: plan.scheme,
        anchor_pool_policy: plan.anchor_pool_policy,
        tasks,
        anchor_pool,
        eval_ids,
        seed: plan.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(classes: usize, per_class: usize) -> (Vec<String>, Vec<Label>) {
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        for c in 0..classes {
            for i in 0..per_class {
                ids.push(format!("c{c:03}_{i:03}"));
                labels.push(c as Label);
            }
        }
        (ids, labels)
    }

    #[test]
    fn shared_novel_task_counts() {
        assert_eq!(make_shared_novel_plan(100, 80, 10, Seed(0)).unwrap().num_tasks(), 2);
        assert_eq!(make_shared_novel_plan(100, 20, 5, Seed(0)).unwrap().num_tasks(), 16);
        assert!(matches!(
            make_shared_novel_plan(100, 75, 10, Seed(0)),
            Err(Error::NotDivisible { remaining: 25, novel: 10 })
        ));
        assert!(matches!(make_shared_novel_plan(10, 10, 1, Seed(0)), Err(Error::InvalidCounts(_))));
        assert!(matches!(make_shared_novel_plan(10, 0, 1, Seed(0)), Err(Error::InvalidCounts(_))));
    }

    #[test]
    fn shared_novel_class_structure() {
        let plan = make_shared_novel_plan(30, 10, 5, Seed(3)).unwrap();
        let shared: BTreeSet<Label> = plan.shared_classes.iter().copied().collect();
        let mut novel_union = BTreeSet::new();
        for t in &plan.tasks {
            let classes: BTreeSet<Label> = t.classes().into_iter().collect();
            assert!(shared.is_subset(&classes));
            let novel: BTreeSet<Label> = classes.difference(&shared).copied().collect();
            assert_eq!(novel.len(), 5);
            assert!(novel_union.is_disjoint(&novel));
            novel_union.extend(novel);
        }
        let all: BTreeSet<Label> = shared.union(&novel_union).copied().collect();
        assert_eq!(all, (0..30).collect());
    }

    #[test]
    fn shared_novel_assignment() {
        let plan = make_shared_novel_plan(8, 4, 2, Seed(1)).unwrap();
        let (ids, labels) = dataset(8, 20);
        let a = apply_plan(&ids, &labels, &plan).unwrap();
        assert!(a.check_invariants().is_empty(), "{:?}", a.check_invariants());
        let eval: BTreeSet<&String> = a.eval_ids.iter().collect();
        let shared: BTreeSet<Label> = plan.shared_classes.iter().copied().collect();
        for (id, l) in ids.iter().zip(&labels) {
            if shared.contains(l) && !eval.contains(id) {
                assert!(a.tasks.iter().all(|t| t.train_ids.binary_search(id).is_ok()));
            }
        }
        // 20% of each class held out, nothing withheld for anchors.
        assert_eq!(a.eval_ids.len(), 8 * 4);
        assert_eq!(a.anchor_pool.len(), 4 * 16);
        assert_eq!(a, apply_plan(&ids, &labels, &plan).unwrap());
    }

    #[test]
    fn imbalanced_split() {
        assert!(matches!(make_imbalanced_plan(7, 0.2, Seed(0)), Err(Error::OddClassCount(7))));
        assert!(make_imbalanced_plan(10, 0.5, Seed(0)).is_err());

        let plan = make_imbalanced_plan(100, 0.2, Seed(4)).unwrap().with_eval_fraction(0.0);
        let (ids, labels) = dataset(100, 40);
        let a = apply_plan(&ids, &labels, &plan).unwrap();
        assert!(a.check_invariants().is_empty());
        // 40 samples: 2 anchors, 38 to split.
        let count = |task: usize, class: Label| {
            a.tasks[task].train_ids.iter().filter(|id| id.starts_with(&format!("c{class:03}_"))).count()
        };
        for c in 0..50 {
            assert_eq!(count(0, c), 8);
            assert_eq!(count(1, c), 30);
        }
        for c in 50..100 {
            assert_eq!(count(0, c), 30);
            assert_eq!(count(1, c), 8);
        }
        let mut union: Vec<String> = a.tasks.iter().flat_map(|t| t.train_ids.clone()).collect();
        union.extend(a.anchor_pool.iter().cloned());
        union.sort();
        assert_eq!(union, ids);
    }

    #[test]
    fn disjoint_split() {
        assert!(matches!(make_disjoint_plan(5, Seed(0)), Err(Error::OddClassCount(5))));
        let plan = make_disjoint_plan(100, Seed(2)).unwrap();
        let a: BTreeSet<Label> = plan.tasks[0].classes().into_iter().collect();
        let b: BTreeSet<Label> = plan.tasks[1].classes().into_iter().collect();
        assert_eq!((a.len(), b.len()), (50, 50));
        assert!(a.is_disjoint(&b));

        let (ids, labels) = dataset(100, 30);
        let asg = apply_plan(&ids, &labels, &plan).unwrap();
        assert!(asg.check_invariants().is_empty());
        let t0: BTreeSet<&String> = asg.tasks[0].train_ids.iter().collect();
        assert!(asg.tasks[1].train_ids.iter().all(|id| !t0.contains(id)));
        let anchor_classes: BTreeSet<&str> = asg.anchor_pool.iter().map(|id| &id[..4]).collect();
        assert_eq!(anchor_classes.len(), 100);
    }

    #[test]
    fn nested_sets() {
        let plan = make_nested_plan(10, 3, 5, Seed(0)).unwrap();
        let sets: Vec<BTreeSet<Label>> = plan.tasks.iter().map(|t| t.classes().into_iter().collect()).collect();
        assert_eq!(sets.iter().map(BTreeSet::len).collect::<Vec<_>>(), vec![3, 4, 5]);
        assert!(sets.windows(2).all(|w| w[0].is_subset(&w[1])));
        assert_eq!(plan.eval_classes.as_ref().unwrap().len(), 3);
        assert_eq!(make_nested_plan(10, 4, 4, Seed(0)).unwrap().num_tasks(), 1);
        assert!(matches!(make_nested_plan(10, 2, 5, Seed(0)), Err(Error::InvalidCounts(_))));
        assert!(matches!(make_nested_plan(10, 6, 5, Seed(0)), Err(Error::InvalidCounts(_))));
        assert!(matches!(make_nested_plan(4, 3, 5, Seed(0)), Err(Error::InvalidCounts(_))));
    }

    #[test]
    fn insufficient_samples_names_the_class() {
        let plan = make_disjoint_plan(4, Seed(0)).unwrap();
        let (mut ids, _) = dataset(4, 10);
        ids.retain(|id| !id.starts_with("c002_") || id.as_str() < "c002_001");
        let labels: Vec<Label> = ids.iter().map(|id| id[1..4].parse::<Label>().unwrap()).collect();
        let err = apply_plan(&ids, &labels, &plan).unwrap_err();
        assert!(matches!(err, Error::InsufficientSamples { class: 2, .. }), "{err}");
    }

    #[test]
    fn plan_document_round_trips() {
        let plan = make_imbalanced_plan(6, 0.25, Seed(8)).unwrap();
        let (ids, labels) = dataset(6, 20);
        let doc = PlanDocument { assignment: apply_plan(&ids, &labels, &plan).unwrap(), plan };
        let back = PlanDocument::from_json(&doc.to_json()).unwrap();
        assert_eq!(back, doc);
    }
}
