use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rlsa(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rlsa")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = rlsa(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn value(report: &str, metric: &str) -> f64 {
    let v: serde_json::Value = serde_json::from_str(report).unwrap();
    v["entries"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["metric"] == metric)
        .and_then(|e| e["value"].as_f64())
        .unwrap_or_else(|| panic!("no {metric} in {report}"))
}

#[test]
fn rotated_tasks_merge_to_the_base_geometry() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--classes", "4", "--per-class", "15", "--dim", "8", "--tasks", "2", "--seed", "3", "--output", "s"]);
    ok(d, &["project", "s/base.lsa", "--anchors", "12", "--output", "p"]);
    for t in ["task_0", "task_1"] {
        ok(d, &["project", &format!("s/{t}.lsa"), "--anchor-ids", "p/anchors.txt", "--output", t]);
    }
    ok(d, &["aggregate", "task_0/relative.lsa", "task_1/relative.lsa", "--output", "agg"]);
    let report = ok(d, &["cka", "agg/aggregate_relative.lsa", "p/relative.lsa"]);
    assert!((value(&report, "cka") - 1.0).abs() <= 1e-6);

    // Absolute coordinates of two differently rotated copies do not average to the base.
    ok(d, &["aggregate", "--mode", "naive", "s/task_0.lsa", "s/task_1.lsa", "--output", "agg"]);
    let naive = ok(d, &["cka", "agg/aggregate_naive_mean.lsa", "s/base.lsa"]);
    assert!(value(&naive, "cka") < 0.999);

    ok(d, &["aggregate", "--mode", "union", "s/task_0.lsa", "s/task_1.lsa", "--output", "agg"]);
    assert!(d.join("agg/aggregate_absolute_union.lsa").exists());
}

#[test]
fn reports_can_be_written_to_a_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--classes", "3", "--per-class", "20", "--dim", "4", "--spread", "0.01", "--format", "csv", "--output", "s"]);
    let text = fs::read_to_string(d.join("s/base.csv")).unwrap();
    assert!(text.starts_with("id,label,dim_0,dim_1,dim_2,dim_3\n"));
    ok(d, &["separability", "s/base.csv", "--summary", "min", "--output", "r"]);
    let report = fs::read_to_string(d.join("r/report.json")).unwrap();
    assert!(value(&report, "separability_min") >= 10.0);
    let acc = ok(d, &["classify", "s/base.csv", "--probe", "nearest-centroid"]);
    assert_eq!(value(&acc, "accuracy"), 1.0);
}

#[test]
fn pca_writes_csv_and_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--classes", "3", "--per-class", "5", "--dim", "4", "--output", "s"]);
    ok(d, &["pca", "s/base.lsa", "--svg", "--output", "pc"]);
    let csv = fs::read_to_string(d.join("pc/pca.csv")).unwrap();
    assert_eq!(csv.lines().count(), 16);
    assert!(csv.starts_with("id,label,pc_0,pc_1\n"));
    assert!(fs::read_to_string(d.join("pc/pca.svg")).unwrap().contains("<circle"));
}

#[test]
fn partition_reports_plans_and_arithmetic_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let plan: serde_json::Value =
        serde_json::from_str(&ok(d, &["partition", "--scheme", "shared-novel", "--classes", "100", "--shared", "20", "--novel", "5"]))
            .unwrap();
    assert_eq!(plan["tasks"].as_array().unwrap().len(), 16);
    let out = rlsa(d, &["partition", "--scheme", "shared-novel", "--classes", "100", "--shared", "75", "--novel", "10"]);
    assert_eq!(out.status.code(), Some(1));

    ok(d, &["synth", "--classes", "4", "--per-class", "20", "--dim", "4", "--output", "s"]);
    ok(d, &["partition", "--scheme", "disjoint", "--input", "s/base.lsa", "--output", "plan"]);
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("plan/plan.json")).unwrap()).unwrap();
    assert_eq!(doc["assignment"]["tasks"].as_array().unwrap().len(), 2);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(rlsa(d, &["no-such-command"]).status.code(), Some(2));
    assert_eq!(rlsa(d, &["cka", "missing.lsa", "other.lsa"]).status.code(), Some(3));

    fs::write(d.join("bad.lsa"), b"NOPE0000000000000000000000000").unwrap();
    let out = rlsa(d, &["separability", "bad.lsa"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));

    ok(d, &["synth", "--classes", "2", "--per-class", "5", "--dim", "3", "--output", "s"]);
    let out = rlsa(d, &["project", "s/base.lsa", "--anchors", "11"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pool"));
}

#[test]
fn pipeline_runs_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("run.toml"),
        r#"
[synth]
num_classes = 6
per_class = 20
dim = 8
cluster_spread = 0.2
seed = 4

[partition]
scheme = "shared_novel"
shared = 2
novel = 2
seed = 5

[anchors]
count = 16
seed = 6

[classifier]
kind = "nearest_centroid"

[output]
dir = "out"
svg = true
"#,
    )
    .unwrap();
    let listed = ok(d, &["pipeline", "run.toml"]);
    assert!(listed.lines().any(|l| l.ends_with("report.json")));
    let first = fs::read(d.join("out/report.json")).unwrap();
    ok(d, &["pipeline", "run.toml"]);
    assert_eq!(first, fs::read(d.join("out/report.json")).unwrap());
    assert!(d.join("out/pca_relative.svg").exists());
    assert!(d.join("out/plan.json").exists());

    fs::write(d.join("big.toml"), fs::read_to_string(d.join("run.toml")).unwrap().replace("count = 16", "count = 500"))
        .unwrap();
    let out = rlsa(d, &["pipeline", "big.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("select_anchors"));
}
