use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rlsa::aggregate::{absolute_union, naive_mean_aggregate, rlsa_aggregate};
use rlsa::evaluation::{evaluate_accuracy, fit_logistic, fit_nearest_centroid, ClassifierKind, TrainConfig};
use rlsa::io::{aggregated_to_space, pca_csv, pca_svg, read_space, write_space};
use rlsa::linalg::{pca_project, shuffle};
use rlsa::metrics::{align_by_id, cka, separability_summary, SummaryMode};
use rlsa::partition::{apply_plan, PlanDocument, Scheme};
use rlsa::pipeline::{build_plan, run_pipeline, task_transform, PartitionConfig, SynthConfig};
use rlsa::relative::{project_relative_with, select_anchor_ids, AnchorSet, DEFAULT_ANCHOR_COUNT};
use rlsa::space::{AnySpace, EmbeddingSpace, RelativeSpace};
use rlsa::synth::{derive_task_space, generate_base_space};
use rlsa::{AggregationMode, Error, MetricReport, Seed};

#[derive(Parser)]
#[command(name = "rlsa", version, about = "Merge latent spaces through relative representations")]
struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Number of anchors to select.
    #[arg(long, global = true, default_value_t = DEFAULT_ANCHOR_COUNT)]
    anchors: usize,
    #[arg(long, global = true, value_enum, default_value_t = Mode::Relative)]
    mode: Mode,
    /// Directory for output files; reports go to stdout when omitted.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = ReportFormat::Json)]
    report: ReportFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Relative,
    Naive,
    Union,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Lsa,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Summary {
    Mean,
    Min,
}

#[derive(Clone, Copy, ValueEnum)]
enum Probe {
    Logistic,
    NearestCentroid,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic base space and optionally rotated task copies.
    Synth {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 50)]
        per_class: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 0.1)]
        spread: f64,
        /// Number of task spaces derived from the base.
        #[arg(long, default_value_t = 0)]
        tasks: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0.0)]
        footprint: f64,
        #[arg(long, value_enum, default_value_t = Format::Lsa)]
        format: Format,
    },
    /// Build a partition plan and, given a space, resolve it to sample ids.
    Partition {
        #[arg(long)]
        scheme: SchemeArg,
        /// Class count; read from the space when `--input` is given.
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        shared: Option<usize>,
        #[arg(long)]
        novel: Option<usize>,
        #[arg(long)]
        minority_fraction: Option<f64>,
        #[arg(long)]
        start: Option<usize>,
        #[arg(long)]
        max_classes: Option<usize>,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Project a space onto anchors.
    Project {
        input: PathBuf,
        /// File with one anchor id per line; drawn from the space when omitted.
        #[arg(long)]
        anchor_ids: Option<PathBuf>,
        /// Space from the same model holding the anchor embeddings.
        #[arg(long)]
        anchor_source: Option<PathBuf>,
    },
    /// Merge several spaces with the selected `--mode`.
    Aggregate {
        #[arg(required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
    },
    /// Linear CKA between two spaces, rows matched by sample id.
    Cka { a: PathBuf, b: PathBuf },
    /// Pairwise class separability.
    Separability {
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Summary::Mean)]
        summary: Summary,
    },
    /// Train a probe and report held-out accuracy.
    Classify {
        train: PathBuf,
        /// Evaluation space; a seeded 80/20 split of `train` otherwise.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Probe::Logistic)]
        probe: Probe,
    },
    /// Principal-component scatter as CSV, optionally SVG.
    Pca {
        input: PathBuf,
        #[arg(long, default_value_t = 2)]
        components: usize,
        #[arg(long)]
        svg: bool,
    },
    /// Run a TOML-configured end-to-end pipeline.
    Pipeline { config: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    SharedNovel,
    Imbalanced,
    Disjoint,
    Nested,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string();
            eprintln!("error: {msg}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                let cause = s.to_string();
                if !msg.contains(&cause) {
                    eprintln!("  caused by: {cause}");
                }
                source = s.source();
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 for invalid input or domain errors, 3 for I/O and other internal failures.
fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Io { .. } => 3,
        _ => 1,
    }
}

fn execute(cli: &Cli) -> rlsa::Result<()> {
    match &cli.command {
        Command::Synth { classes, per_class, dim, spread, tasks, noise, footprint, format } => {
            let dir = output_dir(cli)?;
            let base = generate_base_space(*classes, *per_class, *dim, *spread, Seed(cli.seed))?;
            let ext = match format {
                Format::Lsa => "lsa",
                Format::Csv => "csv",
            };
            write_space(&AnySpace::Absolute(base.clone()), dir.join(format!("base.{ext}")))?;
            let synth = SynthConfig {
                num_classes: *classes,
                per_class: *per_class,
                dim: *dim,
                cluster_spread: *spread,
                seed: cli.seed,
                noise: *noise,
                scales: Vec::new(),
                footprint: *footprint,
                translation: 0.0,
            };
            for k in 0..*tasks {
                let name = format!("task_{k}");
                let space = derive_task_space(&base, &base.sample_ids, &task_transform(&synth, k, &name))?;
                write_space(&AnySpace::Absolute(space), dir.join(format!("{name}.{ext}")))?;
            }
            Ok(())
        }
        Command::Partition { scheme, classes, shared, novel, minority_fraction, start, max_classes, input } => {
            let space = input.as_ref().map(read_absolute).transpose()?;
            let num_classes = match (classes, &space) {
                (Some(c), _) => *c,
                (None, Some(s)) => s.labels.iter().max().map_or(0, |&m| m as usize + 1),
                (None, None) => return Err(Error::InvalidParameter("--classes or --input is required".into())),
            };
            let cfg = PartitionConfig {
                scheme: match scheme {
                    SchemeArg::SharedNovel => Scheme::SharedNovel,
                    SchemeArg::Imbalanced => Scheme::ImbalancedSharedClasses,
                    SchemeArg::Disjoint => Scheme::FullyDisjoint,
                    SchemeArg::Nested => Scheme::NestedClasses,
                },
                shared: *shared,
                novel: *novel,
                minority_fraction: *minority_fraction,
                start: *start,
                max_classes: *max_classes,
                anchor_fraction: rlsa::partition::DEFAULT_ANCHOR_FRACTION,
                eval_fraction: rlsa::partition::DEFAULT_EVAL_FRACTION,
                seed: cli.seed,
            };
            let plan = build_plan(&cfg, num_classes)?;
            let body = match &space {
                Some(s) => {
                    let assignment = apply_plan(&s.sample_ids, &s.labels, &plan)?;
                    PlanDocument { plan, assignment }.to_json()
                }
                None => serde_json::to_string_pretty(&plan).map_err(Error::from)?,
            };
            emit(cli, "plan.json", &body)
        }
        Command::Project { input, anchor_ids, anchor_source } => {
            let space = read_absolute(input)?;
            let source = anchor_source.as_ref().map(read_absolute).transpose()?.unwrap_or_else(|| space.clone());
            let anchors = match anchor_ids {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| io_error(p, e))?;
                    AnchorSet::new(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())?
                }
                None => select_anchor_ids(&source.sample_ids, cli.anchors, Seed(cli.seed))?,
            };
            let rel = project_relative_with(&space, &anchors, &source)?;
            let dir = output_dir(cli)?;
            fs::write(dir.join("anchors.txt"), anchors.ids().join("\n") + "\n").map_err(|e| io_error(&dir, e))?;
            write_space(&AnySpace::Relative(rel), dir.join("relative.lsa"))
        }
        Command::Aggregate { inputs } => {
            let spaces: Vec<AnySpace> = inputs.iter().map(read_space).collect::<rlsa::Result<_>>()?;
            let agg = match cli.mode {
                Mode::Relative => {
                    let rel: Vec<RelativeSpace> = spaces
                        .into_iter()
                        .map(|s| match s {
                            AnySpace::Relative(r) => Ok(r),
                            AnySpace::Absolute(a) => Err(Error::InvalidParameter(format!(
                                "`{}` is absolute; project it first or use --mode naive|union",
                                a.task_id
                            ))),
                        })
                        .collect::<rlsa::Result<_>>()?;
                    rlsa_aggregate(&rel)?
                }
                Mode::Naive | Mode::Union => {
                    let abs: Vec<EmbeddingSpace> = spaces
                        .into_iter()
                        .map(|s| match s {
                            AnySpace::Absolute(a) => Ok(a),
                            AnySpace::Relative(r) => Err(Error::InvalidParameter(format!(
                                "`{}` is relative; use --mode relative",
                                r.task_id
                            ))),
                        })
                        .collect::<rlsa::Result<_>>()?;
                    if matches!(cli.mode, Mode::Naive) {
                        naive_mean_aggregate(&abs)?
                    } else {
                        absolute_union(&abs)?
                    }
                }
            };
            let dir = output_dir(cli)?;
            write_space(&aggregated_to_space(&agg, "aggregate")?, dir.join(format!("aggregate_{}.lsa", agg.mode)))
        }
        Command::Cka { a, b } => {
            let (sa, sb) = (read_space(a)?, read_space(b)?);
            let (ids, ma, mb) = align_by_id(sa.sample_ids(), sa.matrix(), sb.sample_ids(), sb.matrix());
            let mut report = MetricReport::default();
            report.push("cka", mode_name(&sa), "overall", cka(&ma, &mb)?);
            report.notes.push(format!("{} shared sample ids", ids.len()));
            emit_report(cli, report)
        }
        Command::Separability { input, summary } => {
            let s = read_space(input)?;
            let (mode, metric) = match summary {
                Summary::Mean => (SummaryMode::Mean, "separability_mean"),
                Summary::Min => (SummaryMode::Min, "separability_min"),
            };
            let r = separability_summary(s.matrix(), s.labels(), mode, None)?;
            let mut report = MetricReport::default();
            if r.value.is_finite() {
                report.push(metric, mode_name(&s), "all_pairs", r.value);
            } else {
                report.notes.push("every class pair has zero spread".into());
            }
            if !r.infinite_pairs.is_empty() {
                report.notes.push(format!("{} zero-spread pairs left out", r.infinite_pairs.len()));
            }
            emit_report(cli, report)
        }
        Command::Classify { train, test, probe } => {
            let tr = read_space(train)?;
            let (xtr, ytr, xte, yte, idte) = match test {
                Some(p) => {
                    let te = read_space(p)?;
                    (tr.matrix().clone(), tr.labels().to_vec(), te.matrix().clone(), te.labels().to_vec(), te.sample_ids().to_vec())
                }
                None => {
                    let mut order: Vec<usize> = (0..tr.sample_ids().len()).collect();
                    shuffle(&mut order, &mut Seed(cli.seed).rng());
                    let n_test = (order.len() as f64 * 0.2).round() as usize;
                    let (te, trn) = order.split_at(n_test);
                    let pick = |rows: &[usize]| {
                        (tr.matrix().select_rows(rows), rows.iter().map(|&i| tr.labels()[i]).collect::<Vec<_>>())
                    };
                    let ((xtr, ytr), (xte, yte)) = (pick(trn), pick(te));
                    (xtr, ytr, xte, yte, te.iter().map(|&i| tr.sample_ids()[i].clone()).collect())
                }
            };
            let cfg = TrainConfig { seed: Seed(cli.seed), ..TrainConfig::default() };
            let model = match probe {
                Probe::Logistic => fit_logistic(&xtr, &ytr, &cfg)?,
                Probe::NearestCentroid => fit_nearest_centroid(&xtr, &ytr)?,
            };
            let mut report = evaluate_accuracy(&model, &xte, &yte, Some(&idte), &[])?;
            for e in &mut report.entries {
                e.mode = mode_name(&tr).into();
            }
            let kind: ClassifierKind = model.kind();
            report.config.insert("classifier_kind".into(), kind.as_str().into());
            emit_report(cli, report)
        }
        Command::Pca { input, components, svg } => {
            let s = read_space(input)?;
            let p = pca_project(s.matrix(), *components)?;
            let dir = output_dir(cli)?;
            let csv_path = dir.join("pca.csv");
            fs::write(&csv_path, pca_csv(s.sample_ids(), s.labels(), &p)).map_err(|e| io_error(&csv_path, e))?;
            if *svg {
                let svg_path = dir.join("pca.svg");
                let title = input.file_name().and_then(|n| n.to_str()).unwrap_or("space");
                fs::write(&svg_path, pca_svg(s.labels(), &p, title)).map_err(|e| io_error(&svg_path, e))?;
            }
            Ok(())
        }
        Command::Pipeline { config } => {
            let mut out = std::io::stdout();
            for path in run_pipeline(config)? {
                let _ = writeln!(out, "{}", path.display());
            }
            Ok(())
        }
    }
}

fn mode_name(s: &AnySpace) -> &'static str {
    match s {
        AnySpace::Absolute(_) => "absolute",
        AnySpace::Relative(_) => AggregationMode::Relative.as_str(),
    }
}

fn read_absolute(path: &PathBuf) -> rlsa::Result<EmbeddingSpace> {
    rlsa::io::read_embedding_space(path)
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source: e }
}

fn output_dir(cli: &Cli) -> rlsa::Result<PathBuf> {
    let dir = cli.output.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
    Ok(dir)
}

fn emit(cli: &Cli, name: &str, body: &str) -> rlsa::Result<()> {
    match &cli.output {
        Some(_) => {
            let path = output_dir(cli)?.join(name);
            fs::write(&path, format!("{body}\n")).map_err(|e| io_error(&path, e))
        }
        None => {
            // A closed pipe (e.g. `| head`) is not an error worth reporting.
            let _ = writeln!(std::io::stdout(), "{body}");
            Ok(())
        }
    }
}

fn emit_report(cli: &Cli, mut report: MetricReport) -> rlsa::Result<()> {
    let ReportFormat::Json = cli.report;
    report.stamp(None, &[("seed".to_string(), cli.seed)].into_iter().collect());
    emit(cli, "report.json", &report.to_json())
}
