//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage, 3 load error, 4 numeric failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{plot_csvs, subgroup_report, CorrelationReport, Target, DEFAULT_SIMPSON_STRENGTH};
use crate::error::{Error, Result};
use crate::metrics::{analyze_model, corpus_csv, to_record, ModelMetrics, METRIC_NAMES};
use crate::model_store::{load_model, resolve_corpus, write_label_file, write_model, ModelBundle, Tensor};
use crate::net_eval::{accuracy, Dataset};
use crate::plfit::DEFAULT_MIN_TAIL;
use crate::synth::{self, MlpConfig, SimpsonConfig, SpectralModelConfig};
use crate::transforms::{transform_model, Transform};

#[derive(Debug, Parser)]
#[command(name = "spectral-diag", version, about = "Spectral scale/shape diagnostics for weight matrices")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print per-model metrics as JSON.
    Analyze(AnalyzeArgs),
    /// Correlate a metric with accuracy across a corpus, per subgroup and in aggregate.
    Corpus(CorpusArgs),
    /// Write a transformed copy of a model.
    Smooth(SmoothArgs),
    /// Print the accuracy of a dense model on a dataset.
    Eval(EvalArgs),
    /// Generate synthetic models and corpora.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub model_dir: PathBuf,
    /// Write one KS-vs-x_min CSV per fitted matrix into this directory.
    #[arg(long)]
    pub scan_csv: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MIN_TAIL)]
    pub min_tail: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    TestAcc,
    TrainAcc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupBy {
    Subgroup,
    Group,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// JSON array of model directories, or a directory searched for manifests.
    pub corpus: PathBuf,
    #[arg(long)]
    pub metric: String,
    #[arg(long, value_enum, default_value = "test-acc")]
    pub target: TargetArg,
    #[arg(long, value_enum, default_value = "subgroup")]
    pub by: GroupBy,
    /// Minimum |tau| for a subgroup trend to count as evidence.
    #[arg(long, default_value_t = DEFAULT_SIMPSON_STRENGTH)]
    pub strength: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_TAIL)]
    pub min_tail: usize,
    /// Directory for `models.csv` and one scatter CSV per subgroup.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransformArg {
    Svd10,
    Svd20,
    Clip,
}

#[derive(Debug, Args)]
pub struct SmoothArgs {
    pub model_dir: PathBuf,
    #[arg(long, value_enum)]
    pub transform: TransformArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub model_dir: PathBuf,
    #[arg(long)]
    pub inputs: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(subcommand)]
    pub kind: SynthKind,
}

#[derive(Debug, Subcommand)]
pub enum SynthKind {
    /// Corpus whose subgroup trends oppose the aggregate trend.
    Simpson(CorpusSynthArgs),
    /// Corpus whose subgroup and aggregate trends agree.
    Homogeneous(CorpusSynthArgs),
    /// One dense model with planted layer exponents.
    Model(ModelSynthArgs),
    /// A separable two-layer MLP with its training set.
    Mlp(MlpSynthArgs),
}

#[derive(Debug, Args)]
pub struct CorpusSynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub groups: usize,
    #[arg(long, default_value_t = 18)]
    pub per_group: usize,
    /// Width of each square hidden layer (the ESD length).
    #[arg(long, default_value_t = 100)]
    pub width: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ModelSynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    #[arg(long, default_value_t = 100)]
    pub width: usize,
    /// Also write initial weights, enabling distance_from_init.
    #[arg(long)]
    pub with_init: bool,
    #[arg(long, default_value = "synth")]
    pub model_id: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct MlpSynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    /// Rank of every weight matrix (full rank if omitted).
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = if code == 0 { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn write_stdout(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes") + "\n"
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Characters outside `[A-Za-z0-9_.-]` become `_` so names are safe as file stems.
fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || "_.-".contains(c) { c } else { '_' }).collect()
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Analyze(a) => cmd_analyze(&a, out),
        Command::Corpus(a) => cmd_corpus(&a, out),
        Command::Smooth(a) => cmd_smooth(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Synth(a) => cmd_synth(&a, out),
    }
}

pub fn cmd_analyze(args: &AnalyzeArgs, out: &mut dyn Write) -> Result<()> {
    let bundle = load_model(&args.model_dir)?;
    let (metrics, layers) = analyze_model(&bundle, args.min_tail)?;
    if let Some(dir) = &args.scan_csv {
        for lm in &layers {
            if let Some(fit) = &lm.fit {
                let name = format!("{}_{}.csv", file_stem(&lm.owner_layer), lm.slice_index);
                write_file(&dir.join(name), &fit.scan_csv())?;
            }
        }
    }
    write_stdout(out, &to_json(&metrics))
}

#[derive(Debug, Serialize)]
struct CorpusOutput<'a> {
    #[serde(flatten)]
    report: &'a CorrelationReport,
    models: Vec<&'a ModelMetrics>,
}

pub fn cmd_corpus(args: &CorpusArgs, out: &mut dyn Write) -> Result<()> {
    if !METRIC_NAMES.contains(&args.metric.as_str()) {
        return Err(Error::Usage(format!(
            "unknown metric {:?}; expected one of {}",
            args.metric,
            METRIC_NAMES.join(", ")
        )));
    }
    if !(args.strength >= 0.0 && args.strength <= 1.0) {
        return Err(Error::Usage(format!("--strength must lie in [0, 1], got {}", args.strength)));
    }
    let target = match args.target {
        TargetArg::TestAcc => Target::TestAcc,
        TargetArg::TrainAcc => Target::TrainAcc,
    };
    let dirs = resolve_corpus(&args.corpus)?;
    let mut bundles: Vec<ModelBundle> = Vec::with_capacity(dirs.len());
    for dir in &dirs {
        bundles.push(load_model(dir)?);
    }
    if let GroupBy::Group = args.by {
        for b in bundles.iter_mut() {
            b.subgroup = b.group.clone();
        }
    }
    bundles.sort_by(|a, b| a.model_id.cmp(&b.model_id));

    // Models are analyzed one after another; each fit already fans out over its scan.
    let mut analyzed = Vec::with_capacity(bundles.len());
    for b in &bundles {
        analyzed.push(analyze_model(b, args.min_tail)?.0);
    }
    let records: Vec<_> = bundles.iter().zip(&analyzed).map(|(b, m)| to_record(b, m)).collect();
    let report = subgroup_report(&records, &args.metric, target, args.strength)?;

    if let Some(dir) = &args.out {
        let rows: Vec<(&ModelBundle, &ModelMetrics)> = bundles.iter().zip(&analyzed).collect();
        write_file(&dir.join("models.csv"), &corpus_csv(&rows))?;
        for (group, csv) in plot_csvs(&records, &args.metric, target) {
            write_file(&dir.join(format!("scatter_{}.csv", file_stem(&group))), &csv)?;
        }
        write_file(&dir.join("report.json"), &to_json(&report))?;
    }
    write_stdout(out, &to_json(&CorpusOutput { report: &report, models: analyzed.iter().collect() }))
}

pub fn cmd_smooth(args: &SmoothArgs, out: &mut dyn Write) -> Result<()> {
    let bundle = load_model(&args.model_dir)?;
    let transform = match args.transform {
        TransformArg::Svd10 => Transform::SVD10,
        TransformArg::Svd20 => Transform::SVD20,
        TransformArg::Clip => Transform::CLIP,
    };
    let smoothed = transform_model(&bundle, transform)?;
    write_model(&smoothed, &args.out)?;
    write_stdout(out, &format!("{}\n", args.out.display()))
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let bundle = load_model(&args.model_dir)?;
    let data = Dataset::load(&args.inputs, &args.labels)?;
    let acc = accuracy(&bundle, &data)?;
    write_stdout(out, &format!("{acc:.6}\n"))
}

fn write_corpus(args: &CorpusSynthArgs, cfg: SimpsonConfig, out: &mut dyn Write) -> Result<()> {
    if args.width < 10 {
        return Err(Error::Usage("--width must be at least 10".into()));
    }
    let records = synth::synth_simpson(&cfg)?;
    let mut entries = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let alpha = rec.metrics[&cfg.metric];
        let depth = 1 + i % 3;
        let mut widths = vec![args.width + 20];
        widths.extend(std::iter::repeat_n(args.width, depth));
        let bundle = synth::spectral_model(&SpectralModelConfig {
            model_id: rec.model_id.clone(),
            group: "synthetic".into(),
            subgroup: rec.subgroup.clone(),
            alphas: vec![alpha; depth],
            widths,
            x_min: 1.0,
            x_max: 100.0,
            with_init: false,
            test_acc: rec.test_acc,
            train_acc: None,
            seed: cfg.seed.wrapping_mul(7919).wrapping_add(i as u64),
        })?;
        write_model(&bundle, args.out.join(&rec.model_id))?;
        entries.push(rec.model_id.clone());
    }
    let corpus = args.out.join("corpus.json");
    write_file(&corpus, &to_json(&entries))?;
    write_stdout(out, &format!("{}\n", corpus.display()))
}

pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    match &args.kind {
        SynthKind::Simpson(a) | SynthKind::Homogeneous(a) => {
            let mut cfg = SimpsonConfig {
                n_groups: a.groups,
                n_per_group: a.per_group,
                seed: a.seed,
                ..SimpsonConfig::default()
            };
            if matches!(args.kind, SynthKind::Homogeneous(_)) {
                cfg = cfg.homogeneous();
            }
            write_corpus(a, cfg, out)
        }
        SynthKind::Model(a) => {
            if a.depth == 0 || a.width == 0 {
                return Err(Error::Usage("--depth and --width must be positive".into()));
            }
            let bundle = synth::spectral_model(&SpectralModelConfig {
                model_id: a.model_id.clone(),
                group: "synthetic".into(),
                subgroup: "synthetic".into(),
                alphas: vec![a.alpha; a.depth],
                widths: vec![a.width; a.depth + 1],
                x_min: 1.0,
                x_max: 100.0,
                with_init: a.with_init,
                test_acc: None,
                train_acc: None,
                seed: a.seed,
            })?;
            write_model(&bundle, &a.out)?;
            write_stdout(out, &format!("{}\n", a.out.display()))
        }
        SynthKind::Mlp(a) => {
            let (model, data) = synth::separable_mlp(&MlpConfig {
                n_samples: a.samples,
                rank: a.rank,
                seed: a.seed,
                ..MlpConfig::default()
            })?;
            write_model(&model, a.out.join("model"))?;
            let inputs = Tensor::new(vec![data.inputs.rows(), data.inputs.cols()], data.inputs.as_slice().to_vec())?;
            crate::model_store::write_array_file(a.out.join("inputs.npy"), &inputs)?;
            let labels: Vec<i64> = data.labels.iter().map(|&l| l as i64).collect();
            write_label_file(a.out.join("labels.npy"), &labels)?;
            write_stdout(out, &format!("{}\n", a.out.display()))
        }
    }
}
