//! Command-line driver: dataset generation, source training, adaptation,
//! diagnostics and ablation grids, all configured by one JSON document.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{
    load_idx_images, make_blobs, make_ssda_split, read_csv, rotate, rotated_moons, write_csv, write_unlabeled_csv,
    Dataset, LabeledSet, RotationSpec, UnlabeledSet,
};
use crate::diagnostics::{
    consecutive_discrepancy, direct_discrepancy, mean, shift_study, write_consecutive_csv, ShiftStudyConfig,
};
use crate::error::Error;
use crate::model::{train_source, Classifier};
use crate::pipeline::{
    run_ablation_grid, run_da_with, run_ssda_with, stage_dir, table1_arms, write_ablation_csv, AblationArm, Mode,
    RunConfig, RunOptions, RunReport,
};
use crate::seeds::derive_seed;
use crate::selection::IntermediateDomain;

/// Environment variable naming the default root for dataset files.
pub const DATA_DIR_ENV: &str = "GRADSHIFT_DATA_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_REFUSE_OVERWRITE: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

const EXIT_CODES_HELP: &str = "\
Exit codes:
  0  success
  1  other runtime failure
  2  usage or validation error (nothing is written)
  3  refused to overwrite an existing output (pass --force)
  4  training diverged (non-finite loss)

Relative dataset paths are resolved against $GRADSHIFT_DATA_DIR when it is set.";

#[derive(Debug, Parser)]
#[command(name = "gradshift", version, about = "Gradual domain adaptation by self-training over intermediate domains", after_help = EXIT_CODES_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic or IDX-derived dataset as CSV.
    Generate(GenerateArgs),
    /// Train the source model only and save it as a checkpoint.
    TrainSource(TrainSourceArgs),
    /// Run gradual adaptation (DA or SSDA) with per-stage checkpoints.
    Adapt(AdaptArgs),
    /// Shift and discrepancy measurements.
    #[command(subcommand)]
    Diagnose(DiagnoseCommand),
    /// Run the ablation grid and write ablation.csv.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Recipe {
    Moons,
    Blobs,
    Mnist,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub recipe: Recipe,
    /// Number of samples (per class for blobs; a subsample for mnist).
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Rotation range in degrees, `LO:HI`.
    #[arg(long, value_parser = parse_range)]
    pub rotate: Option<(f64, f64)>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the label column as -1.
    #[arg(long)]
    pub unlabeled: bool,
    #[arg(long, default_value = "dataset.csv")]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

/// Config file plus `--set key.path=value` overrides shared by run commands.
#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// Experiment configuration (JSON). Built-in rotating-moons defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. `--set run.lambda=0.5`; the value is parsed as JSON, else taken as a string.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainSourceArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Overrides `run.stages` (M).
    #[arg(long)]
    pub stages: Option<usize>,
    /// Overrides `run.lambda`.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Switch to SSDA with this many labeled target samples per class.
    #[arg(long)]
    pub ssda_labels: Option<usize>,
    /// Continue after a completed stage, e.g. `stage_7` or `7`.
    #[arg(long, value_parser = parse_stage)]
    pub resume: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum DiagnoseCommand {
    /// Accuracy, confidence and A-distance of a source model against rotation buckets.
    Shift(ShiftArgs),
    /// Proxy A-distance between consecutive intermediate domains of a finished run.
    Consecutive(ConsecutiveArgs),
}

#[derive(Debug, Args)]
pub struct ShiftArgs {
    #[arg(long, default_value_t = 12)]
    pub buckets: usize,
    #[arg(long, default_value_t = 5.0)]
    pub bucket_width: f64,
    #[arg(long, default_value_t = 0.0)]
    pub bucket_start: f64,
    /// Source rotation range, `LO:HI`.
    #[arg(long, value_parser = parse_range, default_value = "0:5")]
    pub source_rotate: (f64, f64),
    /// Base data: moons, or mnist from the IDX files under $GRADSHIFT_DATA_DIR.
    #[arg(long, value_enum, default_value = "moons")]
    pub recipe: Recipe,
    #[arg(long, default_value_t = 600)]
    pub n: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "shift_curve.csv")]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ConsecutiveArgs {
    /// Output directory of an `adapt` run.
    #[arg(long)]
    pub run: PathBuf,
    /// Defaults to `<run>/consecutive.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// `table1` for all seven arms, `full` for the full configuration only.
    #[arg(long, default_value = "table1")]
    pub arms: String,
    /// Comma-separated seeds; overrides `seeds`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Concurrent runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected LO:HI, got {s:?}"))?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad angle {lo:?}"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad angle {hi:?}"))?;
    if lo > hi {
        return Err(format!("range {s:?} is not ordered"));
    }
    Ok((lo, hi))
}

fn parse_stage(s: &str) -> Result<usize, String> {
    s.strip_prefix("stage_")
        .unwrap_or(s)
        .parse()
        .map_err(|_| format!("expected stage_N or N, got {s:?}"))
}

/// A failed command and its exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("refusing to overwrite {}; pass --force", .0.display())]
    Overwrite(PathBuf),
    #[error(transparent)]
    Run(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Overwrite(_) => EXIT_REFUSE_OVERWRITE,
            CliError::Run(e) if e.is_divergence() => EXIT_DIVERGED,
            CliError::Run(Error::Numeric(_)) => EXIT_FAILURE,
            CliError::Run(_) => EXIT_USAGE,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Where one domain's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Moons {
        n: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default)]
        rotate: (f64, f64),
        #[serde(default)]
        seed: u64,
    },
    Blobs {
        centers: Vec<Vec<f64>>,
        per_class: usize,
        #[serde(default = "default_noise")]
        stddev: f64,
        #[serde(default)]
        rotate: Option<(f64, f64)>,
        #[serde(default)]
        seed: u64,
    },
    Idx {
        #[serde(default = "default_idx_images")]
        images: PathBuf,
        #[serde(default = "default_idx_labels")]
        labels: PathBuf,
        /// Random subsample size.
        #[serde(default)]
        n: Option<usize>,
        #[serde(default)]
        rotate: (f64, f64),
        #[serde(default)]
        seed: u64,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        num_classes: Option<usize>,
    },
}

fn default_noise() -> f64 {
    0.1
}
fn default_idx_images() -> PathBuf {
    PathBuf::from("train-images-idx3-ubyte")
}
fn default_idx_labels() -> PathBuf {
    PathBuf::from("train-labels-idx1-ubyte")
}

/// `path` itself when absolute, else under `$GRADSHIFT_DATA_DIR` when set.
pub fn resolve_data_path(path: &Path) -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

impl DatasetSpec {
    fn files(&self) -> Vec<PathBuf> {
        match self {
            DatasetSpec::Idx { images, labels, .. } => vec![resolve_data_path(images), resolve_data_path(labels)],
            DatasetSpec::Csv { path, .. } => vec![resolve_data_path(path)],
            _ => Vec::new(),
        }
    }

    fn validate(&self, role: &str) -> CliResult<()> {
        for f in self.files() {
            if !f.is_file() {
                return Err(CliError::Usage(format!(
                    "{role} dataset file {} does not exist",
                    f.display()
                )));
            }
        }
        match self {
            DatasetSpec::Moons { n, .. } if *n < 2 => Err(CliError::Usage(format!("{role}: moons needs n >= 2"))),
            DatasetSpec::Moons { rotate, .. } | DatasetSpec::Idx { rotate, .. } if rotate.0 > rotate.1 => {
                Err(CliError::Usage(format!("{role}: rotation range is not ordered")))
            }
            DatasetSpec::Blobs { centers, per_class, .. } if centers.len() < 2 || *per_class == 0 => {
                Err(CliError::Usage(format!(
                    "{role}: blobs need at least two centers and one sample per class"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn load(&self) -> crate::Result<Dataset> {
        Ok(match self {
            DatasetSpec::Moons { n, noise, rotate, seed } => {
                Dataset::Labeled(rotated_moons(*n, *noise, *rotate, *seed)?)
            }
            DatasetSpec::Blobs {
                centers,
                per_class,
                stddev,
                rotate: angles,
                seed,
            } => {
                let set = make_blobs(centers, *per_class, *stddev, derive_seed(*seed, "blobs", 0))?;
                match angles {
                    Some((lo, hi)) => Dataset::Labeled(rotate(
                        &set,
                        &RotationSpec::new(*lo, *hi, derive_seed(*seed, "rotate", 0))?,
                    )?),
                    None => Dataset::Labeled(set),
                }
            }
            DatasetSpec::Idx {
                images,
                labels,
                n,
                rotate: angles,
                seed,
            } => {
                let mut set = load_idx_images(&resolve_data_path(images), &resolve_data_path(labels))?;
                if let Some(n) = n.filter(|&n| n < set.len()) {
                    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(derive_seed(
                        *seed,
                        "subsample",
                        0,
                    ));
                    let mut idx = rand::seq::index::sample(&mut rng, set.len(), n).into_vec();
                    idx.sort_unstable();
                    set = set.subset(&idx)?;
                }
                let spec = RotationSpec::new(angles.0, angles.1, derive_seed(*seed, "rotate", 0))?;
                Dataset::Labeled(rotate(&set, &spec)?)
            }
            DatasetSpec::Csv { path, num_classes } => read_csv(&resolve_data_path(path), *num_classes)?,
        })
    }
}

fn default_source() -> DatasetSpec {
    DatasetSpec::Moons {
        n: 300,
        noise: 0.1,
        rotate: (0.0, 30.0),
        seed: 1,
    }
}
fn default_target() -> DatasetSpec {
    DatasetSpec::Moons {
        n: 300,
        noise: 0.1,
        rotate: (60.0, 90.0),
        seed: 2,
    }
}
fn default_true() -> bool {
    true
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}
fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

/// One experiment: run settings, one dataset per domain role and the output location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default = "default_source")]
    pub source: DatasetSpec,
    #[serde(default = "default_target")]
    pub target: DatasetSpec,
    /// Report target accuracy when the target data carries labels.
    #[serde(default = "default_true")]
    pub evaluate: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Seeds of the ablation grid.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

impl ExperimentConfig {
    /// Reads the config (or the defaults) and applies `--set` and named flag overrides.
    pub fn resolve(args: &ConfigArgs, named: &[(&str, Value)]) -> CliResult<Self> {
        let mut doc = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
                serde_json::from_str::<Value>(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
            }
            None => Value::Object(Default::default()),
        };
        for item in &args.overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {item:?}")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut doc, key, value)?;
        }
        if let Some(seed) = args.seed {
            set_path(&mut doc, "run.seed", seed.into())?;
        }
        if let Some(out) = &args.out {
            set_path(&mut doc, "output_dir", out.to_string_lossy().into_owned().into())?;
        }
        for (key, value) in named {
            set_path(&mut doc, key, value.clone())?;
        }
        let cfg: Self = serde_json::from_value(doc).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.run.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.source.validate("source")?;
        self.target.validate("target")?;
        if self.seeds.is_empty() {
            return Err(CliError::Usage("seeds must not be empty".into()));
        }
        Ok(())
    }

    /// Labeled source, unlabeled target and the target labels when available.
    pub fn load_domains(&self) -> CliResult<(LabeledSet, Dataset)> {
        let source = match self.source.load()? {
            Dataset::Labeled(s) => s,
            Dataset::Unlabeled(_) => return Err(CliError::Usage("the source dataset must be labeled".into())),
        };
        let target = self.target.load()?;
        let target_dim = match &target {
            Dataset::Labeled(t) => t.dim(),
            Dataset::Unlabeled(t) => t.dim(),
        };
        if target_dim != source.dim() {
            return Err(CliError::Usage(format!(
                "source has {} features, target has {target_dim}",
                source.dim()
            )));
        }
        Ok((source, target))
    }
}

fn set_path(doc: &mut Value, dotted: &str, value: Value) -> CliResult<()> {
    let mut node = doc;
    let parts: Vec<&str> = dotted.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::Usage(format!("bad config key {dotted:?}")));
        }
        if !node.is_object() {
            return Err(CliError::Usage(format!(
                "config key {dotted:?} crosses a non-object value"
            )));
        }
        let map = node.as_object_mut().expect("checked");
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// Entry point; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one command and returns its one-line summary.
pub fn execute(command: Command) -> CliResult<String> {
    match command {
        Command::Generate(a) => cmd_generate(&a),
        Command::TrainSource(a) => cmd_train_source(&a),
        Command::Adapt(a) => cmd_adapt(&a),
        Command::Diagnose(DiagnoseCommand::Shift(a)) => cmd_shift(&a),
        Command::Diagnose(DiagnoseCommand::Consecutive(a)) => cmd_consecutive(&a),
        Command::Ablate(a) => cmd_ablate(&a),
    }
}

fn refuse_existing(path: &Path, force: bool) -> CliResult<()> {
    if path.exists() && !force {
        return Err(CliError::Overwrite(path.to_path_buf()));
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

pub fn cmd_generate(a: &GenerateArgs) -> CliResult<String> {
    let spec = match a.recipe {
        Recipe::Moons => DatasetSpec::Moons {
            n: a.n,
            noise: a.noise,
            rotate: a.rotate.unwrap_or((0.0, 0.0)),
            seed: a.seed,
        },
        Recipe::Blobs => DatasetSpec::Blobs {
            centers: vec![vec![-2.0, 0.0], vec![2.0, 0.0]],
            per_class: a.n,
            stddev: a.noise.max(f64::MIN_POSITIVE),
            rotate: a.rotate,
            seed: a.seed,
        },
        Recipe::Mnist => DatasetSpec::Idx {
            images: default_idx_images(),
            labels: default_idx_labels(),
            n: Some(a.n),
            rotate: a.rotate.unwrap_or((0.0, 0.0)),
            seed: a.seed,
        },
    };
    spec.validate("generated")?;
    refuse_existing(&a.out, a.force)?;
    let Dataset::Labeled(set) = spec.load()? else {
        unreachable!("generators return labeled sets")
    };
    ensure_parent(&a.out)?;
    if a.unlabeled {
        write_unlabeled_csv(&set.to_unlabeled(), &a.out)?;
    } else {
        write_csv(&set, &a.out)?;
    }
    Ok(format!("wrote {} rows to {}", set.len(), a.out.display()))
}

pub fn cmd_train_source(a: &TrainSourceArgs) -> CliResult<String> {
    let cfg = ExperimentConfig::resolve(&a.config, &[])?;
    let out = cfg.output_dir.join("source_model.json");
    refuse_existing(&out, a.config.force)?;
    let (source, _) = cfg.load_domains()?;
    let run = &cfg.run;
    let init = Classifier::new(
        &run.layer_dims(source.dim(), source.num_classes()),
        derive_seed(run.seed, "init", 0),
    )?;
    let train = crate::model::TrainConfig {
        seed: derive_seed(run.seed, "source", 0),
        ..run.source_train.clone()
    };
    let model = train_source(init, &source, &train)?;
    let accuracy = model.accuracy(source.features(), source.labels())?;
    ensure_parent(&out)?;
    model.save(&out)?;
    Ok(format!(
        "source training accuracy {accuracy:.4}; model: {}",
        out.display()
    ))
}

pub fn cmd_adapt(a: &AdaptArgs) -> CliResult<String> {
    let mut named: Vec<(&str, Value)> = Vec::new();
    if let Some(m) = a.stages {
        named.push(("run.stages", m.into()));
    }
    if let Some(l) = a.lambda {
        named.push(("run.lambda", l.into()));
    }
    if let Some(n) = a.ssda_labels {
        named.push(("run.mode", serde_json::json!({"kind": "ssda", "labels_per_class": n})));
    }
    let mut cfg = ExperimentConfig::resolve(&a.config, &named)?;
    let out = cfg.output_dir.clone();
    let report_path = out.join("report.json");
    match a.resume {
        Some(stage) => {
            if !stage_dir(&out, stage).is_dir() {
                return Err(CliError::Usage(format!(
                    "no checkpoint {} to resume from",
                    stage_dir(&out, stage).display()
                )));
            }
            if stage > cfg.run.stages {
                return Err(CliError::Usage(format!(
                    "cannot resume after stage {stage} of {}",
                    cfg.run.stages
                )));
            }
        }
        None => {
            let occupied = report_path.exists() || stage_dir(&out, 0).exists();
            if occupied && !a.config.force {
                return Err(CliError::Overwrite(out.clone()));
            }
        }
    }
    let (source, target) = cfg.load_domains()?;
    let (target, labels) = match target {
        Dataset::Labeled(t) => {
            let (x, y) = t.split_labels();
            (x, Some(y))
        }
        Dataset::Unlabeled(t) => (t, None),
    };
    if a.resume.is_none() && a.config.force && out.exists() {
        clear_run_dir(&out)?;
    }
    cfg.run.checkpoint_dir = Some(out.clone());
    let opts = RunOptions { resume_from: a.resume };
    let result = match cfg.run.mode {
        Mode::Da => run_da_with(
            &source,
            &target,
            &cfg.run,
            labels.as_deref().filter(|_| cfg.evaluate),
            &opts,
        )?,
        Mode::Ssda { labels_per_class } => {
            let Some(y) = labels else {
                return Err(CliError::Usage(
                    "SSDA needs a labeled target dataset to draw labeled samples from".into(),
                ));
            };
            let full =
                LabeledSet::new(target.features().to_owned(), y, source.num_classes())?.with_layout(target.layout())?;
            let split = make_ssda_split(&full, labels_per_class, derive_seed(cfg.run.seed, "ssda", 0))?;
            let eval = split.unlabeled_eval_labels.clone();
            run_ssda_with(
                &source,
                &split,
                &cfg.run,
                cfg.evaluate.then_some(eval.as_slice()),
                &opts,
            )?
        }
    };
    if !report_path.exists() {
        // The SSDA degenerate case runs no stages and writes no report itself.
        result.report().write(&report_path)?;
    }
    let stages = result.stage_reports.len();
    Ok(match (result.final_accuracy, result.source_only_accuracy) {
        (Some(f), Some(s)) => format!(
            "final target accuracy {f:.4} (source only {s:.4}) after {stages} stages; report: {}",
            report_path.display()
        ),
        _ => format!("completed {stages} stages; report: {}", report_path.display()),
    })
}

/// Removes the artifacts of an earlier run, leaving unrelated files alone.
fn clear_run_dir(dir: &Path) -> CliResult<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let path = entry.path();
        let ours = name.starts_with("stage_")
            || matches!(
                name.as_str(),
                "report.json" | "source.csv" | "target.csv" | "labeled_target.csv" | "consecutive.csv"
            );
        if ours {
            let removed = if path.is_dir() {
                fs::remove_dir_all(&path)
            } else {
                fs::remove_file(&path)
            };
            removed.map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

pub fn cmd_shift(a: &ShiftArgs) -> CliResult<String> {
    if a.buckets == 0 || a.bucket_width < 0.0 {
        return Err(CliError::Usage(
            "need at least one bucket and a non-negative width".into(),
        ));
    }
    let spec = match a.recipe {
        Recipe::Moons => DatasetSpec::Moons {
            n: a.n,
            noise: a.noise,
            rotate: (0.0, 0.0),
            seed: a.seed,
        },
        Recipe::Mnist => DatasetSpec::Idx {
            images: default_idx_images(),
            labels: default_idx_labels(),
            n: Some(a.n),
            rotate: (0.0, 0.0),
            seed: a.seed,
        },
        Recipe::Blobs => return Err(CliError::Usage("the shift study supports moons and mnist".into())),
    };
    spec.validate("base")?;
    refuse_existing(&a.out, a.force)?;
    let Dataset::Labeled(base) = spec.load()? else {
        unreachable!("generators return labeled sets")
    };
    let source_spec = RotationSpec::new(
        a.source_rotate.0,
        a.source_rotate.1,
        derive_seed(a.seed, "source-rotate", 0),
    )?;
    let cfg = ShiftStudyConfig {
        bucket_start: a.bucket_start,
        seed: a.seed,
        ..ShiftStudyConfig::default()
    };
    let curve = shift_study(&base, &source_spec, a.bucket_width, a.buckets, &cfg)?;
    ensure_parent(&a.out)?;
    curve.write_csv(&a.out)?;
    Ok(format!(
        "{} buckets, accuracy {:.3} -> {:.3}; wrote {}",
        a.buckets,
        curve.accuracy[0],
        curve.accuracy[a.buckets - 1],
        a.out.display()
    ))
}

/// Stage models `f_1..f_M`, domains `M_0..M_M`, source and target features of a finished run.
pub struct RunArtifacts {
    pub report: RunReport,
    pub models: Vec<Classifier>,
    pub domains: Vec<IntermediateDomain>,
    pub source: LabeledSet,
    pub target: UnlabeledSet,
}

pub fn load_run(dir: &Path) -> CliResult<RunArtifacts> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!(
            "run directory {} does not exist",
            dir.display()
        )));
    }
    let report = RunReport::read(&dir.join("report.json"))?;
    let stages = report.completed_stages;
    if stages == 0 {
        return Err(CliError::Usage(format!("{} has no completed stages", dir.display())));
    }
    let f0 = Classifier::load(&stage_dir(dir, 0).join("model.json"))?;
    let source = match read_csv(&dir.join("source.csv"), Some(f0.num_classes()))? {
        Dataset::Labeled(s) => s,
        Dataset::Unlabeled(_) => return Err(CliError::Usage("source.csv has no labels".into())),
    };
    let target = match read_csv(&dir.join("target.csv"), Some(f0.num_classes()))? {
        Dataset::Unlabeled(t) => t,
        Dataset::Labeled(t) => t.to_unlabeled(),
    };
    let mut models = Vec::with_capacity(stages);
    let mut domains = Vec::with_capacity(stages + 1);
    for m in 0..=stages {
        domains.push(IntermediateDomain::read_csv(&stage_dir(dir, m).join("domain.csv"), m)?);
        if m > 0 {
            models.push(Classifier::load(&stage_dir(dir, m).join("model.json"))?);
        }
    }
    Ok(RunArtifacts {
        report,
        models,
        domains,
        source,
        target,
    })
}

pub fn cmd_consecutive(a: &ConsecutiveArgs) -> CliResult<String> {
    let out = a.out.clone().unwrap_or_else(|| a.run.join("consecutive.csv"));
    let run = load_run(&a.run)?;
    refuse_existing(&out, a.force)?;
    let values = consecutive_discrepancy(
        &run.models,
        &run.domains,
        run.source.features(),
        run.target.features(),
        a.seed,
    )?;
    let direct = direct_discrepancy(&run.models, run.source.features(), run.target.features(), a.seed)?;
    ensure_parent(&out)?;
    write_consecutive_csv(&values, &out)?;
    Ok(format!(
        "{} steps, mean consecutive A-distance {:.4}, mean source-target A-distance {:.4}; wrote {}",
        values.len(),
        mean(&values),
        mean(&direct),
        out.display()
    ))
}

pub fn cmd_ablate(a: &AblateArgs) -> CliResult<String> {
    let mut cfg = ExperimentConfig::resolve(&a.config, &[])?;
    if let Some(seeds) = &a.seeds {
        if seeds.is_empty() {
            return Err(CliError::Usage("--seeds must not be empty".into()));
        }
        cfg.seeds = seeds.clone();
    }
    let arms: Vec<AblationArm> = match a.arms.as_str() {
        "table1" | "all" => table1_arms(),
        "full" => vec![AblationArm::FULL],
        other => {
            return Err(CliError::Usage(format!(
                "unknown arm set {other:?}; use table1 or full"
            )))
        }
    };
    if a.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    if !matches!(cfg.run.mode, Mode::Da) {
        return Err(CliError::Usage("the ablation grid runs in DA mode".into()));
    }
    let csv_path = cfg.output_dir.join("ablation.csv");
    refuse_existing(&csv_path, a.config.force)?;
    let (source, target) = cfg.load_domains()?;
    let (target, labels) = match target {
        Dataset::Labeled(t) => {
            let (x, y) = t.split_labels();
            (x, Some(y))
        }
        Dataset::Unlabeled(t) => (t, None),
    };
    let mut base = cfg.run.clone();
    base.checkpoint_dir = Some(cfg.output_dir.join("runs"));
    let eval = labels.as_deref().filter(|_| cfg.evaluate);
    let rows = with_jobs(a.jobs, || {
        run_ablation_grid(&source, &target, eval, &base, &arms, &cfg.seeds)
    })??;
    ensure_parent(&csv_path)?;
    write_ablation_csv(&rows, &csv_path)?;
    Ok(format!(
        "{} arms x {} seeds; wrote {}",
        arms.len(),
        cfg.seeds.len(),
        csv_path.display()
    ))
}

#[cfg(feature = "parallel")]
fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(not(feature = "parallel"))]
fn with_jobs<T: Send>(_jobs: usize, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    Ok(f())
}
