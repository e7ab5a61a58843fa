//! Command-line flags, the optional TOML config file, and their resolution
//! into fully specified jobs. Flags win over the file; the file wins over
//! built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use pet_turtle::modelselect::CvConfig;
use pet_turtle::objective::TargetMode;
use pet_turtle::simplexops::SimplexVector;
use pet_turtle::tensorio::{Format, Normalization};
use pet_turtle::trainer::{PriorSpec, TrainConfig, DEFAULT_INNER_STEPS, DEFAULT_ITERATIONS, DEFAULT_LEARNING_RATE};
use serde::{Deserialize, Serialize};

use crate::jobs::{
    ClusterJob, CvGridJob, EvalJob, GenBlobsJob, InputSpec, Job, ProbeJob, ReportJob, SubsampleJob, TrialsJob,
};
use crate::UsageError;

#[derive(Parser, Debug)]
#[command(name = "pet-turtle", version, about = "Clustering of frozen embeddings with an imbalance-aware prior")]
pub struct Cli {
    /// TOML file whose keys mirror the long flag names; flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Record wall-clock runtime in metrics files (makes them non-reproducible).
    #[arg(long, global = true)]
    pub timing: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate labeled Gaussian blobs.
    GenBlobs(GenBlobsArgs),
    /// Subsample a labeled set so class sizes follow a power law.
    SubsamplePl(SubsampleArgs),
    /// Cluster a feature file and write one label per line.
    Cluster(ClusterArgs),
    /// Supervised linear probe on a labeled feature file.
    Probe(ProbeArgs),
    /// Score a label file against the ground truth of a feature file.
    Eval(EvalArgs),
    /// Unsupervised (gamma, alpha) selection by label-reuse cross-validation.
    CvGrid(CvGridArgs),
    /// Run one or two methods over several seeds and summarise accuracy.
    Trials(TrialsArgs),
    /// Flatten metrics and trial summaries into CSV tables.
    Report(ReportArgs),
    /// Re-run a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Turtle,
    PetTurtle,
    Kmeans,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Turtle => "turtle",
            Method::PetTurtle => "pet-turtle",
            Method::Kmeans => "kmeans",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Binary,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizeArg {
    None,
    L2,
    Standardize,
}

impl From<NormalizeArg> for Normalization {
    fn from(n: NormalizeArg) -> Self {
        match n {
            NormalizeArg::None => Normalization::None,
            NormalizeArg::L2 => Normalization::L2,
            NormalizeArg::Standardize => Normalization::Standardize,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetModeArg {
    Softmax,
    Sparsemax,
}

impl From<TargetModeArg> for TargetMode {
    fn from(t: TargetModeArg) -> Self {
        match t {
            TargetModeArg::Softmax => TargetMode::Softmax,
            TargetModeArg::Sparsemax => TargetMode::Sparsemax,
        }
    }
}

/// `uniform`, `powerlaw` (needs an alpha) or `explicit:PATH`.
#[derive(Clone, Debug, PartialEq)]
pub enum PriorArg {
    Uniform,
    PowerLaw,
    Explicit(PathBuf),
}

impl FromStr for PriorArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(PriorArg::Uniform),
            "powerlaw" => Ok(PriorArg::PowerLaw),
            _ => match s.strip_prefix("explicit:") {
                Some(p) if !p.is_empty() => Ok(PriorArg::Explicit(PathBuf::from(p))),
                _ => Err(format!("expected uniform, powerlaw or explicit:PATH, got '{s}'")),
            },
        }
    }
}

/// Feature input shared by every command that reads one.
#[derive(Args, Debug, Default)]
pub struct InputArgs {
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Feature file format; inferred from a `.csv` extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// CSV files carry the class label in their last column.
    #[arg(long)]
    pub csv_labels: bool,
    #[arg(long, value_enum)]
    pub normalize: Option<NormalizeArg>,
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    /// Number of clusters; defaults to the class count stored with the input.
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Power-law exponent of the prior.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_name = "uniform|powerlaw|explicit:PATH")]
    pub prior: Option<PriorArg>,
    #[arg(long, value_enum)]
    pub target_mode: Option<TargetModeArg>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub inner_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub no_warm_start: bool,
}

#[derive(Args, Debug)]
pub struct GenBlobsArgs {
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long)]
    pub csv_labels: bool,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Points per class for balanced blobs.
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Total points, split by a power law with `--alpha`.
    #[arg(long)]
    pub total: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Closest centroid distance in units of the noise deviation.
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SubsampleArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Label file; metrics, confusion and loss trace are written beside it.
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Predicted labels, one per line.
    #[arg(long, value_name = "PATH")]
    pub labels: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CvGridArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, value_delimiter = ',')]
    pub gamma_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub alpha_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrialsArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// One method, or two separated by a comma for paired deltas.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub method: Option<Vec<Method>>,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Metrics or trial summary JSON files; repeat or separate with commas.
    #[arg(long, value_name = "PATH", value_delimiter = ',')]
    pub input: Vec<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
}

/// Keys accepted in the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub format: Option<FormatArg>,
    pub csv_labels: Option<bool>,
    pub normalize: Option<NormalizeArg>,
    pub classes: Option<usize>,
    pub dim: Option<usize>,
    pub per_class: Option<usize>,
    pub total: Option<usize>,
    pub separation: Option<f64>,
    pub noise_std: Option<f64>,
    pub method: Option<Vec<Method>>,
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    pub prior: Option<String>,
    pub target_mode: Option<TargetModeArg>,
    pub iters: Option<usize>,
    pub lr: Option<f64>,
    pub inner_steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub no_warm_start: Option<bool>,
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub folds: Option<usize>,
    pub gamma_grid: Option<Vec<f64>>,
    pub alpha_grid: Option<Vec<f64>>,
    pub train_fraction: Option<f64>,
    pub epochs: Option<usize>,
    pub labels: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
    }
}

pub const PAPER_GAMMA_GRID: [f64; 8] = [1.0, 5.0, 10.0, 25.0, 50.0, 100.0, 250.0, 500.0];
pub const PAPER_ALPHA_GRID: [f64; 11] = [0.01, 0.05, 0.10, 0.25, 0.50, 0.75, 1.0, 1.25, 1.50, 1.75, 2.0];

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn required<T>(value: Option<T>, flag: &str) -> anyhow::Result<T> {
    value.ok_or_else(|| usage(format!("missing required --{flag}")))
}

fn resolve_input(args: InputArgs, file: &FileConfig) -> anyhow::Result<InputSpec> {
    let path = required(args.input.or_else(|| file.input.clone()), "input")?;
    let csv_labels = args.csv_labels || file.csv_labels.unwrap_or(false);
    let format = resolve_format(args.format.or(file.format), &path, csv_labels);
    let normalize = args.normalize.or(file.normalize).unwrap_or(NormalizeArg::None).into();
    Ok(InputSpec { path, format, normalize })
}

fn resolve_format(arg: Option<FormatArg>, path: &Path, csv_labels: bool) -> Format {
    let is_csv = match arg {
        Some(f) => f == FormatArg::Csv,
        None => path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")),
    };
    if is_csv {
        Format::Csv { labels: csv_labels }
    } else {
        Format::Binary
    }
}

fn read_prior_file(path: &Path) -> anyhow::Result<SimplexVector> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read prior {}", path.display()))?;
    let probs = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().with_context(|| format!("{}: bad probability '{t}'", path.display())))
        .collect::<anyhow::Result<Vec<f64>>>()?;
    SimplexVector::new(probs).with_context(|| format!("{}: not a probability vector", path.display()))
}

/// Training settings shared by `cluster`, `cv-grid` and `trials`; the prior
/// is resolved per method later.
pub struct TrainSettings {
    pub classes: Option<usize>,
    pub base: TrainConfig,
    pub alpha: Option<f64>,
    pub prior: Option<PriorArg>,
    pub target_mode: Option<TargetModeArg>,
}

fn resolve_train(args: TrainArgs, file: &FileConfig) -> anyhow::Result<TrainSettings> {
    let prior = match (args.prior, &file.prior) {
        (Some(p), _) => Some(p),
        (None, Some(s)) => Some(s.parse::<PriorArg>().map_err(usage)?),
        (None, None) => None,
    };
    let base = TrainConfig {
        iterations: args.iters.or(file.iters).unwrap_or(DEFAULT_ITERATIONS),
        learning_rate: args.lr.or(file.lr).unwrap_or(DEFAULT_LEARNING_RATE),
        inner_steps: args.inner_steps.or(file.inner_steps).unwrap_or(DEFAULT_INNER_STEPS),
        batch_size: args.batch_size.or(file.batch_size),
        gamma: args.gamma.or(file.gamma).unwrap_or(TrainConfig::default().gamma),
        warm_start: !(args.no_warm_start || file.no_warm_start.unwrap_or(false)),
        ..TrainConfig::default()
    };
    base.validate().map_err(|e| usage(e.to_string()))?;
    Ok(TrainSettings {
        classes: args.classes.or(file.classes),
        base,
        alpha: args.alpha.or(file.alpha),
        prior,
        target_mode: args.target_mode.or(file.target_mode),
    })
}

impl TrainSettings {
    /// Full training config for one of the two TURTLE variants.
    ///
    /// `turtle` defaults to softmax targets and a uniform prior; `pet-turtle`
    /// to sparsemax targets and a power-law prior, which needs `--alpha`.
    pub fn config_for(&self, method: Method, seed: u64) -> anyhow::Result<TrainConfig> {
        let default_prior = match method {
            Method::PetTurtle => PriorArg::PowerLaw,
            _ => PriorArg::Uniform,
        };
        let prior = match self.prior.clone().unwrap_or(default_prior) {
            PriorArg::Uniform => PriorSpec::Uniform,
            PriorArg::PowerLaw => match self.alpha {
                Some(alpha) => PriorSpec::PowerLaw { alpha },
                None => return Err(usage(format!("{} with a power-law prior needs --alpha", method.name()))),
            },
            PriorArg::Explicit(path) => PriorSpec::Explicit { probs: read_prior_file(&path)? },
        };
        let target_mode = match (self.target_mode, method) {
            (Some(t), _) => t.into(),
            (None, Method::PetTurtle) => TargetMode::Sparsemax,
            (None, _) => TargetMode::Softmax,
        };
        Ok(TrainConfig { prior, target_mode, seed, ..self.base.clone() })
    }
}

/// Turns parsed flags plus the optional config file into a job.
pub fn resolve(command: Command, file: &FileConfig, timing: bool) -> anyhow::Result<Job> {
    let job = match command {
        Command::GenBlobs(a) => {
            let output = required(a.output.or_else(|| file.output.clone()), "output")?;
            let csv_labels = a.csv_labels || file.csv_labels.unwrap_or(false);
            let format = resolve_format(a.format.or(file.format), &output, csv_labels);
            let classes = a.classes.or(file.classes).unwrap_or(4);
            let alpha = a.alpha.or(file.alpha);
            let total = a.total.or(file.total);
            let per_class = a.per_class.or(file.per_class);
            let class_sizes = match (alpha, total, per_class) {
                (Some(_), _, Some(_)) => return Err(usage("--per-class cannot be combined with --alpha")),
                (Some(alpha), total, None) => {
                    let total = total.unwrap_or(100 * classes);
                    pet_turtle::tensorio::powerlaw_sizes(total, classes, alpha).map_err(|e| usage(e.to_string()))?
                }
                (None, Some(_), _) => return Err(usage("--total needs --alpha")),
                (None, None, per) => vec![per.unwrap_or(100); classes],
            };
            Job::GenBlobs(GenBlobsJob {
                output,
                format,
                spec: pet_turtle::tensorio::BlobSpec {
                    num_classes: classes,
                    dim: a.dim.or(file.dim).unwrap_or(16),
                    class_sizes,
                    separation: a.separation.or(file.separation).unwrap_or(10.0),
                    noise_std: a.noise_std.or(file.noise_std).unwrap_or(1.0),
                    seed: a.seed.or(file.seed).unwrap_or(0),
                },
            })
        }
        Command::SubsamplePl(a) => {
            let output = required(a.output.or_else(|| file.output.clone()), "output")?;
            Job::SubsamplePl(SubsampleJob {
                input: resolve_input(a.input, file)?,
                output,
                alpha: required(a.alpha.or(file.alpha), "alpha")?,
                seed: a.seed.or(file.seed).unwrap_or(0),
            })
        }
        Command::Cluster(a) => {
            let output = required(a.output.or_else(|| file.output.clone()), "output")?;
            let input = resolve_input(a.input, file)?;
            let method = match (a.method, &file.method) {
                (Some(m), _) => m,
                (None, Some(ms)) if ms.len() == 1 => ms[0],
                (None, Some(_)) => return Err(usage("cluster takes a single method")),
                (None, None) => return Err(usage("missing required --method")),
            };
            let seed = a.seed.or(file.seed).unwrap_or(0);
            let train = resolve_train(a.train, file)?;
            let config = match method {
                Method::Kmeans => None,
                m => Some(train.config_for(m, seed)?),
            };
            Job::Cluster(ClusterJob { input, output, method, classes: train.classes, seed, config, timing })
        }
        Command::Probe(a) => {
            let output = required(a.output.or_else(|| file.output.clone()), "output")?;
            let defaults = pet_turtle::baselines::ProbeConfig::default();
            let probe = pet_turtle::baselines::ProbeConfig {
                train_fraction: a.train_fraction.or(file.train_fraction).unwrap_or(defaults.train_fraction),
                epochs: a.epochs.or(file.epochs).unwrap_or(defaults.epochs),
                eta: None,
            };
            Job::Probe(ProbeJob {
                input: resolve_input(a.input, file)?,
                output,
                seed: a.seed.or(file.seed).unwrap_or(0),
                probe,
                timing,
            })
        }
        Command::Eval(a) => Job::Eval(EvalJob {
            labels: required(a.labels.or_else(|| file.labels.clone()), "labels")?,
            output: required(a.output.or_else(|| file.output.clone()), "output")?,
            input: resolve_input(a.input, file)?,
        }),
        Command::CvGrid(a) => {
            let output = required(a.output.or_else(|| file.output.clone()), "output")?;
            let input = resolve_input(a.input, file)?;
            let seed = a.seed.or(file.seed).unwrap_or(0);
            let train = resolve_train(a.train, file)?;
            if matches!(train.prior, Some(p) if p != PriorArg::PowerLaw) {
                return Err(usage("cv-grid always uses a power-law prior per grid cell"));
            }
            let gamma_grid = a.gamma_grid.or_else(|| file.gamma_grid.clone()).unwrap_or(PAPER_GAMMA_GRID.to_vec());
            let alpha_grid = a.alpha_grid.or_else(|| file.alpha_grid.clone()).unwrap_or(PAPER_ALPHA_GRID.to_vec());
            if gamma_grid.is_empty() || alpha_grid.is_empty() {
                return Err(usage("grids must be non-empty"));
            }
            if train.alpha.is_some() {
                return Err(usage("cv-grid takes --alpha-grid rather than --alpha"));
            }
            let base = TrainConfig {
                target_mode: train.target_mode.map_or(TargetMode::Sparsemax, Into::into),
                seed,
                ..train.base.clone()
            };
            let cv = CvConfig { folds: a.folds.or(file.folds).unwrap_or(CvConfig::default().folds), ..CvConfig::default() };
            if cv.folds < 2 {
                return Err(usage("--folds must be at least 2"));
            }
            Job::CvGrid(CvGridJob { input, output, classes: train.classes, gamma_grid, alpha_grid, base, seed, cv })
        }
        Command::Trials(a) => {
            let output = required(a.output.or_else(|| file.output.clone()), "output")?;
            let input = resolve_input(a.input, file)?;
            let methods = a.method.or_else(|| file.method.clone()).ok_or_else(|| usage("missing required --method"))?;
            if methods.is_empty() || methods.len() > 2 {
                return Err(usage("trials takes one or two methods"));
            }
            if methods.len() == 2 && methods[0] == methods[1] {
                return Err(usage("the two trial methods must differ"));
            }
            let seeds = a.seeds.or_else(|| file.seeds.clone()).unwrap_or_else(|| (0..10).collect());
            if seeds.is_empty() {
                return Err(usage("--seeds must list at least one seed"));
            }
            let train = resolve_train(a.train, file)?;
            let mut configs = Vec::new();
            for &m in &methods {
                configs.push(match m {
                    Method::Kmeans => None,
                    m => Some(train.config_for(m, 0)?),
                });
            }
            Job::Trials(TrialsJob { input, output, methods, configs, classes: train.classes, seeds, timing })
        }
        Command::Report(a) => {
            let inputs = if a.input.is_empty() { file.input.clone().into_iter().collect() } else { a.input };
            if inputs.is_empty() {
                return Err(usage("missing required --input"));
            }
            Job::Report(ReportJob { inputs, output: required(a.output.or_else(|| file.output.clone()), "output")? })
        }
        Command::Replay(_) => unreachable!("replay is dispatched before resolution"),
    };
    Ok(job)
}
