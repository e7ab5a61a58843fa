//! Fully resolved commands and their execution.
//!
//! A [`Job`] carries every setting with defaults materialised, so running the
//! same job twice writes the same bytes. Wall-clock figures only reach output
//! files when `timing` is set; they are always recorded in the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use ndarray::Array2;
use pet_turtle::assignment::{cluster_accuracy, confusion_matrix, confusion_to_csv};
use pet_turtle::baselines::{kmeans_pp, linear_probe, KMeansConfig, ProbeConfig};
use pet_turtle::modelselect::{grid_search, mean_std, CvConfig};
use pet_turtle::tensorio::{
    gen_gaussian_blobs, load_features, normalize_rows, save_features, subsample_powerlaw, write_atomic, BlobSpec,
    FeatureSet, Format, Normalization,
};
use pet_turtle::trainer::{train_matrix, PriorSpec, TrainConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::args::Method;
use crate::UsageError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub path: PathBuf,
    pub format: Format,
    pub normalize: Normalization,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenBlobsJob {
    pub output: PathBuf,
    pub format: Format,
    pub spec: BlobSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsampleJob {
    pub input: InputSpec,
    pub output: PathBuf,
    pub alpha: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterJob {
    pub input: InputSpec,
    pub output: PathBuf,
    pub method: Method,
    pub classes: Option<usize>,
    pub seed: u64,
    /// Absent for k-means.
    pub config: Option<TrainConfig>,
    pub timing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeJob {
    pub input: InputSpec,
    pub output: PathBuf,
    pub seed: u64,
    pub probe: ProbeConfig,
    pub timing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalJob {
    pub input: InputSpec,
    pub labels: PathBuf,
    pub output: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvGridJob {
    pub input: InputSpec,
    pub output: PathBuf,
    pub classes: Option<usize>,
    pub gamma_grid: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    /// Per-cell gamma, prior and seed override this.
    pub base: TrainConfig,
    pub seed: u64,
    pub cv: CvConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialsJob {
    pub input: InputSpec,
    pub output: PathBuf,
    pub methods: Vec<Method>,
    /// One entry per method; the seed is replaced per trial.
    pub configs: Vec<Option<TrainConfig>>,
    pub classes: Option<usize>,
    pub seeds: Vec<u64>,
    pub timing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportJob {
    pub inputs: Vec<PathBuf>,
    pub output: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Job {
    GenBlobs(GenBlobsJob),
    SubsamplePl(SubsampleJob),
    Cluster(ClusterJob),
    Probe(ProbeJob),
    Eval(EvalJob),
    CvGrid(CvGridJob),
    Trials(TrialsJob),
    Report(ReportJob),
}

/// Per-run metrics file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub method: String,
    pub seed: Option<u64>,
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    /// Matched accuracy; absent when the input has no labels.
    pub accuracy: Option<f64>,
    pub confusion_csv_path: Option<String>,
    pub runtime_ms: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub runs: Vec<Metrics>,
    pub mean_accuracy: Option<f64>,
    /// Population standard deviation over seeds.
    pub std_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedDelta {
    pub seed: u64,
    /// Accuracy of the second method minus the first.
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub method: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialsSummary {
    pub methods: Vec<MethodSummary>,
    pub paired_deltas: Vec<PairedDelta>,
    pub failures: Vec<TrialFailure>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialTime {
    pub method: String,
    pub seed: Option<u64>,
    pub wall_clock_ms: f64,
}

/// What a job touched, for the manifest.
#[derive(Debug, Default)]
pub struct RunRecord {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seeds: Vec<u64>,
    pub trials: Vec<TrialTime>,
}

/// `path` with its extension replaced by `suffix`, e.g. `labels.txt` and
/// `metrics.json` give `labels.metrics.json`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

impl Job {
    pub fn primary_output(&self) -> &Path {
        match self {
            Job::GenBlobs(j) => &j.output,
            Job::SubsamplePl(j) => &j.output,
            Job::Cluster(j) => &j.output,
            Job::Probe(j) => &j.output,
            Job::Eval(j) => &j.output,
            Job::CvGrid(j) => &j.output,
            Job::Trials(j) => &j.output,
            Job::Report(j) => &j.output,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Job::GenBlobs(_) => "gen-blobs",
            Job::SubsamplePl(_) => "subsample-pl",
            Job::Cluster(_) => "cluster",
            Job::Probe(_) => "probe",
            Job::Eval(_) => "eval",
            Job::CvGrid(_) => "cv-grid",
            Job::Trials(_) => "trials",
            Job::Report(_) => "report",
        }
    }

    pub fn run(&self) -> anyhow::Result<RunRecord> {
        match self {
            Job::GenBlobs(j) => run_gen_blobs(j),
            Job::SubsamplePl(j) => run_subsample(j),
            Job::Cluster(j) => run_cluster(j),
            Job::Probe(j) => run_probe(j),
            Job::Eval(j) => run_eval(j),
            Job::CvGrid(j) => run_cv_grid(j),
            Job::Trials(j) => run_trials(j),
            Job::Report(j) => run_report(j),
        }
    }
}

fn elapsed_ms(t0: Instant) -> f64 {
    t0.elapsed().as_secs_f64() * 1e3
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn load_input(spec: &InputSpec) -> anyhow::Result<FeatureSet> {
    let fs = load_features(&spec.path, spec.format)?;
    Ok(normalize_rows(&fs, spec.normalize))
}

fn cluster_count(requested: Option<usize>, fs: &FeatureSet) -> anyhow::Result<usize> {
    requested
        .or(fs.num_classes())
        .ok_or_else(|| UsageError("--classes is required when the input has no labels".into()).into())
}

fn require_labels<'a>(fs: &'a FeatureSet, spec: &InputSpec) -> anyhow::Result<&'a [u32]> {
    fs.labels().ok_or_else(|| anyhow!("{}: input has no class labels", spec.path.display()))
}

fn labels_text(labels: &[u32]) -> String {
    let mut out = String::with_capacity(labels.len() * 3);
    for l in labels {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    out
}

fn read_labels(path: &Path) -> anyhow::Result<Vec<u32>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read labels {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| l.trim().parse::<u32>().with_context(|| format!("{}:{}: bad label '{l}'", path.display(), i + 1)))
        .collect()
}

/// Matched accuracy plus the relabeled confusion matrix.
fn score(pred: &[u32], truth: &[u32], classes: usize, truth_classes: usize) -> anyhow::Result<(f64, Array2<u64>)> {
    let k = classes.max(truth_classes);
    let (acc, matching) = cluster_accuracy(pred, truth, k)?;
    Ok((acc, confusion_matrix(pred, truth, &matching)?))
}

/// Writes the confusion matrix as CSV and JSON next to `base`, with `tag`
/// inserted before the suffix; returns the CSV path.
fn write_confusion(
    base: &Path,
    tag: &str,
    confusion: &Array2<u64>,
    outputs: &mut Vec<PathBuf>,
) -> anyhow::Result<PathBuf> {
    let csv = sibling(base, &format!("{tag}confusion.csv"));
    write_atomic(&csv, confusion_to_csv(confusion).as_bytes())?;
    let rows: Vec<Vec<u64>> = confusion.outer_iter().map(|r| r.to_vec()).collect();
    let json = sibling(base, &format!("{tag}confusion.json"));
    write_json(&json, &rows)?;
    outputs.push(csv.clone());
    outputs.push(json);
    Ok(csv)
}

fn prior_alpha(config: &TrainConfig) -> Option<f64> {
    match config.prior {
        PriorSpec::PowerLaw { alpha } => Some(alpha),
        _ => None,
    }
}

fn run_gen_blobs(job: &GenBlobsJob) -> anyhow::Result<RunRecord> {
    let t0 = Instant::now();
    let fs = gen_gaussian_blobs(&job.spec)?;
    save_features(&fs, &job.output, job.format)?;
    Ok(RunRecord {
        outputs: vec![job.output.clone()],
        seeds: vec![job.spec.seed],
        trials: vec![TrialTime { method: "gen-blobs".into(), seed: Some(job.spec.seed), wall_clock_ms: elapsed_ms(t0) }],
        ..Default::default()
    })
}

fn run_subsample(job: &SubsampleJob) -> anyhow::Result<RunRecord> {
    let t0 = Instant::now();
    let fs = load_input(&job.input)?;
    let sub = subsample_powerlaw(&fs, job.alpha, job.seed)?;
    // Labels are required to subsample, so a CSV output keeps them.
    let format = match job.input.format {
        Format::Csv { .. } => Format::Csv { labels: true },
        f => f,
    };
    save_features(&sub, &job.output, format)?;
    Ok(RunRecord {
        inputs: vec![job.input.path.clone()],
        outputs: vec![job.output.clone()],
        seeds: vec![job.seed],
        trials: vec![TrialTime { method: "subsample-pl".into(), seed: Some(job.seed), wall_clock_ms: elapsed_ms(t0) }],
    })
}

/// Labels for one clustering run, plus the loss trace for the TURTLE variants.
fn cluster_once(
    x: ndarray::ArrayView2<'_, f64>,
    method: Method,
    classes: usize,
    seed: u64,
    config: Option<&TrainConfig>,
) -> anyhow::Result<(Vec<u32>, Option<String>)> {
    match (method, config) {
        (Method::Kmeans, _) => Ok((kmeans_pp(x, classes, seed, KMeansConfig::default())?.labels, None)),
        (_, Some(config)) => {
            let config = TrainConfig { seed, ..config.clone() };
            let model = train_matrix(x, classes, &config)?;
            Ok((model.predict(x)?, Some(model.trace_csv())))
        }
        (_, None) => Err(anyhow!("{} needs a training config", method.name())),
    }
}

fn run_cluster(job: &ClusterJob) -> anyhow::Result<RunRecord> {
    let fs = load_input(&job.input)?;
    let classes = cluster_count(job.classes, &fs)?;
    let x = fs.to_f64();
    let t0 = Instant::now();
    let (labels, trace) = cluster_once(x.view(), job.method, classes, job.seed, job.config.as_ref())?;
    let wall = elapsed_ms(t0);

    let mut outputs = vec![job.output.clone()];
    write_atomic(&job.output, labels_text(&labels).as_bytes())?;
    if let Some(trace) = trace {
        let path = sibling(&job.output, "trace.csv");
        write_atomic(&path, trace.as_bytes())?;
        outputs.push(path);
    }
    let (accuracy, confusion_csv_path) = match (fs.labels(), fs.num_classes()) {
        (Some(truth), Some(truth_classes)) => {
            let (acc, confusion) = score(&labels, truth, classes, truth_classes)?;
            let csv = write_confusion(&job.output, "", &confusion, &mut outputs)?;
            (Some(acc), Some(csv.display().to_string()))
        }
        _ => (None, None),
    };
    let metrics = Metrics {
        method: job.method.name().into(),
        seed: Some(job.seed),
        gamma: job.config.as_ref().map(|c| c.gamma),
        alpha: job.config.as_ref().and_then(prior_alpha),
        accuracy,
        confusion_csv_path,
        runtime_ms: job.timing.then_some(wall.round() as u64),
    };
    let metrics_path = sibling(&job.output, "metrics.json");
    write_json(&metrics_path, &metrics)?;
    outputs.push(metrics_path);
    Ok(RunRecord {
        inputs: vec![job.input.path.clone()],
        outputs,
        seeds: vec![job.seed],
        trials: vec![TrialTime { method: job.method.name().into(), seed: Some(job.seed), wall_clock_ms: wall }],
    })
}

fn run_probe(job: &ProbeJob) -> anyhow::Result<RunRecord> {
    let fs = load_input(&job.input)?;
    let truth = require_labels(&fs, &job.input)?;
    let classes = fs.num_classes().expect("labeled sets carry a class count");
    let x = fs.to_f64();
    let t0 = Instant::now();
    let result = linear_probe(x.view(), truth, classes, job.seed, job.probe)?;
    let wall = elapsed_ms(t0);
    let metrics = Metrics {
        method: "probe".into(),
        seed: Some(job.seed),
        gamma: None,
        alpha: None,
        accuracy: Some(result.val_accuracy),
        confusion_csv_path: None,
        runtime_ms: job.timing.then_some(wall.round() as u64),
    };
    write_json(&job.output, &metrics)?;
    Ok(RunRecord {
        inputs: vec![job.input.path.clone()],
        outputs: vec![job.output.clone()],
        seeds: vec![job.seed],
        trials: vec![TrialTime { method: "probe".into(), seed: Some(job.seed), wall_clock_ms: wall }],
    })
}

fn run_eval(job: &EvalJob) -> anyhow::Result<RunRecord> {
    let t0 = Instant::now();
    let fs = load_input(&job.input)?;
    let truth = require_labels(&fs, &job.input)?;
    let pred = read_labels(&job.labels)?;
    if pred.len() != truth.len() {
        return Err(anyhow!(
            "{} has {} labels but {} has {} rows",
            job.labels.display(),
            pred.len(),
            job.input.path.display(),
            truth.len()
        ));
    }
    let truth_classes = fs.num_classes().expect("labeled sets carry a class count");
    let classes = pred.iter().map(|&l| l as usize + 1).max().unwrap_or(1);
    let (acc, confusion) = score(&pred, truth, classes, truth_classes)?;
    let mut outputs = Vec::new();
    let csv = write_confusion(&job.output, "", &confusion, &mut outputs)?;
    let metrics = Metrics {
        method: "eval".into(),
        seed: None,
        gamma: None,
        alpha: None,
        accuracy: Some(acc),
        confusion_csv_path: Some(csv.display().to_string()),
        runtime_ms: None,
    };
    write_json(&job.output, &metrics)?;
    outputs.insert(0, job.output.clone());
    Ok(RunRecord {
        inputs: vec![job.input.path.clone(), job.labels.clone()],
        outputs,
        seeds: vec![],
        trials: vec![TrialTime { method: "eval".into(), seed: None, wall_clock_ms: elapsed_ms(t0) }],
    })
}

fn run_cv_grid(job: &CvGridJob) -> anyhow::Result<RunRecord> {
    let fs = load_input(&job.input)?;
    let classes = cluster_count(job.classes, &fs)?;
    // Ground truth never reaches the grid search.
    let x = fs.without_labels().to_f64();
    let t0 = Instant::now();
    let result = grid_search(x.view(), classes, &job.gamma_grid, &job.alpha_grid, &job.base, job.seed, job.cv)?;
    let wall = elapsed_ms(t0);
    write_atomic(&job.output, result.to_csv().as_bytes())?;
    let json = sibling(&job.output, "json");
    write_json(&json, &result)?;
    Ok(RunRecord {
        inputs: vec![job.input.path.clone()],
        outputs: vec![job.output.clone(), json],
        seeds: vec![job.seed],
        trials: vec![TrialTime { method: "cv-grid".into(), seed: Some(job.seed), wall_clock_ms: wall }],
    })
}

fn run_trials(job: &TrialsJob) -> anyhow::Result<RunRecord> {
    let fs = load_input(&job.input)?;
    let truth = require_labels(&fs, &job.input)?;
    let truth_classes = fs.num_classes().expect("labeled sets carry a class count");
    let classes = job.classes.unwrap_or(truth_classes);
    let x = fs.to_f64();

    let runs: Vec<(usize, u64)> =
        (0..job.methods.len()).flat_map(|m| job.seeds.iter().map(move |&s| (m, s))).collect();
    let results: Vec<anyhow::Result<(Vec<u32>, f64)>> = runs
        .par_iter()
        .map(|&(m, seed)| {
            let t0 = Instant::now();
            let (labels, _) = cluster_once(x.view(), job.methods[m], classes, seed, job.configs[m].as_ref())?;
            Ok((labels, elapsed_ms(t0)))
        })
        .collect();

    let mut outputs = vec![job.output.clone()];
    let mut summaries: Vec<MethodSummary> = job
        .methods
        .iter()
        .map(|m| MethodSummary { method: m.name().into(), runs: vec![], mean_accuracy: None, std_accuracy: None })
        .collect();
    let mut failures = Vec::new();
    let mut first_error = None;
    let mut trials = Vec::new();
    for (&(m, seed), result) in runs.iter().zip(results) {
        let method = job.methods[m];
        match result {
            Ok((labels, wall)) => {
                let (acc, confusion) = score(&labels, truth, classes, truth_classes)?;
                let tag = format!("{}.seed{seed}.", method.name());
                let csv = write_confusion(&job.output, &tag, &confusion, &mut outputs)?;
                let config = job.configs[m].as_ref();
                summaries[m].runs.push(Metrics {
                    method: method.name().into(),
                    seed: Some(seed),
                    gamma: config.map(|c| c.gamma),
                    alpha: config.and_then(prior_alpha),
                    accuracy: Some(acc),
                    confusion_csv_path: Some(csv.display().to_string()),
                    runtime_ms: job.timing.then_some(wall.round() as u64),
                });
                trials.push(TrialTime { method: method.name().into(), seed: Some(seed), wall_clock_ms: wall });
            }
            Err(e) => {
                failures.push(TrialFailure { method: method.name().into(), seed, error: format!("{e:#}") });
                first_error.get_or_insert(e);
            }
        }
    }
    for s in &mut summaries {
        let accs: Vec<f64> = s.runs.iter().filter_map(|r| r.accuracy).collect();
        if !accs.is_empty() {
            let (mean, std) = mean_std(&accs);
            s.mean_accuracy = Some(mean);
            s.std_accuracy = Some(std);
        }
    }
    let paired_deltas = if summaries.len() == 2 {
        let second: BTreeMap<u64, f64> =
            summaries[1].runs.iter().filter_map(|r| Some((r.seed?, r.accuracy?))).collect();
        summaries[0]
            .runs
            .iter()
            .filter_map(|r| Some(PairedDelta { seed: r.seed?, delta: second.get(&r.seed?)? - r.accuracy? }))
            .collect()
    } else {
        Vec::new()
    };
    let summary = TrialsSummary { methods: summaries, paired_deltas, failures };
    write_json(&job.output, &summary)?;
    if let Some(e) = first_error {
        return Err(e.context(format!("partial results kept in {}", job.output.display())));
    }
    Ok(RunRecord { inputs: vec![job.input.path.clone()], outputs, seeds: job.seeds.clone(), trials })
}

/// Per-run rows from a metrics file or a trials summary.
fn report_rows(path: &Path) -> anyhow::Result<Vec<Metrics>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    if let Ok(m) = serde_json::from_str::<Metrics>(&text) {
        return Ok(vec![m]);
    }
    let summary: TrialsSummary = serde_json::from_str(&text)
        .with_context(|| format!("{}: neither a metrics file nor a trials summary", path.display()))?;
    Ok(summary.methods.into_iter().flat_map(|m| m.runs).collect())
}

fn run_report(job: &ReportJob) -> anyhow::Result<RunRecord> {
    let t0 = Instant::now();
    let opt = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
    let mut table = String::from("source,method,seed,gamma,alpha,accuracy\n");
    let mut by_method: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for path in &job.inputs {
        for m in report_rows(path)? {
            table.push_str(&format!(
                "{},{},{},{},{},{}\n",
                path.display(),
                m.method,
                m.seed.map(|s| s.to_string()).unwrap_or_default(),
                opt(m.gamma),
                opt(m.alpha),
                opt(m.accuracy)
            ));
            if let Some(acc) = m.accuracy {
                by_method.entry(m.method.clone()).or_default().push(acc);
            }
        }
    }
    write_atomic(&job.output, table.as_bytes())?;
    let mut summary = String::from("method,runs,mean_accuracy,std_accuracy\n");
    for (method, accs) in &by_method {
        let (mean, std) = mean_std(accs);
        summary.push_str(&format!("{method},{},{mean:?},{std:?}\n", accs.len()));
    }
    let summary_path = sibling(&job.output, "summary.csv");
    write_atomic(&summary_path, summary.as_bytes())?;
    Ok(RunRecord {
        inputs: job.inputs.clone(),
        outputs: vec![job.output.clone(), summary_path],
        seeds: vec![],
        trials: vec![TrialTime { method: "report".into(), seed: None, wall_clock_ms: elapsed_ms(t0) }],
    })
}
