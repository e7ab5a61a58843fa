//! The alternating training loop.
//!
//! Each iteration draws a mini-batch, freezes the targets `mode(τ_θ(z))`,
//! runs `inner_steps` gradient steps on the hyperplane, then takes a single
//! gradient step on the classifier with the hyperplane frozen. With warm
//! start the next inner solve starts from the latest hyperplane, otherwise
//! from a fresh Gaussian draw.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::objective::{
    argmax_rows, inner_solve, outer_loss_grad_theta_with, Classifier, Hyperplane, LabelMean, TargetMode,
};
use crate::simplexops::{powerlaw_pmf, SimplexVector};
use crate::tensorio::FeatureSet;
use crate::rng::{seeded, Stream};
use crate::{Error, Result};

pub const DEFAULT_ITERATIONS: usize = 6000;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const DEFAULT_INNER_STEPS: usize = 10;
pub const DEFAULT_MAX_BATCH: usize = 1024;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum PriorSpec {
    #[default]
    Uniform,
    PowerLaw {
        alpha: f64,
    },
    Explicit {
        probs: SimplexVector,
    },
}

impl PriorSpec {
    pub fn resolve(&self, num_classes: usize) -> Result<SimplexVector> {
        let prior = match self {
            PriorSpec::Uniform => SimplexVector::uniform(num_classes),
            PriorSpec::PowerLaw { alpha } => powerlaw_pmf(num_classes, *alpha)?,
            PriorSpec::Explicit { probs } => {
                if probs.len() != num_classes {
                    return Err(Error::dims(format!("explicit prior has {} entries for {num_classes} classes", probs.len())));
                }
                probs.clone()
            }
        };
        if !prior.is_strictly_positive() {
            return Err(Error::invalid("prior must be strictly positive"));
        }
        Ok(prior)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub inner_steps: usize,
    /// `None` means `min(N, 1024)`.
    pub batch_size: Option<usize>,
    pub gamma: f64,
    pub prior: PriorSpec,
    pub target_mode: TargetMode,
    pub label_mean: LabelMean,
    pub warm_start: bool,
    pub seed: u64,
    /// `None` means `1 / sqrt(d + 1)`.
    pub init_scale: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: DEFAULT_ITERATIONS,
            learning_rate: DEFAULT_LEARNING_RATE,
            inner_steps: DEFAULT_INNER_STEPS,
            batch_size: None,
            gamma: 10.0,
            prior: PriorSpec::Uniform,
            target_mode: TargetMode::Softmax,
            label_mean: LabelMean::Softmax,
            warm_start: true,
            seed: 0,
            init_scale: None,
        }
    }
}

impl TrainConfig {
    /// Entropy-regularised softmax targets with a uniform prior.
    pub fn turtle(gamma: f64) -> Self {
        TrainConfig { gamma, ..Default::default() }
    }

    /// Sparsemax targets with a power-law prior.
    pub fn pet_turtle(gamma: f64, alpha: f64) -> Self {
        TrainConfig {
            gamma,
            prior: PriorSpec::PowerLaw { alpha },
            target_mode: TargetMode::Sparsemax,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be finite and > 0"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma must be finite and >= 0"));
        }
        if let Some(s) = self.init_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid("init scale must be finite and > 0"));
            }
        }
        Ok(())
    }

    /// Batch size with the default materialised for `n` samples.
    pub fn resolved_batch_size(&self, n: usize) -> usize {
        self.batch_size.unwrap_or(DEFAULT_MAX_BATCH).min(n)
    }

    pub fn resolved_init_scale(&self, dim: usize) -> f64 {
        self.init_scale.unwrap_or(1.0 / ((dim + 1) as f64).sqrt())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub theta: Classifier,
    pub w_final: Hyperplane,
    /// Outer objective per iteration, evaluated before that iteration's step.
    pub loss_trace: Vec<f64>,
    /// The prior term (KL to the prior) per iteration.
    pub reg_trace: Vec<f64>,
    pub config: TrainConfig,
}

impl TrainedModel {
    pub fn predict(&self, features: ArrayView2<'_, f64>) -> Result<Vec<u32>> {
        predict(&self.theta, features)
    }

    /// `iteration,outer_loss,kl_term` rows for plotting.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,outer_loss,kl_term\n");
        for (i, (l, r)) in self.loss_trace.iter().zip(&self.reg_trace).enumerate() {
            out.push_str(&format!("{},{l:?},{r:?}\n", i + 1));
        }
        out
    }
}

pub fn train(features: &FeatureSet, num_classes: usize, config: &TrainConfig) -> Result<TrainedModel> {
    train_matrix(features.to_f64().view(), num_classes, config)
}

/// [`train`] on an already widened feature matrix.
pub fn train_matrix(x: ArrayView2<'_, f64>, num_classes: usize, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    let (n, d) = x.dim();
    if num_classes == 0 {
        return Err(Error::invalid("need at least one cluster"));
    }
    if n < num_classes {
        return Err(Error::invalid(format!("{n} samples cannot fill {num_classes} clusters")));
    }
    let prior = config.prior.resolve(num_classes)?;
    let batch_size = config.resolved_batch_size(n);
    let scale = config.resolved_init_scale(d);
    let lr = config.learning_rate;

    let mut init_rng = seeded(config.seed, Stream::TrainInit);
    let mut batch_rng = seeded(config.seed, Stream::TrainBatches);

    let mut theta = Classifier::random(num_classes, d, scale, &mut init_rng);
    let mut w0 = Hyperplane::random(num_classes, d, scale, &mut init_rng);
    let mut w_final = w0.clone();
    let mut loss_trace = Vec::with_capacity(config.iterations);
    let mut reg_trace = Vec::with_capacity(config.iterations);
    let mut scratch: Array2<f64>;

    for t in 0..config.iterations {
        let batch = if batch_size == n {
            x
        } else {
            let mut idx = rand::seq::index::sample(&mut batch_rng, n, batch_size).into_vec();
            idx.sort_unstable();
            scratch = x.select(Axis(0), &idx);
            scratch.view()
        };
        let targets = config.target_mode.apply_rows(theta.logits(batch).view());
        let w = inner_solve(&w0, batch, targets.view(), config.inner_steps, lr)?;
        let eval = outer_loss_grad_theta_with(
            &theta,
            &w,
            batch,
            config.gamma,
            &prior,
            config.target_mode,
            config.label_mean,
        )?;
        if !eval.loss.is_finite() {
            return Err(Error::NonFinite(format!("outer loss is {} at iteration {}", eval.loss, t + 1)));
        }
        theta.a.scaled_add(-lr, &eval.grad_a);
        theta.b.scaled_add(-lr, &eval.grad_b);
        loss_trace.push(eval.loss);
        reg_trace.push(eval.reg);
        w0 = if config.warm_start { w.clone() } else { Hyperplane::random(num_classes, d, scale, &mut init_rng) };
        w_final = w;
    }
    if theta.a.iter().chain(theta.b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("classifier parameters diverged".into()));
    }
    Ok(TrainedModel { theta, w_final, loss_trace, reg_trace, config: config.clone() })
}

/// Row-wise argmax of `A z + b`, ties to the lowest class index.
pub fn predict(theta: &Classifier, features: ArrayView2<'_, f64>) -> Result<Vec<u32>> {
    if features.ncols() != theta.dim() {
        return Err(Error::dims(format!("classifier expects {} features, got {}", theta.dim(), features.ncols())));
    }
    Ok(argmax_rows(theta.logits(features).view()))
}

/// Mean of `mode(τ_θ(z))` over all rows.
pub fn label_distribution(theta: &Classifier, features: ArrayView2<'_, f64>, mode: TargetMode) -> Result<SimplexVector> {
    if features.ncols() != theta.dim() {
        return Err(Error::dims(format!("classifier expects {} features, got {}", theta.dim(), features.ncols())));
    }
    if features.nrows() == 0 {
        return Err(Error::invalid("label distribution of no samples"));
    }
    let probs = mode.apply_rows(theta.logits(features).view());
    let mut mean = Array1::<f64>::zeros(theta.num_classes());
    for row in probs.outer_iter() {
        mean += &row;
    }
    mean /= features.nrows() as f64;
    // Renormalise away accumulated rounding.
    let total = mean.sum();
    SimplexVector::new(mean.mapv(|v| v / total).to_vec())
}

/// Fresh hyperplane draws for a seed, as the trainer makes them with warm
/// start disabled (after the initial classifier and hyperplane).
pub fn restart_draws(num_classes: usize, dim: usize, config: &TrainConfig, count: usize) -> Vec<Hyperplane> {
    let scale = config.resolved_init_scale(dim);
    let mut rng = seeded(config.seed, Stream::TrainInit);
    let _ = Classifier::random(num_classes, dim, scale, &mut rng);
    let _ = Hyperplane::random(num_classes, dim, scale, &mut rng);
    (0..count).map(|_| Hyperplane::random(num_classes, dim, scale, &mut rng)).collect()
}
