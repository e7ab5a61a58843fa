//! Losses and analytic gradients for the two alternating loops.
//!
//! The hyperplane `W` (`C × (d+1)`) acts on bias-augmented features
//! `[z; 1]`. The classifier `θ = (A, b)` produces logits `A z + b`, which are
//! squashed into targets by softmax or sparsemax. The inner loop fits `W` to
//! frozen targets; the outer loop moves `θ` with `W` frozen.
//!
//! All batch reductions run in row order so results are bit-reproducible.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::simplexops::{
    entropy, kl_div, kl_grad_p, log_softmax_into, softmax_into, softmax_vjp_into, sparsemax_into,
    sparsemax_vjp_from_output, SimplexVector, LOG_CLAMP,
};
use crate::{Error, Result};

/// Linear classifier `τ(z) = A z + b` whose argmax gives cluster labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub a: Array2<f64>,
    pub b: Array1<f64>,
}

impl Classifier {
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        Classifier { a: Array2::zeros((num_classes, dim)), b: Array1::zeros(num_classes) }
    }

    pub fn random<R: Rng + ?Sized>(num_classes: usize, dim: usize, scale: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, scale).expect("finite init scale");
        let a = Array2::from_shape_simple_fn((num_classes, dim), || normal.sample(rng));
        let b = Array1::from_shape_simple_fn(num_classes, || normal.sample(rng));
        Classifier { a, b }
    }

    pub fn num_classes(&self) -> usize {
        self.a.nrows()
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    /// `B × C` logits for a batch of rows.
    pub fn logits(&self, batch: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = batch.dot(&self.a.t());
        out += &self.b;
        out
    }

    fn check(&self, batch: ArrayView2<'_, f64>) -> Result<()> {
        if self.b.len() != self.a.nrows() {
            return Err(Error::dims(format!("classifier bias has {} entries for {} classes", self.b.len(), self.a.nrows())));
        }
        if batch.ncols() != self.a.ncols() {
            return Err(Error::dims(format!("classifier expects {} features, batch has {}", self.a.ncols(), batch.ncols())));
        }
        Ok(())
    }
}

/// Hyperplane on bias-augmented features; the last column is the bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    pub w: Array2<f64>,
}

impl Hyperplane {
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        Hyperplane { w: Array2::zeros((num_classes, dim + 1)) }
    }

    pub fn random<R: Rng + ?Sized>(num_classes: usize, dim: usize, scale: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, scale).expect("finite init scale");
        Hyperplane { w: Array2::from_shape_simple_fn((num_classes, dim + 1), || normal.sample(rng)) }
    }

    pub fn num_classes(&self) -> usize {
        self.w.nrows()
    }

    pub fn logits(&self, batch: ArrayView2<'_, f64>) -> Array2<f64> {
        let d = self.w.ncols() - 1;
        let mut out = batch.dot(&self.w.slice(s![.., ..d]).t());
        out += &self.w.column(d);
        out
    }

    fn check(&self, batch: ArrayView2<'_, f64>) -> Result<()> {
        if self.w.ncols() != batch.ncols() + 1 {
            return Err(Error::dims(format!(
                "hyperplane has {} columns, expected features + 1 = {}",
                self.w.ncols(),
                batch.ncols() + 1
            )));
        }
        Ok(())
    }
}

/// How classifier logits become hyperplane targets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    #[default]
    Softmax,
    Sparsemax,
}

impl TargetMode {
    pub fn apply_into(self, logits: &[f64], out: &mut [f64]) {
        match self {
            TargetMode::Softmax => softmax_into(logits, out),
            TargetMode::Sparsemax => sparsemax_into(logits, out),
        }
    }

    /// Row-wise squashing of a `B × C` logit matrix.
    pub fn apply_rows(self, logits: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros(logits.raw_dim());
        for (src, mut dst) in logits.outer_iter().zip(out.outer_iter_mut()) {
            self.apply_into(src.as_slice().expect("row-major logits"), dst.as_slice_mut().unwrap());
        }
        out
    }

    /// Jacobian-transpose product given the squashed output `probs`.
    fn vjp_into(self, probs: &[f64], upstream: &[f64], out: &mut [f64]) {
        match self {
            TargetMode::Softmax => softmax_vjp_into(probs, upstream, out),
            TargetMode::Sparsemax => sparsemax_vjp_from_output(probs, upstream, out),
        }
    }
}

/// Which distribution the prior term averages over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMean {
    /// Mean of `softmax(τ(z))` regardless of the target mode.
    #[default]
    Softmax,
    /// Mean of the targets themselves (sparsemax rows in sparsemax mode).
    Targets,
}

/// Cross entropy of hyperplane predictions against fixed targets and its
/// gradient in `W`, both averaged over the batch.
pub fn ce_loss_grad_w(
    w: &Hyperplane,
    batch: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
) -> Result<(f64, Array2<f64>)> {
    check_ce_inputs(w, batch, targets)?;
    let mut scratch = CeScratch::new(batch.nrows(), w.num_classes(), batch.ncols());
    let loss = scratch.step(w, batch, targets, true);
    Ok((loss, scratch.grad))
}

fn check_ce_inputs(w: &Hyperplane, batch: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> Result<()> {
    w.check(batch)?;
    let (bsz, c) = (batch.nrows(), w.num_classes());
    if targets.dim() != (bsz, c) {
        return Err(Error::dims(format!("targets are {:?}, expected ({bsz}, {c})", targets.dim())));
    }
    if bsz == 0 {
        return Err(Error::invalid("empty batch"));
    }
    Ok(())
}

/// Buffers for repeated cross-entropy gradient evaluations on one batch.
struct CeScratch {
    logits: Array2<f64>,
    grad: Array2<f64>,
}

impl CeScratch {
    fn new(bsz: usize, c: usize, d: usize) -> Self {
        CeScratch { logits: Array2::zeros((bsz, c)), grad: Array2::zeros((c, d + 1)) }
    }

    /// Fills `self.grad`; returns the loss when `with_loss`, else 0.
    fn step(&mut self, w: &Hyperplane, batch: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>, with_loss: bool) -> f64 {
        let d = batch.ncols();
        let weights = w.w.slice(s![.., ..d]);
        general_mat_mul(1.0, &batch, &weights.t(), 0.0, &mut self.logits);
        self.logits += &w.w.column(d);

        // Logits become residuals softmax − target in place.
        let mut loss = 0.0;
        for (mut row, t) in self.logits.outer_iter_mut().zip(targets.outer_iter()) {
            let row = row.as_slice_mut().unwrap();
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (mut sum, mut t_dot, mut t_sum) = (0.0, 0.0, 0.0);
            for (v, &tk) in row.iter_mut().zip(t.iter()) {
                let shifted = *v - max;
                if with_loss {
                    t_dot += tk * shifted;
                    t_sum += tk;
                }
                *v = shifted.exp();
                sum += *v;
            }
            if with_loss {
                loss += t_sum * sum.ln() - t_dot;
            }
            let inv_sum = 1.0 / sum;
            for (v, &tk) in row.iter_mut().zip(t.iter()) {
                *v = *v * inv_sum - tk;
            }
        }
        let inv = 1.0 / batch.nrows() as f64;
        let residual = self.logits.view();
        general_mat_mul(inv, &residual.t(), &batch, 0.0, &mut self.grad.slice_mut(s![.., ..d]));
        let bias = residual.sum_axis(Axis(0));
        self.grad.column_mut(d).assign(&(bias * inv));
        loss * inv
    }
}

/// `steps` plain gradient-descent steps on [`ce_loss_grad_w`] from `w0`.
pub fn inner_solve(
    w0: &Hyperplane,
    batch: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    steps: usize,
    eta: f64,
) -> Result<Hyperplane> {
    check_ce_inputs(w0, batch, targets)?;
    let mut w = w0.clone();
    let mut scratch = CeScratch::new(batch.nrows(), w.num_classes(), batch.ncols());
    for _ in 0..steps {
        scratch.step(&w, batch, targets, false);
        w.w.scaled_add(-eta, &scratch.grad);
    }
    Ok(w)
}

/// Per-sample gradient of the cross entropy in the target distribution:
/// `−ln softmax(W [z; 1])`, row by row.
pub fn target_ce_grad(w: &Hyperplane, batch: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    w.check(batch)?;
    let mut out = w.logits(batch);
    let mut logp = vec![0.0; out.ncols()];
    for mut row in out.outer_iter_mut() {
        let row = row.as_slice_mut().unwrap();
        log_softmax_into(row, &mut logp);
        for (o, l) in row.iter_mut().zip(&logp) {
            *o = -l;
        }
    }
    Ok(out)
}

/// Value and `θ`-gradient of the outer objective.
#[derive(Clone, Debug, PartialEq)]
pub struct OuterEval {
    /// `ce + γ · reg`.
    pub loss: f64,
    pub ce: f64,
    /// KL to the prior, or negative entropy, depending on the objective.
    pub reg: f64,
    pub grad_a: Array2<f64>,
    pub grad_b: Array1<f64>,
}

/// Regulariser on the batch label mean `τ̄`.
enum Regularizer<'p> {
    Kl(&'p [f64]),
    NegEntropy,
}

/// `CE(W [z;1]; mode(τ_θ(z))) + γ KL(τ̄ ‖ prior)` with `W` held fixed.
pub fn outer_loss_grad_theta(
    theta: &Classifier,
    w: &Hyperplane,
    batch: ArrayView2<'_, f64>,
    gamma: f64,
    prior: &SimplexVector,
    mode: TargetMode,
) -> Result<OuterEval> {
    outer_loss_grad_theta_with(theta, w, batch, gamma, prior, mode, LabelMean::Softmax)
}

/// [`outer_loss_grad_theta`] with an explicit choice of label mean.
pub fn outer_loss_grad_theta_with(
    theta: &Classifier,
    w: &Hyperplane,
    batch: ArrayView2<'_, f64>,
    gamma: f64,
    prior: &SimplexVector,
    mode: TargetMode,
    label_mean: LabelMean,
) -> Result<OuterEval> {
    if prior.len() != theta.num_classes() {
        return Err(Error::dims(format!("prior has {} entries for {} classes", prior.len(), theta.num_classes())));
    }
    if !prior.is_strictly_positive() {
        return Err(Error::invalid("prior must be strictly positive"));
    }
    outer_eval(theta, w, batch, gamma, Regularizer::Kl(prior.as_slice()), mode, label_mean)
}

/// `CE − γ H(τ̄)`: the entropy-regularised form, equal to the KL form with a
/// uniform prior up to the constant `γ ln C`.
pub fn entropy_objective_grad_theta(
    theta: &Classifier,
    w: &Hyperplane,
    batch: ArrayView2<'_, f64>,
    gamma: f64,
    mode: TargetMode,
) -> Result<OuterEval> {
    outer_eval(theta, w, batch, gamma, Regularizer::NegEntropy, mode, LabelMean::Softmax)
}

fn outer_eval(
    theta: &Classifier,
    w: &Hyperplane,
    batch: ArrayView2<'_, f64>,
    gamma: f64,
    reg: Regularizer<'_>,
    mode: TargetMode,
    label_mean: LabelMean,
) -> Result<OuterEval> {
    theta.check(batch)?;
    if w.num_classes() != theta.num_classes() {
        return Err(Error::dims(format!(
            "hyperplane has {} classes, classifier {}",
            w.num_classes(),
            theta.num_classes()
        )));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("gamma must be finite and >= 0, got {gamma}")));
    }
    let (bsz, c) = (batch.nrows(), theta.num_classes());
    if bsz == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let inv = 1.0 / bsz as f64;

    let logits = theta.logits(batch);
    let nll = target_ce_grad(w, batch)?;
    let targets = mode.apply_rows(logits.view());
    let soft = match (mode, label_mean) {
        (TargetMode::Softmax, _) | (_, LabelMean::Targets) => None,
        (TargetMode::Sparsemax, LabelMean::Softmax) => Some(TargetMode::Softmax.apply_rows(logits.view())),
    };
    let (mean_src, mean_mode) = match &soft {
        Some(s) => (s.view(), TargetMode::Softmax),
        None => (targets.view(), mode),
    };

    let mut ce = 0.0;
    for (t, l) in targets.outer_iter().zip(nll.outer_iter()) {
        ce += t.dot(&l);
    }
    ce *= inv;

    let mut tau_bar = Array1::<f64>::zeros(c);
    for row in mean_src.outer_iter() {
        tau_bar += &row;
    }
    tau_bar *= inv;
    let tau_bar = tau_bar.to_vec();

    let (reg_value, reg_grad) = match reg {
        Regularizer::Kl(prior) => (kl_div(&tau_bar, prior)?, kl_grad_p(&tau_bar, prior)),
        Regularizer::NegEntropy => {
            let grad = tau_bar.iter().map(|&p| p.max(LOG_CLAMP).ln() + 1.0).collect();
            (-entropy(&tau_bar)?, grad)
        }
    };

    // dL/dlogits, row by row.
    let mut g_logits = Array2::<f64>::zeros((bsz, c));
    let mut tmp = vec![0.0; c];
    let reg_up: Vec<f64> = reg_grad.iter().map(|g| g * gamma * inv).collect();
    for n in 0..bsz {
        let mut g = g_logits.row_mut(n);
        let g = g.as_slice_mut().unwrap();
        let up: Vec<f64> = nll.row(n).iter().map(|v| v * inv).collect();
        mode.vjp_into(targets.row(n).as_slice().unwrap(), &up, g);
        if gamma != 0.0 {
            mean_mode.vjp_into(mean_src.row(n).as_slice().unwrap(), &reg_up, &mut tmp);
            for (gi, ti) in g.iter_mut().zip(&tmp) {
                *gi += ti;
            }
        }
    }

    let grad_a = g_logits.t().dot(&batch);
    let grad_b = g_logits.sum_axis(Axis(0));
    Ok(OuterEval { loss: ce + gamma * reg_value, ce, reg: reg_value, grad_a, grad_b })
}

/// Row-wise argmax of `τ_θ(z)`; ties go to the lower class index.
pub fn argmax_rows(logits: ArrayView2<'_, f64>) -> Vec<u32> {
    logits.outer_iter().map(|row| argmax(row) as u32).collect()
}

fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}
