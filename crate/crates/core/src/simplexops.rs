//! Probability-simplex primitives.
//!
//! Slice-in/`Vec`-out versions are provided for callers that want a
//! [`SimplexVector`]; the `_into` variants write into caller buffers and are
//! what the training loops use.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance on `sum == 1` for a vector to count as a point of the simplex.
pub const SIMPLEX_SUM_TOL: f64 = 1e-9;

/// Floor applied to probabilities inside logarithms when forming gradients.
pub const LOG_CLAMP: f64 = 1e-12;

/// A point of the probability simplex: non-negative entries summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("simplex vector must be non-empty"));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::invalid(format!(
                "simplex entry {i} is {p}, expected a finite non-negative value"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
            return Err(Error::invalid(format!("simplex entries sum to {sum}, expected 1")));
        }
        Ok(SimplexVector(probs))
    }

    pub fn uniform(num_classes: usize) -> Self {
        assert!(num_classes > 0, "uniform distribution over zero classes");
        SimplexVector(vec![1.0 / num_classes as f64; num_classes])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// True when every entry is strictly positive, as required of KL priors.
    pub fn is_strictly_positive(&self) -> bool {
        self.0.iter().all(|&p| p > 0.0)
    }
}

impl TryFrom<Vec<f64>> for SimplexVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        SimplexVector::new(v)
    }
}

impl From<SimplexVector> for Vec<f64> {
    fn from(v: SimplexVector) -> Self {
        v.0
    }
}

impl std::ops::Deref for SimplexVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> SimplexVector {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    SimplexVector(out)
}

pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    debug_assert_eq!(logits.len(), out.len());
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// `ln softmax(logits)` computed via log-sum-exp.
pub fn log_softmax_into(logits: &[f64], out: &mut [f64]) {
    debug_assert_eq!(logits.len(), out.len());
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = l - lse;
    }
}

/// Jacobian-transpose product of softmax evaluated at output `probs`:
/// `probs ⊙ (upstream − ⟨probs, upstream⟩)`.
pub fn softmax_vjp_into(probs: &[f64], upstream: &[f64], out: &mut [f64]) {
    let dot: f64 = probs.iter().zip(upstream).map(|(p, u)| p * u).sum();
    for ((o, &p), &u) in out.iter_mut().zip(probs).zip(upstream) {
        *o = p * (u - dot);
    }
}

pub fn softmax_vjp(probs: &[f64], upstream: &[f64]) -> Vec<f64> {
    assert_eq!(probs.len(), upstream.len());
    let mut out = vec![0.0; probs.len()];
    softmax_vjp_into(probs, upstream, &mut out);
    out
}

/// Threshold `t` such that `sparsemax(z)_i = max(z_i − t, 0)`.
///
/// The support size is the largest `k` with `1 + k·z_(k) > Σ_{j≤k} z_(j)`
/// over the descending order; the comparison is strict so entries sitting
/// exactly on the threshold are left out.
pub fn sparsemax_threshold(logits: &[f64]) -> f64 {
    assert!(!logits.is_empty(), "sparsemax of an empty vector");
    let mut sorted = logits.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut support_sum = sorted[0];
    let mut support = 1usize;
    for (i, &z) in sorted.iter().enumerate() {
        cumsum += z;
        let k = (i + 1) as f64;
        if 1.0 + k * z > cumsum {
            support = i + 1;
            support_sum = cumsum;
        }
    }
    (support_sum - 1.0) / support as f64
}

/// Euclidean projection of `logits` onto the probability simplex.
pub fn sparsemax(logits: &[f64]) -> SimplexVector {
    let mut out = vec![0.0; logits.len()];
    sparsemax_into(logits, &mut out);
    SimplexVector(out)
}

pub fn sparsemax_into(logits: &[f64], out: &mut [f64]) {
    debug_assert_eq!(logits.len(), out.len());
    let t = sparsemax_threshold(logits);
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - t).max(0.0);
    }
}

/// Jacobian-transpose product of sparsemax at `logits`.
///
/// On the support `S` the result is `u_i − mean_{j∈S} u_j`; off the support
/// it is exactly zero.
pub fn sparsemax_vjp(logits: &[f64], upstream: &[f64]) -> Vec<f64> {
    assert_eq!(logits.len(), upstream.len(), "sparsemax_vjp length mismatch");
    let probs = sparsemax(logits);
    let mut out = vec![0.0; logits.len()];
    sparsemax_vjp_from_output(&probs, upstream, &mut out);
    out
}

/// Same as [`sparsemax_vjp`] but takes the already computed sparsemax output.
pub fn sparsemax_vjp_from_output(probs: &[f64], upstream: &[f64], out: &mut [f64]) {
    let (sum, count) = probs
        .iter()
        .zip(upstream)
        .filter(|(p, _)| **p > 0.0)
        .fold((0.0, 0usize), |(s, c), (_, u)| (s + u, c + 1));
    let mean = sum / count as f64;
    for ((o, &p), &u) in out.iter_mut().zip(probs).zip(upstream) {
        *o = if p > 0.0 { u - mean } else { 0.0 };
    }
}

/// Shannon entropy in nats with the `0 · ln 0 = 0` convention.
///
/// A negative entry is outside the domain (its elementwise entropy would be
/// `−∞`) and is rejected.
pub fn entropy(p: &[f64]) -> Result<f64> {
    if let Some(h) = p.iter().find(|h| **h < 0.0 || h.is_nan()) {
        return Err(Error::invalid(format!("entropy of a negative probability {h}")));
    }
    Ok(p.iter().filter(|&&h| h > 0.0).map(|&h| -h * h.ln()).sum())
}

/// `KL(p ‖ q) = Σ p_i ln(p_i / q_i)` with zero terms where `p_i = 0`.
pub fn kl_div(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::dims(format!("kl_div: {} vs {} entries", p.len(), q.len())));
    }
    let mut acc = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi < 0.0 || qi < 0.0 {
            return Err(Error::invalid(format!("kl_div: negative entry at {i}")));
        }
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::invalid(format!(
                "kl_div: q[{i}] = 0 where p[{i}] = {pi} > 0"
            )));
        }
        acc += pi * (pi / qi).ln();
    }
    Ok(acc.max(0.0))
}

/// Gradient of `KL(p ‖ q)` in `p`, with `p` clamped at [`LOG_CLAMP`] inside
/// the logarithm.
pub fn kl_grad_p(p: &[f64], q: &[f64]) -> Vec<f64> {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| pi.max(LOG_CLAMP).ln() - qi.ln() + 1.0)
        .collect()
}

/// Power-law pmf over ranks `c = 1..=C`: `p(c) ∝ c^{−α}`.
pub fn powerlaw_pmf(num_classes: usize, alpha: f64) -> Result<SimplexVector> {
    if num_classes == 0 {
        return Err(Error::invalid("powerlaw_pmf needs at least one class"));
    }
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::invalid(format!("power-law decay must be finite and >= 0, got {alpha}")));
    }
    let weights: Vec<f64> = (1..=num_classes).map(|c| (c as f64).powf(-alpha)).collect();
    let norm: f64 = weights.iter().sum();
    Ok(SimplexVector(weights.into_iter().map(|w| w / norm).collect()))
}
