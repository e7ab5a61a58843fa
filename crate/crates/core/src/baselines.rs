//! K-Means++ and a supervised linear probe.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::objective::{argmax_rows, ce_loss_grad_w, Classifier, Hyperplane};
use crate::rng::{seeded, Stream};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub labels: Vec<u32>,
    pub centroids: Array2<f64>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
    pub iterations_run: usize,
    /// Inertia after each assignment step.
    pub inertia_trace: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub max_iters: usize,
    pub tol: f64,
    /// Candidates drawn per seeding step; the one that lowers the potential
    /// most is kept. `None` means `2 + ⌊ln C⌋`, `Some(1)` is plain D² sampling.
    pub local_trials: Option<usize>,
    /// Independent seedings; the run with the lowest final inertia is kept
    /// (the earliest on ties).
    pub n_init: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig { max_iters: 300, tol: 1e-6, local_trials: None, n_init: 10 }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy `D²`-weighted seeding followed by Lloyd iterations.
pub fn kmeans_pp(x: ArrayView2<'_, f64>, num_clusters: usize, seed: u64, config: KMeansConfig) -> Result<KMeansResult> {
    let n = x.nrows();
    if num_clusters == 0 || n < num_clusters {
        return Err(Error::invalid(format!("cannot form {num_clusters} clusters from {n} points")));
    }
    if config.n_init == 0 {
        return Err(Error::invalid("k-means needs at least one initialisation"));
    }
    let x = x.as_standard_layout();
    let rows: Vec<&[f64]> = x.outer_iter().map(|r| r.to_slice().unwrap()).collect();
    let mut rng = seeded(seed, Stream::KMeans);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..config.n_init {
        let run = single_run(x.view(), &rows, num_clusters, &config, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

fn single_run<R: Rng>(
    x: ArrayView2<'_, f64>,
    rows: &[&[f64]],
    num_clusters: usize,
    config: &KMeansConfig,
    rng: &mut R,
) -> KMeansResult {
    let (n, d) = x.dim();
    let trials = config.local_trials.unwrap_or(2 + (num_clusters as f64).ln() as usize).max(1);
    let mut centroids = Array2::<f64>::zeros((num_clusters, d));
    centroids.row_mut(0).assign(&x.row(rng.random_range(0..n)));
    let mut nearest: Vec<f64> = rows.iter().map(|r| sq_dist(r, centroids.row(0).as_slice().unwrap())).collect();
    for k in 1..num_clusters {
        let candidates: Vec<usize> = match WeightedIndex::new(&nearest) {
            Ok(dist) => (0..trials).map(|_| dist.sample(rng)).collect(),
            // Every point coincides with a chosen centroid.
            Err(_) => vec![rng.random_range(0..n)],
        };
        let mut best: Option<(f64, Vec<f64>)> = None;
        for &cand in &candidates {
            let updated: Vec<f64> = rows.iter().zip(&nearest).map(|(r, &b)| b.min(sq_dist(r, rows[cand]))).collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|(p, _)| potential < *p) {
                centroids.row_mut(k).assign(&x.row(cand));
                best = Some((potential, updated));
            }
        }
        nearest = best.expect("at least one candidate").1;
    }

    let mut labels = vec![0u32; n];
    let mut dists = vec![0.0; n];
    let mut inertia_trace = Vec::new();
    let mut iterations_run = 0;
    for _ in 0..config.max_iters {
        let inertia = assign(rows, &centroids, &mut labels, &mut dists);
        inertia_trace.push(inertia);

        let mut sums = Array2::<f64>::zeros((num_clusters, d));
        let mut counts = vec![0usize; num_clusters];
        for (r, &l) in rows.iter().zip(&labels) {
            let mut row = sums.row_mut(l as usize);
            for (s, v) in row.iter_mut().zip(r.iter()) {
                *s += v;
            }
            counts[l as usize] += 1;
        }
        let mut updated = centroids.clone();
        for k in 0..num_clusters {
            if counts[k] > 0 {
                updated.row_mut(k).assign(&(&sums.row(k) / counts[k] as f64));
            }
        }
        for k in 0..num_clusters {
            if counts[k] == 0 {
                // Re-seed at the point farthest from its centroid.
                let far = (0..n).fold(0, |b, i| if dists[i] > dists[b] { i } else { b });
                updated.row_mut(k).assign(&x.row(far));
                dists[far] = 0.0;
            }
        }
        let shift = (&updated - &centroids)
            .outer_iter()
            .map(|r| r.mapv(|v| v * v).sum().sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        iterations_run += 1;
        if shift < config.tol {
            break;
        }
    }
    let inertia = assign(rows, &centroids, &mut labels, &mut dists);
    KMeansResult { labels, centroids, inertia, iterations_run, inertia_trace }
}

/// Nearest-centroid assignment, ties to the lower index. Returns inertia.
fn assign(rows: &[&[f64]], centroids: &Array2<f64>, labels: &mut [u32], dists: &mut [f64]) -> f64 {
    let cents: Vec<Vec<f64>> = centroids.outer_iter().map(|c| c.to_vec()).collect();
    let mut inertia = 0.0;
    for (i, r) in rows.iter().enumerate() {
        let (mut best, mut best_d) = (0usize, f64::INFINITY);
        for (k, c) in cents.iter().enumerate() {
            let dd = sq_dist(r, c);
            if dd < best_d {
                best = k;
                best_d = dd;
            }
        }
        labels[i] = best as u32;
        dists[i] = best_d;
        inertia += best_d;
    }
    inertia
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub train_fraction: f64,
    pub epochs: usize,
    /// Step size; `None` picks `1 / max ‖[z; 1]‖²` over the training rows,
    /// which keeps full-batch descent on the cross entropy monotone.
    pub eta: Option<f64>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { train_fraction: 0.8, epochs: 500, eta: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub classifier: Classifier,
    pub val_accuracy: f64,
    pub loss_trace: Vec<f64>,
}

/// Multinomial logistic regression on a seeded train split, scored on the
/// held-out rows.
pub fn linear_probe(
    x: ArrayView2<'_, f64>,
    labels: &[u32],
    num_classes: usize,
    seed: u64,
    config: ProbeConfig,
) -> Result<ProbeResult> {
    let n = x.nrows();
    if labels.len() != n {
        return Err(Error::dims(format!("{} labels for {n} rows", labels.len())));
    }
    if !(config.train_fraction > 0.0 && config.train_fraction <= 1.0) {
        return Err(Error::invalid("train fraction must lie in (0, 1]"));
    }
    let n_train = (n as f64 * config.train_fraction).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::invalid(format!(
            "train fraction {} leaves an empty {} split",
            config.train_fraction,
            if n_train == 0 { "train" } else { "validation" }
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed, Stream::ProbeSplit));
    let (train_idx, val_idx) = order.split_at(n_train);
    let (classifier, loss_trace) = fit_softmax_regression(x, labels, train_idx, num_classes, config.epochs, config.eta)?;
    let val_accuracy = accuracy_on(&classifier, x, labels, val_idx);
    Ok(ProbeResult { classifier, val_accuracy, loss_trace })
}

/// Full-batch gradient descent on the cross entropy against one-hot labels,
/// from zero weights. Returns the classifier and the loss per epoch.
pub fn fit_softmax_regression(
    x: ArrayView2<'_, f64>,
    labels: &[u32],
    rows: &[usize],
    num_classes: usize,
    epochs: usize,
    eta: Option<f64>,
) -> Result<(Classifier, Vec<f64>)> {
    if let Some(l) = labels.iter().find(|&&l| l as usize >= num_classes) {
        return Err(Error::invalid(format!("label {l} out of range for {num_classes} classes")));
    }
    if rows.is_empty() {
        return Err(Error::invalid("no training rows"));
    }
    let batch = x.select(Axis(0), rows);
    let mut targets = Array2::<f64>::zeros((rows.len(), num_classes));
    for (i, &r) in rows.iter().enumerate() {
        targets[[i, labels[r] as usize]] = 1.0;
    }
    let eta = match eta {
        Some(e) if e > 0.0 && e.is_finite() => e,
        Some(e) => return Err(Error::invalid(format!("probe step size must be > 0, got {e}"))),
        None => {
            let max_sq = batch.outer_iter().map(|r| r.dot(&r) + 1.0).fold(0.0, f64::max);
            1.0 / max_sq
        }
    };
    let mut w = Hyperplane::zeros(num_classes, x.ncols());
    let mut trace = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let (loss, grad) = ce_loss_grad_w(&w, batch.view(), targets.view())?;
        trace.push(loss);
        w.w.scaled_add(-eta, &grad);
    }
    Ok((hyperplane_to_classifier(&w), trace))
}

pub fn hyperplane_to_classifier(w: &Hyperplane) -> Classifier {
    let d = w.w.ncols() - 1;
    Classifier { a: w.w.slice(s![.., ..d]).to_owned(), b: w.w.column(d).to_owned() }
}

pub fn accuracy_on(classifier: &Classifier, x: ArrayView2<'_, f64>, labels: &[u32], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return f64::NAN;
    }
    let pred = argmax_rows(classifier.logits(x.select(Axis(0), rows).view()).view());
    let correct = pred.iter().zip(rows).filter(|(p, &r)| **p == labels[r]).count();
    correct as f64 / rows.len() as f64
}

/// Column means, handy for checking single-cluster centroids.
pub fn column_means(x: ArrayView2<'_, f64>) -> Array1<f64> {
    x.mean_axis(Axis(0)).expect("non-empty matrix")
}
