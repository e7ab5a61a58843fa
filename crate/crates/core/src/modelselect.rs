//! Choosing `(gamma, alpha)` without ground truth.
//!
//! A labeling is scored by how well a linear classifier trained on it
//! generalises to held-out rows, measured against the same labeling. Nothing
//! here takes true labels as input.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{accuracy_on, fit_softmax_regression};
use crate::trainer::{predict, train_matrix, PriorSpec, TrainConfig};
use crate::rng::{seeded, Stream};
use crate::{Error, Result};

/// Cross-validated error of a labeling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub mean_error: f64,
    pub std_error: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub epochs: usize,
    /// `None` picks the stable step size described on [`crate::baselines::ProbeConfig`].
    pub eta: Option<f64>,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig { folds: 3, epochs: 500, eta: None }
    }
}

/// Seeded k-fold partition: fold `f` holds the rows whose shuffled position
/// is `f` modulo `folds`.
pub fn kfold_partition(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed, Stream::Folds));
    let mut parts = vec![Vec::with_capacity(n / folds.max(1) + 1); folds];
    for (pos, &i) in order.iter().enumerate() {
        parts[pos % folds].push(i);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    parts
}

/// Mean and (population) standard deviation of the held-out error of a
/// softmax regression trained on `est_labels`.
///
/// A labeling with a single distinct value scores `1 − 1/C` with zero spread.
pub fn cv_generalization_error(
    x: ArrayView2<'_, f64>,
    est_labels: &[u32],
    num_classes: usize,
    seed: u64,
    config: CvConfig,
) -> Result<CvScore> {
    let n = x.nrows();
    if est_labels.len() != n {
        return Err(Error::dims(format!("{} labels for {n} rows", est_labels.len())));
    }
    if config.folds < 2 || config.folds > n {
        return Err(Error::invalid(format!("need 2 <= folds <= {n}, got {}", config.folds)));
    }
    if num_classes == 0 {
        return Err(Error::invalid("need at least one class"));
    }
    if est_labels.iter().all(|&l| l == est_labels[0]) {
        return Ok(CvScore { mean_error: 1.0 - 1.0 / num_classes as f64, std_error: 0.0 });
    }
    let parts = kfold_partition(n, config.folds, seed);
    let mut errors = Vec::with_capacity(config.folds);
    for held in 0..config.folds {
        let train: Vec<usize> = parts
            .iter()
            .enumerate()
            .filter(|(f, _)| *f != held)
            .flat_map(|(_, p)| p.iter().copied())
            .collect();
        let (clf, _) = fit_softmax_regression(x, est_labels, &train, num_classes, config.epochs, config.eta)?;
        errors.push(1.0 - accuracy_on(&clf, x, est_labels, &parts[held]));
    }
    let (mean, std) = mean_std(&errors);
    Ok(CvScore { mean_error: mean, std_error: std })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub gamma: f64,
    pub alpha: f64,
    pub mean_val_error: Option<f64>,
    pub std_val_error: Option<f64>,
    /// Set when the cell failed; failed cells never win.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub cells: Vec<GridCell>,
    pub best_gamma: f64,
    pub best_alpha: f64,
}

impl GridResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("gamma,alpha,mean_val_error,std_val_error,failure\n");
        let opt = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
        for c in &self.cells {
            let failure = c.failure.as_deref().unwrap_or("").replace([',', '\n'], ";");
            out.push_str(&format!(
                "{:?},{:?},{},{},{failure}\n",
                c.gamma,
                c.alpha,
                opt(c.mean_val_error),
                opt(c.std_val_error)
            ));
        }
        out
    }
}

/// Deterministic, decorrelated sub-seed for a grid cell (SplitMix64 finaliser).
pub fn cell_seed(master: u64, gamma_index: usize, alpha_index: usize, salt: u64) -> u64 {
    let mut z = master
        ^ (gamma_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (alpha_index as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ salt.wrapping_mul(0x1656_67B1_9E37_79F9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains one model per `(gamma, alpha)` with a power-law prior, scores each
/// labeling by cross validation, and picks the lowest mean error (ties to
/// smaller gamma, then smaller alpha).
///
/// Cells run in parallel on the current rayon pool; results are kept in grid
/// order (gamma-major).
pub fn grid_search(
    x: ArrayView2<'_, f64>,
    num_classes: usize,
    gamma_grid: &[f64],
    alpha_grid: &[f64],
    base_config: &TrainConfig,
    seed: u64,
    cv: CvConfig,
) -> Result<GridResult> {
    if gamma_grid.is_empty() || alpha_grid.is_empty() {
        return Err(Error::invalid("grid search needs non-empty gamma and alpha grids"));
    }
    let jobs: Vec<(usize, usize)> = (0..gamma_grid.len())
        .flat_map(|g| (0..alpha_grid.len()).map(move |a| (g, a)))
        .collect();
    let cells: Vec<GridCell> = jobs
        .par_iter()
        .map(|&(gi, ai)| {
            let (gamma, alpha) = (gamma_grid[gi], alpha_grid[ai]);
            let config = TrainConfig {
                gamma,
                prior: PriorSpec::PowerLaw { alpha },
                seed: cell_seed(seed, gi, ai, 0),
                ..base_config.clone()
            };
            let scored = train_matrix(x, num_classes, &config)
                .and_then(|model| predict(&model.theta, x))
                .and_then(|labels| cv_generalization_error(x, &labels, num_classes, cell_seed(seed, gi, ai, 1), cv));
            match scored {
                Ok(s) => GridCell {
                    gamma,
                    alpha,
                    mean_val_error: Some(s.mean_error),
                    std_val_error: Some(s.std_error),
                    failure: None,
                },
                Err(e) => GridCell { gamma, alpha, mean_val_error: None, std_val_error: None, failure: Some(e.to_string()) },
            }
        })
        .collect();

    let best = cells
        .iter()
        .filter_map(|c| c.mean_val_error.map(|e| (e, c.gamma, c.alpha)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2)));
    let (_, best_gamma, best_alpha) = match best {
        Some(b) => b,
        None => {
            let first = cells.iter().find_map(|c| c.failure.clone()).unwrap_or_default();
            return Err(Error::invalid(format!("every grid cell failed; first failure: {first}")));
        }
    };
    Ok(GridResult { cells, best_gamma, best_alpha })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use crate::tensorio::{gen_gaussian_blobs, BlobSpec};
    use rand::Rng;

    fn blobs(sizes: Vec<usize>, sep: f64, seed: u64) -> crate::tensorio::FeatureSet {
        gen_gaussian_blobs(&BlobSpec {
            num_classes: sizes.len(),
            dim: 8,
            class_sizes: sizes,
            separation: sep,
            noise_std: 1.0,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn folds_partition_rows() {
        let parts = kfold_partition(10, 3, 1);
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(parts.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 3, 3]);
        assert_eq!(parts, kfold_partition(10, 3, 1));
    }

    #[test]
    fn correct_labels_generalise() {
        let fs = blobs(vec![60; 4], 10.0, 1);
        let s = cv_generalization_error(fs.to_f64().view(), fs.labels().unwrap(), 4, 0, CvConfig::default()).unwrap();
        assert!(s.mean_error < 0.01, "{s:?}");
    }

    #[test]
    fn random_labels_are_chance() {
        let fs = blobs(vec![100; 4], 10.0, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels: Vec<u32> = (0..400).map(|_| rng.random_range(0..4)).collect();
        let s = cv_generalization_error(fs.to_f64().view(), &labels, 4, 0, CvConfig::default()).unwrap();
        assert!((s.mean_error - 0.75).abs() < 0.08, "{s:?}");
    }

    #[test]
    fn single_label_gets_the_penalty() {
        let fs = blobs(vec![10; 4], 10.0, 2);
        let s = cv_generalization_error(fs.to_f64().view(), &[2; 40], 4, 0, CvConfig::default()).unwrap();
        assert_eq!(s, CvScore { mean_error: 0.75, std_error: 0.0 });
    }

    #[test]
    fn cv_rejects_bad_folds() {
        let fs = blobs(vec![5; 2], 10.0, 2);
        let labels = fs.labels().unwrap();
        let cv = CvConfig { folds: 1, ..Default::default() };
        assert!(cv_generalization_error(fs.to_f64().view(), labels, 2, 0, cv).is_err());
    }

    #[test]
    fn one_cell_grid_and_determinism() {
        let fs = blobs(vec![40, 20, 10], 8.0, 4);
        let x = fs.to_f64();
        let base = TrainConfig { iterations: 200, ..TrainConfig::pet_turtle(10.0, 1.0) };
        let r = grid_search(x.view(), 3, &[5.0], &[1.0], &base, 7, CvConfig::default()).unwrap();
        assert_eq!(r.cells.len(), 1);
        assert_eq!((r.best_gamma, r.best_alpha), (5.0, 1.0));
        let again = grid_search(x.view(), 3, &[5.0], &[1.0], &base, 7, CvConfig::default()).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn failed_cells_are_recorded() {
        let fs = blobs(vec![10, 10], 8.0, 4);
        let x = fs.to_f64();
        let base = TrainConfig { iterations: 20, ..TrainConfig::pet_turtle(10.0, 1.0) };
        let r = grid_search(x.view(), 2, &[1.0], &[-1.0, 0.5], &base, 1, CvConfig::default()).unwrap();
        assert!(r.cells[0].failure.is_some());
        assert_eq!(r.best_alpha, 0.5);
        assert!(r.to_csv().lines().count() == 3);
        assert!(grid_search(x.view(), 2, &[1.0], &[-1.0], &base, 1, CvConfig::default()).is_err());
        assert!(grid_search(x.view(), 2, &[], &[1.0], &base, 1, CvConfig::default()).is_err());
    }

    #[test]
    fn best_cell_tie_breaks_low() {
        // All-identical cells: any training run on a single repeated point
        // yields one label and the degenerate score, so all cells tie.
        let x = ndarray::Array2::<f64>::zeros((9, 2));
        let base = TrainConfig { iterations: 5, ..TrainConfig::pet_turtle(1.0, 1.0) };
        let r = grid_search(x.view(), 3, &[10.0, 1.0], &[2.0, 0.5], &base, 0, CvConfig::default()).unwrap();
        assert!(r.cells.iter().all(|c| c.mean_val_error == Some(1.0 - 1.0 / 3.0)));
        assert_eq!((r.best_gamma, r.best_alpha), (1.0, 0.5));
    }
}
