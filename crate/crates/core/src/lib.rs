//! Unsupervised maximum-margin clustering of frozen feature embeddings.
//!
//! The clustering alternates two gradient loops: an inner loop fits a linear
//! hyperplane to soft labels produced by a linear classifier, and an outer
//! loop moves the classifier so that the hyperplane's cross entropy drops.
//! A KL prior on the classifier's mean label distribution keeps clusters
//! from collapsing, and a power-law prior lets it favour imbalanced cluster
//! sizes. Targets can be squashed with softmax or with sparsemax.
//!
//! Modules:
//! - [`tensorio`]: feature matrices, file formats, synthetic blobs, power-law subsampling.
//! - [`simplexops`]: softmax, sparsemax and its Jacobian, entropy, KL, power-law pmf.
//! - [`assignment`]: Hungarian matching, matched accuracy, confusion matrices.
//! - [`objective`]: losses and analytic gradients for both loops.
//! - [`trainer`]: the alternating training loop, prediction.
//! - [`baselines`]: K-Means++ and a supervised linear probe.
//! - [`modelselect`]: label-reuse cross validation and `(gamma, alpha)` grid search.

pub mod assignment;
pub mod baselines;
mod error;
pub mod modelselect;
pub mod objective;
mod rng;
pub mod simplexops;
pub mod tensorio;
pub mod trainer;

pub use error::{Error, Result};
