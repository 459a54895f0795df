//! Noise-robust collaborative multi-label learning.
//!
//! Two identically shaped networks are trained side by side. Each batch,
//! both networks score every sample with a group-lasso ranking loss, the
//! lowest-loss samples of one network become the classification batch of
//! the other, and a pair of MMD terms keeps the hidden features apart while
//! pulling the output logits together.
//!
//! The crate is split by concern:
//!
//! - [`dataset`]: multi-label datasets, CSV loading, a synthetic generator and seeded splits
//! - [`noise`]: random-noise-per-sample label corruption with a ground-truth ledger
//! - [`nn`]: a small ReLU perceptron with BCE loss, backprop and SGD
//! - [`discrepancy`]: Gaussian RBF kernel and the empirical MMD estimator with gradients
//! - [`ranking`]: pairwise ranking error and the group-lasso ranking loss
//! - [`collab`]: swap selection, the final pair losses, the training loop and noise diagnosis
//! - [`eval`]: average precision, mAP micro/macro, F1 micro, detection metrics
//! - [`experiment`]: versioned JSON experiment configs and noise-rate sweeps

pub mod collab;
pub mod dataset;
pub mod discrepancy;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod noise;
pub mod ranking;
pub mod rng;

pub use error::{RcmlError, Result};
