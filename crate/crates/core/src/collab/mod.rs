//! Collaborative training of a network pair.
//!
//! Per batch, each network scores every sample with the group-lasso
//! ranking loss. The `⌈γ·B⌉` lowest-scoring samples of one network form the
//! classification batch of the *other* network (the swap). Both networks
//! also share a consistency term (MMD between logits, minimized) and a
//! disparity term (MMD between tap activations, maximized):
//!
//! ```text
//! L_f = λ1 · BCE_f(low_g) + λ2 · L_C − λ3 · L_D
//! L_g = λ1 · BCE_g(low_f) + λ2 · L_C − λ3 · L_D
//! ```
//!
//! Each network descends only its own loss; the peer's activations are
//! constants in that gradient.

mod diagnose;
mod estimate;
mod step;
mod train;

pub use diagnose::{diagnose, Detection, LabelAction, NoiseReport, NoiseType, SampleDiagnosis, Suggestion};
pub use estimate::{estimate_noise_rate, fold_indices, EstimatorConfig, RateEstimate};
pub use step::{pair_objective, BatchKernels, PairObjective};
pub use train::{
    select_best, train, BatchEvent, EpochRecord, NetTag, TrainConfig, TrainObserver, TrainReport,
    ValidationMetrics,
};

use serde::{Deserialize, Serialize};

use crate::error::{RcmlError, Result};

/// Fraction of each batch kept as clean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwapConfig {
    pub gamma: f64,
    /// Estimated noise rate the swap rate was derived from, if any.
    pub noise_rate_hint: Option<f64>,
}

impl SwapConfig {
    pub fn fixed(gamma: f64) -> Result<Self> {
        let cfg = SwapConfig { gamma, noise_rate_hint: None };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_noise_rate(rate: f64) -> Result<Self> {
        Ok(SwapConfig { gamma: adaptive_gamma(rate)?, noise_rate_hint: Some(rate) })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(RcmlError::config(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if let Some(r) = self.noise_rate_hint {
            if !(0.0..=0.5).contains(&r) || (self.gamma - (1.0 - r)).abs() > 1e-12 {
                return Err(RcmlError::config("gamma must equal 1 − noise_rate_hint"));
            }
        }
        Ok(())
    }
}

/// `γ = 1 − n̂r`.
pub fn adaptive_gamma(estimated_noise_rate: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&estimated_noise_rate) {
        return Err(RcmlError::config(format!(
            "estimated noise rate {estimated_noise_rate} outside [0, 0.5]"
        )));
    }
    Ok(1.0 - estimated_noise_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Classification (BCE) weight.
    pub lambda1: f64,
    /// Consistency weight.
    pub lambda2: f64,
    /// Disparity weight.
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda1: 1.0, lambda2: 1.0, lambda3: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda1, self.lambda2, self.lambda3].iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(RcmlError::config("loss weights must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn uses_discrepancy(&self) -> bool {
        self.lambda2 > 0.0 || self.lambda3 > 0.0
    }
}

/// Number of samples retained out of `b`: `⌈γ·b⌉`, where products within
/// 1e-9 of an integer count as that integer.
pub fn retained_count(gamma: f64, b: usize) -> usize {
    let x = gamma * b as f64;
    let r = x.round();
    let n = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (n.max(0.0) as usize).min(b)
}

/// Low/high ranking partitions of one batch for both networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapDecision {
    pub low_f: Vec<usize>,
    pub high_f: Vec<usize>,
    pub low_g: Vec<usize>,
    pub high_g: Vec<usize>,
    pub lasso_f: Vec<f64>,
    pub lasso_g: Vec<f64>,
}

fn partition(scores: &[f64], keep: usize) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let high = order.split_off(keep);
    (order, high)
}

/// Sorts each network's ranking losses ascending (ties by batch index) and
/// splits them into the `⌈γ·B⌉` lowest and the rest.
pub fn swap_select(lasso_f: &[f64], lasso_g: &[f64], gamma: f64) -> Result<SwapDecision> {
    if lasso_f.len() != lasso_g.len() {
        return Err(RcmlError::shape(format!(
            "ranking losses of length {} and {}",
            lasso_f.len(),
            lasso_g.len()
        )));
    }
    SwapConfig::fixed(gamma)?;
    let keep = retained_count(gamma, lasso_f.len());
    let (low_f, high_f) = partition(lasso_f, keep);
    let (low_g, high_g) = partition(lasso_g, keep);
    Ok(SwapDecision { low_f, high_f, low_g, high_g, lasso_f: lasso_f.to_vec(), lasso_g: lasso_g.to_vec() })
}

/// `(L_f, L_g)` from the exchanged BCE terms and the shared discrepancy terms.
pub fn final_losses(
    bce_f_on_low_g: f64,
    bce_g_on_low_f: f64,
    consistency: f64,
    disparity: f64,
    w: &LossWeights,
) -> (f64, f64) {
    let shared = w.lambda2 * consistency - w.lambda3 * disparity;
    (w.lambda1 * bce_f_on_low_g + shared, w.lambda1 * bce_g_on_low_f + shared)
}

/// How the retained samples are ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    GroupLasso,
    /// Seeded random ranking in place of the group lasso.
    Random,
}

/// Which samples the discrepancy terms are computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DiscrepancyScope {
    #[default]
    Full,
    /// Each network's terms use the rows of its classification batch.
    Selected,
}

/// Module switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    pub selection: Selection,
    /// When false each network trains on its own low set instead of the peer's.
    pub exchange: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation { selection: Selection::GroupLasso, exchange: true }
    }
}
