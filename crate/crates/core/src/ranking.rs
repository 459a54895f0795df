//! Pairwise ranking error and the per-sample group-lasso ranking loss.
//!
//! For an assigned label `l` and an unassigned label `l̂` of one sample,
//! with predicted probabilities `p_l` and `p_l̂`:
//!
//! ```text
//! E(l, l̂) = max(0, 1 − 2 (p_l − p_l̂))
//! ```
//!
//! `E` is zero once the assigned class outranks the unassigned one by a
//! margin of 0.5, and grows as the order inverts. The form sometimes
//! written as `max(0, 2 (p_l − p_l̂) + 1)` is positive exactly when the
//! order is *correct*; it would score clean samples as noisy, so the
//! margin form above is used.
//!
//! The errors are grouped twice. Grouping by unassigned label measures how
//! strongly each absent label looks present (a missing label); grouping by
//! assigned label measures how strongly each present label looks absent (a
//! wrong label):
//!
//! ```text
//! lasso = α Σ_{l̂} sqrt(Σ_l E(l, l̂)) + β Σ_l sqrt(Σ_{l̂} E(l, l̂)),   β = 1 − α
//! ```
//!
//! The loss only ranks samples; nothing is backpropagated through it.

use std::collections::BTreeMap;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{RcmlError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LassoConfig {
    /// Weight of the missing-label term.
    pub alpha: f64,
    /// Weight of the wrong-label term, `1 − alpha`.
    pub beta: f64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig { alpha: 0.2, beta: 0.8 }
    }
}

impl LassoConfig {
    pub fn with_alpha(alpha: f64) -> Result<Self> {
        let cfg = LassoConfig { alpha, beta: 1.0 - alpha };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(RcmlError::config("alpha must lie in [0, 1]"));
        }
        if (self.alpha + self.beta - 1.0).abs() > 1e-12 {
            return Err(RcmlError::config("alpha + beta must equal 1"));
        }
        Ok(())
    }
}

/// One sample's group-lasso loss and its decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingBreakdown {
    pub total: f64,
    /// α-weighted missing-label term.
    pub missing_term: f64,
    /// β-weighted wrong-label term.
    pub wrong_term: f64,
    /// Unassigned label → unweighted group magnitude `sqrt(Σ_l E(l, ·))`.
    pub missing_group_by_label: BTreeMap<usize, f64>,
    /// Assigned label → unweighted group magnitude `sqrt(Σ_l̂ E(·, l̂))`.
    pub wrong_group_by_label: BTreeMap<usize, f64>,
}

#[inline]
fn hinge(p_assigned: f64, p_unassigned: f64) -> f64 {
    (1.0 - 2.0 * (p_assigned - p_unassigned)).max(0.0)
}

/// Ranking error of one (assigned, unassigned) label pair, in `[0, 3]`.
pub fn ranking_error(p_assigned: f64, p_unassigned: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_assigned) || !(0.0..=1.0).contains(&p_unassigned) {
        return Err(RcmlError::config(format!(
            "probabilities must lie in [0, 1], got {p_assigned} and {p_unassigned}"
        )));
    }
    Ok(hinge(p_assigned, p_unassigned))
}

/// Group-lasso ranking loss of one sample. Empty assigned or unassigned
/// sets give empty inner sums and a zero loss.
pub fn group_lasso(probs: ArrayView1<f64>, assigned: ArrayView1<u8>, cfg: &LassoConfig) -> Result<RankingBreakdown> {
    if probs.len() != assigned.len() {
        return Err(RcmlError::shape(format!(
            "{} probabilities for {} labels",
            probs.len(),
            assigned.len()
        )));
    }
    if let Some((col, v)) = assigned.iter().enumerate().find(|(_, &v)| v > 1) {
        return Err(RcmlError::NonBinaryLabel { row: 0, col, value: v.to_string() });
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(RcmlError::config(format!("probability {p} outside [0, 1]")));
    }
    let pos: Vec<usize> = (0..assigned.len()).filter(|&v| assigned[v] == 1).collect();
    let neg: Vec<usize> = (0..assigned.len()).filter(|&v| assigned[v] == 0).collect();

    // errors[a][u] for the a-th assigned and u-th unassigned label
    let errors: Vec<Vec<f64>> =
        pos.iter().map(|&l| neg.iter().map(|&lh| hinge(probs[l], probs[lh])).collect()).collect();

    let mut missing_group_by_label = BTreeMap::new();
    let mut wrong_group_by_label = BTreeMap::new();
    let (mut missing_sum, mut wrong_sum) = (0.0, 0.0);
    if !pos.is_empty() && !neg.is_empty() {
        for (u, &lh) in neg.iter().enumerate() {
            let g = errors.iter().map(|row| row[u]).sum::<f64>().sqrt();
            missing_group_by_label.insert(lh, g);
            missing_sum += g;
        }
        for (a, &l) in pos.iter().enumerate() {
            let g = errors[a].iter().sum::<f64>().sqrt();
            wrong_group_by_label.insert(l, g);
            wrong_sum += g;
        }
    }
    let missing_term = cfg.alpha * missing_sum;
    let wrong_term = cfg.beta * wrong_sum;
    Ok(RankingBreakdown {
        total: missing_term + wrong_term,
        missing_term,
        wrong_term,
        missing_group_by_label,
        wrong_group_by_label,
    })
}

/// Group-lasso totals for every row of a batch.
pub fn batch_lasso(
    probs: &ndarray::Array2<f64>,
    labels: &ndarray::Array2<u8>,
    cfg: &LassoConfig,
) -> Result<Vec<f64>> {
    if probs.dim() != labels.dim() {
        return Err(RcmlError::shape("probabilities and labels differ in shape"));
    }
    probs
        .rows()
        .into_iter()
        .zip(labels.rows())
        .map(|(p, y)| group_lasso(p, y, cfg).map(|b| b.total))
        .collect()
}
