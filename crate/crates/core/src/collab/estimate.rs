use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, SwapConfig, TrainConfig};
use crate::dataset::MultiLabelDataset;
use crate::error::{RcmlError, Result};
use crate::eval::map_scores;
use crate::nn::{init_pair, MlpConfig};
use crate::rng;

/// Cross-validated grid search over candidate noise rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub candidates: Vec<f64>,
    pub folds: usize,
    pub warmup_epochs: usize,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig { candidates: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5], folds: 3, warmup_epochs: 10, seed: 0 }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(RcmlError::config("no candidate noise rates"));
        }
        if let Some(r) = self.candidates.iter().find(|r| !(0.0..=0.5).contains(*r)) {
            return Err(RcmlError::config(format!("candidate noise rate {r} outside [0, 0.5]")));
        }
        if self.folds < 2 {
            return Err(RcmlError::config("at least two folds are required"));
        }
        Ok(())
    }
}

/// Outcome of [`estimate_noise_rate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub rate: f64,
    /// `(candidate, mean held-out mAP micro)` in candidate order.
    pub scores: Vec<(f64, f64)>,
}

/// Seeded shuffle of `0..n` cut into `k` folds whose sizes differ by at most
/// one; each fold is sorted.
pub fn fold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(RcmlError::config(format!("cannot cut {n} samples into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    let mut folds = vec![Vec::new(); k];
    for (i, idx) in order.into_iter().enumerate() {
        folds[i % k].push(idx);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// For each candidate rate `r`, warms up a pair with `γ = 1 − r` on all but
/// one fold and scores the held-out fold's (recorded) labels by mAP micro,
/// averaged over both networks and all folds. Returns the best candidate,
/// ties going to the smaller rate.
pub fn estimate_noise_rate(
    train_set: &MultiLabelDataset,
    model: &MlpConfig,
    base: &TrainConfig,
    est: &EstimatorConfig,
) -> Result<RateEstimate> {
    est.validate()?;
    model.validate()?;
    let folds = fold_indices(train_set.len(), est.folds, rng::derive(est.seed, "folds", 0))?;
    let jobs: Vec<(usize, usize)> =
        (0..est.candidates.len()).flat_map(|c| (0..folds.len()).map(move |k| (c, k))).collect();
    let empty = train_set.subset(&[]);

    let results: Vec<f64> = jobs
        .par_iter()
        .map(|&(c, k)| -> Result<f64> {
            let held_out = &folds[k];
            let fit_rows: Vec<usize> =
                folds.iter().enumerate().filter(|&(j, _)| j != k).flat_map(|(_, f)| f.iter().copied()).collect();
            let fit = train_set.subset(&fit_rows);
            let test = train_set.subset(held_out);
            let mut cfg = base.clone();
            cfg.sgd.epochs = est.warmup_epochs;
            cfg.swap = SwapConfig::from_noise_rate(est.candidates[c])?;
            cfg.seed = rng::derive(est.seed, "warmup", k as u64);
            // same initialization for every candidate on a fold
            let pair = init_pair(
                model,
                rng::derive(est.seed, "init_f", k as u64),
                rng::derive(est.seed, "init_g", k as u64),
            )?;
            let (trained, _) = train(&pair, &fit, &empty, &cfg, None)?;
            let mut score = 0.0;
            for net in [&trained.f, &trained.g] {
                let probs = net.predict_proba(&test.features)?;
                score += 0.5 * map_scores(&probs, &test.labels)?.map_micro;
            }
            Ok(score)
        })
        .collect::<Result<Vec<f64>>>()?;

    let scores: Vec<(f64, f64)> = est
        .candidates
        .iter()
        .enumerate()
        .map(|(c, &r)| (r, results[c * folds.len()..(c + 1) * folds.len()].iter().sum::<f64>() / folds.len() as f64))
        .collect();
    let mut best = scores[0];
    for &(r, s) in &scores[1..] {
        if s > best.1 || (s == best.1 && r < best.0) {
            best = (r, s);
        }
    }
    Ok(RateEstimate { rate: best.0, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn folds_partition() {
        let folds = fold_indices(10, 3, 7).unwrap();
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
        let all: HashSet<usize> = folds.iter().flatten().copied().collect();
        assert_eq!(all.len(), 10);
        assert_eq!(folds, fold_indices(10, 3, 7).unwrap());
        assert!(fold_indices(10, 1, 7).is_err());
        assert!(fold_indices(2, 3, 7).is_err());
    }

    #[test]
    fn rejects_bad_candidates() {
        let mut e = EstimatorConfig::default();
        e.candidates = vec![];
        assert!(e.validate().is_err());
        e.candidates = vec![0.6];
        assert!(e.validate().is_err());
        e.candidates = vec![0.2];
        e.folds = 1;
        assert!(e.validate().is_err());
    }
}
