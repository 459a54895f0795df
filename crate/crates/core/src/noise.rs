//! Random-noise-per-sample (RNS) label corruption.
//!
//! A fraction `sampling_rate` of the samples is drawn without replacement;
//! in each drawn sample a fraction `class_rate` of the label positions is
//! drawn without replacement and flipped. Every flip is recorded in a
//! [`NoiseLedger`] so detection quality can be scored afterwards.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::check_binary;
use crate::error::{RcmlError, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub sampling_rate: f64,
    pub class_rate: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sampling_rate) || !(0.0..=1.0).contains(&self.class_rate) {
            return Err(RcmlError::config("noise rates must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Number of samples touched for `n` samples.
    pub fn samples_selected(&self, n: usize) -> usize {
        ((self.sampling_rate * n as f64).round() as usize).min(n)
    }

    /// Number of labels flipped in each touched sample.
    pub fn flips_per_sample(&self, num_classes: usize) -> usize {
        ((self.class_rate * num_classes as f64).round() as usize).min(num_classes)
    }
}

/// Maps a single effective noise rate `r` in `[0, 0.5]` onto
/// `sampling_rate = min(1, 2r)` and `class_rate = r / sampling_rate`.
pub fn rate_to_spec(effective_rate: f64, seed: u64) -> Result<NoiseSpec> {
    if !(0.0..=0.5).contains(&effective_rate) {
        return Err(RcmlError::config(format!(
            "effective noise rate {effective_rate} outside [0, 0.5]"
        )));
    }
    let sampling_rate = (2.0 * effective_rate).min(1.0);
    let class_rate = if effective_rate == 0.0 { 0.0 } else { effective_rate / sampling_rate };
    Ok(NoiseSpec { sampling_rate, class_rate, seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipDirection {
    /// 0 → 1: a wrong label was introduced.
    Added,
    /// 1 → 0: a true label went missing.
    Removed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Flip {
    pub sample: usize,
    pub class: usize,
    pub direction: FlipDirection,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NoiseLedger {
    pub flips: Vec<Flip>,
    pub noisy_samples: BTreeSet<usize>,
}

impl NoiseLedger {
    pub fn from_flips(mut flips: Vec<Flip>) -> Self {
        flips.sort();
        let noisy_samples = flips.iter().map(|f| f.sample).collect();
        NoiseLedger { flips, noisy_samples }
    }

    pub fn is_empty(&self) -> bool {
        self.flips.is_empty()
    }

    pub fn count(&self, direction: FlipDirection) -> usize {
        self.flips.iter().filter(|f| f.direction == direction).count()
    }

    /// Undoes (or re-applies) every recorded flip in place.
    pub fn apply(&self, labels: &mut Array2<u8>) {
        for f in &self.flips {
            labels[[f.sample, f.class]] ^= 1;
        }
    }

    /// Per-sample noisy indicator over `n` samples.
    pub fn noisy_mask(&self, n: usize) -> Vec<bool> {
        let mut mask = vec![false; n];
        for &i in &self.noisy_samples {
            if i < n {
                mask[i] = true;
            }
        }
        mask
    }

    pub fn to_file(&self, sample_ids: &[String], class_names: &[String], spec: &NoiseSpec) -> LedgerFile {
        LedgerFile {
            spec: *spec,
            flips: self
                .flips
                .iter()
                .map(|f| LedgerRecord {
                    sample_id: sample_ids[f.sample].clone(),
                    class_name: class_names[f.class].clone(),
                    direction: f.direction,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerRecord {
    pub sample_id: String,
    pub class_name: String,
    pub direction: FlipDirection,
}

/// On-disk ledger: the noise spec and one record per flip, keyed by ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerFile {
    pub spec: NoiseSpec,
    pub flips: Vec<LedgerRecord>,
}

impl LedgerFile {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| RcmlError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| RcmlError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Resolves ids against a dataset's ordering.
    pub fn resolve(&self, sample_ids: &[String], class_names: &[String]) -> Result<NoiseLedger> {
        let find = |list: &[String], key: &str, what: &str| {
            list.iter()
                .position(|s| s == key)
                .ok_or_else(|| RcmlError::config(format!("ledger {what} `{key}` not in dataset")))
        };
        let flips = self
            .flips
            .iter()
            .map(|r| {
                Ok(Flip {
                    sample: find(sample_ids, &r.sample_id, "sample")?,
                    class: find(class_names, &r.class_name, "class")?,
                    direction: r.direction,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(NoiseLedger::from_flips(flips))
    }
}

/// Applies RNS to a copy of `labels`.
pub fn inject_rns(labels: &Array2<u8>, spec: &NoiseSpec) -> Result<(Array2<u8>, NoiseLedger)> {
    spec.validate()?;
    check_binary(labels)?;
    let (n, v) = labels.dim();
    let n_sel = spec.samples_selected(n);
    let k = spec.flips_per_sample(v);

    let mut rng = rng::seeded(spec.seed);
    let mut samples = index::sample(&mut rng, n, n_sel).into_vec();
    samples.sort_unstable();

    let mut noisy = labels.clone();
    let mut flips = Vec::with_capacity(n_sel * k);
    for &i in &samples {
        for c in index::sample(&mut rng, v, k).into_iter() {
            let direction = if labels[[i, c]] == 1 { FlipDirection::Removed } else { FlipDirection::Added };
            noisy[[i, c]] ^= 1;
            flips.push(Flip { sample: i, class: c, direction });
        }
    }
    Ok((noisy, NoiseLedger::from_flips(flips)))
}
