//! Multi-label metrics and noise-detection metrics.
//!
//! Average precision is the non-interpolated mean of precision@k over the
//! ranks k of the positives, with ties in score broken by ascending index.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{RcmlError, Result};
use crate::noise::NoiseLedger;

/// Threshold on sigmoid probabilities used for F1.
pub const F1_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub map_macro: f64,
    pub map_micro: f64,
    pub f1_micro: f64,
    pub ap_per_class: BTreeMap<usize, f64>,
    /// Classes without a single positive; excluded from `map_macro`.
    pub skipped_classes: Vec<usize>,
}

impl MetricReport {
    /// `metric,value` rows.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("metric,value\n");
        out.push_str(&format!("f1_micro,{}\n", self.f1_micro));
        out.push_str(&format!("map_micro,{}\n", self.map_micro));
        out.push_str(&format!("map_macro,{}\n", self.map_macro));
        for (c, ap) in &self.ap_per_class {
            let name = class_names.get(*c).cloned().unwrap_or_else(|| c.to_string());
            out.push_str(&format!("ap_{name},{ap}\n"));
        }
        out
    }
}

/// Indices ordered by descending score, ties by ascending index.
fn ranked(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

pub fn average_precision(scores: &[f64], truth: &[u8]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(RcmlError::shape("scores and truth differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(RcmlError::NonFinite("score".into()));
    }
    let positives = truth.iter().filter(|&&t| t == 1).count();
    if positives == 0 {
        return Err(RcmlError::UndefinedAp);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &i) in ranked(scores).iter().enumerate() {
        if truth[i] == 1 {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

pub fn map_scores(scores: &Array2<f64>, truth: &Array2<u8>) -> Result<MetricReport> {
    if scores.dim() != truth.dim() {
        return Err(RcmlError::shape("scores and truth differ in shape"));
    }
    let mut ap_per_class = BTreeMap::new();
    let mut skipped_classes = Vec::new();
    for c in 0..scores.ncols() {
        let s: Vec<f64> = scores.column(c).to_vec();
        let t: Vec<u8> = truth.column(c).to_vec();
        match average_precision(&s, &t) {
            Ok(ap) => {
                ap_per_class.insert(c, ap);
            }
            Err(RcmlError::UndefinedAp) => skipped_classes.push(c),
            Err(e) => return Err(e),
        }
    }
    if ap_per_class.is_empty() {
        return Err(RcmlError::UndefinedAp);
    }
    let map_macro = ap_per_class.values().sum::<f64>() / ap_per_class.len() as f64;
    // row-major flattening: (sample, class) pair index i·V + c
    let flat_s: Vec<f64> = scores.iter().copied().collect();
    let flat_t: Vec<u8> = truth.iter().copied().collect();
    let map_micro = average_precision(&flat_s, &flat_t)?;

    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&s, &t) in flat_s.iter().zip(&flat_t) {
        match (s >= F1_THRESHOLD, t == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let f1_micro = 2.0 * tp as f64 / (2 * tp + fp + fneg) as f64;
    Ok(MetricReport { map_macro, map_micro, f1_micro, ap_per_class, skipped_classes })
}

/// Precision and recall of `flagged` against the ledger's noisy samples.
/// Precision is 1 when nothing is flagged; recall is 1 when nothing is noisy.
pub fn detection_metrics(ledger: &NoiseLedger, flagged: &BTreeSet<usize>) -> (f64, f64) {
    let hit = flagged.intersection(&ledger.noisy_samples).count() as f64;
    let precision = if flagged.is_empty() { 1.0 } else { hit / flagged.len() as f64 };
    let recall = if ledger.noisy_samples.is_empty() { 1.0 } else { hit / ledger.noisy_samples.len() as f64 };
    (precision, recall)
}

/// Area under the ROC curve of `scores` as a detector of `positive`,
/// counting ties as one half. `None` when either class is empty.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks, 1-based
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{Flip, FlipDirection};
    use crate::rng;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.1, 0.05], &[1, 1, 0, 0]).unwrap(), 1.0);
        let ap = average_precision(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0]).unwrap();
        assert!((ap - 0.5 * (1.0 + 2.0 / 3.0)).abs() < 1e-15);
        assert!((ap - 0.833333).abs() < 1e-6);
        let ap = average_precision(&[0.9, 0.8, 0.7, 0.6], &[0, 0, 0, 1]).unwrap();
        assert!((ap - 0.25).abs() < 1e-15);
        assert!(matches!(average_precision(&[0.3, 0.2], &[0, 0]), Err(RcmlError::UndefinedAp)));
    }

    #[test]
    fn ties_break_by_index() {
        // positive at index 1 ties with negative at index 0 → ranked second
        assert_eq!(average_precision(&[0.5, 0.5], &[0, 1]).unwrap(), 0.5);
        assert_eq!(average_precision(&[0.5, 0.5], &[1, 0]).unwrap(), 1.0);
    }

    #[test]
    fn perfect_scores() {
        let truth = array![[1u8, 0, 1], [0, 1, 0], [1, 1, 0]];
        let r = map_scores(&truth.mapv(f64::from), &truth).unwrap();
        assert_eq!((r.map_macro, r.map_micro, r.f1_micro), (1.0, 1.0, 1.0));
        assert!(r.skipped_classes.is_empty());
    }

    #[test]
    fn empty_class_is_skipped() {
        let truth = array![[1u8, 0], [0, 0], [1, 0]];
        let scores = array![[0.8, 0.1], [0.3, 0.2], [0.6, 0.9]];
        let r = map_scores(&scores, &truth).unwrap();
        assert_eq!(r.skipped_classes, vec![1]);
        assert_eq!(r.ap_per_class.len(), 1);
        assert_eq!(r.map_macro, 1.0);
        assert!(map_scores(&scores, &Array2::zeros((3, 2))).is_err());
    }

    #[test]
    fn hand_three_by_two() {
        let scores = array![[0.9, 0.2], [0.4, 0.7], [0.6, 0.3]];
        let truth = array![[1u8, 0], [1, 1], [0, 0]];
        let r = map_scores(&scores, &truth).unwrap();
        // class 0: ranked 0.9(+) 0.6(-) 0.4(+) → (1 + 2/3)/2
        assert!((r.ap_per_class[&0] - 5.0 / 6.0).abs() < 1e-15);
        // class 1: ranked 0.7(+) first → 1
        assert_eq!(r.ap_per_class[&1], 1.0);
        assert!((r.map_macro - 11.0 / 12.0).abs() < 1e-15);
        // flattened: 0.9+ 0.7+ 0.6- 0.4+ 0.3- 0.2- → (1 + 1 + 3/4)/3
        assert!((r.map_micro - 2.75 / 3.0).abs() < 1e-15);
        // predictions ≥ 0.5: 0.9 0.7 0.6 → tp 2, fp 1, fn 1
        assert!((r.f1_micro - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn detection_counts() {
        let flips = (0..4).map(|i| Flip { sample: i, class: 0, direction: FlipDirection::Added }).collect();
        let ledger = NoiseLedger::from_flips(flips);
        let exact: BTreeSet<usize> = (0..4).collect();
        assert_eq!(detection_metrics(&ledger, &exact), (1.0, 1.0));
        let disjoint: BTreeSet<usize> = [7, 8].into();
        assert_eq!(detection_metrics(&ledger, &disjoint), (0.0, 0.0));
        let some: BTreeSet<usize> = [0, 1, 9].into();
        let (p, r) = detection_metrics(&ledger, &some);
        assert!((p - 2.0 / 3.0).abs() < 1e-15 && (r - 0.5).abs() < 1e-15);
        assert_eq!(detection_metrics(&NoiseLedger::default(), &BTreeSet::new()), (1.0, 1.0));
    }

    #[test]
    fn auc_values() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), Some(1.0));
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &[false, false, true, true]), Some(0.0));
        assert_eq!(roc_auc(&[0.5, 0.5], &[false, true]), Some(0.5));
        assert_eq!(roc_auc(&[0.5, 0.7], &[true, true]), None);
    }

    /// Reference AP: for each positive, count how many items are ranked at
    /// or above it (with the index tie-break) and how many of those are
    /// positive.
    fn brute_ap(s: &[f64], t: &[u8]) -> f64 {
        let above = |i: usize, j: usize| s[j] > s[i] || (s[j] == s[i] && j <= i);
        let pos: Vec<usize> = (0..s.len()).filter(|&i| t[i] == 1).collect();
        let mut sum = 0.0;
        for &i in &pos {
            let k = (0..s.len()).filter(|&j| above(i, j)).count();
            let hits = pos.iter().filter(|&&j| above(i, j)).count();
            sum += hits as f64 / k as f64;
        }
        sum / pos.len() as f64
    }

    #[test]
    fn matches_brute_force_on_small_cases() {
        let mut r = rng::seeded(5);
        let mut checked = 0;
        while checked < 200 {
            let n = r.gen_range(1..=10);
            let v = r.gen_range(1..=4);
            // coarse scores so ties occur
            let s = Array2::from_shape_fn((n, v), |_| (r.gen_range(0..10) as f64) / 10.0);
            let t = Array2::from_shape_fn((n, v), |_| u8::from(r.gen_bool(0.4)));
            let Ok(rep) = map_scores(&s, &t) else { continue };
            let mut aps = vec![];
            for c in 0..v {
                let (sc, tc): (Vec<f64>, Vec<u8>) = (s.column(c).to_vec(), t.column(c).to_vec());
                if tc.contains(&1) {
                    aps.push(brute_ap(&sc, &tc));
                }
            }
            let macro_ = aps.iter().sum::<f64>() / aps.len() as f64;
            assert!((rep.map_macro - macro_).abs() < 1e-10);
            let fs: Vec<f64> = s.iter().copied().collect();
            let ft: Vec<u8> = t.iter().copied().collect();
            assert!((rep.map_micro - brute_ap(&fs, &ft)).abs() < 1e-10);
            checked += 1;
        }
    }

    proptest! {
        #[test]
        fn ap_invariant_under_monotone_maps(s in proptest::collection::vec(-5.0f64..5.0, 1..30), seed: u64) {
            let mut r = rng::seeded(seed);
            let mut t: Vec<u8> = s.iter().map(|_| u8::from(r.gen_bool(0.5))).collect();
            t[0] = 1;
            let a = average_precision(&s, &t).unwrap();
            let mapped: Vec<f64> = s.iter().map(|x| (0.7 * x).exp() + 3.0).collect();
            prop_assert_eq!(a, average_precision(&mapped, &t).unwrap());
            prop_assert!(a > 0.0 && a <= 1.0);
        }
    }
}
