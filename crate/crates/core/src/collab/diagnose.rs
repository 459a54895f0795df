use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::retained_count;
use crate::dataset::MultiLabelDataset;
use crate::error::{RcmlError, Result};
use crate::eval::{detection_metrics, roc_auc};
use crate::nn::NetworkPair;
use crate::noise::NoiseLedger;
use crate::ranking::{group_lasso, LassoConfig, RankingBreakdown};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseType {
    Missing,
    Wrong,
    None,
}

impl NoiseType {
    fn as_str(self) -> &'static str {
        match self {
            NoiseType::Missing => "missing",
            NoiseType::Wrong => "wrong",
            NoiseType::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelAction {
    /// Set the label to 1.
    Add,
    /// Set the label to 0.
    Remove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub class: usize,
    pub action: LabelAction,
    /// Unweighted group magnitude, averaged over both networks.
    pub magnitude: f64,
    /// `|p̄ − y|`: how far the mean prediction sits from the recorded label.
    pub disagreement: f64,
}

impl Suggestion {
    pub fn strength(&self) -> f64 {
        self.magnitude * self.disagreement
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDiagnosis {
    pub index: usize,
    pub sample_id: String,
    /// Mean of the two networks' group-lasso totals.
    pub suspicion: f64,
    pub missing_term: f64,
    pub wrong_term: f64,
    pub dominant_type: NoiseType,
    pub suggestions: Vec<Suggestion>,
}

/// Detection quality against a known ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub precision: f64,
    pub recall: f64,
    /// `None` when every sample is noisy or none is.
    pub auc: Option<f64>,
    pub flagged_count: usize,
    pub noisy_count: usize,
    pub no_noise: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub gamma: f64,
    pub top_k: usize,
    pub samples: Vec<SampleDiagnosis>,
    /// The `n − ⌈γ·n⌉` most suspicious samples, ascending by index.
    pub flagged: Vec<usize>,
    pub detection: Option<Detection>,
}

impl NoiseReport {
    pub fn suspicion(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.suspicion).collect()
    }

    /// One row per sample: `sample_id,suspicion,dominant_type,suggestions`,
    /// suggestions written as `+class` / `-class` joined by `;`.
    pub fn to_csv(&self, class_names: &[String]) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| RcmlError::config(format!("csv: {e}"));
        w.write_record(["sample_id", "suspicion", "dominant_type", "suggestions"]).map_err(csv_err)?;
        for s in &self.samples {
            let sugg: Vec<String> = s
                .suggestions
                .iter()
                .map(|x| {
                    let sign = if x.action == LabelAction::Add { '+' } else { '-' };
                    let name = class_names.get(x.class).cloned().unwrap_or_else(|| x.class.to_string());
                    format!("{sign}{name}")
                })
                .collect();
            w.write_record([
                s.sample_id.as_str(),
                &s.suspicion.to_string(),
                s.dominant_type.as_str(),
                &sugg.join(";"),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| RcmlError::config(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write(&self, json_path: &Path, csv_path: &Path, class_names: &[String]) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(json_path, json).map_err(|e| RcmlError::io(json_path, e))?;
        std::fs::write(csv_path, self.to_csv(class_names)?).map_err(|e| RcmlError::io(csv_path, e))
    }
}

fn suggestions(
    bf: &RankingBreakdown,
    bg: &RankingBreakdown,
    labels: ndarray::ArrayView1<u8>,
    pf: ndarray::ArrayView1<f64>,
    pg: ndarray::ArrayView1<f64>,
    top_k: usize,
) -> Vec<Suggestion> {
    let mut out = Vec::new();
    for (groups_f, groups_g, action) in [
        (&bf.missing_group_by_label, &bg.missing_group_by_label, LabelAction::Add),
        (&bf.wrong_group_by_label, &bg.wrong_group_by_label, LabelAction::Remove),
    ] {
        for (&class, &mf) in groups_f {
            let mg = groups_g.get(&class).copied().unwrap_or(0.0);
            let p = 0.5 * (pf[class] + pg[class]);
            let disagreement = (p - f64::from(labels[class])).abs();
            out.push(Suggestion { class, action, magnitude: 0.5 * (mf + mg), disagreement });
        }
    }
    out.retain(|s| s.strength() > 0.0);
    out.sort_by(|a, b| b.strength().total_cmp(&a.strength()).then(a.class.cmp(&b.class)));
    out.truncate(top_k);
    out
}

/// Ranks `scores` descending (ties by ascending index) and returns the
/// first `count` indices, sorted ascending.
pub(crate) fn top_indices(scores: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(count);
    order.sort_unstable();
    order
}

/// Scores every sample of `ds` (against its recorded `labels`) with both
/// networks and proposes label flips. With a ledger, also measures how well
/// flagging the `1 − γ` most suspicious samples recovers the noisy ones.
pub fn diagnose(
    pair: &NetworkPair,
    ds: &MultiLabelDataset,
    lasso: &LassoConfig,
    top_k: usize,
    ledger: Option<&NoiseLedger>,
    gamma: f64,
) -> Result<NoiseReport> {
    lasso.validate()?;
    super::SwapConfig::fixed(gamma)?;
    let probs_f: Array2<f64> = pair.f.predict_proba(&ds.features)?;
    let probs_g: Array2<f64> = pair.g.predict_proba(&ds.features)?;
    let mut samples = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let y = ds.labels.row(i);
        let bf = group_lasso(probs_f.row(i), y, lasso)?;
        let bg = group_lasso(probs_g.row(i), y, lasso)?;
        let missing_term = 0.5 * (bf.missing_term + bg.missing_term);
        let wrong_term = 0.5 * (bf.wrong_term + bg.wrong_term);
        let dominant_type = if missing_term == 0.0 && wrong_term == 0.0 {
            NoiseType::None
        } else if missing_term > wrong_term {
            NoiseType::Missing
        } else {
            NoiseType::Wrong
        };
        samples.push(SampleDiagnosis {
            index: i,
            sample_id: ds.sample_ids[i].clone(),
            suspicion: 0.5 * (bf.total + bg.total),
            missing_term,
            wrong_term,
            dominant_type,
            suggestions: suggestions(&bf, &bg, y, probs_f.row(i), probs_g.row(i), top_k),
        });
    }
    let suspicion: Vec<f64> = samples.iter().map(|s| s.suspicion).collect();
    let flagged = top_indices(&suspicion, ds.len() - retained_count(gamma, ds.len()));
    let detection = ledger.map(|l| {
        if let Some(&bad) = l.noisy_samples.iter().find(|&&s| s >= ds.len()) {
            return Err(RcmlError::shape(format!("ledger sample {bad} outside a dataset of {}", ds.len())));
        }
        let set: BTreeSet<usize> = flagged.iter().copied().collect();
        let (precision, recall) = detection_metrics(l, &set);
        Ok(Detection {
            precision,
            recall,
            auc: roc_auc(&suspicion, &l.noisy_mask(ds.len())),
            flagged_count: flagged.len(),
            noisy_count: l.noisy_samples.len(),
            no_noise: l.noisy_samples.is_empty(),
        })
    });
    Ok(NoiseReport { gamma, top_k, samples, flagged, detection: detection.transpose()? })
}
