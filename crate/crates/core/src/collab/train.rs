use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::step::objective_from_activations;
use super::{swap_select, Ablation, DiscrepancyScope, LossWeights, Selection, SwapConfig, SwapDecision};
use crate::dataset::MultiLabelDataset;
use crate::discrepancy::Bandwidth;
use crate::error::{RcmlError, Result};
use crate::eval::map_scores;
use crate::nn::{forward, sgd_step, sigmoid, Network, NetworkPair, SgdConfig};
use crate::ranking::{batch_lasso, LassoConfig};
use crate::rng;

/// Everything the training loop needs besides the networks and data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub sgd: SgdConfig,
    #[serde(default)]
    pub bandwidth: Bandwidth,
    #[serde(default)]
    pub lasso: LassoConfig,
    pub swap: SwapConfig,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default)]
    pub discrepancy_scope: DiscrepancyScope,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.sgd.validate()?;
        self.bandwidth.validate()?;
        self.lasso.validate()?;
        self.swap.validate()?;
        self.weights.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetTag {
    F,
    G,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationMetrics {
    pub map_micro: f64,
    pub map_macro: f64,
    pub f1_micro: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_f: f64,
    pub loss_g: f64,
    pub bce_f: f64,
    pub bce_g: f64,
    /// Batch means; `None` when the discrepancy terms are switched off.
    pub consistency: Option<f64>,
    pub disparity: Option<f64>,
    pub val_f: Option<ValidationMetrics>,
    pub val_g: Option<ValidationMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub gamma: f64,
    pub epochs: Vec<EpochRecord>,
    /// Network with the better best-epoch validation mAP micro.
    pub selected: Option<NetTag>,
    /// Per training sample: sum over epochs of the mean of the two
    /// networks' group-lasso losses.
    pub cumulative_lasso: Vec<f64>,
}

impl TrainReport {
    /// `metrics_per_epoch.csv` contents.
    pub fn epochs_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from(
            "epoch,lr,loss_f,loss_g,bce_f,bce_g,consistency,disparity,\
             val_map_micro_f,val_map_macro_f,val_f1_micro_f,val_map_micro_g,val_map_macro_g,val_f1_micro_g\n",
        );
        for e in &self.epochs {
            let vf = e.val_f;
            let vg = e.val_g;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                e.epoch,
                e.lr,
                e.loss_f,
                e.loss_g,
                e.bce_f,
                e.bce_g,
                opt(e.consistency),
                opt(e.disparity),
                opt(vf.map(|m| m.map_micro)),
                opt(vf.map(|m| m.map_macro)),
                opt(vf.map(|m| m.f1_micro)),
                opt(vg.map(|m| m.map_micro)),
                opt(vg.map(|m| m.map_macro)),
                opt(vg.map(|m| m.f1_micro)),
            ));
        }
        out
    }
}

/// What the loop did with one batch.
pub struct BatchEvent<'a> {
    pub epoch: usize,
    pub batch: usize,
    /// Dataset rows making up the batch, in batch order.
    pub rows: &'a [usize],
    pub gamma: f64,
    pub decision: &'a SwapDecision,
    /// Batch positions f's classification loss was computed on.
    pub f_rows: &'a [usize],
    pub g_rows: &'a [usize],
    pub bce_grad_f: &'a Array2<f64>,
    pub bce_grad_g: &'a Array2<f64>,
}

pub trait TrainObserver {
    fn on_batch(&mut self, event: &BatchEvent<'_>);
}

fn validate(net: &Network, val: &MultiLabelDataset) -> Result<Option<ValidationMetrics>> {
    if val.is_empty() {
        return Ok(None);
    }
    let probs = net.predict_proba(&val.features)?;
    match map_scores(&probs, val.truth()) {
        Ok(m) => Ok(Some(ValidationMetrics { map_micro: m.map_micro, map_macro: m.map_macro, f1_micro: m.f1_micro })),
        Err(RcmlError::UndefinedAp) => Ok(None),
        Err(e) => Err(e),
    }
}

fn guard(value: f64, epoch: usize, batch: usize, what: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(RcmlError::Divergence { epoch, batch, what: what.to_string() })
    }
}

/// Trains both networks on `train` (its possibly noisy `labels`) and
/// validates on `val` (its clean labels when retained).
pub fn train(
    pair: &NetworkPair,
    train: &MultiLabelDataset,
    val: &MultiLabelDataset,
    cfg: &TrainConfig,
    mut observer: Option<&mut dyn TrainObserver>,
) -> Result<(NetworkPair, TrainReport)> {
    cfg.validate()?;
    if pair.f.config != pair.g.config {
        return Err(RcmlError::config("networks f and g must share one architecture"));
    }
    if train.dim() != pair.f.config.input_dim() || train.num_classes() != pair.f.config.num_classes() {
        return Err(RcmlError::shape("dataset does not match the network shape"));
    }
    let mut rng = rng::seeded(cfg.seed);
    let mut f = pair.f.clone();
    let mut g = pair.g.clone();
    let gamma = cfg.swap.gamma;
    let n = train.len();
    let mut cumulative_lasso = vec![0.0; n];
    let mut epochs = Vec::with_capacity(cfg.sgd.epochs);
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.sgd.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 6];
        let mut batches = 0usize;
        for (batch, rows) in order.chunks(cfg.sgd.batch_size).enumerate() {
            let x = train.features.select(Axis(0), rows);
            let y = train.labels.select(Axis(0), rows);
            let acts_f = forward(&f, &x)?;
            let acts_g = forward(&g, &x)?;
            let probs_f = acts_f.logits().mapv(sigmoid);
            let probs_g = acts_g.logits().mapv(sigmoid);
            if let Some(bad) = probs_f.iter().chain(probs_g.iter()).find(|p| !p.is_finite()) {
                guard(*bad, epoch, batch, "prediction")?;
            }
            let lasso_f = batch_lasso(&probs_f, &y, &cfg.lasso)?;
            let lasso_g = batch_lasso(&probs_g, &y, &cfg.lasso)?;
            for (k, &r) in rows.iter().enumerate() {
                cumulative_lasso[r] += 0.5 * (lasso_f[k] + lasso_g[k]);
            }

            let decision = match cfg.ablation.selection {
                Selection::GroupLasso => swap_select(&lasso_f, &lasso_g, gamma)?,
                Selection::Random => {
                    let rf: Vec<f64> = rows.iter().map(|_| rng.gen()).collect();
                    let rg: Vec<f64> = rows.iter().map(|_| rng.gen()).collect();
                    let mut d = swap_select(&rf, &rg, gamma)?;
                    d.lasso_f = lasso_f.clone();
                    d.lasso_g = lasso_g.clone();
                    d
                }
            };
            let (f_rows, g_rows) = if cfg.ablation.exchange {
                (&decision.low_g, &decision.low_f)
            } else {
                (&decision.low_f, &decision.low_g)
            };

            let obj = objective_from_activations(
                &f,
                &g,
                &acts_f,
                &acts_g,
                &y,
                f_rows,
                g_rows,
                &cfg.bandwidth,
                &cfg.bandwidth,
                &cfg.weights,
                cfg.discrepancy_scope,
            )?;
            guard(obj.loss_f, epoch, batch, "L_f")?;
            guard(obj.loss_g, epoch, batch, "L_g")?;
            if !obj.grads_f.is_finite() || !obj.grads_g.is_finite() {
                return Err(RcmlError::Divergence { epoch, batch, what: "gradient".into() });
            }
            if let Some(obs) = observer.as_deref_mut() {
                obs.on_batch(&BatchEvent {
                    epoch,
                    batch,
                    rows,
                    gamma,
                    decision: &decision,
                    f_rows,
                    g_rows,
                    bce_grad_f: &obj.bce_grad_f,
                    bce_grad_g: &obj.bce_grad_g,
                });
            }

            f = sgd_step(&f, &obj.grads_f, epoch, &cfg.sgd)?;
            g = sgd_step(&g, &obj.grads_g, epoch, &cfg.sgd)?;
            if !f.is_finite() || !g.is_finite() {
                return Err(RcmlError::Divergence { epoch, batch, what: "parameters".into() });
            }

            sums[0] += obj.loss_f;
            sums[1] += obj.loss_g;
            sums[2] += obj.bce_f;
            sums[3] += obj.bce_g;
            if let (Some(c), Some(d)) = (obj.consistency, obj.disparity) {
                sums[4] += 0.5 * (c[0] + c[1]);
                sums[5] += 0.5 * (d[0] + d[1]);
            }
            batches += 1;
        }
        let mean = |s: f64| if batches == 0 { 0.0 } else { s / batches as f64 };
        let uses_mmd = cfg.weights.uses_discrepancy() && batches > 0;
        epochs.push(EpochRecord {
            epoch,
            lr: cfg.sgd.lr(epoch),
            loss_f: mean(sums[0]),
            loss_g: mean(sums[1]),
            bce_f: mean(sums[2]),
            bce_g: mean(sums[3]),
            consistency: uses_mmd.then(|| mean(sums[4])),
            disparity: uses_mmd.then(|| mean(sums[5])),
            val_f: validate(&f, val)?,
            val_g: validate(&g, val)?,
        });
    }

    let trained = NetworkPair { f, g };
    let mut report = TrainReport { gamma, epochs, selected: None, cumulative_lasso };
    if !report.epochs.is_empty() {
        report.selected = Some(select_best(&trained, &report)?.0);
    }
    Ok((trained, report))
}

/// Picks the network whose best epoch-level validation mAP micro is higher;
/// ties (including no validation data) go to f.
pub fn select_best<'a>(pair: &'a NetworkPair, report: &TrainReport) -> Result<(NetTag, &'a Network)> {
    if report.epochs.is_empty() {
        return Err(RcmlError::config("cannot select from an empty training report"));
    }
    let best = |pick: fn(&EpochRecord) -> Option<ValidationMetrics>| {
        report.epochs.iter().filter_map(|e| pick(e).map(|m| m.map_micro)).fold(f64::NEG_INFINITY, f64::max)
    };
    let f = best(|e| e.val_f);
    let g = best(|e| e.val_g);
    Ok(if g > f { (NetTag::G, &pair.g) } else { (NetTag::F, &pair.f) })
}
