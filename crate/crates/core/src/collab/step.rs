use ndarray::{Array2, Axis};

use super::{final_losses, DiscrepancyScope, LossWeights};
use crate::discrepancy::{consistency_loss, disparity_loss, Bandwidth, KernelConfig};
use crate::error::{RcmlError, Result};
use crate::nn::{backward, bce_loss, forward, Activations, Gradients, Network, NetworkPair};

/// Bandwidths for the two discrepancy terms of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchKernels {
    pub tap: KernelConfig,
    pub logits: KernelConfig,
}

/// Losses and parameter gradients of both networks for one batch.
#[derive(Debug, Clone)]
pub struct PairObjective {
    pub loss_f: f64,
    pub loss_g: f64,
    pub bce_f: f64,
    pub bce_g: f64,
    /// Consistency term as seen by `[f, g]`; `None` when λ2 = λ3 = 0.
    pub consistency: Option<[f64; 2]>,
    /// Disparity term as seen by `[f, g]`; `None` when λ2 = λ3 = 0.
    pub disparity: Option<[f64; 2]>,
    pub grads_f: Gradients,
    pub grads_g: Gradients,
    /// Logit gradient of the λ1-weighted BCE term alone.
    pub bce_grad_f: Array2<f64>,
    pub bce_grad_g: Array2<f64>,
}

/// Evaluates `L_f` and `L_g` on one batch with fixed classification rows
/// (`f_rows` for f, `g_rows` for g) and fixed bandwidths.
#[allow(clippy::too_many_arguments)]
pub fn pair_objective(
    pair: &NetworkPair,
    x: &Array2<f64>,
    y: &Array2<u8>,
    f_rows: &[usize],
    g_rows: &[usize],
    kernels: &BatchKernels,
    weights: &LossWeights,
    scope: DiscrepancyScope,
) -> Result<PairObjective> {
    let acts_f = forward(&pair.f, x)?;
    let acts_g = forward(&pair.g, x)?;
    let tap_bw = Bandwidth::Fixed { sigmas: kernels.tap.sigmas.clone() };
    let logit_bw = Bandwidth::Fixed { sigmas: kernels.logits.sigmas.clone() };
    objective_from_activations(&pair.f, &pair.g, &acts_f, &acts_g, y, f_rows, g_rows, &tap_bw, &logit_bw, weights, scope)
}

struct TermGrads {
    consistency: [f64; 2],
    disparity: [f64; 2],
    logits_f: Array2<f64>,
    tap_f: Array2<f64>,
    logits_g: Array2<f64>,
    tap_g: Array2<f64>,
}

fn scatter_rows(target: &mut Array2<f64>, rows: &[usize], src: &Array2<f64>) {
    for (k, &r) in rows.iter().enumerate() {
        let mut row = target.row_mut(r);
        row += &src.row(k);
    }
}

/// MMD terms and their gradients with respect to each network's own
/// activations (the peer's are constants).
fn discrepancy_terms(
    acts_f: &Activations,
    acts_g: &Activations,
    f_rows: &[usize],
    g_rows: &[usize],
    tap_bw: &Bandwidth,
    logit_bw: &Bandwidth,
    scope: DiscrepancyScope,
) -> Result<TermGrads> {
    let (b, v) = acts_f.logits().dim();
    let h = acts_f.tap().ncols();
    let mut out = TermGrads {
        consistency: [0.0; 2],
        disparity: [0.0; 2],
        logits_f: Array2::zeros((b, v)),
        tap_f: Array2::zeros((b, h)),
        logits_g: Array2::zeros((b, v)),
        tap_g: Array2::zeros((b, h)),
    };
    match scope {
        DiscrepancyScope::Full => {
            let (lf, lg) = (acts_f.logits(), acts_g.logits());
            let (tf, tg) = (acts_f.tap(), acts_g.tap());
            let c = consistency_loss(lf, lg, &logit_bw.resolve(lf, lg)?)?;
            let d = disparity_loss(tf, tg, &tap_bw.resolve(tf, tg)?)?;
            out.consistency = [c.value; 2];
            out.disparity = [d.value; 2];
            out.logits_f = c.grad_p;
            out.logits_g = c.grad_q;
            out.tap_f = d.grad_p;
            out.tap_g = d.grad_q;
        }
        DiscrepancyScope::Selected => {
            for (side, rows) in [(0usize, f_rows), (1usize, g_rows)] {
                let lf = acts_f.logits().select(Axis(0), rows);
                let lg = acts_g.logits().select(Axis(0), rows);
                let tf = acts_f.tap().select(Axis(0), rows);
                let tg = acts_g.tap().select(Axis(0), rows);
                let c = consistency_loss(&lf, &lg, &logit_bw.resolve(&lf, &lg)?)?;
                let d = disparity_loss(&tf, &tg, &tap_bw.resolve(&tf, &tg)?)?;
                out.consistency[side] = c.value;
                out.disparity[side] = d.value;
                if side == 0 {
                    scatter_rows(&mut out.logits_f, rows, &c.grad_p);
                    scatter_rows(&mut out.tap_f, rows, &d.grad_p);
                } else {
                    scatter_rows(&mut out.logits_g, rows, &c.grad_q);
                    scatter_rows(&mut out.tap_g, rows, &d.grad_q);
                }
            }
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn objective_from_activations(
    f: &Network,
    g: &Network,
    acts_f: &Activations,
    acts_g: &Activations,
    y: &Array2<u8>,
    f_rows: &[usize],
    g_rows: &[usize],
    tap_bw: &Bandwidth,
    logit_bw: &Bandwidth,
    weights: &LossWeights,
    scope: DiscrepancyScope,
) -> Result<PairObjective> {
    if acts_f.batch_size() != y.nrows() || acts_g.batch_size() != y.nrows() {
        return Err(RcmlError::shape("activations and labels differ in batch size"));
    }
    let (bce_f, mut grad_f) = bce_loss(acts_f.logits(), y, f_rows)?;
    let (bce_g, mut grad_g) = bce_loss(acts_g.logits(), y, g_rows)?;
    grad_f *= weights.lambda1;
    grad_g *= weights.lambda1;
    let bce_grad_f = grad_f.clone();
    let bce_grad_g = grad_g.clone();

    let (consistency, disparity, tap_f, tap_g) = if weights.uses_discrepancy() {
        let t = discrepancy_terms(acts_f, acts_g, f_rows, g_rows, tap_bw, logit_bw, scope)?;
        grad_f.scaled_add(weights.lambda2, &t.logits_f);
        grad_g.scaled_add(weights.lambda2, &t.logits_g);
        let tap_f = t.tap_f * -weights.lambda3;
        let tap_g = t.tap_g * -weights.lambda3;
        (Some(t.consistency), Some(t.disparity), Some(tap_f), Some(tap_g))
    } else {
        (None, None, None, None)
    };

    let c = consistency.unwrap_or([0.0; 2]);
    let d = disparity.unwrap_or([0.0; 2]);
    let (loss_f, _) = final_losses(bce_f, bce_g, c[0], d[0], weights);
    let (_, loss_g) = final_losses(bce_f, bce_g, c[1], d[1], weights);

    let grads_f = backward(f, acts_f, &grad_f, tap_f.as_ref())?;
    let grads_g = backward(g, acts_g, &grad_g, tap_g.as_ref())?;
    Ok(PairObjective {
        loss_f,
        loss_g,
        bce_f,
        bce_g,
        consistency,
        disparity,
        grads_f,
        grads_g,
        bce_grad_f,
        bce_grad_g,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_pair, MlpConfig};
    use crate::rng;
    use rand::Rng;

    fn setup(seed: u64) -> (NetworkPair, Array2<f64>, Array2<u8>) {
        let cfg = MlpConfig { layer_widths: vec![2, 4, 3], tap_layer: 1, init_scale: 1.5 };
        let mut pair = init_pair(&cfg, seed, seed + 1).unwrap();
        let mut r = rng::seeded(seed + 2);
        for net in [&mut pair.f, &mut pair.g] {
            for l in &mut net.layers {
                l.bias.mapv_inplace(|_| r.gen_range(-0.3..0.3));
            }
        }
        let x = Array2::from_shape_fn((4, 2), |_| r.gen_range(-1.0..1.0));
        let y = Array2::from_shape_fn((4, 3), |_| u8::from(r.gen_bool(0.5)));
        (pair, x, y)
    }

    fn kernels() -> BatchKernels {
        BatchKernels {
            tap: KernelConfig::new(vec![0.6, 1.5]).unwrap(),
            logits: KernelConfig::new(vec![0.8, 2.0]).unwrap(),
        }
    }

    fn check_fd(
        net_grads: &Gradients,
        net: &Network,
        loss: impl Fn(&Network) -> f64,
    ) {
        let analytic = net_grads.flatten();
        let h = 1e-4;
        for k in 0..net.num_params() {
            let mut plus = net.clone();
            *plus.params_mut().nth(k).unwrap() += h;
            let mut minus = net.clone();
            *minus.params_mut().nth(k).unwrap() -= h;
            let num = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let rel = (analytic[k] - num).abs() / analytic[k].abs().max(num.abs()).max(1e-3);
            assert!(rel <= 1e-5, "param {k}: analytic {} numeric {num}", analytic[k]);
        }
    }

    #[test]
    fn composed_gradients_match_finite_differences() {
        let w = LossWeights::default();
        for seed in [3u64, 11, 29] {
            let (pair, x, y) = setup(seed);
            for scope in [DiscrepancyScope::Full, DiscrepancyScope::Selected] {
                let (fr, gr) = (vec![0, 2, 3], vec![1, 2]);
                let obj = pair_objective(&pair, &x, &y, &fr, &gr, &kernels(), &w, scope).unwrap();
                check_fd(&obj.grads_f, &pair.f, |f| {
                    let p = NetworkPair { f: f.clone(), g: pair.g.clone() };
                    pair_objective(&p, &x, &y, &fr, &gr, &kernels(), &w, scope).unwrap().loss_f
                });
                check_fd(&obj.grads_g, &pair.g, |g| {
                    let p = NetworkPair { f: pair.f.clone(), g: g.clone() };
                    pair_objective(&p, &x, &y, &fr, &gr, &kernels(), &w, scope).unwrap().loss_g
                });
            }
        }
    }

    #[test]
    fn bce_gradient_is_zero_outside_exchanged_rows() {
        let (pair, x, y) = setup(5);
        let obj = pair_objective(&pair, &x, &y, &[1, 3], &[0], &kernels(), &LossWeights::default(), DiscrepancyScope::Full)
            .unwrap();
        for r in [0, 2] {
            assert!(obj.bce_grad_f.row(r).iter().all(|&g| g == 0.0));
        }
        for r in [1, 2, 3] {
            assert!(obj.bce_grad_g.row(r).iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn identical_networks_have_zero_discrepancy() {
        let (mut pair, x, y) = setup(8);
        pair.g = pair.f.clone();
        let w = LossWeights::default();
        let obj = pair_objective(&pair, &x, &y, &[0, 1, 2, 3], &[0, 1, 2, 3], &kernels(), &w, DiscrepancyScope::Full)
            .unwrap();
        assert_eq!(obj.consistency, Some([0.0, 0.0]));
        assert_eq!(obj.disparity, Some([0.0, 0.0]));
        assert_eq!(obj.loss_f, w.lambda1 * obj.bce_f);
    }

    #[test]
    fn no_discrepancy_weights_skip_terms() {
        let (pair, x, y) = setup(4);
        let w = LossWeights { lambda1: 1.0, lambda2: 0.0, lambda3: 0.0 };
        let obj = pair_objective(&pair, &x, &y, &[0, 1], &[2, 3], &kernels(), &w, DiscrepancyScope::Full).unwrap();
        assert!(obj.consistency.is_none());
        assert_eq!(obj.loss_f, obj.bce_f);
    }
}
