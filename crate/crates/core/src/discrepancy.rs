//! Gaussian RBF kernel and the biased empirical squared-MMD estimator
//!
//! ```text
//! mmd(P, Q) = 1/m² [ Σ_i Σ_t k(p_i, p_t) − 2 Σ_i Σ_t k(p_i, q_t) + Σ_j Σ_t k(q_j, q_t) ]
//! ```
//!
//! with exact gradients for both sample sets. The disparity loss compares
//! the two networks' tap activations, the consistency loss their logits.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{RcmlError, Result};

/// Kernel bandwidths. The kernel value is the mean over all bandwidths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub sigmas: Vec<f64>,
}

impl KernelConfig {
    pub fn new(sigmas: Vec<f64>) -> Result<Self> {
        let cfg = KernelConfig { sigmas };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() {
            return Err(RcmlError::config("at least one kernel bandwidth is required"));
        }
        if self.sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(RcmlError::config("kernel bandwidths must be positive and finite"));
        }
        Ok(())
    }

    /// Median heuristic: `multipliers · κ`, where κ is the median pairwise
    /// Euclidean distance between the rows of `P` and `Q` stacked together.
    /// Falls back to κ = 1 when every row coincides.
    pub fn median_heuristic(p: &Array2<f64>, q: &Array2<f64>, multipliers: &[f64]) -> Result<Self> {
        let rows: Vec<ArrayView1<f64>> = p.rows().into_iter().chain(q.rows()).collect();
        let mut dists = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                dists.push(sq_dist(rows[i], rows[j]).sqrt());
            }
        }
        let kappa = median(&mut dists).filter(|k| *k > 0.0 && k.is_finite()).unwrap_or(1.0);
        KernelConfig::new(multipliers.iter().map(|m| m * kappa).collect())
    }
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// How bandwidths are chosen for each batch during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Bandwidth {
    Fixed { sigmas: Vec<f64> },
    /// Per-batch median heuristic; the resulting bandwidths are constants
    /// for differentiation.
    Median { multipliers: Vec<f64> },
}

impl Default for Bandwidth {
    fn default() -> Self {
        Bandwidth::Median { multipliers: vec![0.5, 1.0, 2.0] }
    }
}

impl Bandwidth {
    pub fn validate(&self) -> Result<()> {
        match self {
            Bandwidth::Fixed { sigmas } => KernelConfig { sigmas: sigmas.clone() }.validate(),
            Bandwidth::Median { multipliers } => {
                KernelConfig { sigmas: multipliers.clone() }.validate()
            }
        }
    }

    pub fn resolve(&self, p: &Array2<f64>, q: &Array2<f64>) -> Result<KernelConfig> {
        match self {
            Bandwidth::Fixed { sigmas } => KernelConfig::new(sigmas.clone()),
            Bandwidth::Median { multipliers } => KernelConfig::median_heuristic(p, q, multipliers),
        }
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn rbf_kernel(a: ArrayView1<f64>, b: ArrayView1<f64>, cfg: &KernelConfig) -> Result<f64> {
    if a.len() != b.len() {
        return Err(RcmlError::shape(format!("kernel inputs of length {} and {}", a.len(), b.len())));
    }
    Ok(kernel_and_slope(sq_dist(a, b), cfg).0)
}

/// Kernel value at squared distance `d2` and `s = Σ_σ exp(−d2/2σ²)/σ² / |σ|`,
/// so that `∂k/∂a = −s·(a − b)`.
fn kernel_and_slope(d2: f64, cfg: &KernelConfig) -> (f64, f64) {
    let n = cfg.sigmas.len() as f64;
    let (mut k, mut s) = (0.0, 0.0);
    for &sigma in &cfg.sigmas {
        let inv = 1.0 / (sigma * sigma);
        let e = (-0.5 * d2 * inv).exp();
        k += e;
        s += e * inv;
    }
    (k / n, s / n)
}

/// Value and gradients of the discrepancy between two sample sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Discrepancy {
    pub value: f64,
    pub grad_p: Array2<f64>,
    pub grad_q: Array2<f64>,
}

fn check_pair(p: &Array2<f64>, q: &Array2<f64>) -> Result<()> {
    if p.nrows() != q.nrows() {
        return Err(RcmlError::shape(format!("sample counts {} and {}", p.nrows(), q.nrows())));
    }
    if p.ncols() != q.ncols() {
        return Err(RcmlError::shape(format!("dimensions {} and {}", p.ncols(), q.ncols())));
    }
    if p.nrows() == 0 {
        return Err(RcmlError::shape("MMD needs at least one sample"));
    }
    Ok(())
}

/// Biased empirical squared MMD with analytic gradients.
pub fn mmd_sq(p: &Array2<f64>, q: &Array2<f64>, cfg: &KernelConfig) -> Result<Discrepancy> {
    check_pair(p, q)?;
    cfg.validate()?;
    let (m, h) = p.dim();
    let norm = 1.0 / (m * m) as f64;
    let mut grad_p = Array2::<f64>::zeros((m, h));
    let mut grad_q = Array2::<f64>::zeros((m, h));
    // All three sums run over ordered pairs in the same order, so P = Q
    // cancels to exactly zero.
    let cross = |x: &Array2<f64>, y: &Array2<f64>, gx: &mut Array2<f64>, gy: &mut Array2<f64>, w: f64| {
        let mut acc = 0.0;
        for i in 0..m {
            for t in 0..m {
                let (xi, yt) = (x.row(i), y.row(t));
                let (k, s) = kernel_and_slope(sq_dist(xi, yt), cfg);
                acc += k;
                for c in 0..h {
                    let g = w * s * (xi[c] - yt[c]) * norm;
                    gx[[i, c]] -= g;
                    gy[[t, c]] += g;
                }
            }
        }
        acc
    };
    let mut scratch_p = Array2::<f64>::zeros((m, h));
    let mut scratch_q = Array2::<f64>::zeros((m, h));
    let kpp = cross(p, p, &mut grad_p, &mut scratch_p, 1.0);
    let kqq = cross(q, q, &mut grad_q, &mut scratch_q, 1.0);
    grad_p += &scratch_p;
    grad_q += &scratch_q;
    let kpq = cross(p, q, &mut grad_p, &mut grad_q, -2.0);
    let value = (norm * (kpp - 2.0 * kpq + kqq)).max(0.0);
    Ok(Discrepancy { value, grad_p, grad_q })
}

/// Discrepancy between the tap activations of the two networks.
pub fn disparity_loss(tap_f: &Array2<f64>, tap_g: &Array2<f64>, cfg: &KernelConfig) -> Result<Discrepancy> {
    mmd_sq(tap_f, tap_g, cfg)
}

/// Discrepancy between the output logits of the two networks.
pub fn consistency_loss(
    logits_f: &Array2<f64>,
    logits_g: &Array2<f64>,
    cfg: &KernelConfig,
) -> Result<Discrepancy> {
    mmd_sq(logits_f, logits_g, cfg)
}
