//! A small fully connected classifier: ReLU hidden layers, linear logits,
//! sigmoid BCE loss, hand-written backprop and plain SGD.
//!
//! The activations of one hidden layer (the tap layer) are exposed so the
//! discrepancy terms can be attached there, and [`backward`] accepts an
//! extra gradient injected at that layer.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{RcmlError, Result};
use crate::rng;

/// Probability clamp used by the BCE loss.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    /// `[d, h1, ..., V]`.
    pub layer_widths: Vec<usize>,
    /// Index into `layer_widths` of the hidden layer whose post-activation
    /// output is the tap.
    pub tap_layer: usize,
    pub init_scale: f64,
}

impl MlpConfig {
    /// Default initial weight bound multiplier (He-uniform for ReLU).
    pub const DEFAULT_INIT_SCALE: f64 = 2.449_489_742_783_178;

    /// Config with the tap at the last hidden layer.
    pub fn new(input_dim: usize, hidden: &[usize], num_classes: usize) -> Self {
        let mut layer_widths = vec![input_dim];
        layer_widths.extend_from_slice(hidden);
        layer_widths.push(num_classes);
        let tap_layer = layer_widths.len().saturating_sub(2);
        MlpConfig { layer_widths, tap_layer, init_scale: Self::DEFAULT_INIT_SCALE }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.layer_widths.len();
        if n < 3 {
            return Err(RcmlError::config("need an input, at least one hidden layer and an output"));
        }
        if self.layer_widths.contains(&0) {
            return Err(RcmlError::config("layer widths must be positive"));
        }
        if !(1..n - 1).contains(&self.tap_layer) {
            return Err(RcmlError::config(format!(
                "tap_layer {} must index a hidden layer (1..{})",
                self.tap_layer,
                n - 1
            )));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(RcmlError::config("init_scale must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn tap_width(&self) -> usize {
        self.layer_widths[self.tap_layer]
    }
}

/// One affine map `x · weights + bias`, `weights` shaped `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer { weights: Array2::zeros((fan_in, fan_out)), bias: Array1::zeros(fan_out) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: MlpConfig,
    pub seed: u64,
    pub layers: Vec<Layer>,
}

/// Parameter-shaped gradients, one [`Layer`] per network layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            layers: net.layers.iter().map(|l| Layer::zeros(l.weights.nrows(), l.weights.ncols())).collect(),
        }
    }

    /// All entries in layer order, weights (row-major) before bias.
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied()).collect()
}

impl Network {
    /// Uniform weights in `±init_scale/√fan_in`, zero biases.
    pub fn init(config: &MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::seeded(seed);
        let layers = config
            .layer_widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = config.init_scale / (fan_in as f64).sqrt();
                let weights = if bound > 0.0 {
                    Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-bound..=bound))
                } else {
                    Array2::zeros((fan_in, fan_out))
                };
                Layer { weights, bias: Array1::zeros(fan_out) }
            })
            .collect();
        Ok(Network { config: config.clone(), seed, layers })
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    /// Mutable views of every parameter, in [`Network::flatten`] order.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn predict_proba(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(forward(self, x)?.logits().mapv(sigmoid))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            seed: self.seed,
            layers: self
                .layers
                .iter()
                .map(|l| CheckpointLayer {
                    fan_in: l.weights.nrows(),
                    fan_out: l.weights.ncols(),
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.config.validate()?;
        let expect: Vec<(usize, usize)> = ck.config.layer_widths.windows(2).map(|w| (w[0], w[1])).collect();
        if expect.len() != ck.layers.len() {
            return Err(RcmlError::shape("checkpoint layer count does not match config"));
        }
        let layers = ck
            .layers
            .iter()
            .zip(expect)
            .map(|(l, (fi, fo))| {
                if (l.fan_in, l.fan_out) != (fi, fo) || l.bias.len() != fo {
                    return Err(RcmlError::shape("checkpoint layer shape does not match config"));
                }
                let weights = Array2::from_shape_vec((fi, fo), l.weights.clone())
                    .map_err(|e| RcmlError::shape(e.to_string()))?;
                Ok(Layer { weights, bias: Array1::from(l.bias.clone()) })
            })
            .collect::<Result<Vec<_>>>()?;
        let net = Network { config: ck.config.clone(), seed: ck.seed, layers };
        if !net.is_finite() {
            return Err(RcmlError::NonFinite("checkpoint parameter".into()));
        }
        Ok(net)
    }
}

/// JSON checkpoint: config, seed and row-major flat parameters per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub config: MlpConfig,
    pub seed: u64,
    pub layers: Vec<CheckpointLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Checkpoint {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text + "\n").map_err(|e| RcmlError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| RcmlError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkPair {
    pub f: Network,
    pub g: Network,
}

/// Two networks with one config and independent initial parameters.
pub fn init_pair(config: &MlpConfig, seed_f: u64, seed_g: u64) -> Result<NetworkPair> {
    if seed_f == seed_g {
        return Err(RcmlError::config("the two networks need distinct seeds"));
    }
    Ok(NetworkPair { f: Network::init(config, seed_f)?, g: Network::init(config, seed_g)? })
}

/// Layer outputs of one forward pass. `outputs[0]` is the input batch,
/// `outputs[l]` the (post-ReLU) output of layer `l`, the last entry the logits.
#[derive(Debug, Clone)]
pub struct Activations {
    pub outputs: Vec<Array2<f64>>,
    tap_layer: usize,
}

impl Activations {
    pub fn tap(&self) -> &Array2<f64> {
        &self.outputs[self.tap_layer]
    }

    pub fn logits(&self) -> &Array2<f64> {
        self.outputs.last().unwrap()
    }

    pub fn batch_size(&self) -> usize {
        self.outputs[0].nrows()
    }
}

pub fn forward(net: &Network, x: &Array2<f64>) -> Result<Activations> {
    if x.ncols() != net.config.input_dim() {
        return Err(RcmlError::shape(format!(
            "input has {} columns, network expects {}",
            x.ncols(),
            net.config.input_dim()
        )));
    }
    let last = net.layers.len() - 1;
    let mut outputs = Vec::with_capacity(net.layers.len() + 1);
    outputs.push(x.to_owned());
    for (l, layer) in net.layers.iter().enumerate() {
        let mut z = outputs[l].dot(&layer.weights);
        z += &layer.bias;
        if l < last {
            z.mapv_inplace(|v| v.max(0.0));
        }
        outputs.push(z);
    }
    Ok(Activations { outputs, tap_layer: net.config.tap_layer })
}

/// Backpropagates `grad_logits` (and optionally `grad_tap`, a gradient with
/// respect to the tap activations) to parameter gradients.
pub fn backward(
    net: &Network,
    acts: &Activations,
    grad_logits: &Array2<f64>,
    grad_tap: Option<&Array2<f64>>,
) -> Result<Gradients> {
    let b = acts.batch_size();
    if grad_logits.dim() != (b, net.config.num_classes()) {
        return Err(RcmlError::shape("logit gradient shape"));
    }
    if let Some(gt) = grad_tap {
        if gt.dim() != (b, net.config.tap_width()) {
            return Err(RcmlError::shape("tap gradient shape"));
        }
    }
    let mut grads = Vec::with_capacity(net.layers.len());
    let mut delta = grad_logits.to_owned();
    for l in (0..net.layers.len()).rev() {
        let input = &acts.outputs[l];
        let weights = input.t().dot(&delta);
        let bias = delta.sum_axis(Axis(0));
        grads.push(Layer { weights, bias });
        if l == 0 {
            break;
        }
        let mut upstream = delta.dot(&net.layers[l].weights.t());
        if l == net.config.tap_layer {
            if let Some(gt) = grad_tap {
                upstream += gt;
            }
        }
        ndarray::Zip::from(&mut upstream).and(input).for_each(|g, &a| {
            if a <= 0.0 {
                *g = 0.0;
            }
        });
        delta = upstream;
    }
    grads.reverse();
    Ok(Gradients { layers: grads })
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean clamped BCE over the `selected` rows and all classes, with its
/// gradient with respect to the logits. Unselected rows get zero gradient.
pub fn bce_loss(
    logits: &Array2<f64>,
    targets: &Array2<u8>,
    selected: &[usize],
) -> Result<(f64, Array2<f64>)> {
    if logits.dim() != targets.dim() {
        return Err(RcmlError::shape("logits and targets differ in shape"));
    }
    if selected.is_empty() {
        return Err(RcmlError::EmptySelection);
    }
    let (b, v) = logits.dim();
    if let Some(&i) = selected.iter().find(|&&i| i >= b) {
        return Err(RcmlError::shape(format!("selected row {i} outside batch of {b}")));
    }
    let scale = 1.0 / (selected.len() * v) as f64;
    let mut grad = Array2::<f64>::zeros((b, v));
    let mut loss = 0.0;
    for &i in selected {
        for c in 0..v {
            let s = sigmoid(logits[[i, c]]);
            let p = s.clamp(BCE_EPS, 1.0 - BCE_EPS);
            let y = f64::from(targets[[i, c]]);
            loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            // d/dz vanishes where the clamp is active
            if s > BCE_EPS && s < 1.0 - BCE_EPS {
                grad[[i, c]] += (s - y) * scale;
            }
        }
    }
    Ok((loss * scale, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub initial_lr: f64,
    /// Multiplicative learning-rate decay applied once per epoch.
    pub decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { initial_lr: 1e-3, decay: 0.9, batch_size: 64, epochs: 100 }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(RcmlError::config("initial_lr must be positive"));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(RcmlError::config("decay must lie in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(RcmlError::config("batch_size must be positive"));
        }
        Ok(())
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        self.initial_lr * self.decay.powi(epoch as i32)
    }
}

/// One SGD update at the learning rate of `epoch`.
pub fn sgd_step(net: &Network, grads: &Gradients, epoch: usize, cfg: &SgdConfig) -> Result<Network> {
    if grads.layers.len() != net.layers.len()
        || grads
            .layers
            .iter()
            .zip(&net.layers)
            .any(|(g, p)| g.weights.dim() != p.weights.dim() || g.bias.dim() != p.bias.dim())
    {
        return Err(RcmlError::shape("gradient shapes do not match the network"));
    }
    if !grads.is_finite() {
        return Err(RcmlError::NonFinite("gradient".into()));
    }
    let lr = cfg.lr(epoch);
    let mut next = net.clone();
    for (p, g) in next.layers.iter_mut().zip(&grads.layers) {
        p.weights.scaled_add(-lr, &g.weights);
        p.bias.scaled_add(-lr, &g.bias);
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn tiny(widths: &[usize], seed: u64) -> Network {
        let cfg = MlpConfig {
            layer_widths: widths.to_vec(),
            tap_layer: widths.len() - 2,
            init_scale: 1.5,
        };
        let mut net = Network::init(&cfg, seed).unwrap();
        let mut r = rng::seeded(seed ^ 0x55);
        for l in &mut net.layers {
            l.bias.mapv_inplace(|_| r.gen_range(-0.3..0.3));
        }
        net
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = MlpConfig::new(5, &[7, 4], 3);
        let a = init_pair(&cfg, 1, 2).unwrap();
        let b = init_pair(&cfg, 1, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.f.layers, a.g.layers);
        for (l, w) in a.f.layers.iter().zip(cfg.layer_widths.windows(2)) {
            let bound = cfg.init_scale / (w[0] as f64).sqrt();
            assert!(l.weights.iter().all(|v| v.abs() <= bound));
            assert!(l.bias.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn equal_seeds_rejected() {
        let cfg = MlpConfig::new(2, &[3], 2);
        assert!(init_pair(&cfg, 4, 4).is_err());
    }

    #[test]
    fn zero_scale_gives_zero_network() {
        let cfg = MlpConfig { init_scale: 0.0, ..MlpConfig::new(3, &[4], 2) };
        let net = Network::init(&cfg, 9).unwrap();
        assert!(net.flatten().iter().all(|&v| v == 0.0));
        let x = Array2::from_elem((5, 3), 0.7);
        let acts = forward(&net, &x).unwrap();
        assert!(acts.logits().iter().all(|&v| v == 0.0));
        assert!(net.predict_proba(&x).unwrap().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn config_validation() {
        let mut cfg = MlpConfig::new(3, &[4, 5], 2);
        assert_eq!(cfg.tap_layer, 2);
        assert!(cfg.validate().is_ok());
        cfg.tap_layer = 0;
        assert!(cfg.validate().is_err());
        cfg.tap_layer = 3;
        assert!(cfg.validate().is_err());
        assert!(MlpConfig { layer_widths: vec![3, 2], tap_layer: 1, init_scale: 1.0 }.validate().is_err());
    }

    #[test]
    fn one_unit_forward() {
        let cfg = MlpConfig { layer_widths: vec![1, 1, 1], tap_layer: 1, init_scale: 1.0 };
        let net = Network {
            config: cfg,
            seed: 0,
            layers: vec![
                Layer { weights: array![[1.0]], bias: array![0.0] },
                Layer { weights: array![[2.0]], bias: array![0.0] },
            ],
        };
        let acts = forward(&net, &array![[3.0]]).unwrap();
        assert_eq!(acts.tap(), &array![[3.0]]);
        assert_eq!(acts.logits(), &array![[6.0]]);
    }

    #[test]
    fn forward_shapes_and_mismatch() {
        let net = tiny(&[4, 6, 5, 3], 1);
        let x = Array2::from_elem((7, 4), 0.1);
        let acts = forward(&net, &x).unwrap();
        assert_eq!(acts.tap().dim(), (7, 5));
        assert_eq!(acts.logits().dim(), (7, 3));
        assert!(forward(&net, &Array2::zeros((2, 3))).is_err());
    }

    #[test]
    fn bce_values() {
        let zeros = Array2::<f64>::zeros((3, 4));
        let y = Array2::from_shape_fn((3, 4), |(i, j)| ((i + j) % 2) as u8);
        let (loss, _) = bce_loss(&zeros, &y, &[0, 1, 2]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);

        let z = (0.8f64 / 0.2).ln();
        let (loss, _) = bce_loss(&array![[z]], &array![[1u8]], &[0]).unwrap();
        assert!((loss - (-(0.8f64).ln())).abs() < 1e-12);
        assert!((loss - 0.22314).abs() < 1e-5);

        let perfect = array![[40.0, -40.0]];
        let (loss, grad) = bce_loss(&perfect, &array![[1u8, 0]], &[0]).unwrap();
        assert!(loss <= -(1.0 - BCE_EPS).ln() + 1e-15);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn bce_selection_masking() {
        let logits = array![[0.3, -1.2], [2.0, 0.1], [-0.5, 0.4]];
        let y = array![[1u8, 0], [0, 1], [1, 1]];
        assert!(matches!(bce_loss(&logits, &y, &[]), Err(RcmlError::EmptySelection)));
        let (_, all) = bce_loss(&logits, &y, &[0, 1, 2]).unwrap();
        let (_, part) = bce_loss(&logits, &y, &[0, 2]).unwrap();
        assert!(part.row(1).iter().all(|&g| g == 0.0));
        // remaining rows change only by the 1/|selected| normaliser
        for i in [0, 2] {
            for c in 0..2 {
                assert!((part[[i, c]] * 2.0 - all[[i, c]] * 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sgd_updates() {
        assert!((SgdConfig::default().lr(2) - 8.1e-4).abs() < 1e-18);
        let cfg = MlpConfig { layer_widths: vec![1, 1, 1], tap_layer: 1, init_scale: 1.0 };
        let mut net = Network::init(&cfg, 3).unwrap();
        net.layers[0].weights[[0, 0]] = 1.0;
        let mut g = Gradients::zeros_like(&net);
        let same = sgd_step(&net, &g, 0, &SgdConfig::default()).unwrap();
        assert_eq!(same, net);
        g.layers[0].weights[[0, 0]] = 2.0;
        let sgd = SgdConfig { initial_lr: 0.1, decay: 0.9, batch_size: 1, epochs: 1 };
        let next = sgd_step(&net, &g, 0, &sgd).unwrap();
        assert!((next.layers[0].weights[[0, 0]] - 0.8).abs() < 1e-15);

        g.layers[1].bias[0] = f64::NAN;
        assert!(matches!(sgd_step(&net, &g, 0, &sgd), Err(RcmlError::NonFinite(_))));
        let wrong = Gradients::zeros_like(&tiny(&[2, 2, 2], 0));
        assert!(matches!(sgd_step(&net, &wrong, 0, &sgd), Err(RcmlError::ShapeMismatch(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let net = tiny(&[3, 5, 4, 2], 17);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint_f.json");
        net.to_checkpoint().write(&path).unwrap();
        let back = Network::from_checkpoint(&Checkpoint::read(&path).unwrap()).unwrap();
        assert_eq!(back, net);
    }

    /// Central-difference gradient of `loss` over every parameter.
    fn numeric_grad(net: &Network, loss: impl Fn(&Network) -> f64) -> Vec<f64> {
        let h = 1e-4;
        let n = net.num_params();
        (0..n)
            .map(|k| {
                let mut plus = net.clone();
                *plus.params_mut().nth(k).unwrap() += h;
                let mut minus = net.clone();
                *minus.params_mut().nth(k).unwrap() -= h;
                (loss(&plus) - loss(&minus)) / (2.0 * h)
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn bce_backprop_matches_finite_differences(seed in 0u64..10_000, b in 1usize..5) {
            let net = tiny(&[2, 4, 3, 2], seed);
            prop_assume!(net.num_params() <= 50);
            let mut r = rng::seeded(seed + 1);
            let x = Array2::from_shape_fn((b, 2), |_| r.gen_range(-1.0..1.0));
            let y = Array2::from_shape_fn((b, 2), |_| u8::from(r.gen_bool(0.5)));
            let sel: Vec<usize> = (0..b).collect();
            let acts = forward(&net, &x).unwrap();
            let (_, gl) = bce_loss(acts.logits(), &y, &sel).unwrap();
            let analytic = backward(&net, &acts, &gl, None).unwrap().flatten();
            let numeric = numeric_grad(&net, |n| {
                bce_loss(forward(n, &x).unwrap().logits(), &y, &sel).unwrap().0
            });
            for (a, n) in analytic.iter().zip(&numeric) {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
                prop_assert!(rel <= 1e-5, "analytic {} numeric {}", a, n);
            }
        }
    }
}
