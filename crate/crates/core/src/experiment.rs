//! Versioned JSON experiment configs and noise-rate sweeps.
//!
//! A sweep runs every (method, noise rate, seed) combination: noise is
//! injected into the training split only, a pair is trained, the selected
//! network is scored on the clean test labels and the training split is
//! diagnosed against the injected-noise ledger.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collab::{
    diagnose, estimate_noise_rate, select_best, train, Ablation, Detection, DiscrepancyScope, EstimatorConfig,
    LossWeights, NetTag, RateEstimate, Selection, SwapConfig, TrainConfig, TrainReport,
};
use crate::dataset::{generate_synthetic, load_dataset, split, MultiLabelDataset, SplitSpec, SyntheticSpec};
use crate::discrepancy::Bandwidth;
use crate::error::{RcmlError, Result};
use crate::eval::{map_scores, MetricReport};
use crate::nn::{init_pair, MlpConfig, NetworkPair, SgdConfig};
use crate::noise::{inject_rns, rate_to_spec, NoiseLedger, NoiseSpec};
use crate::rng;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rcml,
    BceBaseline,
    RcmlNoMmd,
    RcmlNoLasso,
    RcmlNoSwap,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::Rcml, Method::BceBaseline, Method::RcmlNoMmd, Method::RcmlNoLasso, Method::RcmlNoSwap];

    pub fn name(self) -> &'static str {
        match self {
            Method::Rcml => "rcml",
            Method::BceBaseline => "bce_baseline",
            Method::RcmlNoMmd => "rcml_no_mmd",
            Method::RcmlNoLasso => "rcml_no_lasso",
            Method::RcmlNoSwap => "rcml_no_swap",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| RcmlError::config(format!("unknown method {name:?}")))
    }

    /// Switches the method changes relative to full RCML.
    fn adjust(self, weights: LossWeights, swap: SwapConfig) -> (LossWeights, SwapConfig, Ablation) {
        let no_mmd = LossWeights { lambda2: 0.0, lambda3: 0.0, ..weights };
        let mut ablation = Ablation::default();
        match self {
            Method::Rcml => (weights, swap, ablation),
            Method::BceBaseline => (no_mmd, SwapConfig { gamma: 1.0, noise_rate_hint: None }, ablation),
            Method::RcmlNoMmd => (no_mmd, swap, ablation),
            Method::RcmlNoLasso => {
                ablation.selection = Selection::Random;
                (weights, swap, ablation)
            }
            Method::RcmlNoSwap => {
                ablation.exchange = false;
                (weights, swap, ablation)
            }
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Files {
        features: PathBuf,
        labels: PathBuf,
        /// Ground truth for evaluation, if the labels file is itself noisy.
        #[serde(default)]
        clean_labels: Option<PathBuf>,
    },
}

impl DatasetSource {
    pub fn load(&self) -> Result<MultiLabelDataset> {
        match self {
            DatasetSource::Synthetic(spec) => generate_synthetic(spec),
            DatasetSource::Files { features, labels, clean_labels } => {
                let mut ds = load_dataset(features, labels)?;
                if let Some(path) = clean_labels {
                    let clean = load_dataset(features, path)?;
                    if clean.class_names != ds.class_names {
                        return Err(RcmlError::shape("clean label columns differ from the label columns"));
                    }
                    ds.clean_labels = Some(clean.labels);
                }
                Ok(ds)
            }
        }
    }
}

/// Where each run's swap rate comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SwapRateSource {
    /// `γ = 1 − r` for the injected rate `r`.
    #[default]
    Injected,
    /// `γ = 1 − n̂r` with `n̂r` from cross-validation on the noisy training split.
    Estimated(EstimatorConfig),
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    /// Defaults to the last hidden layer.
    #[serde(default)]
    pub tap_layer: Option<usize>,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_init_scale() -> f64 {
    MlpConfig::DEFAULT_INIT_SCALE
}

impl ModelConfig {
    pub fn mlp(&self, input_dim: usize, num_classes: usize) -> Result<MlpConfig> {
        let mut cfg = MlpConfig::new(input_dim, &self.hidden, num_classes);
        if let Some(t) = self.tap_layer {
            cfg.tap_layer = t;
        }
        cfg.init_scale = self.init_scale;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn default_top_k() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub config_version: u32,
    pub dataset: DatasetSource,
    pub split: SplitSpec,
    pub noise_rates: Vec<f64>,
    pub methods: Vec<Method>,
    pub model: ModelConfig,
    pub sgd: SgdConfig,
    #[serde(default)]
    pub bandwidth: Bandwidth,
    #[serde(default)]
    pub lasso: crate::ranking::LassoConfig,
    #[serde(default)]
    pub swap_rate: SwapRateSource,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub discrepancy_scope: DiscrepancyScope,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| RcmlError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| RcmlError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.config_version != CONFIG_VERSION {
            return Err(RcmlError::config(format!(
                "config_version {} is not supported (expected {CONFIG_VERSION})",
                self.config_version
            )));
        }
        if self.seeds.is_empty() {
            return Err(RcmlError::config("at least one seed is required"));
        }
        if self.methods.is_empty() {
            return Err(RcmlError::config("at least one method is required"));
        }
        if self.noise_rates.is_empty() {
            return Err(RcmlError::config("at least one noise rate is required"));
        }
        if let Some(r) = self.noise_rates.iter().find(|r| !(0.0..=0.5).contains(*r)) {
            return Err(RcmlError::config(format!("noise rate {r} outside [0, 0.5]")));
        }
        if let DatasetSource::Synthetic(s) = &self.dataset {
            s.validate()?;
        }
        if self.model.hidden.is_empty() {
            return Err(RcmlError::config("model needs at least one hidden layer"));
        }
        match &self.swap_rate {
            SwapRateSource::Estimated(e) => e.validate()?,
            SwapRateSource::Fixed(g) => {
                SwapConfig::fixed(*g)?;
            }
            SwapRateSource::Injected => {}
        }
        self.split.validate()?;
        self.sgd.validate()?;
        self.bandwidth.validate()?;
        self.lasso.validate()?;
        self.weights.validate()
    }
}

/// Outcome of one (method, noise rate, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: Method,
    pub noise_rate: f64,
    pub seed: u64,
    pub gamma: f64,
    pub noise_rate_estimate: Option<RateEstimate>,
    pub selected: NetTag,
    /// Selected network on the clean test labels.
    pub test: MetricReport,
    /// Both networks' suspicion on the noisy training split against the ledger.
    pub detection: Option<Detection>,
}

/// Everything one run leaves behind.
pub struct RunArtifacts {
    pub result: RunResult,
    pub pair: NetworkPair,
    pub train_report: TrainReport,
    pub ledger: NoiseLedger,
    pub noise_spec: NoiseSpec,
    pub noise_report: crate::collab::NoiseReport,
    pub train_set: MultiLabelDataset,
}

#[derive(Serialize)]
struct RunReportFile<'a> {
    config: &'a ExperimentConfig,
    seeds: &'a [u64],
    result: &'a RunResult,
    train: &'a TrainReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub noise_rate: f64,
    pub runs: usize,
    pub f1_micro: f64,
    pub map_micro: f64,
    pub map_macro: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub runs: Vec<RunResult>,
    pub aggregate: Vec<AggregateRow>,
}

/// `aggregate.csv` contents: one row per (method, noise rate), seed means.
pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from("method,noise_rate,runs,f1_micro,map_micro,map_macro\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6}\n",
            r.method, r.noise_rate, r.runs, r.f1_micro, r.map_micro, r.map_macro
        ));
    }
    out
}

/// Loads and splits the dataset named by `cfg`.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<(MultiLabelDataset, MultiLabelDataset, MultiLabelDataset)> {
    let ds = cfg.dataset.load()?;
    split(&ds, &cfg.split)
}

/// Runs one (method, noise rate, seed) combination on pre-split data.
pub fn run_one(
    cfg: &ExperimentConfig,
    data: &(MultiLabelDataset, MultiLabelDataset, MultiLabelDataset),
    method: Method,
    rate_index: usize,
    seed: u64,
) -> Result<RunArtifacts> {
    let (train_clean, val, test) = data;
    let noise_rate = cfg.noise_rates[rate_index];
    let noise_spec = rate_to_spec(noise_rate, rng::derive(seed, "noise", rate_index as u64))?;
    let (noisy, ledger) = inject_rns(&train_clean.labels, &noise_spec)?;
    let mut train_set = train_clean.clone();
    train_set.clean_labels = Some(train_clean.truth().clone());
    train_set.labels = noisy;

    let mlp = cfg.model.mlp(train_set.dim(), train_set.num_classes())?;
    let mut base = TrainConfig {
        sgd: cfg.sgd,
        bandwidth: cfg.bandwidth.clone(),
        lasso: cfg.lasso,
        swap: SwapConfig::from_noise_rate(noise_rate)?,
        weights: cfg.weights,
        ablation: Ablation::default(),
        discrepancy_scope: cfg.discrepancy_scope,
        seed: rng::derive(seed, "train", 0),
    };
    let mut noise_rate_estimate = None;
    match &cfg.swap_rate {
        SwapRateSource::Injected => {}
        SwapRateSource::Fixed(g) => base.swap = SwapConfig::fixed(*g)?,
        SwapRateSource::Estimated(est) if method != Method::BceBaseline => {
            let est = EstimatorConfig { seed: rng::derive(seed, "estimate", est.seed), ..est.clone() };
            let e = estimate_noise_rate(&train_set, &mlp, &base, &est)?;
            base.swap = SwapConfig::from_noise_rate(e.rate)?;
            noise_rate_estimate = Some(e);
        }
        SwapRateSource::Estimated(_) => {}
    }
    let detection_gamma = base.swap.gamma;
    let (weights, swap, ablation) = method.adjust(base.weights, base.swap);
    let tcfg = TrainConfig { weights, swap, ablation, ..base };

    let pair = init_pair(&mlp, rng::derive(seed, "init_f", 0), rng::derive(seed, "init_g", 0))?;
    let (trained, train_report) = train(&pair, &train_set, val, &tcfg, None)?;
    let (selected, net) = select_best(&trained, &train_report)?;
    let test_report = map_scores(&net.predict_proba(&test.features)?, test.truth())?;
    let noise_report = diagnose(&trained, &train_set, &cfg.lasso, cfg.top_k, Some(&ledger), detection_gamma)?;

    let result = RunResult {
        method,
        noise_rate,
        seed,
        gamma: tcfg.swap.gamma,
        noise_rate_estimate,
        selected,
        test: test_report,
        detection: noise_report.detection.clone(),
    };
    Ok(RunArtifacts { result, pair: trained, train_report, ledger, noise_spec, noise_report, train_set })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| RcmlError::io(path, e))
}

/// Writes `report.json`, `noise_ledger.json`, `checkpoint_{f,g}.json`,
/// `metrics_per_epoch.csv` and the diagnosis files into `dir`.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, run: &RunArtifacts) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| RcmlError::io(dir, e))?;
    let report = RunReportFile { config: cfg, seeds: &cfg.seeds, result: &run.result, train: &run.train_report };
    write_json(&dir.join("report.json"), &report)?;
    run.ledger
        .to_file(&run.train_set.sample_ids, &run.train_set.class_names, &run.noise_spec)
        .write(&dir.join("noise_ledger.json"))?;
    run.pair.f.to_checkpoint().write(&dir.join("checkpoint_f.json"))?;
    run.pair.g.to_checkpoint().write(&dir.join("checkpoint_g.json"))?;
    let csv_path = dir.join("metrics_per_epoch.csv");
    fs::write(&csv_path, run.train_report.epochs_csv()).map_err(|e| RcmlError::io(&csv_path, e))?;
    run.noise_report.write(&dir.join("noise_report.json"), &dir.join("noise_report.csv"), &run.train_set.class_names)
}

pub fn run_dir(root: &Path, method: Method, noise_rate: f64, seed: u64) -> PathBuf {
    root.join(method.name()).join(format!("rate_{noise_rate}")).join(format!("seed_{seed}"))
}

/// Runs the full sweep. With `output` set, per-run files go under
/// `output/<method>/rate_<r>/seed_<s>/` and `aggregate.csv` plus
/// `experiment.json` into `output`.
pub fn run_experiment(cfg: &ExperimentConfig, output: Option<&Path>) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    if data.0.is_empty() || data.2.is_empty() {
        return Err(RcmlError::config("train and test splits must be nonempty"));
    }
    let mut jobs = Vec::new();
    for &method in &cfg.methods {
        for r in 0..cfg.noise_rates.len() {
            for &seed in &cfg.seeds {
                jobs.push((method, r, seed));
            }
        }
    }
    if let Some(root) = output {
        fs::create_dir_all(root).map_err(|e| RcmlError::io(root, e))?;
    }
    let mut runs: Vec<RunResult> = jobs
        .par_iter()
        .map(|&(method, r, seed)| {
            let run = run_one(cfg, &data, method, r, seed)?;
            if let Some(root) = output {
                write_run(&run_dir(root, method, cfg.noise_rates[r], seed), cfg, &run)?;
            }
            Ok(run.result)
        })
        .collect::<Result<_>>()?;
    runs.sort_by(|a, b| {
        a.method.cmp(&b.method).then(a.noise_rate.total_cmp(&b.noise_rate)).then(a.seed.cmp(&b.seed))
    });

    let mut aggregate: Vec<AggregateRow> = Vec::new();
    for run in &runs {
        match aggregate.last_mut() {
            Some(row) if row.method == run.method && row.noise_rate == run.noise_rate => {
                row.runs += 1;
                row.f1_micro += run.test.f1_micro;
                row.map_micro += run.test.map_micro;
                row.map_macro += run.test.map_macro;
            }
            _ => aggregate.push(AggregateRow {
                method: run.method,
                noise_rate: run.noise_rate,
                runs: 1,
                f1_micro: run.test.f1_micro,
                map_micro: run.test.map_micro,
                map_macro: run.test.map_macro,
            }),
        }
    }
    for row in &mut aggregate {
        let n = row.runs as f64;
        row.f1_micro /= n;
        row.map_micro /= n;
        row.map_macro /= n;
    }
    let outcome = ExperimentOutcome { runs, aggregate };
    if let Some(root) = output {
        let path = root.join("aggregate.csv");
        fs::write(&path, aggregate_csv(&outcome.aggregate)).map_err(|e| RcmlError::io(&path, e))?;
        #[derive(Serialize)]
        struct Summary<'a> {
            config: &'a ExperimentConfig,
            seeds: &'a [u64],
            outcome: &'a ExperimentOutcome,
        }
        write_json(&root.join("experiment.json"), &Summary { config: cfg, seeds: &cfg.seeds, outcome: &outcome })?;
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_json() -> String {
        r#"{
            "config_version": 1,
            "dataset": {"synthetic": {"n": 120, "num_classes": 4, "dim": 5, "prototypes_per_class": 1,
                         "label_radius": 1.6, "feature_noise_sigma": 0.2, "seed": 3}},
            "split": {"train_fraction": 0.5, "val_fraction": 0.25, "test_fraction": 0.25, "seed": 1},
            "noise_rates": [0.0, 0.2],
            "methods": ["rcml", "bce_baseline"],
            "model": {"hidden": [8]},
            "sgd": {"initial_lr": 0.1, "decay": 0.95, "batch_size": 16, "epochs": 2},
            "seeds": [1, 2],
            "output_dir": "out"
        }"#
        .to_string()
    }

    #[test]
    fn parses_and_defaults() {
        let cfg = ExperimentConfig::from_json(&tiny_json()).unwrap();
        assert_eq!(cfg.weights, LossWeights::default());
        assert_eq!(cfg.swap_rate, SwapRateSource::Injected);
        assert_eq!(cfg.top_k, 3);
        assert_eq!(cfg.model.init_scale, MlpConfig::DEFAULT_INIT_SCALE);
    }

    #[test]
    fn rejects_unknown_keys_and_versions() {
        let bad = tiny_json().replace("\"seeds\"", "\"extra\": 1, \"seeds\"");
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(RcmlError::InvalidConfig(_))));
        let bad = tiny_json().replace("\"config_version\": 1", "\"config_version\": 2");
        assert!(ExperimentConfig::from_json(&bad).is_err());
        let bad = tiny_json().replace("[1, 2]", "[]");
        assert!(ExperimentConfig::from_json(&bad).is_err());
        let bad = tiny_json().replace("[0.0, 0.2]", "[0.7]");
        assert!(ExperimentConfig::from_json(&bad).is_err());
    }

    #[test]
    fn method_switches() {
        let w = LossWeights::default();
        let s = SwapConfig::from_noise_rate(0.3).unwrap();
        let (bw, bs, _) = Method::BceBaseline.adjust(w, s);
        assert_eq!((bw.lambda2, bw.lambda3, bs.gamma), (0.0, 0.0, 1.0));
        assert_eq!(Method::RcmlNoLasso.adjust(w, s).2.selection, Selection::Random);
        assert!(!Method::RcmlNoSwap.adjust(w, s).2.exchange);
        assert_eq!(Method::RcmlNoMmd.adjust(w, s).0.lambda2, 0.0);
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
        assert!(Method::parse("nope").is_err());
    }

    #[test]
    fn sweep_rows_and_order() {
        let cfg = ExperimentConfig::from_json(&tiny_json()).unwrap();
        let out = run_experiment(&cfg, None).unwrap();
        assert_eq!(out.runs.len(), 8);
        let keys: Vec<(Method, f64)> = out.aggregate.iter().map(|r| (r.method, r.noise_rate)).collect();
        assert_eq!(
            keys,
            vec![(Method::Rcml, 0.0), (Method::Rcml, 0.2), (Method::BceBaseline, 0.0), (Method::BceBaseline, 0.2)]
        );
        assert!(out.aggregate.iter().all(|r| r.runs == 2));
    }
}
