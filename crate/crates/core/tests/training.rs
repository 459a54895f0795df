use rcml::collab::{train, DiscrepancyScope, LossWeights, SwapConfig, TrainConfig};
use rcml::dataset::{generate_synthetic, split, SplitSpec, SyntheticSpec};
use rcml::experiment::{prepare_data, run_one, ExperimentConfig, Method};
use rcml::nn::{init_pair, MlpConfig, SgdConfig};
use rcml::noise::{inject_rns, rate_to_spec};

fn setup(epochs: usize) -> (rcml::nn::NetworkPair, rcml::dataset::MultiLabelDataset, rcml::dataset::MultiLabelDataset, TrainConfig) {
    let spec = SyntheticSpec { n: 300, num_classes: 5, dim: 6, ..SyntheticSpec::reference(3) };
    let ds = generate_synthetic(&spec).unwrap();
    let (mut tr, val, _) =
        split(&ds, &SplitSpec { train_fraction: 0.6, val_fraction: 0.2, test_fraction: 0.2, seed: 2 }).unwrap();
    let (noisy, _) = inject_rns(&tr.labels, &rate_to_spec(0.2, 8).unwrap()).unwrap();
    tr.clean_labels = Some(tr.labels.clone());
    tr.labels = noisy;
    let pair = init_pair(&MlpConfig::new(6, &[16, 8], 5), 10, 11).unwrap();
    let cfg = TrainConfig {
        sgd: SgdConfig { initial_lr: 0.3, decay: 0.95, batch_size: 32, epochs },
        bandwidth: Default::default(),
        lasso: Default::default(),
        swap: SwapConfig::from_noise_rate(0.2).unwrap(),
        weights: LossWeights::default(),
        ablation: Default::default(),
        discrepancy_scope: DiscrepancyScope::Full,
        seed: 4,
    };
    (pair, tr, val, cfg)
}

#[test]
fn training_is_deterministic() {
    let (pair, tr, val, cfg) = setup(4);
    let (a, ra) = train(&pair, &tr, &val, &cfg, None).unwrap();
    let (b, rb) = train(&pair, &tr, &val, &cfg, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra.epochs_csv(), rb.epochs_csv());
    assert_eq!(ra.epochs.len(), 4);
}

#[test]
fn zero_epochs_leave_parameters_untouched() {
    let (pair, tr, val, cfg) = setup(0);
    let (out, report) = train(&pair, &tr, &val, &cfg, None).unwrap();
    assert_eq!(out, pair);
    assert!(report.epochs.is_empty());
}

#[test]
fn different_train_seeds_diverge() {
    let (pair, tr, val, cfg) = setup(2);
    let (a, _) = train(&pair, &tr, &val, &cfg, None).unwrap();
    let (b, _) = train(&pair, &tr, &val, &TrainConfig { seed: 99, ..cfg }, None).unwrap();
    assert_ne!(a, b);
}

#[test]
fn rcml_run_reports_detection_and_clean_test_metrics() {
    let json = serde_json::json!({
        "config_version": 1,
        "dataset": {"synthetic": {
            "n": 300, "num_classes": 5, "dim": 6, "prototypes_per_class": 2,
            "label_radius": 2.2, "feature_noise_sigma": 0.3, "seed": 9
        }},
        "split": {"train_fraction": 0.6, "val_fraction": 0.2, "test_fraction": 0.2, "seed": 1},
        "noise_rates": [0.3],
        "methods": ["rcml"],
        "model": {"hidden": [16, 8]},
        "sgd": {"initial_lr": 0.3, "decay": 0.95, "batch_size": 32, "epochs": 5},
        "seeds": [2],
        "output_dir": "unused"
    });
    let cfg = ExperimentConfig::from_json(&json.to_string()).unwrap();
    let data = prepare_data(&cfg).unwrap();
    let run = run_one(&cfg, &data, Method::Rcml, 0, 2).unwrap();
    assert!((run.result.gamma - 0.7).abs() < 1e-12);
    let det = run.result.detection.as_ref().unwrap();
    // 60% of 180 training samples are noisy; 30% are flagged
    assert_eq!(det.noisy_count, 108);
    assert_eq!(det.flagged_count, 54);
    assert!(det.recall <= 0.5 + 1e-12);
    assert!((0.0..=1.0).contains(&run.result.test.map_macro));
    assert_eq!(run.train_report.epochs.len(), 5);
}
