use rcml::collab::{estimate_noise_rate, DiscrepancyScope, EstimatorConfig, LossWeights, SwapConfig, TrainConfig};
use rcml::dataset::{generate_synthetic, split, MultiLabelDataset, SplitSpec, SyntheticSpec};
use rcml::nn::{MlpConfig, SgdConfig};
use rcml::noise::{inject_rns, rate_to_spec};

fn noisy_data(rate: f64) -> MultiLabelDataset {
    let ds = generate_synthetic(&SyntheticSpec::reference(7)).unwrap();
    let spec = SplitSpec { train_fraction: 0.6, val_fraction: 0.2, test_fraction: 0.2, seed: 11 };
    let (mut tr, _, _) = split(&ds, &spec).unwrap();
    if rate > 0.0 {
        let (noisy, _) = inject_rns(&tr.labels, &rate_to_spec(rate, 3).unwrap()).unwrap();
        tr.clean_labels = Some(tr.labels.clone());
        tr.labels = noisy;
    }
    tr
}

fn base() -> TrainConfig {
    TrainConfig {
        sgd: SgdConfig { initial_lr: 0.5, decay: 0.99, batch_size: 64, epochs: 40 },
        bandwidth: Default::default(),
        lasso: Default::default(),
        swap: SwapConfig::fixed(1.0).unwrap(),
        weights: LossWeights::default(),
        ablation: Default::default(),
        discrepancy_scope: DiscrepancyScope::Full,
        seed: 1,
    }
}

fn model() -> MlpConfig {
    MlpConfig::new(16, &[128, 64], 8)
}

#[test]
fn single_candidate_is_returned() {
    let est = EstimatorConfig { candidates: vec![0.2], warmup_epochs: 1, ..Default::default() };
    let ds = noisy_data(0.3);
    let r = estimate_noise_rate(&ds, &model(), &base(), &est).unwrap();
    assert_eq!(r.rate, 0.2);
    assert_eq!(r.scores.len(), 1);
}

#[test]
fn estimate_is_deterministic() {
    let est = EstimatorConfig { candidates: vec![0.0, 0.2, 0.4], warmup_epochs: 2, ..Default::default() };
    let ds = noisy_data(0.2);
    let a = estimate_noise_rate(&ds, &model(), &base(), &est).unwrap();
    let b = estimate_noise_rate(&ds, &model(), &base(), &est).unwrap();
    assert_eq!(a, b);
}

#[test]
fn recovers_injected_rate_within_a_tenth() {
    let ds = noisy_data(0.3);
    let r = estimate_noise_rate(&ds, &model(), &base(), &EstimatorConfig::default()).unwrap();
    assert!((r.rate - 0.3).abs() <= 0.1 + 1e-12, "estimated {} from {:?}", r.rate, r.scores);
}

#[test]
fn clean_data_estimates_low() {
    let ds = noisy_data(0.0);
    let r = estimate_noise_rate(&ds, &model(), &base(), &EstimatorConfig::default()).unwrap();
    assert!(r.rate <= 0.1 + 1e-12, "estimated {} from {:?}", r.rate, r.scores);
}
