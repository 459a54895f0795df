use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rcml::collab::{diagnose, EstimatorConfig};
use rcml::dataset::{generate_synthetic, load_dataset, write_labels_csv, SyntheticSpec};
use rcml::eval::map_scores;
use rcml::experiment::{
    aggregate_csv, prepare_data, run_experiment, run_one, write_run, ExperimentConfig, Method, SwapRateSource,
};
use rcml::nn::{Checkpoint, Network, NetworkPair};
use rcml::noise::{inject_rns, rate_to_spec, LedgerFile};
use rcml::ranking::LassoConfig;
use rcml::{RcmlError, Result};

#[derive(Parser)]
#[command(name = "rcml", version, about = "Noise-robust collaborative multi-label training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-label dataset.
    GenData {
        /// Synthetic spec as JSON; the reference benchmark when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Corrupt a label file with random noise per sample.
    InjectNoise {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        noise_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one pair (the first method, rate and seed of the config).
    Train(RunArgs),
    /// Score a checkpoint on a labeled dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank samples by suspected label noise with a trained pair.
    Diagnose {
        #[arg(long)]
        checkpoint_f: PathBuf,
        #[arg(long)]
        checkpoint_g: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Ledger of injected noise, for detection metrics.
        #[arg(long)]
        ledger: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 3)]
        top_k: usize,
        #[arg(long, default_value_t = 0.2)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep noise rates, methods and seeds.
    Experiment(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Runs only this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Runs only this method.
    #[arg(long)]
    method: Option<String>,
    /// Runs only this noise rate.
    #[arg(long)]
    noise_rate: Option<f64>,
    /// Sets the swap rate from a cross-validated noise-rate estimate.
    #[arg(long)]
    estimate_noise_rate: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::read(&self.config)?;
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(m) = &self.method {
            cfg.methods = vec![Method::parse(m)?];
        }
        if let Some(r) = self.noise_rate {
            cfg.noise_rates = vec![r];
        }
        if self.estimate_noise_rate && !matches!(cfg.swap_rate, SwapRateSource::Estimated(_)) {
            cfg.swap_rate = SwapRateSource::Estimated(EstimatorConfig::default());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| RcmlError::Io { path: path.to_path_buf(), source: e })
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| RcmlError::Io { path: path.to_path_buf(), source: e })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| RcmlError::Io { path: path.to_path_buf(), source: e })?;
    serde_json::from_str(&text).map_err(|e| RcmlError::InvalidConfig(format!("{}: {e}", path.display())))
}

fn load_net(path: &Path) -> Result<Network> {
    Network::from_checkpoint(&Checkpoint::read(path)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, seed, out } => {
            let mut spec = match config {
                Some(p) => read_json::<SyntheticSpec>(&p)?,
                None => SyntheticSpec::reference(0),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let ds = generate_synthetic(&spec)?;
            mkdir(&out)?;
            ds.write_csv(&out.join("features.csv"), &out.join("labels.csv"))?;
            println!("wrote {} samples × {} classes to {}", ds.len(), ds.num_classes(), out.display());
        }
        Command::InjectNoise { features, labels, noise_rate, seed, out } => {
            let ds = load_dataset(&features, &labels)?;
            let spec = rate_to_spec(noise_rate, seed)?;
            let (noisy, ledger) = inject_rns(&ds.labels, &spec)?;
            mkdir(&out)?;
            write_labels_csv(&out.join("labels.csv"), &ds.sample_ids, &ds.class_names, &noisy)?;
            write_labels_csv(&out.join("clean_labels.csv"), &ds.sample_ids, &ds.class_names, &ds.labels)?;
            ledger.to_file(&ds.sample_ids, &ds.class_names, &spec).write(&out.join("noise_ledger.json"))?;
            println!("flipped {} labels in {} samples", ledger.flips.len(), ledger.noisy_samples.len());
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let data = prepare_data(&cfg)?;
            let run = run_one(&cfg, &data, cfg.methods[0], 0, cfg.seeds[0])?;
            write_run(&cfg.output_dir, &cfg, &run)?;
            let r = &run.result;
            println!(
                "{} rate={} seed={} gamma={} selected={:?}: f1_micro={:.4} map_micro={:.4} map_macro={:.4}",
                r.method, r.noise_rate, r.seed, r.gamma, r.selected, r.test.f1_micro, r.test.map_micro, r.test.map_macro
            );
        }
        Command::Evaluate { checkpoint, features, labels, out } => {
            let net = load_net(&checkpoint)?;
            let ds = load_dataset(&features, &labels)?;
            let report = map_scores(&net.predict_proba(&ds.features)?, &ds.labels)?;
            let csv = report.to_csv(&ds.class_names);
            if let Some(dir) = out {
                mkdir(&dir)?;
                write(&dir.join("metrics.csv"), &csv)?;
                write(&dir.join("metrics.json"), &serde_json::to_string_pretty(&report)?)?;
            }
            print!("{csv}");
        }
        Command::Diagnose { checkpoint_f, checkpoint_g, features, labels, ledger, gamma, top_k, alpha, out } => {
            let pair = NetworkPair { f: load_net(&checkpoint_f)?, g: load_net(&checkpoint_g)? };
            let ds = load_dataset(&features, &labels)?;
            let ledger = match ledger {
                Some(p) => Some(LedgerFile::read(&p)?.resolve(&ds.sample_ids, &ds.class_names)?),
                None => None,
            };
            let report = diagnose(&pair, &ds, &LassoConfig::with_alpha(alpha)?, top_k, ledger.as_ref(), gamma)?;
            mkdir(&out)?;
            report.write(&out.join("noise_report.json"), &out.join("noise_report.csv"), &ds.class_names)?;
            match &report.detection {
                Some(d) => println!(
                    "flagged {} samples: precision={:.4} recall={:.4} auc={}",
                    d.flagged_count,
                    d.precision,
                    d.recall,
                    d.auc.map_or("n/a".to_string(), |a| format!("{a:.4}"))
                ),
                None => println!("flagged {} samples", report.flagged.len()),
            }
        }
        Command::Experiment(args) => {
            let cfg = args.resolve()?;
            let outcome = run_experiment(&cfg, Some(&cfg.output_dir))?;
            print!("{}", aggregate_csv(&outcome.aggregate));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
