//! Directional-experiment probe: train both modes on the scale-imbalanced
//! synthetic dataset and compare per-class test DSC.
//!
//! args: iterations seeds(csv) mean3 rampup labeled_per_batch [cgs_only]

use cgs_core::network::ModelConfig;
use cgs_core::synthdata::DatasetSpec;
use cgs_core::trainer::{evaluate_samples, TrainConfig, TrainMode, Trainer};

struct Params {
    iterations: usize,
    mean3: f64,
    rampup: f64,
    labeled: usize,
}

fn run(mode: TrainMode, seed: u64, p: &Params) -> (f64, Vec<f64>) {
    let data_seed: u64 = std::env::var("DATA_SEED").ok().and_then(|v| v.parse().ok()).unwrap_or(seed);
    let n_train: usize = std::env::var("N_TRAIN").ok().and_then(|v| v.parse().ok()).unwrap_or(200);
    let config = TrainConfig {
        data: DatasetSpec {
            height: 32,
            width: 32,
            n_train,
            seed: data_seed,
            intensity_means: vec![0.15, 0.5, 0.8, p.mean3],
            noise_std: 0.08,
            ..DatasetSpec::default()
        },
        model: ModelConfig {
            base_channels: 4,
            ..Default::default()
        },
        iterations: p.iterations,
        labeled_per_batch: p.labeled,
        rampup_fraction: p.rampup,
        mode,
        seed,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config).expect("trainer");
    let out = tempfile::tempdir().expect("tmp");
    trainer.train(out.path()).expect("train");
    let best = cgs_core::network::load_checkpoint(&out.path().join("best.ckpt")).expect("ckpt");
    let report = evaluate_samples(&best.pair.teacher, &trainer.dataset().test, 0.0).expect("eval");
    (report.mean_dsc, report.per_class.iter().map(|c| c.dsc).collect())
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let p = Params {
        iterations: args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3000),
        mean3: args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.62),
        rampup: args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.3),
        labeled: args.get(5).and_then(|s| s.parse().ok()).unwrap_or(4),
    };
    let seeds: Vec<u64> = args
        .get(2)
        .map(|s| s.split(',').map(|v| v.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![0, 1, 2]);
    let cgs_only = args.get(6).map(String::as_str) == Some("cgs_only");
    println!(
        "mean3 {} rampup {} labeled {} iterations {}",
        p.mean3, p.rampup, p.labeled, p.iterations
    );
    for &seed in &seeds {
        let t0 = std::time::Instant::now();
        let (cgs_dsc, cgs_per) = run(TrainMode::Cgs, seed, &p);
        if cgs_only {
            println!("seed {seed} ({}s): cgs mean {cgs_dsc:.4} per-class {cgs_per:.4?}", t0.elapsed().as_secs());
            continue;
        }
        let (base_dsc, base_per) = run(TrainMode::GeneralistOnly, seed, &p);
        println!(
            "seed {seed} ({}s): cgs mean {cgs_dsc:.4} {cgs_per:.4?} | baseline mean {base_dsc:.4} {base_per:.4?}",
            t0.elapsed().as_secs()
        );
    }
}
