//! Per-class validation trajectory for one training run.

use cgs_core::metrics::evaluate;
use cgs_core::network::ModelConfig;
use cgs_core::synthdata::DatasetSpec;
use cgs_core::trainer::{infer_samples, TrainConfig, TrainMode, Trainer};
use cgs_core::LabelMap;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iterations: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let mode = if args.get(3).map(String::as_str) == Some("baseline") {
        TrainMode::GeneralistOnly
    } else {
        TrainMode::Cgs
    };
    let labeled_per_batch: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(4);
    let config = TrainConfig {
        data: DatasetSpec {
            height: 32,
            width: 32,
            seed,
            intensity_means: vec![0.15, 0.5, 0.8, 0.65],
            noise_std: 0.08,
            ..DatasetSpec::default()
        },
        model: ModelConfig {
            base_channels: 4,
            ..Default::default()
        },
        iterations,
        labeled_per_batch,
        mode,
        seed,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config).expect("trainer");
    for it in 0..iterations {
        let log = trainer.step().expect("step");
        if (it + 1) % 250 == 0 || it == 0 {
            let preds = infer_samples(&trainer.pair().teacher, &trainer.dataset().val, 0.0).unwrap();
            let gts: Vec<LabelMap> = trainer.dataset().val.iter().map(|s| s.label.clone()).collect();
            let report = evaluate(&preds, &gts, 3).unwrap();
            let per: Vec<f64> = report.per_class.iter().map(|c| (c.dsc * 1e3).round() / 1e3).collect();
            println!(
                "it {:4} val per-class {:?} | l_sup {:.3} l_sup_mh {:.3} c1 {:.3} c2 {:.3} c3 {:.3} conf {:.2} ihed {:.2} cons {:.2}",
                it + 1,
                per,
                log.breakdown.l_sup,
                log.breakdown.l_sup_mh,
                log.breakdown.l_c1,
                log.breakdown.l_c2,
                log.breakdown.l_c3,
                log.frac_conf,
                log.frac_ihed,
                log.frac_consensus
            );
        }
    }
}
