//! Rough per-iteration timing probe for training configurations.

use std::time::Instant;

use cgs_core::synthdata::DatasetSpec;
use cgs_core::trainer::{TrainConfig, TrainMode, Trainer};

fn time_config(name: &str, config: TrainConfig) {
    let mut trainer = Trainer::new(config).expect("trainer");
    // warm up
    for _ in 0..3 {
        trainer.step().expect("step");
    }
    let n = 20;
    let start = Instant::now();
    for _ in 0..n {
        trainer.step().expect("step");
    }
    let per_iter = start.elapsed().as_secs_f64() / n as f64;
    println!("{name}: {:.1} ms/iter -> 3000 iters ~ {:.1} s", per_iter * 1e3, per_iter * 3000.0);
}

fn main() {
    let base = |h: usize, ch: usize, mode: TrainMode| TrainConfig {
        data: DatasetSpec {
            height: h,
            width: h,
            n_train: 40,
            n_val: 4,
            n_test: 4,
            ..DatasetSpec::default()
        },
        model: cgs_core::network::ModelConfig {
            base_channels: ch,
            ..Default::default()
        },
        mode,
        ..TrainConfig::default()
    };
    time_config("cgs 32x32 base4", base(32, 4, TrainMode::Cgs));
    time_config("cgs 32x32 base6", base(32, 6, TrainMode::Cgs));
    time_config("cgs 32x32 base8", base(32, 8, TrainMode::Cgs));
    time_config("baseline 32x32 base4", base(32, 4, TrainMode::GeneralistOnly));
    time_config("cgs 64x64 base8", base(64, 8, TrainMode::Cgs));
}
