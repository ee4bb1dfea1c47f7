//! Integration tests for the training loop: smoke behavior, determinism,
//! gradient routing per mode, and mixed-branch inference.

use cgs_core::network::ModelConfig;
use cgs_core::pseudo::{ensemble_specialists, general_pseudo, ProbValues};
use cgs_core::synthdata::DatasetSpec;
use cgs_core::trainer::{infer, infer_samples, TrainConfig, TrainMode, Trainer};

fn tiny_config(mode: TrainMode, iterations: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        data: DatasetSpec {
            height: 16,
            width: 16,
            n_train: 20,
            n_val: 2,
            n_test: 2,
            labeled_ratio: 0.2,
            seed,
            ..DatasetSpec::default()
        },
        model: ModelConfig {
            base_channels: 2,
            ..ModelConfig::default()
        },
        iterations,
        labeled_per_batch: 2,
        unlabeled_per_batch: 2,
        eval_every: 25,
        mode,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn smoke_run_stays_finite_and_supervised_loss_trends_down() {
    let mut trainer = Trainer::new(tiny_config(TrainMode::Cgs, 50, 0)).unwrap();
    let mut sups = Vec::new();
    for _ in 0..50 {
        let log = trainer.step().unwrap();
        assert!(log.breakdown.is_finite(), "non-finite at {}", log.iter);
        assert!(log.breakdown.l_sup >= 0.0);
        assert!(log.breakdown.total >= 0.0);
        sups.push(log.breakdown.l_sup);
    }
    let first: f64 = sups[..10].iter().sum::<f64>() / 10.0;
    let last: f64 = sups[40..].iter().sum::<f64>() / 10.0;
    assert!(last < first, "supervised loss should trend down: {first} -> {last}");
}

#[test]
fn same_seed_produces_identical_logs_and_checkpoints() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let out_a = Trainer::new(tiny_config(TrainMode::Cgs, 30, 7))
        .unwrap()
        .train(dir_a.path())
        .unwrap();
    let out_b = Trainer::new(tiny_config(TrainMode::Cgs, 30, 7))
        .unwrap()
        .train(dir_b.path())
        .unwrap();
    assert_eq!(out_a.log_csv, out_b.log_csv);
    assert_eq!(
        std::fs::read(&out_a.checkpoint_path).unwrap(),
        std::fs::read(&out_b.checkpoint_path).unwrap()
    );
    let different = Trainer::new(tiny_config(TrainMode::Cgs, 30, 8))
        .unwrap()
        .train(tempfile::tempdir().unwrap().path())
        .unwrap()
        .log_csv;
    assert_ne!(out_a.log_csv, different);
}

#[test]
fn generalist_only_never_touches_specialist_parameters() {
    let mut trainer = Trainer::new(tiny_config(TrainMode::GeneralistOnly, 10, 1)).unwrap();
    let before: Vec<Vec<f64>> = trainer
        .pair()
        .student
        .specialist_parameters()
        .iter()
        .map(|(_, t)| t.values())
        .collect();
    for _ in 0..10 {
        let log = trainer.step().unwrap();
        assert_eq!(log.breakdown.l_sup_mh, 0.0);
        assert_eq!(log.breakdown.l_u_mh, 0.0);
        assert_eq!(log.breakdown.l_c1, 0.0);
    }
    for ((_, t), b) in trainer.pair().student.specialist_parameters().iter().zip(&before) {
        assert!(t.grad().is_none(), "specialist gradient should stay absent");
        assert_eq!(&t.values(), b, "specialist parameters should stay untouched");
    }
}

#[test]
fn cgs_mode_reaches_every_specialist_parameter() {
    let mut trainer = Trainer::new(tiny_config(TrainMode::Cgs, 50, 2)).unwrap();
    let mut touched: Vec<bool> = vec![false; trainer.pair().student.specialist_parameters().len()];
    for _ in 0..50 {
        trainer.step().unwrap();
        for (seen, (_, t)) in touched.iter_mut().zip(trainer.pair().student.specialist_parameters()) {
            if t.grad().is_some_and(|g| g.iter().any(|&v| v != 0.0)) {
                *seen = true;
            }
        }
    }
    let names: Vec<String> = trainer
        .pair()
        .student
        .specialist_parameters()
        .iter()
        .zip(&touched)
        .filter(|(_, &s)| !s)
        .map(|((n, _), _)| n.clone())
        .collect();
    assert!(names.is_empty(), "never saw gradient on: {names:?}");
}

#[test]
fn teacher_never_accumulates_gradients() {
    let mut trainer = Trainer::new(tiny_config(TrainMode::Cgs, 5, 3)).unwrap();
    for _ in 0..5 {
        trainer.step().unwrap();
        for t in trainer.pair().teacher.parameters() {
            assert!(t.grad().is_none());
        }
    }
}

#[test]
fn infer_mix_zero_matches_generalist_argmax() {
    let trainer = Trainer::new(tiny_config(TrainMode::Cgs, 5, 4)).unwrap();
    let samples = &trainer.dataset().test;
    let preds = infer_samples(&trainer.pair().teacher, samples, 0.0).unwrap();
    for (pred, sample) in preds.iter().zip(samples) {
        let input = cgs_tensor::Tensor::from_vec(&[16, 16, 1], sample.image.clone()).unwrap();
        let general = trainer
            .pair()
            .teacher
            .forward_general(&input, cgs_core::network::Mode::Eval)
            .unwrap();
        let (expected, _) = general_pseudo(&ProbValues::from_tensor(&general).unwrap()).unwrap();
        assert_eq!(pred.values(), expected.values());
    }
}

#[test]
fn infer_mix_one_matches_ensemble_argmax() {
    let trainer = Trainer::new(tiny_config(TrainMode::Cgs, 5, 5)).unwrap();
    let samples = &trainer.dataset().test;
    let preds = infer_samples(&trainer.pair().teacher, samples, 1.0).unwrap();
    for (pred, sample) in preds.iter().zip(samples) {
        let input = cgs_tensor::Tensor::from_vec(&[16, 16, 1], sample.image.clone()).unwrap();
        let (_, specialists) = trainer
            .pair()
            .teacher
            .forward_all(&input, cgs_core::network::Mode::Eval)
            .unwrap();
        let maps: Vec<ProbValues> = specialists
            .iter()
            .map(|t| ProbValues::from_tensor(t).unwrap())
            .collect();
        let (expected, _) = ensemble_specialists(&maps).unwrap();
        assert_eq!(pred.values(), expected.values());
    }
}

#[test]
fn infer_rejects_out_of_range_mix() {
    let trainer = Trainer::new(tiny_config(TrainMode::Cgs, 5, 6)).unwrap();
    let images = vec![trainer.dataset().test[0].image.clone()];
    assert!(infer(&trainer.pair().teacher, &images, 16, 16, -0.1).is_err());
    assert!(infer(&trainer.pair().teacher, &images, 16, 16, 1.5).is_err());
}

#[test]
fn training_writes_log_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = Trainer::new(tiny_config(TrainMode::Cgs, 25, 9))
        .unwrap()
        .train(dir.path())
        .unwrap();
    assert!(dir.path().join("train_log.csv").exists());
    assert!(outcome.checkpoint_path.exists());
    assert!(outcome.best_val_dsc.is_finite());
    let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 26);
    assert!(log.starts_with(cgs_core::trainer::LOG_HEADER));
}
