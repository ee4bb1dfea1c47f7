//! Training loop: weak/strong teacher-student batches, both branches'
//! losses, SGD with polynomial learning-rate decay, EMA teacher updates,
//! validation-based checkpoint selection, and inference with optional
//! branch mixing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cgs_tensor::{Real, Tensor};

use crate::augment::{apply_cutmix, apply_cutmix_channels, plan_cutmix, strong_augment, weak_augment};
use crate::derive_seed;
use crate::error::{CoreError, Result};
use crate::labels::LabelMap;
use crate::losses::{
    consistency_losses, supervised_losses, total_loss, unsupervised_losses, LossBreakdown,
    TotalLossTerms,
};
use crate::metrics::{evaluate, overlap_metrics, MetricsReport};
use crate::network::{save_checkpoint, CgsModel, Mode, ModelConfig, TeacherStudentPair};
use crate::pseudo::{
    apply_ihed, consensus_mask, ema_update, ensemble_specialists, general_pseudo, ihed,
    map_general_to_specialist, specialist_pseudo, ProbValues,
};
use crate::synthdata::{generate_dataset, DatasetSpec, Sample, SynthDataset};

const SEED_TAG_LOOP: u64 = 3;
const SEED_TAG_MODEL: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Cgs,
    GeneralistOnly,
}

impl TrainMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cgs" => Ok(TrainMode::Cgs),
            "generalist_only" => Ok(TrainMode::GeneralistOnly),
            other => Err(CoreError::InvalidConfig(format!(
                "mode must be cgs or generalist_only, got {other}"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::Cgs => "cgs",
            TrainMode::GeneralistOnly => "generalist_only",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub data: DatasetSpec,
    pub model: ModelConfig,
    pub iterations: usize,
    pub labeled_per_batch: usize,
    pub unlabeled_per_batch: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub tau: f64,
    pub lambda_max: f64,
    pub rampup_fraction: f64,
    pub ema_alpha: f64,
    pub cutmix_prob: f64,
    pub mode: TrainMode,
    pub seed: u64,
    /// Validation cadence in iterations (also the best-checkpoint cadence).
    pub eval_every: usize,
    /// Periodic checkpoint cadence; 0 keeps only the selected best.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            data: DatasetSpec::default(),
            model: ModelConfig::default(),
            iterations: 3000,
            labeled_per_batch: 4,
            unlabeled_per_batch: 4,
            lr0: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            tau: 0.9,
            lambda_max: 2.0,
            rampup_fraction: 0.3,
            ema_alpha: 0.99,
            cutmix_prob: 1.0,
            mode: TrainMode::Cgs,
            seed: 0,
            eval_every: 250,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        if self.data.num_classes != self.model.num_classes {
            return Err(CoreError::InvalidConfig(format!(
                "dataset has {} classes but model expects {}",
                self.data.num_classes, self.model.num_classes
            )));
        }
        if self.iterations == 0 {
            return Err(CoreError::InvalidConfig("iterations must be positive".into()));
        }
        if self.labeled_per_batch == 0 {
            return Err(CoreError::InvalidConfig("labeled_per_batch must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return Err(CoreError::InvalidConfig(format!("tau {} outside [0, 1)", self.tau)));
        }
        for (name, v, lo, hi) in [
            ("momentum", self.momentum, 0.0, 1.0),
            ("ema_alpha", self.ema_alpha, 0.0, 1.0),
            ("cutmix_prob", self.cutmix_prob, 0.0, 1.0),
            ("rampup_fraction", self.rampup_fraction, 0.0, 1.0),
        ] {
            if !(lo..=hi).contains(&v) {
                return Err(CoreError::InvalidConfig(format!("{name} {v} outside [{lo}, {hi}]")));
            }
        }
        if self.lr0 <= 0.0 || !self.lr0.is_finite() {
            return Err(CoreError::InvalidConfig("lr0 must be positive".into()));
        }
        if self.weight_decay < 0.0 || self.lambda_max < 0.0 {
            return Err(CoreError::InvalidConfig(
                "weight_decay and lambda_max must be >= 0".into(),
            ));
        }
        if self.eval_every == 0 {
            return Err(CoreError::InvalidConfig("eval_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Sigmoid-shaped ramp-up: lambda_max * exp(-5 (1 - min(t/T_r, 1))^2) with
/// T_r = rampup_fraction * total; exactly lambda_max from T_r onward.
pub fn lambda_rampup(iter: usize, total_iters: usize, rampup_fraction: f64, lambda_max: f64) -> f64 {
    let ramp = rampup_fraction * total_iters as f64;
    if ramp <= 0.0 || iter as f64 >= ramp {
        return lambda_max;
    }
    let progress = (iter as f64 / ramp).min(1.0);
    lambda_max * (-5.0 * (1.0 - progress).powi(2)).exp()
}

/// Polynomial decay: lr0 * (1 - iter/total)^0.9.
pub fn poly_lr(iter: usize, total_iters: usize, lr0: f64) -> f64 {
    lr0 * (1.0 - iter as f64 / total_iters as f64).powf(0.9)
}

/// Momentum-SGD state, one velocity buffer per parameter.
pub struct SgdState {
    velocities: Vec<Vec<Real>>,
}

impl SgdState {
    pub fn new(params: &[Tensor]) -> Self {
        SgdState {
            velocities: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }
}

/// One SGD step: v <- momentum v + (g + wd p); p <- p - lr v. Parameters
/// without a gradient buffer (untouched branches) are left alone.
pub fn sgd_step(
    params: &[Tensor],
    state: &mut SgdState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != state.velocities.len() {
        return Err(CoreError::InvalidConfig(
            "optimizer state does not match parameter list".into(),
        ));
    }
    let (lr, momentum, wd) = (lr as Real, momentum as Real, weight_decay as Real);
    for (param, velocity) in params.iter().zip(&mut state.velocities) {
        let Some(grad) = param.grad() else { continue };
        param.update_data(|data| {
            for ((p, v), g) in data.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = momentum * *v + (*g + wd * *p);
                *p -= lr * *v;
            }
        });
    }
    Ok(())
}

/// Per-iteration log entry; columns match the CSV contract.
#[derive(Debug, Clone)]
pub struct IterationLog {
    pub iter: usize,
    pub lr: f64,
    pub lambda: f64,
    pub breakdown: LossBreakdown,
    pub frac_conf: f64,
    pub frac_ihed: f64,
    pub frac_consensus: f64,
}

pub const LOG_HEADER: &str =
    "iter,lr,lambda,l_sup,l_sup_mh,l_u,l_u_mh,l_c1,l_c2,l_c3,total,frac_conf,frac_ihed,frac_consensus";

impl IterationLog {
    pub fn csv_row(&self) -> String {
        let b = &self.breakdown;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iter,
            self.lr,
            self.lambda,
            b.l_sup,
            b.l_sup_mh,
            b.l_u,
            b.l_u_mh,
            b.l_c1,
            b.l_c2,
            b.l_c3,
            b.total,
            self.frac_conf,
            self.frac_ihed,
            self.frac_consensus
        )
    }
}

pub struct TrainOutcome {
    pub log_csv: String,
    pub best_val_dsc: f64,
    pub best_iteration: usize,
    pub checkpoint_path: PathBuf,
}

fn mean_tensors(terms: Vec<Tensor>) -> Result<Tensor> {
    let n = terms.len();
    let mut it = terms.into_iter();
    let mut acc = it.next().ok_or_else(|| CoreError::Training("empty batch".into()))?;
    for t in it {
        acc = acc.add(&t)?;
    }
    Ok(acc.scale(1.0 / n as Real))
}

fn image_tensor(values: &[f64], h: usize, w: usize) -> Result<Tensor> {
    let data: Vec<Real> = values.iter().map(|&v| v as Real).collect();
    Tensor::from_vec(&[h, w, 1], data).map_err(Into::into)
}

pub struct Trainer {
    pub config: TrainConfig,
    dataset: SynthDataset,
    pair: TeacherStudentPair,
    sgd: SgdState,
    rng: ChaCha8Rng,
    iteration: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let dataset = generate_dataset(&config.data)?;
        if dataset.unlabeled.is_empty() {
            return Err(CoreError::InvalidConfig(
                "semi-supervised training needs unlabeled data".into(),
            ));
        }
        let pair =
            TeacherStudentPair::new(&config.model, derive_seed(config.seed, SEED_TAG_MODEL, 0))?;
        let sgd = SgdState::new(&pair.student.parameters());
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SEED_TAG_LOOP, 0));
        Ok(Trainer {
            config,
            dataset,
            pair,
            sgd,
            rng,
            iteration: 0,
        })
    }

    pub fn dataset(&self) -> &SynthDataset {
        &self.dataset
    }

    pub fn pair(&self) -> &TeacherStudentPair {
        &self.pair
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    fn sample_indices(&mut self, count: usize, len: usize) -> Vec<usize> {
        (0..count).map(|_| self.rng.random_range(0..len)).collect()
    }

    /// One optimization step. Gradients are cleared at the start and left
    /// in place afterwards so callers can audit them.
    pub fn step(&mut self) -> Result<IterationLog> {
        let total_iters = self.config.iterations;
        let it = self.iteration;
        if it >= total_iters {
            return Err(CoreError::Training("training already finished".into()));
        }
        let lr = poly_lr(it, total_iters, self.config.lr0);
        let lambda = lambda_rampup(it, total_iters, self.config.rampup_fraction, self.config.lambda_max);
        let cgs = self.config.mode == TrainMode::Cgs;
        let k = self.config.model.num_classes;

        for p in self.pair.student.parameters() {
            p.zero_grad();
        }

        // --- labeled branch: student on weak augmentation
        let labeled_idx = self.sample_indices(self.config.labeled_per_batch, self.dataset.labeled.len());
        let mut sup_terms = Vec::new();
        let mut sup_mh_terms = Vec::new();
        for &i in &labeled_idx {
            let sample = self.dataset.labeled[i].clone();
            let aug = weak_augment(
                &sample.image,
                sample.label.height,
                sample.label.width,
                Some(&sample.label),
                &mut self.rng,
            )?;
            let input = image_tensor(&aug.image, aug.height, aug.width)?;
            let label = aug.label.expect("labeled sample keeps its label");
            if cgs {
                let (general, specialists) = self.pair.student.forward_all(&input, Mode::Train)?;
                let (l_sup, l_sup_mh) = supervised_losses(&general, &specialists, &label)?;
                sup_terms.push(l_sup);
                sup_mh_terms.push(l_sup_mh);
            } else {
                let general = self.pair.student.forward_general(&input, Mode::Train)?;
                sup_terms.push(crate::losses::seg_loss_h(&general, &label.as_indices(), None)?);
            }
        }
        let l_sup = mean_tensors(sup_terms)?;
        let l_sup_mh = if cgs { mean_tensors(sup_mh_terms)? } else { Tensor::scalar(0.0) };

        // --- unlabeled branch: teacher on weak, student on strong
        let unlabeled_idx = self.sample_indices(self.config.unlabeled_per_batch, self.dataset.unlabeled.len());
        let mut strong_images = Vec::new();
        let mut teacher_general_planes: Vec<Vec<f64>> = Vec::new();
        // indexed [head][batch item]
        let mut teacher_spec_planes: Vec<Vec<Vec<f64>>> = vec![Vec::new(); if cgs { k } else { 0 }];
        let mut extents = (self.config.data.height, self.config.data.width);
        for &i in &unlabeled_idx {
            let sample = self.dataset.unlabeled[i].clone();
            let aug = weak_augment(
                &sample.image,
                self.config.data.height,
                self.config.data.width,
                None,
                &mut self.rng,
            )?;
            extents = (aug.height, aug.width);
            let input = image_tensor(&aug.image, aug.height, aug.width)?;
            let (strong, _) = strong_augment(&aug.image, &mut self.rng);
            strong_images.push(strong);
            if cgs {
                let (general, specialists) = self.pair.teacher.forward_all(&input, Mode::Eval)?;
                teacher_general_planes.push(general.values().iter().map(|&v| v as f64).collect());
                for (head, s) in specialists.iter().enumerate() {
                    teacher_spec_planes[head].push(s.values().iter().map(|&v| v as f64).collect());
                }
            } else {
                let general = self.pair.teacher.forward_general(&input, Mode::Eval)?;
                teacher_general_planes.push(general.values().iter().map(|&v| v as f64).collect());
            }
        }
        let (uh, uw) = extents;

        // one CutMix plan moves the strong image and every teacher product
        // together, so per-pixel correspondence survives the mixing
        let plan = plan_cutmix(strong_images.len(), uh, uw, self.config.cutmix_prob, &mut self.rng);
        apply_cutmix(&mut strong_images, uw, &plan);
        let gen_channels = k + 1;
        apply_cutmix_channels(&mut teacher_general_planes, uw, gen_channels, &plan);
        for head_planes in &mut teacher_spec_planes {
            apply_cutmix_channels(head_planes, uw, 3, &plan);
        }

        let mut u_terms = Vec::new();
        let mut u_mh_terms = Vec::new();
        let mut c1_terms = Vec::new();
        let mut c2_terms = Vec::new();
        let mut c3_terms = Vec::new();
        let mut frac_conf_acc = 0.0;
        let mut frac_ihed_acc = 0.0;
        let mut frac_consensus_acc = 0.0;
        for b in 0..strong_images.len() {
            let teacher_general = ProbValues {
                height: uh,
                width: uw,
                channels: gen_channels,
                values: teacher_general_planes[b].clone(),
            };
            let (gen_pseudo, gen_conf) = general_pseudo(&teacher_general)?;
            frac_conf_acc +=
                gen_conf.iter().filter(|&&c| c > self.config.tau).count() as f64 / gen_conf.len() as f64;

            let input = image_tensor(&strong_images[b], uh, uw)?;
            if cgs {
                let teacher_specialists: Vec<ProbValues> = (0..k)
                    .map(|s| ProbValues {
                        height: uh,
                        width: uw,
                        channels: 3,
                        values: teacher_spec_planes[s][b].clone(),
                    })
                    .collect();

                let (student_general, student_specialists) =
                    self.pair.student.forward_all(&input, Mode::Train)?;
                let (l_u, l_u_mh) = unsupervised_losses(
                    &student_general,
                    &student_specialists,
                    &teacher_general,
                    &teacher_specialists,
                    self.config.tau,
                )?;
                u_terms.push(l_u);
                u_mh_terms.push(l_u_mh);

                let head_labels: Vec<Vec<u8>> = teacher_specialists
                    .iter()
                    .map(|q| specialist_pseudo(q).map(|(l, _)| l))
                    .collect::<Result<_>>()?;
                let (ensemble_label, _) = ensemble_specialists(&teacher_specialists)?;
                let m_d = ihed(&head_labels, uh, uw)?;
                let (b_prime, valid) = apply_ihed(&ensemble_label, &m_d)?;
                let b_k = (1..=k)
                    .map(|s| map_general_to_specialist(&gen_pseudo, s))
                    .collect::<Result<Vec<_>>>()?;
                let m_c = consensus_mask(&gen_pseudo, &ensemble_label)?;
                let a_k = (1..=k)
                    .map(|s| map_general_to_specialist(&ensemble_label, s))
                    .collect::<Result<Vec<_>>>()?;
                frac_ihed_acc += m_d.fraction();
                frac_consensus_acc += m_c.fraction();

                let (l_c1, l_c2, l_c3) = consistency_losses(
                    &student_general,
                    &student_specialists,
                    &b_prime,
                    &valid,
                    &b_k,
                    &m_c,
                    &ensemble_label,
                    &a_k,
                )?;
                c1_terms.push(l_c1);
                c2_terms.push(l_c2);
                c3_terms.push(l_c3);
            } else {
                let student_general = self.pair.student.forward_general(&input, Mode::Train)?;
                let mask = crate::pseudo::PixelMask::new(
                    uh,
                    uw,
                    gen_conf.iter().map(|&c| c > self.config.tau).collect(),
                )?;
                u_terms.push(crate::losses::seg_loss_h(
                    &student_general,
                    &gen_pseudo.as_indices(),
                    Some(&mask),
                )?);
            }
        }
        let batch = strong_images.len() as f64;
        let l_u = mean_tensors(u_terms)?;
        let (l_u_mh, l_c1, l_c2, l_c3) = if cgs {
            (
                mean_tensors(u_mh_terms)?,
                mean_tensors(c1_terms)?,
                mean_tensors(c2_terms)?,
                mean_tensors(c3_terms)?,
            )
        } else {
            (
                Tensor::scalar(0.0),
                Tensor::scalar(0.0),
                Tensor::scalar(0.0),
                Tensor::scalar(0.0),
            )
        };

        let (total, breakdown) = total_loss(
            TotalLossTerms {
                l_sup: &l_sup,
                l_sup_mh: &l_sup_mh,
                l_u: &l_u,
                l_u_mh: &l_u_mh,
                l_c1: &l_c1,
                l_c2: &l_c2,
                l_c3: &l_c3,
            },
            lambda,
        )?;
        if !breakdown.is_finite() {
            return Err(CoreError::Training(format!(
                "non-finite loss at iteration {it}: {breakdown:?}; labeled batch {labeled_idx:?}, \
                 unlabeled batch {unlabeled_idx:?}"
            )));
        }

        total.backward().map_err(CoreError::from)?;
        sgd_step(
            &self.pair.student.parameters(),
            &mut self.sgd,
            lr,
            self.config.momentum,
            self.config.weight_decay,
        )?;
        ema_update(&self.pair.teacher, &self.pair.student, self.config.ema_alpha)?;

        self.iteration += 1;
        Ok(IterationLog {
            iter: it,
            lr,
            lambda,
            breakdown,
            frac_conf: frac_conf_acc / batch,
            frac_ihed: if cgs { frac_ihed_acc / batch } else { 0.0 },
            frac_consensus: if cgs { frac_consensus_acc / batch } else { 0.0 },
        })
    }

    /// Mean validation DSC of the deployment path (teacher generalist).
    pub fn validate(&self) -> Result<f64> {
        let preds = infer_samples(&self.pair.teacher, &self.dataset.val, 0.0)?;
        let gts: Vec<LabelMap> = self.dataset.val.iter().map(|s| s.label.clone()).collect();
        mean_dsc(&preds, &gts, self.config.model.num_classes)
    }

    /// Full loop with CSV logging and validation-based best selection.
    pub fn train(&mut self, out_dir: &Path) -> Result<TrainOutcome> {
        fs::create_dir_all(out_dir)?;
        let mut log = String::with_capacity(self.config.iterations * 160);
        log.push_str(LOG_HEADER);
        log.push('\n');
        let checkpoint_path = out_dir.join("best.ckpt");
        let mut best = (f64::NEG_INFINITY, 0usize);
        while self.iteration < self.config.iterations {
            let entry = match self.step() {
                Ok(entry) => entry,
                Err(e) => {
                    let dump = out_dir.join("abort_dump.txt");
                    let _ = fs::write(&dump, format!("{e}\npartial log:\n{log}"));
                    return Err(e);
                }
            };
            writeln!(log, "{}", entry.csv_row()).expect("write to string");

            let due = self.iteration.is_multiple_of(self.config.eval_every)
                || self.iteration == self.config.iterations;
            if due {
                let val_dsc = self.validate()?;
                if val_dsc > best.0 {
                    best = (val_dsc, self.iteration);
                    save_checkpoint(
                        &checkpoint_path,
                        &self.pair,
                        &[
                            ("iteration".into(), vec![self.iteration as f64]),
                            ("val_dsc".into(), vec![val_dsc]),
                        ],
                    )?;
                }
            }
            if self.config.checkpoint_every > 0 && self.iteration.is_multiple_of(self.config.checkpoint_every) {
                save_checkpoint(
                    &out_dir.join(format!("iter_{:06}.ckpt", self.iteration)),
                    &self.pair,
                    &[("iteration".into(), vec![self.iteration as f64])],
                )?;
            }
        }
        fs::write(out_dir.join("train_log.csv"), &log)?;
        Ok(TrainOutcome {
            log_csv: log,
            best_val_dsc: best.0,
            best_iteration: best.1,
            checkpoint_path,
        })
    }
}

/// Label maps from mixed-branch inference: the output probability is
/// (1 - m) * generalist + m * normalized specialist-ensemble scores;
/// m = 0 is the deployment path and skips the specialists entirely.
pub fn infer(
    model: &CgsModel,
    images: &[Vec<f64>],
    height: usize,
    width: usize,
    mix_ratio: f64,
) -> Result<Vec<LabelMap>> {
    if !(0.0..=1.0).contains(&mix_ratio) {
        return Err(CoreError::InvalidConfig(format!(
            "mix_ratio {mix_ratio} outside [0, 1]"
        )));
    }
    let k = model.num_classes();
    images
        .iter()
        .map(|image| {
            let input = image_tensor(image, height, width)?;
            if mix_ratio == 0.0 {
                let general = ProbValues::from_tensor(&model.forward_general(&input, Mode::Eval)?)?;
                return Ok(general_pseudo(&general)?.0);
            }
            let (general_t, specialist_t) = model.forward_all(&input, Mode::Eval)?;
            let general = ProbValues::from_tensor(&general_t)?;
            let specialists = specialist_t
                .iter()
                .map(ProbValues::from_tensor)
                .collect::<Result<Vec<_>>>()?;
            let (_, scores) = ensemble_specialists(&specialists)?;
            let mut mixed = ProbValues {
                height,
                width,
                channels: k + 1,
                values: vec![0.0; height * width * (k + 1)],
            };
            for p in 0..general.pixels() {
                let g = general.pixel(p);
                let s = scores.pixel(p);
                let z: f64 = s.iter().sum();
                let out = &mut mixed.values[p * (k + 1)..(p + 1) * (k + 1)];
                for c in 0..=k {
                    out[c] = (1.0 - mix_ratio) * g[c] + mix_ratio * s[c] / z;
                }
            }
            Ok(general_pseudo(&mixed)?.0)
        })
        .collect()
}

pub fn infer_samples(model: &CgsModel, samples: &[Sample], mix_ratio: f64) -> Result<Vec<LabelMap>> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let images: Vec<Vec<f64>> = samples.iter().map(|s| s.image.clone()).collect();
    let (h, w) = (samples[0].label.height, samples[0].label.width);
    infer(model, &images, h, w, mix_ratio)
}

/// Full metric report of a model on a sample set at a given mixing ratio.
pub fn evaluate_samples(model: &CgsModel, samples: &[Sample], mix_ratio: f64) -> Result<MetricsReport> {
    let preds = infer_samples(model, samples, mix_ratio)?;
    let gts: Vec<LabelMap> = samples.iter().map(|s| s.label.clone()).collect();
    evaluate(&preds, &gts, samples[0].label.num_classes)
}

fn mean_dsc(preds: &[LabelMap], gts: &[LabelMap], num_classes: usize) -> Result<f64> {
    let mut acc = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        for class in 1..=num_classes {
            acc += overlap_metrics(p, g, class)?.0;
        }
    }
    Ok(acc / (preds.len() * num_classes) as f64)
}
