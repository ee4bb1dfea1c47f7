//! Encoder-decoder backbone with one generalist head and K specialist
//! (projector + head) pairs, duplicated as student and teacher.
//!
//! The backbone is a small UNet: per encoder level one conv-BN-ReLU block
//! followed by 2x2 max pooling, and per decoder level 2x nearest-neighbor
//! upsampling, a skip concatenation, and another conv-BN-ReLU block. All
//! heads run on the shared full-resolution feature map, so one backbone
//! evaluation serves the generalist and every specialist.

use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use cgs_tensor::{
    batch_norm_eval, batch_norm_train, bias_add, conv2d, max_pool2, softmax_last,
    upsample_nearest2, Real, Tensor,
};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub struct Conv2dLayer {
    pub name: String,
    pub kernel: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dLayer {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut out = conv2d(x, &self.kernel, self.stride, self.padding)?;
        if let Some(b) = &self.bias {
            out = bias_add(&out, b)?;
        }
        Ok(out)
    }
}

pub struct BatchNorm2d {
    pub name: String,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: RefCell<Vec<Real>>,
    pub running_var: RefCell<Vec<Real>>,
    pub momentum: Real,
    pub eps: Real,
}

impl BatchNorm2d {
    fn new(name: String, channels: usize, trainable: bool) -> Self {
        let gamma = make_leaf(&[channels], vec![1.0; channels], trainable);
        let beta = make_leaf(&[channels], vec![0.0; channels], trainable);
        BatchNorm2d {
            name,
            gamma,
            beta,
            running_mean: RefCell::new(vec![0.0; channels]),
            running_var: RefCell::new(vec![1.0; channels]),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::Train => {
                let out = batch_norm_train(x, &self.gamma, &self.beta, self.eps)?;
                let mut mean = self.running_mean.borrow_mut();
                let mut var = self.running_var.borrow_mut();
                for (r, b) in mean.iter_mut().zip(&out.batch_mean) {
                    *r = (1.0 - self.momentum) * *r + self.momentum * b;
                }
                for (r, b) in var.iter_mut().zip(&out.batch_var) {
                    *r = (1.0 - self.momentum) * *r + self.momentum * b;
                }
                Ok(out.output)
            }
            Mode::Eval => batch_norm_eval(
                x,
                &self.gamma,
                &self.beta,
                &self.running_mean.borrow(),
                &self.running_var.borrow(),
                self.eps,
            )
            .map_err(Into::into),
        }
    }
}

fn make_leaf(shape: &[usize], data: Vec<Real>, trainable: bool) -> Tensor {
    if trainable {
        Tensor::param(shape, data).expect("shape/data agree")
    } else {
        Tensor::from_vec(shape, data).expect("shape/data agree")
    }
}

/// conv (no bias) -> batch norm -> ReLU
pub struct ConvBlock {
    pub conv: Conv2dLayer,
    pub bn: BatchNorm2d,
}

impl ConvBlock {
    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(self.bn.forward(&self.conv.forward(x)?, mode)?.relu())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub in_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_classes: 3,
            in_channels: 1,
            base_channels: 8,
            depth: 3,
        }
    }
}

pub struct CgsModel {
    pub config: ModelConfig,
    encoder: Vec<ConvBlock>,
    decoder: Vec<ConvBlock>,
    general_head: Conv2dLayer,
    projectors: Vec<ConvBlock>,
    specialist_heads: Vec<Conv2dLayer>,
    backbone_evals: Cell<u64>,
}

struct Init<'a> {
    rng: Option<&'a mut ChaCha8Rng>,
    trainable: bool,
}

impl Init<'_> {
    fn conv(&mut self, name: &str, kh: usize, kw: usize, cin: usize, cout: usize, with_bias: bool) -> Conv2dLayer {
        let fan_in = (kh * kw * cin) as Real;
        let n = kh * kw * cin * cout;
        let data = match self.rng.as_deref_mut() {
            Some(rng) => {
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive deviation");
                (0..n).map(|_| normal.sample(rng)).collect()
            }
            None => vec![0.0; n],
        };
        Conv2dLayer {
            name: name.to_string(),
            kernel: make_leaf(&[kh, kw, cin, cout], data, self.trainable),
            bias: with_bias.then(|| make_leaf(&[cout], vec![0.0; cout], self.trainable)),
            stride: 1,
            padding: (kh - 1) / 2,
        }
    }

    fn block(&mut self, name: &str, kh: usize, cin: usize, cout: usize) -> ConvBlock {
        ConvBlock {
            conv: self.conv(&format!("{name}.conv"), kh, kh, cin, cout, false),
            bn: BatchNorm2d::new(format!("{name}.bn"), cout, self.trainable),
        }
    }
}

/// Deterministic He fan-in initialization from a seed.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<CgsModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CgsModel::build(
        config,
        Init {
            rng: Some(&mut rng),
            trainable: true,
        },
    )
}

impl CgsModel {
    fn build(config: &ModelConfig, mut init: Init<'_>) -> Result<CgsModel> {
        let k = config.num_classes;
        if k < 3 {
            return Err(CoreError::InvalidConfig(format!(
                "need at least 3 target classes, got {k}"
            )));
        }
        if config.depth < 2 {
            return Err(CoreError::InvalidConfig(format!(
                "depth must be at least 2, got {}",
                config.depth
            )));
        }
        if config.in_channels == 0 || config.base_channels == 0 {
            return Err(CoreError::InvalidConfig("channel counts must be positive".into()));
        }
        let width = |level: usize| config.base_channels << level;

        let encoder = (0..config.depth)
            .map(|i| {
                let cin = if i == 0 { config.in_channels } else { width(i - 1) };
                init.block(&format!("enc{i}"), 3, cin, width(i))
            })
            .collect();
        let decoder = (0..config.depth - 1)
            .map(|i| {
                let deep = config.depth - 1 - i;
                init.block(&format!("dec{i}"), 3, width(deep) + width(deep - 1), width(deep - 1))
            })
            .collect();
        let general_head = init.conv("general_head", 1, 1, config.base_channels, k + 1, true);
        let mut projectors = Vec::with_capacity(k);
        let mut specialist_heads = Vec::with_capacity(k);
        for s in 1..=k {
            projectors.push(init.block(&format!("proj{s}"), 1, config.base_channels, config.base_channels));
            specialist_heads.push(init.conv(&format!("spec{s}"), 1, 1, config.base_channels, 3, true));
        }
        Ok(CgsModel {
            config: config.clone(),
            encoder,
            decoder,
            general_head,
            projectors,
            specialist_heads,
            backbone_evals: Cell::new(0),
        })
    }

    /// Fresh model with the same architecture and parameter values;
    /// `trainable: false` yields gradient-free leaves (teacher use).
    pub fn clone_with(&self, trainable: bool) -> CgsModel {
        let copy = CgsModel::build(
            &self.config,
            Init {
                rng: None,
                trainable,
            },
        )
        .expect("architecture already validated");
        for (dst, src) in copy.parameters().iter().zip(self.parameters()) {
            dst.update_data(|d| d.copy_from_slice(&src.values()));
        }
        copy.copy_buffers_from(self);
        copy
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn check_input(&self, image: &Tensor) -> Result<()> {
        let shape = image.shape();
        if shape.len() != 3 || shape[2] != self.config.in_channels {
            return Err(CoreError::InvalidConfig(format!(
                "expected [H, W, {}] input, got {shape:?}",
                self.config.in_channels
            )));
        }
        let divisor = 1usize << (self.config.depth - 1);
        if !shape[0].is_multiple_of(divisor) || !shape[1].is_multiple_of(divisor) {
            return Err(CoreError::InvalidConfig(format!(
                "input extents {}x{} must be divisible by {divisor}",
                shape[0], shape[1]
            )));
        }
        Ok(())
    }

    /// Shared backbone: encoder, then decoder with skip connections back to
    /// full resolution.
    fn forward_features(&self, image: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_input(image)?;
        self.backbone_evals.set(self.backbone_evals.get() + 1);
        let mut x = image.clone();
        let mut skips = Vec::with_capacity(self.config.depth - 1);
        for (i, block) in self.encoder.iter().enumerate() {
            x = block.forward(&x, mode)?;
            if i + 1 < self.config.depth {
                skips.push(x.clone());
                x = max_pool2(&x)?;
            }
        }
        for (i, block) in self.decoder.iter().enumerate() {
            let skip = &skips[self.config.depth - 2 - i];
            x = upsample_nearest2(&x)?;
            x = x.concat_last(skip)?;
            x = block.forward(&x, mode)?;
        }
        Ok(x)
    }

    fn general_probs(&self, features: &Tensor) -> Result<Tensor> {
        Ok(softmax_last(&self.general_head.forward(features)?)?)
    }

    fn specialist_probs(&self, features: &Tensor, mode: Mode) -> Result<Vec<Tensor>> {
        self.projectors
            .iter()
            .zip(&self.specialist_heads)
            .map(|(proj, head)| {
                let projected = proj.forward(features, mode)?;
                Ok(softmax_last(&head.forward(&projected)?)?)
            })
            .collect()
    }

    /// Generalist probability map: `[H, W, K+1]`, softmax-normalized.
    pub fn forward_general(&self, image: &Tensor, mode: Mode) -> Result<Tensor> {
        let features = self.forward_features(image, mode)?;
        self.general_probs(&features)
    }

    /// K specialist probability maps `[H, W, 3]` off one backbone pass.
    pub fn forward_specialists(&self, image: &Tensor, mode: Mode) -> Result<Vec<Tensor>> {
        let features = self.forward_features(image, mode)?;
        self.specialist_probs(&features, mode)
    }

    /// Both branches from a single backbone evaluation.
    pub fn forward_all(&self, image: &Tensor, mode: Mode) -> Result<(Tensor, Vec<Tensor>)> {
        let features = self.forward_features(image, mode)?;
        Ok((
            self.general_probs(&features)?,
            self.specialist_probs(&features, mode)?,
        ))
    }

    /// Number of backbone evaluations so far (shared-feature accounting).
    pub fn backbone_eval_count(&self) -> u64 {
        self.backbone_evals.get()
    }

    fn blocks(&self) -> impl Iterator<Item = &ConvBlock> {
        self.encoder.iter().chain(&self.decoder).chain(&self.projectors)
    }

    fn conv_layers(&self) -> impl Iterator<Item = &Conv2dLayer> {
        self.blocks()
            .map(|b| &b.conv)
            .chain(std::iter::once(&self.general_head))
            .chain(self.specialist_heads.iter())
    }

    /// All trainable parameters in a stable order.
    pub fn parameters(&self) -> Vec<Tensor> {
        self.named_parameters().into_iter().map(|(_, t)| t).collect()
    }

    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for layer in self.conv_layers() {
            out.push((format!("{}.kernel", layer.name), layer.kernel.clone()));
            if let Some(b) = &layer.bias {
                out.push((format!("{}.bias", layer.name), b.clone()));
            }
        }
        for block in self.blocks() {
            out.push((format!("{}.gamma", block.bn.name), block.bn.gamma.clone()));
            out.push((format!("{}.beta", block.bn.name), block.bn.beta.clone()));
        }
        out
    }

    /// Parameters of the specialist branch only (projectors + heads).
    pub fn specialist_parameters(&self) -> Vec<(String, Tensor)> {
        self.named_parameters()
            .into_iter()
            .filter(|(name, _)| name.starts_with("proj") || name.starts_with("spec"))
            .collect()
    }

    /// Non-trainable state: batch-norm running statistics.
    pub fn named_buffers(&self) -> Vec<(String, Vec<Real>)> {
        let mut out = Vec::new();
        for block in self.blocks() {
            out.push((format!("{}.running_mean", block.bn.name), block.bn.running_mean.borrow().clone()));
            out.push((format!("{}.running_var", block.bn.name), block.bn.running_var.borrow().clone()));
        }
        out
    }

    pub fn copy_buffers_from(&self, source: &CgsModel) {
        for (dst, src) in self.blocks().zip(source.blocks()) {
            dst.bn.running_mean.borrow_mut().copy_from_slice(&src.bn.running_mean.borrow());
            dst.bn.running_var.borrow_mut().copy_from_slice(&src.bn.running_var.borrow());
        }
    }

    fn set_buffer(&self, name: &str, data: &[Real]) -> Result<()> {
        for block in self.blocks() {
            if name == format!("{}.running_mean", block.bn.name) {
                block.bn.running_mean.borrow_mut().copy_from_slice(data);
                return Ok(());
            }
            if name == format!("{}.running_var", block.bn.name) {
                block.bn.running_var.borrow_mut().copy_from_slice(data);
                return Ok(());
            }
        }
        Err(CoreError::Checkpoint(format!("unknown buffer {name}")))
    }

    /// Total parameter count (both branches).
    pub fn param_count_total(&self) -> usize {
        self.parameters().iter().map(Tensor::numel).sum()
    }

    /// Parameter count of the deployment path: backbone + generalist head,
    /// independent of K specialists.
    pub fn param_count_inference(&self) -> usize {
        self.named_parameters()
            .iter()
            .filter(|(name, _)| !name.starts_with("proj") && !name.starts_with("spec"))
            .map(|(_, t)| t.numel())
            .sum()
    }
}

pub struct TeacherStudentPair {
    pub student: CgsModel,
    pub teacher: CgsModel,
}

impl TeacherStudentPair {
    /// Student from seed, teacher as an exact gradient-free copy.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let student = build_model(config, seed)?;
        let teacher = student.clone_with(false);
        Ok(TeacherStudentPair { student, teacher })
    }
}

// ---------------------------------------------------------------------------
// Checkpoint format: versioned binary of named f64 arrays, bitwise exact.
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"CGSCKPT1";

fn push_entry(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[Real]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&(v as f64).to_le_bytes());
    }
}

/// Serialize a teacher/student pair plus free-form metadata arrays.
pub fn save_checkpoint(path: &Path, pair: &TeacherStudentPair, meta: &[(String, Vec<f64>)]) -> Result<()> {
    let mut entries: Vec<(String, Vec<usize>, Vec<Real>)> = Vec::new();
    let cfg = &pair.student.config;
    entries.push((
        "meta.architecture".into(),
        vec![4],
        vec![
            cfg.num_classes as Real,
            cfg.in_channels as Real,
            cfg.base_channels as Real,
            cfg.depth as Real,
        ],
    ));
    for (name, values) in meta {
        entries.push((format!("meta.{name}"), vec![values.len()], values.iter().map(|&v| v as Real).collect()));
    }
    for (prefix, model) in [("student", &pair.student), ("teacher", &pair.teacher)] {
        for (name, t) in model.named_parameters() {
            entries.push((format!("{prefix}.{name}"), t.shape().to_vec(), t.values()));
        }
        for (name, data) in model.named_buffers() {
            entries.push((format!("{prefix}.{name}"), vec![data.len()], data));
        }
    }

    let mut bytes = CHECKPOINT_MAGIC.to_vec();
    bytes.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, shape, data) in &entries {
        push_entry(&mut bytes, name, shape, data);
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub struct Checkpoint {
    pub pair: TeacherStudentPair,
    pub meta: BTreeMap<String, Vec<f64>>,
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let fail = |msg: &str| CoreError::Checkpoint(format!("{}: {msg}", path.display()));
    if bytes.len() < 12 || &bytes[0..8] != CHECKPOINT_MAGIC {
        return Err(fail("bad magic"));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let mut pos = 12usize;
    let mut entries: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
    for _ in 0..count {
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(CoreError::Checkpoint(format!("{}: truncated", path.display())));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| fail("name not utf-8"))?;
        let ndim = take(&mut pos, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = take(&mut pos, numel * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.insert(name, (shape, data));
    }

    let arch = entries
        .get("meta.architecture")
        .ok_or_else(|| fail("missing architecture entry"))?
        .1
        .clone();
    if arch.len() != 4 {
        return Err(fail("bad architecture entry"));
    }
    let config = ModelConfig {
        num_classes: arch[0] as usize,
        in_channels: arch[1] as usize,
        base_channels: arch[2] as usize,
        depth: arch[3] as usize,
    };
    let pair = TeacherStudentPair::new(&config, 0)?;
    for (prefix, model) in [("student", &pair.student), ("teacher", &pair.teacher)] {
        for (name, t) in model.named_parameters() {
            let key = format!("{prefix}.{name}");
            let (shape, data) = entries.get(&key).ok_or_else(|| fail(&format!("missing {key}")))?;
            if shape != t.shape() {
                return Err(fail(&format!("shape mismatch for {key}")));
            }
            t.update_data(|d| {
                for (dst, &src) in d.iter_mut().zip(data) {
                    *dst = src as Real;
                }
            });
        }
        for (name, current) in model.named_buffers() {
            let key = format!("{prefix}.{name}");
            let (_, data) = entries.get(&key).ok_or_else(|| fail(&format!("missing {key}")))?;
            if data.len() != current.len() {
                return Err(fail(&format!("length mismatch for {key}")));
            }
            let cast: Vec<Real> = data.iter().map(|&v| v as Real).collect();
            model.set_buffer(&name, &cast)?;
        }
    }
    let meta = entries
        .into_iter()
        .filter_map(|(k, (_, v))| k.strip_prefix("meta.").map(|s| (s.to_string(), v)))
        .collect();
    Ok(Checkpoint { pair, meta })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            num_classes: 3,
            in_channels: 1,
            base_channels: 4,
            depth: 3,
        }
    }

    fn image(h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<Real> = (0..h * w).map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)).collect();
        Tensor::from_vec(&[h, w, 1], data).unwrap()
    }

    #[test]
    fn same_seed_gives_bitwise_identical_parameters() {
        let a = build_model(&tiny_config(), 42).unwrap();
        let b = build_model(&tiny_config(), 42).unwrap();
        for (x, y) in a.parameters().iter().zip(b.parameters()) {
            assert_eq!(x.values(), y.values());
        }
        let c = build_model(&tiny_config(), 43).unwrap();
        assert_ne!(a.parameters()[0].values(), c.parameters()[0].values());
    }

    #[test]
    fn head_channel_counts_follow_class_count() {
        let model = build_model(&tiny_config(), 1).unwrap();
        let img = image(16, 16, 5);
        let (general, specialists) = model.forward_all(&img, Mode::Eval).unwrap();
        assert_eq!(general.shape(), &[16, 16, 4]);
        assert_eq!(specialists.len(), 3);
        for s in &specialists {
            assert_eq!(s.shape(), &[16, 16, 3]);
        }
    }

    #[test]
    fn probability_maps_sum_to_one_per_pixel() {
        let model = build_model(&tiny_config(), 2).unwrap();
        let img = image(8, 8, 6);
        let (general, specialists) = model.forward_all(&img, Mode::Train).unwrap();
        for map in std::iter::once(&general).chain(&specialists) {
            let c = map.shape()[2];
            let v = map.values();
            for px in 0..64 {
                let s: Real = v[px * c..(px + 1) * c].iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let model = build_model(&tiny_config(), 3).unwrap();
        let img = image(16, 16, 7);
        let a = model.forward_general(&img, Mode::Eval).unwrap();
        let b = model.forward_general(&img, Mode::Eval).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn indivisible_extents_rejected() {
        let model = build_model(&tiny_config(), 4).unwrap();
        let img = Tensor::zeros(&[10, 10, 1]);
        assert!(model.forward_general(&img, Mode::Eval).is_err());
    }

    #[test]
    fn forward_all_uses_one_backbone_evaluation() {
        let model = build_model(&tiny_config(), 5).unwrap();
        let img = image(8, 8, 8);
        let before = model.backbone_eval_count();
        model.forward_all(&img, Mode::Eval).unwrap();
        assert_eq!(model.backbone_eval_count(), before + 1);
    }

    #[test]
    fn specialist_loss_reaches_encoder_parameters() {
        let model = build_model(&tiny_config(), 6).unwrap();
        let img = image(8, 8, 9);
        let specialists = model.forward_specialists(&img, Mode::Train).unwrap();
        specialists[0].sum().backward().unwrap();
        let enc_kernel = &model.named_parameters()[0];
        assert!(enc_kernel.0.starts_with("enc0"));
        let grad = enc_kernel.1.grad().expect("encoder gradient populated");
        assert!(grad.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn inference_param_count_independent_of_class_count() {
        let m3 = build_model(&tiny_config(), 7).unwrap();
        let m5 = build_model(
            &ModelConfig {
                num_classes: 5,
                ..tiny_config()
            },
            7,
        )
        .unwrap();
        // general head grows with K (it predicts K+1 channels), but the
        // backbone share is identical; specialists never count.
        let backbone = |m: &CgsModel| {
            m.named_parameters()
                .iter()
                .filter(|(n, _)| !n.starts_with("proj") && !n.starts_with("spec") && !n.starts_with("general_head"))
                .map(|(_, t)| t.numel())
                .sum::<usize>()
        };
        assert_eq!(backbone(&m3), backbone(&m5));
        assert_eq!(
            m3.param_count_inference(),
            backbone(&m3) + m3.config.base_channels * 4 + 4
        );
        assert!(m3.param_count_total() > m3.param_count_inference());
    }

    #[test]
    fn generalist_output_ignores_specialist_parameters() {
        let model = build_model(&tiny_config(), 8).unwrap();
        let img = image(8, 8, 10);
        let before = model.forward_general(&img, Mode::Eval).unwrap().values();
        for (_, t) in model.specialist_parameters() {
            t.update_data(|d| d.iter_mut().for_each(|v| *v = 123.0));
        }
        let after = model.forward_general(&img, Mode::Eval).unwrap().values();
        assert_eq!(before, after);
    }

    #[test]
    fn train_mode_updates_running_stats_eval_does_not() {
        let model = build_model(&tiny_config(), 9).unwrap();
        let img = image(8, 8, 11);
        let stats_before = model.named_buffers();
        model.forward_general(&img, Mode::Eval).unwrap();
        assert_eq!(
            stats_before.iter().map(|(_, v)| v.clone()).collect::<Vec<_>>(),
            model.named_buffers().iter().map(|(_, v)| v.clone()).collect::<Vec<_>>()
        );
        model.forward_general(&img, Mode::Train).unwrap();
        assert_ne!(
            stats_before.iter().map(|(_, v)| v.clone()).collect::<Vec<_>>(),
            model.named_buffers().iter().map(|(_, v)| v.clone()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let pair = TeacherStudentPair::new(&tiny_config(), 10).unwrap();
        // perturb student so the two copies differ
        pair.student.parameters()[0].update_data(|d| d[0] = 0.5);
        let img = image(8, 8, 12);
        pair.student.forward_general(&img, Mode::Train).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &pair, &[("iteration".into(), vec![17.0])]).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.meta["iteration"], vec![17.0]);
        for (a, b) in pair
            .student
            .parameters()
            .iter()
            .chain(pair.teacher.parameters().iter())
            .zip(loaded.pair.student.parameters().iter().chain(loaded.pair.teacher.parameters().iter()))
        {
            let av = a.values();
            let bv = b.values();
            assert_eq!(av.len(), bv.len());
            for (x, y) in av.iter().zip(&bv) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        for ((_, a), (_, b)) in pair.student.named_buffers().iter().zip(loaded.pair.student.named_buffers()) {
            assert_eq!(a, &b);
        }
    }

    #[test]
    fn teacher_copy_matches_student() {
        let pair = TeacherStudentPair::new(&tiny_config(), 11).unwrap();
        for (s, t) in pair.student.parameters().iter().zip(pair.teacher.parameters()) {
            assert_eq!(s.values(), t.values());
            assert!(s.requires_grad());
            assert!(!t.requires_grad());
        }
    }
}
