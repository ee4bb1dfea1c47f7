//! Flat key=value configuration files for training runs.
//!
//! One `key = value` pair per line; `#` starts a comment. Keys mirror the
//! training-config fields, with dataset fields under `data.` and model
//! fields under `model.`. Vector values (proportions, intensity means) are
//! comma-separated. Unknown keys are rejected.

use crate::error::{CoreError, Result};
use crate::trainer::{TrainConfig, TrainMode};

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| CoreError::InvalidConfig(format!("invalid value {value:?} for key {key}")))
}

fn parse_vec(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse_num(key, v)).collect()
}

/// Apply a single `key = value` override.
pub fn apply_override(config: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    let value = value.trim();
    match key.trim() {
        "data.num_classes" => {
            config.data.num_classes = parse_num(key, value)?;
            config.model.num_classes = config.data.num_classes;
        }
        "data.height" => config.data.height = parse_num(key, value)?,
        "data.width" => config.data.width = parse_num(key, value)?,
        "data.n_train" => config.data.n_train = parse_num(key, value)?,
        "data.n_val" => config.data.n_val = parse_num(key, value)?,
        "data.n_test" => config.data.n_test = parse_num(key, value)?,
        "data.labeled_ratio" => config.data.labeled_ratio = parse_num(key, value)?,
        "data.proportions" => config.data.proportions = parse_vec(key, value)?,
        "data.foreground_fraction" => config.data.foreground_fraction = parse_num(key, value)?,
        "data.intensity_means" => config.data.intensity_means = parse_vec(key, value)?,
        "data.noise_std" => config.data.noise_std = parse_num(key, value)?,
        "data.seed" => config.data.seed = parse_num(key, value)?,
        "model.base_channels" => config.model.base_channels = parse_num(key, value)?,
        "model.depth" => config.model.depth = parse_num(key, value)?,
        "model.in_channels" => config.model.in_channels = parse_num(key, value)?,
        "iterations" => config.iterations = parse_num(key, value)?,
        "labeled_per_batch" => config.labeled_per_batch = parse_num(key, value)?,
        "unlabeled_per_batch" => config.unlabeled_per_batch = parse_num(key, value)?,
        "lr0" => config.lr0 = parse_num(key, value)?,
        "momentum" => config.momentum = parse_num(key, value)?,
        "weight_decay" => config.weight_decay = parse_num(key, value)?,
        "tau" => config.tau = parse_num(key, value)?,
        "lambda_max" => config.lambda_max = parse_num(key, value)?,
        "rampup_fraction" => config.rampup_fraction = parse_num(key, value)?,
        "ema_alpha" => config.ema_alpha = parse_num(key, value)?,
        "cutmix_prob" => config.cutmix_prob = parse_num(key, value)?,
        "mode" => config.mode = TrainMode::parse(value)?,
        "seed" => config.seed = parse_num(key, value)?,
        "eval_every" => config.eval_every = parse_num(key, value)?,
        "checkpoint_every" => config.checkpoint_every = parse_num(key, value)?,
        other => {
            return Err(CoreError::InvalidConfig(format!("unknown config key {other:?}")));
        }
    }
    Ok(())
}

/// Parse a config file's contents on top of the defaults.
pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CoreError::InvalidConfig(format!(
                "line {}: expected key = value, got {raw:?}",
                lineno + 1
            )));
        };
        apply_override(&mut config, key, value)?;
    }
    Ok(config)
}

/// Render a config in the same key=value format (documents every key).
pub fn render_config(config: &TrainConfig) -> String {
    let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
    format!(
        "data.num_classes = {}\n\
         data.height = {}\n\
         data.width = {}\n\
         data.n_train = {}\n\
         data.n_val = {}\n\
         data.n_test = {}\n\
         data.labeled_ratio = {}\n\
         data.proportions = {}\n\
         data.foreground_fraction = {}\n\
         data.intensity_means = {}\n\
         data.noise_std = {}\n\
         data.seed = {}\n\
         model.base_channels = {}\n\
         model.depth = {}\n\
         model.in_channels = {}\n\
         iterations = {}\n\
         labeled_per_batch = {}\n\
         unlabeled_per_batch = {}\n\
         lr0 = {}\n\
         momentum = {}\n\
         weight_decay = {}\n\
         tau = {}\n\
         lambda_max = {}\n\
         rampup_fraction = {}\n\
         ema_alpha = {}\n\
         cutmix_prob = {}\n\
         mode = {}\n\
         seed = {}\n\
         eval_every = {}\n\
         checkpoint_every = {}\n",
        config.data.num_classes,
        config.data.height,
        config.data.width,
        config.data.n_train,
        config.data.n_val,
        config.data.n_test,
        config.data.labeled_ratio,
        join(&config.data.proportions),
        config.data.foreground_fraction,
        join(&config.data.intensity_means),
        config.data.noise_std,
        config.data.seed,
        config.model.base_channels,
        config.model.depth,
        config.model.in_channels,
        config.iterations,
        config.labeled_per_batch,
        config.unlabeled_per_batch,
        config.lr0,
        config.momentum,
        config.weight_decay,
        config.tau,
        config.lambda_max,
        config.rampup_fraction,
        config.ema_alpha,
        config.cutmix_prob,
        config.mode.as_str(),
        config.seed,
        config.eval_every,
        config.checkpoint_every,
    )
}
