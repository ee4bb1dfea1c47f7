//! Command-line driver for the collaborative generalist/specialist
//! segmentation pipeline: dataset generation, training, evaluation,
//! balance analysis, and mixing-ratio sweeps.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cgs_core::config::{apply_override, parse_config, render_config};
use cgs_core::labels::{balanced_proportions, class_proportions, LabelMap};
use cgs_core::metrics::MetricsReport;
use cgs_core::network::load_checkpoint;
use cgs_core::pgm::{read_pgm, write_pgm, PgmImage};
use cgs_core::synthdata::{generate_dataset, write_dataset, Sample};
use cgs_core::trainer::{evaluate_samples, TrainConfig, Trainer};
use cgs_core::{CoreError, Result};

#[derive(Parser)]
#[command(name = "cgs", about = "Collaborative generalist/specialist segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Flat key=value config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; all artifacts land here.
    #[arg(long)]
    out: PathBuf,
    /// Config overrides, applied after the file (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed override (also applied to the dataset seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset on disk (images/, labels/, manifest.csv).
    GenData(CommonArgs),
    /// Train a model, then evaluate it on the test split.
    Train(CommonArgs),
    /// Evaluate a saved checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint produced by the train command.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Branch mixing ratio in [0, 1]; 0 uses only the generalist.
        #[arg(long, default_value_t = 0.0)]
        mix_ratio: f64,
    },
    /// Balance analysis of a labels directory (per-class proportions and
    /// their contraction under the specialist scheme).
    Balance {
        /// Directory of label PGM files.
        #[arg(long)]
        labels: PathBuf,
        /// Output directory for balance_report.csv.
        #[arg(long)]
        out: PathBuf,
        /// Number of target classes; inferred from the labels when omitted.
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Train once, then evaluate across several mixing ratios.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Reuse an existing checkpoint instead of training.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated mixing ratios.
        #[arg(long, default_value = "0,0.2,0.5,0.8,1.0")]
        mix_ratios: String,
    },
}

fn load_config(common: &CommonArgs) -> Result<TrainConfig> {
    let mut config = match &common.config {
        Some(path) => parse_config(&fs::read_to_string(path)?)?,
        None => TrainConfig::default(),
    };
    for entry in &common.set {
        let (key, value) = entry.split_once('=').ok_or_else(|| {
            CoreError::InvalidConfig(format!("--set expects KEY=VALUE, got {entry:?}"))
        })?;
        apply_override(&mut config, key, value)?;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
        config.data.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn cmd_gen_data(common: &CommonArgs) -> Result<()> {
    let config = load_config(common)?;
    let dataset = generate_dataset(&config.data)?;
    fs::create_dir_all(&common.out)?;
    write_dataset(&common.out, &dataset)?;
    fs::write(common.out.join("config_used.txt"), render_config(&config))?;

    // measured proportions over the train split, recomputed from disk so
    // the printed numbers reflect exactly what was written
    let manifest = fs::read_to_string(common.out.join("manifest.csv"))?;
    let mut train_labels = Vec::new();
    for line in manifest.lines().skip(1) {
        let mut fields = line.split(',');
        let (name, split) = (fields.next().unwrap_or(""), fields.next().unwrap_or(""));
        if split == "train" {
            train_labels.push(read_label(&common.out.join("labels").join(name), config.data.num_classes)?);
        }
    }
    let p = class_proportions(&train_labels, config.data.num_classes)?;
    println!(
        "wrote {} images to {}; measured train proportions: {}",
        manifest.lines().count() - 1,
        common.out.display(),
        p.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", ")
    );
    Ok(())
}

fn read_label(path: &Path, num_classes: usize) -> Result<LabelMap> {
    let pgm = read_pgm(path)?;
    LabelMap::new(
        pgm.height,
        pgm.width,
        num_classes,
        pgm.samples.iter().map(|&s| s as u8).collect(),
    )
}

fn write_outputs(out: &Path, report: &MetricsReport, preds: &[LabelMap], samples: &[Sample]) -> Result<()> {
    fs::write(out.join("metrics.csv"), report.to_csv())?;
    let pred_dir = out.join("predictions");
    fs::create_dir_all(&pred_dir)?;
    for (pred, sample) in preds.iter().zip(samples) {
        let pgm = PgmImage::new(
            pred.height,
            pred.width,
            255,
            pred.values().iter().map(|&v| v as u16).collect(),
        )?;
        write_pgm(&pred_dir.join(format!("{}.pgm", sample.name)), &pgm)?;
    }
    Ok(())
}

fn check_finite(report: &MetricsReport) -> Result<()> {
    let all = [report.mean_dsc, report.mean_jaccard, report.mean_hd95, report.mean_asd];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::Training("non-finite metrics in report".into()));
    }
    Ok(())
}

fn cmd_train(common: &CommonArgs) -> Result<()> {
    let config = load_config(common)?;
    fs::create_dir_all(&common.out)?;
    fs::write(common.out.join("config_used.txt"), render_config(&config))?;
    let mut trainer = Trainer::new(config)?;
    let outcome = trainer.train(&common.out)?;
    println!(
        "trained {} iterations (mode {}); best val DSC {:.4} at iteration {}",
        trainer.config.iterations,
        trainer.config.mode.as_str(),
        outcome.best_val_dsc,
        outcome.best_iteration
    );

    // evaluate the selected checkpoint's teacher on the test split
    let best = load_checkpoint(&outcome.checkpoint_path)?;
    let report = evaluate_samples(&best.pair.teacher, &trainer.dataset().test, 0.0)?;
    check_finite(&report)?;
    let preds = cgs_core::trainer::infer_samples(&best.pair.teacher, &trainer.dataset().test, 0.0)?;
    write_outputs(&common.out, &report, &preds, &trainer.dataset().test)?;
    println!("test: {}", report.summary());
    Ok(())
}

fn cmd_eval(common: &CommonArgs, checkpoint: &Path, mix_ratio: f64) -> Result<()> {
    let config = load_config(common)?;
    fs::create_dir_all(&common.out)?;
    let loaded = load_checkpoint(checkpoint)?;
    let dataset = generate_dataset(&config.data)?;
    let report = evaluate_samples(&loaded.pair.teacher, &dataset.test, mix_ratio)?;
    check_finite(&report)?;
    let preds = cgs_core::trainer::infer_samples(&loaded.pair.teacher, &dataset.test, mix_ratio)?;
    write_outputs(&common.out, &report, &preds, &dataset.test)?;
    println!("test (mix {mix_ratio}): {}", report.summary());
    Ok(())
}

fn cmd_balance(labels_dir: &Path, out: &Path, classes: Option<usize>) -> Result<()> {
    let mut paths: Vec<PathBuf> = fs::read_dir(labels_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CoreError::InvalidConfig(format!(
            "no .pgm label maps under {}",
            labels_dir.display()
        )));
    }
    let raw: Vec<PgmImage> = paths.iter().map(|p| read_pgm(p)).collect::<Result<_>>()?;
    let num_classes = match classes {
        Some(k) => k,
        None => raw
            .iter()
            .flat_map(|m| m.samples.iter())
            .map(|&s| s as usize)
            .max()
            .unwrap_or(0),
    };
    let maps: Vec<LabelMap> = raw
        .iter()
        .map(|m| {
            LabelMap::new(
                m.height,
                m.width,
                num_classes,
                m.samples.iter().map(|&s| s as u8).collect(),
            )
        })
        .collect::<Result<_>>()?;
    let p = class_proportions(&maps, num_classes)?;
    let report = balanced_proportions(&p)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("balance_report.csv"), report.to_csv())?;
    println!(
        "{} maps, K = {num_classes}, contraction ratio {:.6}",
        maps.len(),
        report.ratio
    );
    for (i, (pi, ppi)) in report.p.iter().zip(&report.p_prime).enumerate() {
        println!("class {}: p = {pi:.4} -> p' = {ppi:.4}", i + 1);
    }
    Ok(())
}

fn cmd_sweep(common: &CommonArgs, checkpoint: Option<&Path>, mix_ratios: &str) -> Result<()> {
    let ratios: Vec<f64> = mix_ratios
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CoreError::InvalidConfig(format!("bad mixing ratio {s:?}")))
        })
        .collect::<Result<_>>()?;
    let config = load_config(common)?;
    fs::create_dir_all(&common.out)?;

    let (pair, dataset) = match checkpoint {
        Some(path) => (load_checkpoint(path)?.pair, generate_dataset(&config.data)?),
        None => {
            let mut trainer = Trainer::new(config.clone())?;
            let outcome = trainer.train(&common.out)?;
            let best = load_checkpoint(&outcome.checkpoint_path)?;
            (best.pair, generate_dataset(&config.data)?)
        }
    };

    let mut csv = String::from("mix_ratio,dsc,jaccard,hd95,asd\n");
    for &m in &ratios {
        let report = evaluate_samples(&pair.teacher, &dataset.test, m)?;
        check_finite(&report)?;
        csv.push_str(&format!(
            "{m},{},{},{},{}\n",
            report.mean_dsc, report.mean_jaccard, report.mean_hd95, report.mean_asd
        ));
        println!("mix {m}: {}", report.summary());
    }
    fs::write(common.out.join("sweep.csv"), csv)?;
    Ok(())
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::GenData(common) => cmd_gen_data(&common),
        Command::Train(common) => cmd_train(&common),
        Command::Eval {
            common,
            checkpoint,
            mix_ratio,
        } => cmd_eval(&common, &checkpoint, mix_ratio),
        Command::Balance { labels, out, classes } => cmd_balance(&labels, &out, classes),
        Command::Sweep {
            common,
            checkpoint,
            mix_ratios,
        } => cmd_sweep(&common, checkpoint.as_deref(), &mix_ratios),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
