//! Synthetic scale-imbalanced multi-target datasets.
//!
//! Every image contains one ellipse per target class (so class occurrence
//! is perfectly balanced) while the per-class pixel areas follow a chosen
//! foreground proportion vector — the scale-imbalance regime the training
//! pipeline is built for. Ellipses are placed by rejection sampling so
//! regions never overlap and ground truth is unambiguous.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::derive_seed;
use crate::error::{CoreError, Result};
use crate::labels::LabelMap;
use crate::pgm::{write_pgm, PgmImage};

const SEED_TAG_IMAGE: u64 = 1;
const SEED_TAG_SPLIT: u64 = 2;

#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Fraction of the training set that keeps its labels, in (0, 1].
    pub labeled_ratio: f64,
    /// Target dataset-level foreground proportions per class (simplex).
    pub proportions: Vec<f64>,
    /// Total foreground fraction of each image.
    pub foreground_fraction: f64,
    /// Mean intensity of background followed by each class (length K+1).
    pub intensity_means: Vec<f64>,
    /// Standard deviation of the additive Gaussian intensity noise.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            num_classes: 3,
            height: 64,
            width: 64,
            n_train: 200,
            n_val: 40,
            n_test: 60,
            labeled_ratio: 0.1,
            proportions: vec![0.7, 0.2, 0.1],
            foreground_fraction: 0.25,
            // the smallest class sits between the two dominant classes in
            // intensity, so loss imbalance (not raw contrast) decides it
            intensity_means: vec![0.15, 0.5, 0.8, 0.65],
            noise_std: 0.08,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(CoreError::InvalidConfig("num_classes must be >= 2".into()));
        }
        if self.proportions.len() != self.num_classes {
            return Err(CoreError::InvalidConfig(format!(
                "{} proportions for {} classes",
                self.proportions.len(),
                self.num_classes
            )));
        }
        let total: f64 = self.proportions.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.proportions.iter().any(|&p| p <= 0.0) {
            return Err(CoreError::InvalidConfig(
                "proportions must be positive and sum to 1".into(),
            ));
        }
        if !(0.0 < self.labeled_ratio && self.labeled_ratio <= 1.0) {
            return Err(CoreError::InvalidConfig("labeled_ratio must be in (0, 1]".into()));
        }
        if self.intensity_means.len() != self.num_classes + 1 {
            return Err(CoreError::InvalidConfig(format!(
                "need {} intensity means (background + classes), got {}",
                self.num_classes + 1,
                self.intensity_means.len()
            )));
        }
        if !(0.0 < self.foreground_fraction && self.foreground_fraction <= 0.5) {
            return Err(CoreError::InvalidConfig(
                "foreground_fraction must be in (0, 0.5] for feasible packing".into(),
            ));
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(CoreError::InvalidConfig("all split sizes must be positive".into()));
        }
        if self.labeled_count() < 1 {
            return Err(CoreError::InvalidConfig("labeled count must be >= 1".into()));
        }
        Ok(())
    }

    pub fn labeled_count(&self) -> usize {
        ((self.labeled_ratio * self.n_train as f64).round() as usize).max(1)
    }
}

/// One generated image with its ground-truth label map.
#[derive(Debug, Clone)]
pub struct Sample {
    pub name: String,
    /// Grayscale intensities, length H*W.
    pub image: Vec<f64>,
    pub label: LabelMap,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub spec: DatasetSpec,
    pub labeled: Vec<Sample>,
    /// Labels are kept for evaluation bookkeeping only; training never
    /// reads them.
    pub unlabeled: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let total = spec.n_train + spec.n_val + spec.n_test;
    let mut samples = Vec::with_capacity(total);
    for idx in 0..total {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, SEED_TAG_IMAGE, idx as u64));
        samples.push(generate_sample(spec, idx, &mut rng)?);
    }

    let mut val = samples.split_off(spec.n_train);
    let test = val.split_off(spec.n_val);
    let train = samples;

    // seed-deterministic disjoint labeled/unlabeled split over the train set
    let mut split_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, SEED_TAG_SPLIT, 0));
    let mut order: Vec<usize> = (0..spec.n_train).collect();
    for i in (1..order.len()).rev() {
        let j = split_rng.random_range(0..=i);
        order.swap(i, j);
    }
    let labeled_count = spec.labeled_count();
    let mut labeled_flags = vec![false; spec.n_train];
    for &i in order.iter().take(labeled_count) {
        labeled_flags[i] = true;
    }
    let mut labeled = Vec::with_capacity(labeled_count);
    let mut unlabeled = Vec::with_capacity(spec.n_train - labeled_count);
    for (sample, flag) in train.into_iter().zip(labeled_flags) {
        if flag {
            labeled.push(sample);
        } else {
            unlabeled.push(sample);
        }
    }

    Ok(SynthDataset {
        spec: spec.clone(),
        labeled,
        unlabeled,
        val,
        test,
    })
}

struct Ellipse {
    cy: f64,
    cx: f64,
    semi_major: f64,
    semi_minor: f64,
    theta: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.theta.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.semi_major).powi(2) + (v / self.semi_minor).powi(2) <= 1.0
    }
}

fn generate_sample(spec: &DatasetSpec, index: usize, rng: &mut ChaCha8Rng) -> Result<Sample> {
    let (h, w, k) = (spec.height, spec.width, spec.num_classes);
    let image_area = (h * w) as f64;

    // paint big classes first so small ones can still find room
    let mut class_order: Vec<usize> = (0..k).collect();
    class_order.sort_by(|&a, &b| spec.proportions[b].partial_cmp(&spec.proportions[a]).unwrap());

    'image_attempt: for _ in 0..24 {
        let mut labels = vec![0u8; h * w];
        for &ci in &class_order {
            let target_area = spec.proportions[ci] * spec.foreground_fraction * image_area;
            let mut placed = false;
            for _ in 0..200 {
                let aspect = rng.random_range(0.55..1.0);
                let semi_major = (target_area / (std::f64::consts::PI * aspect)).sqrt().max(1.0);
                let semi_minor = (semi_major * aspect).max(0.8);
                if 2.0 * semi_major + 2.0 > h.min(w) as f64 {
                    continue 'image_attempt; // ellipse cannot fit at all
                }
                let margin = semi_major + 1.0;
                let ellipse = Ellipse {
                    cy: rng.random_range(margin..h as f64 - margin),
                    cx: rng.random_range(margin..w as f64 - margin),
                    semi_major,
                    semi_minor,
                    theta: rng.random_range(0.0..std::f64::consts::PI),
                };
                let y0 = (ellipse.cy - semi_major).floor().max(0.0) as usize;
                let y1 = ((ellipse.cy + semi_major).ceil() as usize).min(h - 1);
                let x0 = (ellipse.cx - semi_major).floor().max(0.0) as usize;
                let x1 = ((ellipse.cx + semi_major).ceil() as usize).min(w - 1);
                let mut pixels = Vec::new();
                let mut overlap = false;
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        if ellipse.contains(y as f64, x as f64) {
                            if labels[y * w + x] != 0 {
                                overlap = true;
                                break;
                            }
                            pixels.push(y * w + x);
                        }
                    }
                    if overlap {
                        break;
                    }
                }
                if overlap || pixels.is_empty() {
                    continue;
                }
                for p in pixels {
                    labels[p] = (ci + 1) as u8;
                }
                placed = true;
                break;
            }
            if !placed {
                continue 'image_attempt;
            }
        }

        let noise = Normal::new(0.0, spec.noise_std).map_err(|e| {
            CoreError::InvalidConfig(format!("invalid noise deviation: {e}"))
        })?;
        let image: Vec<f64> = labels
            .iter()
            .map(|&l| spec.intensity_means[l as usize] + noise.sample(rng))
            .collect();
        let label = LabelMap::new(h, w, k, labels)?;
        return Ok(Sample {
            name: format!("img_{index:05}"),
            image,
            label,
        });
    }
    Err(CoreError::DatasetGeneration(format!(
        "could not pack {k} non-overlapping ellipses at foreground fraction {} \
         into {h}x{w} (image {index})",
        spec.foreground_fraction
    )))
}

/// Write the dataset to `dir` as images/*.pgm, labels/*.pgm, and a
/// manifest.csv with columns filename, split, labeled.
pub fn write_dataset(dir: &Path, dataset: &SynthDataset) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("labels"))?;
    let mut manifest = String::from("filename,split,labeled\n");
    let groups: [(&str, bool, &[Sample]); 4] = [
        ("train", true, &dataset.labeled),
        ("train", false, &dataset.unlabeled),
        ("val", true, &dataset.val),
        ("test", true, &dataset.test),
    ];
    for (split, labeled, samples) in groups {
        for s in samples {
            let filename = format!("{}.pgm", s.name);
            let image = PgmImage::from_intensities(s.label.height, s.label.width, &s.image)?;
            write_pgm(&dir.join("images").join(&filename), &image)?;
            let label = PgmImage::new(
                s.label.height,
                s.label.width,
                255,
                s.label.values().iter().map(|&v| v as u16).collect(),
            )?;
            write_pgm(&dir.join("labels").join(&filename), &label)?;
            writeln!(manifest, "{filename},{split},{labeled}").expect("write to string");
        }
    }
    fs::write(dir.join("manifest.csv"), manifest)?;
    Ok(())
}
