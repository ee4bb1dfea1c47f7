//! Semi-supervised multi-target segmentation with a collaborative
//! generalist and per-class specialists.
//!
//! The crate is organized around the training pipeline:
//!
//! - [`labels`]: label maps, per-specialist three-way redefinition, and the
//!   participation-balance mathematics.
//! - [`network`]: a small encoder-decoder backbone with one generalist head
//!   and K projector+specialist head pairs, duplicated as student/teacher.
//! - [`losses`]: cross-entropy + dice segmentation losses, supervised /
//!   unsupervised / cross-branch consistency terms, and the total objective.
//! - [`pseudo`]: EMA teacher maintenance, pseudo-label construction in both
//!   directions, specialist ensembling, consensus masks, and inter-head
//!   error detection.
//! - [`augment`]: weak (spatial) and strong (photometric + CutMix)
//!   augmentation with exact label alignment.
//! - [`synthdata`]: synthetic scale-imbalanced ellipse datasets and PGM IO.
//! - [`metrics`]: DSC / Jaccard / 95HD / ASD evaluation.
//! - [`trainer`]: the full training loop, SGD with polynomial decay,
//!   checkpointing, and mixed-branch inference.

// `Real as f64` casts are no-ops under the default f64 element type but
// required when cgs-tensor's `f32` feature is enabled.
#![allow(clippy::unnecessary_cast)]

pub mod augment;
pub mod config;
pub mod error;
pub mod labels;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod pgm;
pub mod pseudo;
pub mod synthdata;
pub mod trainer;

pub use error::{CoreError, Result};
pub use labels::{BalanceReport, LabelMap, SpecialistLabelMap};

/// Deterministic sub-seed derivation (splitmix64-style mixing) so that
/// independent RNG streams can be spawned from one master seed.
pub fn derive_seed(base: u64, tag: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(tag.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
