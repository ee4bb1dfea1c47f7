//! Weak (spatial) and strong (photometric + CutMix) augmentation.
//!
//! Weak transforms are pure pixel permutations — reflect-pad-and-crop,
//! axis flips, quarter-turn rotations — so replaying a record on a label
//! map is exact, with no interpolation. Strong augmentation composes on
//! top of the weak image and is purely photometric, which keeps teacher
//! pseudo-labels pixel-aligned with the student's strongly augmented
//! input; CutMix is handled batch-wise and moves image and per-pixel
//! teacher products together.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::labels::LabelMap;

pub const PAD: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    /// Reflect-pad by [`PAD`] then crop the original extent at (dy, dx).
    PadCrop { dy: usize, dx: usize },
    FlipHorizontal,
    FlipVertical,
    Rotate90 { turns: u8 },
    Color {
        brightness: f64,
        contrast: f64,
        noise_std: f64,
        noise_seed: u64,
    },
    CutMix {
        partner: usize,
        y0: usize,
        x0: usize,
        height: usize,
        width: usize,
    },
}

/// Ordered list of applied transforms, sufficient to replay the exact
/// spatial mapping on any same-sized plane.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AugmentRecord {
    pub transforms: Vec<Transform>,
}

fn reflect(i: isize, len: usize) -> usize {
    let len = len as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= len {
        i = 2 * (len - 1) - i;
    }
    debug_assert!((0..len).contains(&i));
    i as usize
}

fn pad_crop<T: Copy>(data: &[T], h: usize, w: usize, dy: usize, dx: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let sy = reflect(y as isize + dy as isize - PAD as isize, h);
        for x in 0..w {
            let sx = reflect(x as isize + dx as isize - PAD as isize, w);
            out.push(data[sy * w + sx]);
        }
    }
    out
}

fn flip_h<T: Copy>(data: &[T], h: usize, w: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            out.push(data[y * w + (w - 1 - x)]);
        }
    }
    out
}

fn flip_v<T: Copy>(data: &[T], h: usize, w: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            out.push(data[(h - 1 - y) * w + x]);
        }
    }
    out
}

/// One 90-degree clockwise turn; an h x w plane becomes w x h.
fn rot90<T: Copy>(data: &[T], h: usize, w: usize) -> (Vec<T>, usize, usize) {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..w {
        for x in 0..h {
            out.push(data[(h - 1 - x) * w + y]);
        }
    }
    (out, w, h)
}

/// Replay the spatial part of a record on an arbitrary plane. Returns the
/// transformed plane and its (possibly swapped) extents.
pub fn apply_spatial<T: Copy>(record: &AugmentRecord, data: &[T], h: usize, w: usize) -> (Vec<T>, usize, usize) {
    let mut plane = data.to_vec();
    let (mut h, mut w) = (h, w);
    for t in &record.transforms {
        match *t {
            Transform::PadCrop { dy, dx } => plane = pad_crop(&plane, h, w, dy, dx),
            Transform::FlipHorizontal => plane = flip_h(&plane, h, w),
            Transform::FlipVertical => plane = flip_v(&plane, h, w),
            Transform::Rotate90 { turns } => {
                for _ in 0..turns {
                    let (p, nh, nw) = rot90(&plane, h, w);
                    plane = p;
                    h = nh;
                    w = nw;
                }
            }
            Transform::Color { .. } | Transform::CutMix { .. } => {}
        }
    }
    (plane, h, w)
}

pub fn apply_spatial_to_label(record: &AugmentRecord, label: &LabelMap) -> Result<LabelMap> {
    let (values, h, w) = apply_spatial(record, label.values(), label.height, label.width);
    LabelMap::new(h, w, label.num_classes, values)
}

pub struct WeakAugmented {
    pub image: Vec<f64>,
    pub label: Option<LabelMap>,
    pub record: AugmentRecord,
    pub height: usize,
    pub width: usize,
}

/// Random reflect-pad crop, horizontal/vertical flips (p = 0.5 each), and
/// a quarter-turn rotation; the identical pixel permutation is applied to
/// the label when present.
pub fn weak_augment(
    image: &[f64],
    height: usize,
    width: usize,
    label: Option<&LabelMap>,
    rng: &mut ChaCha8Rng,
) -> Result<WeakAugmented> {
    let mut transforms = vec![Transform::PadCrop {
        dy: rng.random_range(0..=2 * PAD),
        dx: rng.random_range(0..=2 * PAD),
    }];
    if rng.random_bool(0.5) {
        transforms.push(Transform::FlipHorizontal);
    }
    if rng.random_bool(0.5) {
        transforms.push(Transform::FlipVertical);
    }
    let turns = rng.random_range(0..4u8);
    if turns > 0 {
        transforms.push(Transform::Rotate90 { turns });
    }
    let record = AugmentRecord { transforms };
    let (image, h, w) = apply_spatial(&record, image, height, width);
    let label = label.map(|l| apply_spatial_to_label(&record, l)).transpose()?;
    Ok(WeakAugmented {
        image,
        label,
        record,
        height: h,
        width: w,
    })
}

/// Photometric strong augmentation applied on top of a weak image:
/// contrast about the image mean, brightness scaling, additive Gaussian
/// noise. Purely per-pixel value changes — any label map stays valid.
pub fn strong_augment(image: &[f64], rng: &mut ChaCha8Rng) -> (Vec<f64>, AugmentRecord) {
    let brightness = rng.random_range(0.7..1.3);
    let contrast = rng.random_range(0.7..1.3);
    let noise_seed = rng.random::<u64>();
    let record = AugmentRecord {
        transforms: vec![Transform::Color {
            brightness,
            contrast,
            noise_std: 0.05,
            noise_seed,
        }],
    };
    (apply_photometric(&record, image), record)
}

/// Replay the photometric part of a record.
pub fn apply_photometric(record: &AugmentRecord, image: &[f64]) -> Vec<f64> {
    let mut out = image.to_vec();
    for t in &record.transforms {
        if let Transform::Color {
            brightness,
            contrast,
            noise_std,
            noise_seed,
        } = *t
        {
            let mean = out.iter().sum::<f64>() / out.len().max(1) as f64;
            // x*c + m*(1-c) rather than m + (x-m)*c: exact identity at c = 1
            for v in &mut out {
                *v = (*v * contrast + mean * (1.0 - contrast)) * brightness;
            }
            if noise_std > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
                let normal = Normal::new(0.0, noise_std).expect("valid deviation");
                for v in &mut out {
                    *v += normal.sample(&mut rng);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CutMixBox {
    pub partner: usize,
    pub y0: usize,
    pub x0: usize,
    pub height: usize,
    pub width: usize,
}

/// Draw per-item CutMix decisions for a batch: with the given probability
/// an item receives a box of area fraction U(0.25, 0.5) at a uniform
/// position, copied from a uniformly chosen other item. A batch smaller
/// than 2 cannot mix and is skipped with a warning.
pub fn plan_cutmix(
    batch: usize,
    height: usize,
    width: usize,
    probability: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Option<CutMixBox>> {
    if batch < 2 {
        if probability > 0.0 && batch > 0 {
            eprintln!("warning: CutMix skipped, batch of {batch} has no partner");
        }
        return vec![None; batch];
    }
    (0..batch)
        .map(|i| {
            if !rng.random_bool(probability.clamp(0.0, 1.0)) {
                return None;
            }
            let area: f64 = rng.random_range(0.25..0.5);
            let side = area.sqrt();
            let bh = ((height as f64 * side).round() as usize).clamp(1, height);
            let bw = ((width as f64 * side).round() as usize).clamp(1, width);
            let y0 = rng.random_range(0..=height - bh);
            let x0 = rng.random_range(0..=width - bw);
            let mut partner = rng.random_range(0..batch - 1);
            if partner >= i {
                partner += 1;
            }
            Some(CutMixBox {
                partner,
                y0,
                x0,
                height: bh,
                width: bw,
            })
        })
        .collect()
}

/// Paste the planned boxes across a batch of same-sized scalar planes.
/// Source content is taken from the partners' pre-mix planes.
pub fn apply_cutmix<T: Copy>(planes: &mut [Vec<T>], width: usize, plan: &[Option<CutMixBox>]) {
    apply_cutmix_channels(planes, width, 1, plan);
}

/// [`apply_cutmix`] for channels-last planes of `width * channels` values
/// per row; box coordinates stay in pixel units.
pub fn apply_cutmix_channels<T: Copy>(
    planes: &mut [Vec<T>],
    width: usize,
    channels: usize,
    plan: &[Option<CutMixBox>],
) {
    let originals: Vec<Vec<T>> = planes.to_vec();
    for (i, slot) in plan.iter().enumerate() {
        let Some(b) = slot else { continue };
        let src = &originals[b.partner];
        for y in b.y0..b.y0 + b.height {
            let start = (y * width + b.x0) * channels;
            let len = b.width * channels;
            planes[i][start..start + len].copy_from_slice(&src[start..start + len]);
        }
    }
}

/// CutMix over (image, pseudo-label, confidence) triplets: one plan drives
/// all three planes so per-pixel correspondence is preserved. Returns the
/// plan so further per-pixel products can be mixed identically.
pub fn cutmix(
    items: &mut [(Vec<f64>, LabelMap, Vec<f64>)],
    probability: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Option<CutMixBox>>> {
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let (h, w) = (items[0].1.height, items[0].1.width);
    let plan = plan_cutmix(items.len(), h, w, probability, rng);

    let mut images: Vec<Vec<f64>> = items.iter().map(|it| it.0.clone()).collect();
    let mut labels: Vec<Vec<u8>> = items.iter().map(|it| it.1.values().to_vec()).collect();
    let mut confs: Vec<Vec<f64>> = items.iter().map(|it| it.2.clone()).collect();
    apply_cutmix(&mut images, w, &plan);
    apply_cutmix(&mut labels, w, &plan);
    apply_cutmix(&mut confs, w, &plan);
    let k = items[0].1.num_classes;
    for (((item, image), label), conf) in items.iter_mut().zip(images).zip(labels).zip(confs) {
        item.0 = image;
        item.1 = LabelMap::new(h, w, k, label)?;
        item.2 = conf;
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn weak_augment_is_seed_reproducible() {
        let image: Vec<f64> = (0..64).map(|i| i as f64 / 64.0).collect();
        let a = weak_augment(&image, 8, 8, None, &mut rng(3)).unwrap();
        let b = weak_augment(&image, 8, 8, None, &mut rng(3)).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.record, b.record);
    }

    #[test]
    fn double_flip_is_identity() {
        let image: Vec<f64> = (0..48).map(|i| (i as f64).sin()).collect();
        let record = AugmentRecord {
            transforms: vec![Transform::FlipHorizontal, Transform::FlipHorizontal],
        };
        let (out, _, _) = apply_spatial(&record, &image, 6, 8);
        assert_eq!(out, image);
        let record = AugmentRecord {
            transforms: vec![Transform::FlipVertical, Transform::FlipVertical],
        };
        let (out, _, _) = apply_spatial(&record, &image, 6, 8);
        assert_eq!(out, image);
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let image: Vec<f64> = (0..35).map(|i| i as f64).collect();
        let record = AugmentRecord {
            transforms: vec![Transform::Rotate90 { turns: 4 }],
        };
        let (out, h, w) = apply_spatial(&record, &image, 5, 7);
        assert_eq!((h, w), (5, 7));
        assert_eq!(out, image);
    }

    #[test]
    fn strong_augment_identity_at_neutral_parameters() {
        let image: Vec<f64> = (0..16).map(|i| 0.1 + i as f64 / 20.0).collect();
        let record = AugmentRecord {
            transforms: vec![Transform::Color {
                brightness: 1.0,
                contrast: 1.0,
                noise_std: 0.0,
                noise_seed: 0,
            }],
        };
        assert_eq!(apply_photometric(&record, &image), image);
    }

    #[test]
    fn strong_augment_changes_values_and_is_reproducible() {
        let image: Vec<f64> = (0..16).map(|i| 0.1 + i as f64 / 20.0).collect();
        let (a, rec_a) = strong_augment(&image, &mut rng(9));
        let (b, rec_b) = strong_augment(&image, &mut rng(9));
        assert_eq!(a, b);
        assert_eq!(rec_a, rec_b);
        assert_ne!(a, image);
    }

    proptest! {
        /// transform(one_hot(label)) == one_hot(transform(label))
        #[test]
        fn spatial_transform_commutes_with_one_hot(seed in 0u64..64) {
            let mut r = rng(seed);
            let values: Vec<u8> = (0..100).map(|_| r.random_range(0..4u8)).collect();
            let label = LabelMap::new(10, 10, 3, values.clone()).unwrap();
            let aug = weak_augment(&vec![0.0; 100], 10, 10, Some(&label), &mut r).unwrap();
            let transformed = aug.label.unwrap();

            for class in 0..=3u8 {
                let plane: Vec<u8> = values.iter().map(|&v| (v == class) as u8).collect();
                let (tp, _, _) = apply_spatial(&aug.record, &plane, 10, 10);
                let expected: Vec<u8> =
                    transformed.values().iter().map(|&v| (v == class) as u8).collect();
                prop_assert_eq!(tp, expected);
            }
        }
    }

    #[test]
    fn cutmix_probability_zero_is_identity() {
        let img: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let lbl = LabelMap::new(4, 4, 3, vec![1; 16]).unwrap();
        let mut items = vec![
            (img.clone(), lbl.clone(), vec![0.5; 16]),
            (img.clone(), lbl, vec![0.5; 16]),
        ];
        let plan = cutmix(&mut items, 0.0, &mut rng(1)).unwrap();
        assert!(plan.iter().all(|p| p.is_none()));
        assert_eq!(items[0].0, img);
    }

    #[test]
    fn full_box_swaps_everything() {
        let a: Vec<f64> = vec![1.0; 16];
        let b: Vec<f64> = vec![2.0; 16];
        let plan = vec![
            Some(CutMixBox {
                partner: 1,
                y0: 0,
                x0: 0,
                height: 4,
                width: 4,
            }),
            None,
        ];
        let mut planes = vec![a, b.clone()];
        apply_cutmix(&mut planes, 4, &plan);
        assert_eq!(planes[0], b);
        assert_eq!(planes[1], b);
    }

    #[test]
    fn hand_built_box_replaces_exactly_four_pixels() {
        let img_a: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let img_b: Vec<f64> = (0..16).map(|i| 100.0 + i as f64).collect();
        let lbl_a = LabelMap::new(4, 4, 3, vec![1; 16]).unwrap();
        let lbl_b = LabelMap::new(4, 4, 3, vec![2; 16]).unwrap();
        let plan = vec![
            Some(CutMixBox {
                partner: 1,
                y0: 0,
                x0: 0,
                height: 2,
                width: 2,
            }),
            None,
        ];
        let mut images = vec![img_a.clone(), img_b.clone()];
        let mut labels = vec![lbl_a.values().to_vec(), lbl_b.values().to_vec()];
        apply_cutmix(&mut images, 4, &plan);
        apply_cutmix(&mut labels, 4, &plan);
        for i in 0..16 {
            let inside = [0usize, 1, 4, 5].contains(&i);
            assert_eq!(images[0][i], if inside { img_b[i] } else { img_a[i] });
            assert_eq!(labels[0][i], if inside { 2 } else { 1 });
        }
    }

    #[test]
    fn singleton_batch_skips_mixing() {
        let plan = plan_cutmix(1, 4, 4, 1.0, &mut rng(5));
        assert_eq!(plan, vec![None]);
    }
}
