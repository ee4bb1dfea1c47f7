//! Teacher maintenance and pseudo-label machinery: EMA updates,
//! pseudo-labels in both directions, specialist ensembling, the consensus
//! mask between branches, and inter-head error detection.

use cgs_tensor::{Real, Tensor};

use crate::error::{CoreError, Result};
use crate::labels::{redefine_labels, LabelMap, SpecialistLabelMap};
use crate::network::CgsModel;

/// Plain (non-differentiating) per-pixel probability map.
#[derive(Debug, Clone)]
pub struct ProbValues {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl ProbValues {
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let shape = t.shape();
        if shape.len() != 3 {
            return Err(CoreError::ShapeMismatch(format!(
                "probability map must be [H, W, C], got {shape:?}"
            )));
        }
        Ok(ProbValues {
            height: shape[0],
            width: shape[1],
            channels: shape[2],
            values: t.values().iter().map(|&v| v as f64).collect(),
        })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.values[p * self.channels..(p + 1) * self.channels]
    }
}

/// H x W binary mask. Houses both the inter-head error-detection matrix
/// and the cross-branch consensus mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    pub height: usize,
    pub width: usize,
    values: Vec<bool>,
}

pub type ErrorDetectionMatrix = PixelMask;
pub type ConsensusMask = PixelMask;

impl PixelMask {
    pub fn new(height: usize, width: usize, values: Vec<bool>) -> Result<Self> {
        if values.len() != height * width {
            return Err(CoreError::ShapeMismatch(format!(
                "{} mask values for {height}x{width}",
                values.len()
            )));
        }
        Ok(PixelMask {
            height,
            width,
            values,
        })
    }

    pub fn ones(height: usize, width: usize) -> Self {
        PixelMask {
            height,
            width,
            values: vec![true; height * width],
        }
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.values.len().max(1) as f64
    }
}

fn argmax_lowest(row: &[f64]) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_v = row[0];
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    (best, best_v)
}

/// Per-pixel argmax class and confidence of a generalist teacher map;
/// ties break toward the lowest class index.
pub fn general_pseudo(map: &ProbValues) -> Result<(LabelMap, Vec<f64>)> {
    if map.channels < 3 {
        return Err(CoreError::ShapeMismatch(format!(
            "generalist map needs K+1 >= 3 channels, got {}",
            map.channels
        )));
    }
    let mut labels = Vec::with_capacity(map.pixels());
    let mut conf = Vec::with_capacity(map.pixels());
    for p in 0..map.pixels() {
        let (cls, v) = argmax_lowest(map.pixel(p));
        labels.push(cls as u8);
        conf.push(v);
    }
    Ok((
        LabelMap::new(map.height, map.width, map.channels - 1, labels)?,
        conf,
    ))
}

/// Hard {0,1,2} labels and confidences for one specialist teacher map.
pub fn specialist_pseudo(map: &ProbValues) -> Result<(Vec<u8>, Vec<f64>)> {
    if map.channels != 3 {
        return Err(CoreError::ShapeMismatch(format!(
            "specialist map needs 3 channels, got {}",
            map.channels
        )));
    }
    let mut labels = Vec::with_capacity(map.pixels());
    let mut conf = Vec::with_capacity(map.pixels());
    for p in 0..map.pixels() {
        let (cls, v) = argmax_lowest(map.pixel(p));
        labels.push(cls as u8);
        conf.push(v);
    }
    Ok((labels, conf))
}

/// Specialist-format pseudo-label for head k derived from a generalist
/// pseudo-label, by the same rule as label redefinition.
pub fn map_general_to_specialist(pseudo: &LabelMap, k: usize) -> Result<SpecialistLabelMap> {
    if k == 0 || k > pseudo.num_classes {
        return Err(CoreError::InvalidLabel(format!(
            "specialist index {k} out of 1..={}",
            pseudo.num_classes
        )));
    }
    let mut maps = redefine_labels(pseudo, pseudo.num_classes)?;
    Ok(maps.swap_remove(k - 1))
}

/// Ensemble of K specialist maps into a (K+1)-way decision.
///
/// The per-pixel score vector is s_0 = mean over heads of their background
/// probability and s_k = head k's target probability; the label is the
/// argmax (ties toward the lowest index). On hard one-hot inputs this
/// reduces to the pattern where exactly the claiming head wins.
pub fn ensemble_specialists(maps: &[ProbValues]) -> Result<(LabelMap, ProbValues)> {
    let k = maps.len();
    if k < 3 {
        return Err(CoreError::InvalidConfig(format!(
            "ensemble needs at least 3 specialists, got {k}"
        )));
    }
    let (h, w) = (maps[0].height, maps[0].width);
    for m in maps {
        if (m.height, m.width) != (h, w) || m.channels != 3 {
            return Err(CoreError::ShapeMismatch(
                "specialist maps must share extents and have 3 channels".into(),
            ));
        }
    }
    let pixels = h * w;
    let mut scores = vec![0.0f64; pixels * (k + 1)];
    let mut labels = Vec::with_capacity(pixels);
    for p in 0..pixels {
        let row = &mut scores[p * (k + 1)..(p + 1) * (k + 1)];
        row[0] = maps.iter().map(|m| m.pixel(p)[0]).sum::<f64>() / k as f64;
        for (i, m) in maps.iter().enumerate() {
            row[i + 1] = m.pixel(p)[1];
        }
        labels.push(argmax_lowest(row).0 as u8);
    }
    Ok((
        LabelMap::new(h, w, k, labels)?,
        ProbValues {
            height: h,
            width: w,
            channels: k + 1,
            values: scores,
        },
    ))
}

/// Inter-head error detection over per-head hard labels.
///
/// A pixel passes when either every head calls it background, or exactly
/// one head claims it as target while all remaining heads call it part of
/// their remaining classes.
pub fn ihed(head_labels: &[Vec<u8>], height: usize, width: usize) -> Result<ErrorDetectionMatrix> {
    let k = head_labels.len();
    if k < 3 {
        return Err(CoreError::InvalidConfig(format!(
            "inter-head error detection needs at least 3 heads, got {k}"
        )));
    }
    let pixels = height * width;
    for labels in head_labels {
        if labels.len() != pixels {
            return Err(CoreError::ShapeMismatch(format!(
                "{} head labels for {pixels} pixels",
                labels.len()
            )));
        }
        if labels.iter().any(|&v| v > 2) {
            return Err(CoreError::InvalidLabel("head labels must be in {0,1,2}".into()));
        }
    }
    let mut values = Vec::with_capacity(pixels);
    for p in 0..pixels {
        let mut zeros = 0usize;
        let mut ones = 0usize;
        let mut twos = 0usize;
        for labels in head_labels {
            match labels[p] {
                0 => zeros += 1,
                1 => ones += 1,
                _ => twos += 1,
            }
        }
        values.push(zeros == k || (ones == 1 && twos == k - 1));
    }
    PixelMask::new(height, width, values)
}

/// Filter an ensemble pseudo-label through the error-detection matrix.
/// Failing pixels stay in the map but are excluded from the consistency
/// loss via the returned mask — they are not coerced to background.
pub fn apply_ihed(b: &LabelMap, m_d: &ErrorDetectionMatrix) -> Result<(LabelMap, PixelMask)> {
    if (b.height, b.width) != (m_d.height, m_d.width) {
        return Err(CoreError::ShapeMismatch("pseudo-label and mask extents differ".into()));
    }
    Ok((b.clone(), m_d.clone()))
}

/// Pixels where the generalist and specialist-ensemble pseudo-labels agree.
pub fn consensus_mask(general: &LabelMap, ensemble: &LabelMap) -> Result<ConsensusMask> {
    if (general.height, general.width) != (ensemble.height, ensemble.width) {
        return Err(CoreError::ShapeMismatch("pseudo-label extents differ".into()));
    }
    PixelMask::new(
        general.height,
        general.width,
        general
            .values()
            .iter()
            .zip(ensemble.values())
            .map(|(&a, &b)| a == b)
            .collect(),
    )
}

/// Exponential moving average: teacher <- alpha * teacher + (1 - alpha) *
/// student, computed as student + alpha * (teacher - student) so the
/// teacher-student gap contracts by exactly alpha (up to one rounding per
/// coordinate); alpha = 0 copies the student bitwise. Batch-norm running
/// statistics are always copied from the student.
pub fn ema_update(teacher: &CgsModel, student: &CgsModel, alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CoreError::InvalidConfig(format!("alpha {alpha} outside [0, 1]")));
    }
    let tp = teacher.parameters();
    let sp = student.parameters();
    if tp.len() != sp.len() {
        return Err(CoreError::ShapeMismatch("teacher/student parameter lists differ".into()));
    }
    let alpha = alpha as Real;
    for (t, s) in tp.iter().zip(&sp) {
        if t.shape() != s.shape() {
            return Err(CoreError::ShapeMismatch(format!(
                "parameter shapes differ: {:?} vs {:?}",
                t.shape(),
                s.shape()
            )));
        }
        let sv = s.values();
        t.update_data(|tv| {
            if alpha == 0.0 {
                tv.copy_from_slice(&sv);
            } else {
                for (tvi, &svi) in tv.iter_mut().zip(&sv) {
                    *tvi = svi + alpha * (*tvi - svi);
                }
            }
        });
    }
    teacher.copy_buffers_from(student);
    Ok(())
}
