//! Segmentation losses: cross-entropy, dice, their sum H, and the
//! supervised / unsupervised / cross-branch consistency terms that make up
//! the total training objective.
//!
//! Every loss is a differentiable scalar tensor over the student's
//! probability maps. Teacher-side inputs arrive as plain values; masks
//! (confidence filtering, inter-head error detection, consensus) restrict
//! both the cross-entropy mean and the dice sums to the surviving pixels.
//! A fully masked loss is exactly zero and propagates zero gradient.

use cgs_tensor::{gather_class, Real, Tensor};

use crate::error::{CoreError, Result};
use crate::labels::{redefine_labels, LabelMap, SpecialistLabelMap};
use crate::pseudo::{general_pseudo, specialist_pseudo, PixelMask, ProbValues};

pub const CE_CLAMP: Real = 1e-12;
pub const DICE_EPS: Real = 1e-5;

fn check_probs_vs_target(probs: &Tensor, target: &[usize], mask: Option<&PixelMask>) -> Result<(usize, usize, usize)> {
    let shape = probs.shape();
    if shape.len() != 3 {
        return Err(CoreError::ShapeMismatch(format!(
            "probability map must be [H, W, C], got {shape:?}"
        )));
    }
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    if target.len() != h * w {
        return Err(CoreError::ShapeMismatch(format!(
            "{} target pixels for {h}x{w} map",
            target.len()
        )));
    }
    if let Some(m) = mask {
        if (m.height, m.width) != (h, w) {
            return Err(CoreError::ShapeMismatch(format!(
                "mask {}x{} for {h}x{w} map",
                m.height, m.width
            )));
        }
    }
    Ok((h, w, c))
}

/// Mean over unmasked pixels of -log(p[target]), probabilities clamped to
/// [`CE_CLAMP`] before the log. An empty mask yields exactly zero.
pub fn cross_entropy(probs: &Tensor, target: &[usize], mask: Option<&PixelMask>) -> Result<Tensor> {
    let (h, w, _) = check_probs_vs_target(probs, target, mask)?;
    let count = mask.map_or(h * w, PixelMask::count);
    if count == 0 {
        return Ok(Tensor::scalar(0.0));
    }
    let logged = gather_class(probs, target)?.log_clamped(CE_CLAMP);
    let summed = match mask {
        Some(m) => {
            let weights: Vec<Real> = m.values().iter().map(|&b| b as u8 as Real).collect();
            logged.mul(&Tensor::from_vec(&[h, w], weights)?)?.sum()
        }
        None => logged.sum(),
    };
    Ok(summed.scale(-1.0 / count as Real))
}

/// Smoothed multi-channel dice loss:
/// 1 - mean_c (2 sum p_c g_c + eps) / (sum p_c + sum g_c + eps), with all
/// sums over unmasked pixels and channels including background.
pub fn dice_loss(probs: &Tensor, target: &[usize], mask: Option<&PixelMask>) -> Result<Tensor> {
    let (h, w, c) = check_probs_vs_target(probs, target, mask)?;
    if let Some(&bad) = target.iter().find(|&&t| t >= c) {
        return Err(CoreError::ShapeMismatch(format!(
            "target class {bad} out of range for {c} channels"
        )));
    }
    let pixels = h * w;
    let mut one_hot = vec![0.0 as Real; pixels * c];
    let mut g_count = vec![0.0 as Real; c];
    let included = |p: usize| mask.is_none_or(|m| m.values()[p]);
    for (p, &t) in target.iter().enumerate() {
        if included(p) {
            one_hot[p * c + t] = 1.0;
            g_count[t] += 1.0;
        }
    }
    let one_hot = Tensor::from_vec(&[h, w, c], one_hot)?;

    let pred_sum = match mask {
        Some(m) => {
            let mut mask3 = vec![0.0 as Real; pixels * c];
            for (p, &b) in m.values().iter().enumerate() {
                if b {
                    mask3[p * c..(p + 1) * c].fill(1.0);
                }
            }
            probs.mul(&Tensor::from_vec(&[h, w, c], mask3)?)?.sum_keep_last()?
        }
        None => probs.sum_keep_last()?,
    };

    let numerator = probs.mul(&one_hot)?.sum_keep_last()?.scale(2.0).add_scalar(DICE_EPS);
    let denominator = pred_sum.add(&Tensor::from_vec(&[c], g_count)?)?.add_scalar(DICE_EPS);
    let dice = numerator.div(&denominator)?.mean();
    Ok(dice.scale(-1.0).add_scalar(1.0))
}

/// Combined segmentation loss H = cross-entropy + dice.
pub fn seg_loss_h(probs: &Tensor, target: &[usize], mask: Option<&PixelMask>) -> Result<Tensor> {
    cross_entropy(probs, target, mask)?.add(&dice_loss(probs, target, mask)?).map_err(Into::into)
}

fn mean_over_heads(terms: Vec<Tensor>) -> Result<Tensor> {
    let k = terms.len();
    let mut it = terms.into_iter();
    let mut acc = it.next().ok_or_else(|| CoreError::InvalidConfig("no specialist heads".into()))?;
    for t in it {
        acc = acc.add(&t)?;
    }
    Ok(acc.scale(1.0 / k as Real))
}

/// Supervised losses on a labeled sample: the generalist against the
/// label, and the specialist mean against the redefined three-way labels.
pub fn supervised_losses(
    general: &Tensor,
    specialists: &[Tensor],
    label: &LabelMap,
) -> Result<(Tensor, Tensor)> {
    let k = label.num_classes;
    if specialists.len() != k {
        return Err(CoreError::InvalidConfig(format!(
            "{} specialist maps for {k} classes",
            specialists.len()
        )));
    }
    let l_sup = seg_loss_h(general, &label.as_indices(), None)?;
    let redefined = redefine_labels(label, k)?;
    let terms = specialists
        .iter()
        .zip(&redefined)
        .map(|(q, z)| seg_loss_h(q, &z.as_indices(), None))
        .collect::<Result<Vec<_>>>()?;
    Ok((l_sup, mean_over_heads(terms)?))
}

fn confidence_mask(conf: &[f64], h: usize, w: usize, tau: f64) -> Result<PixelMask> {
    PixelMask::new(h, w, conf.iter().map(|&c| c > tau).collect())
}

/// Unsupervised losses against teacher pseudo-labels, confidence-filtered
/// per pixel by `max(teacher prob) > tau`.
pub fn unsupervised_losses(
    student_general: &Tensor,
    student_specialists: &[Tensor],
    teacher_general: &ProbValues,
    teacher_specialists: &[ProbValues],
    tau: f64,
) -> Result<(Tensor, Tensor)> {
    if !(0.0..1.0).contains(&tau) {
        return Err(CoreError::InvalidConfig(format!(
            "confidence threshold {tau} outside [0, 1)"
        )));
    }
    if student_specialists.len() != teacher_specialists.len() {
        return Err(CoreError::InvalidConfig(
            "student/teacher specialist counts differ".into(),
        ));
    }
    let (pseudo, conf) = general_pseudo(teacher_general)?;
    let mask = confidence_mask(&conf, teacher_general.height, teacher_general.width, tau)?;
    let l_u = seg_loss_h(student_general, &pseudo.as_indices(), Some(&mask))?;

    let terms = student_specialists
        .iter()
        .zip(teacher_specialists)
        .map(|(q_s, q_t)| {
            let (labels, conf_k) = specialist_pseudo(q_t)?;
            let mask_k = confidence_mask(&conf_k, q_t.height, q_t.width, tau)?;
            let indices: Vec<usize> = labels.iter().map(|&v| v as usize).collect();
            seg_loss_h(q_s, &indices, Some(&mask_k))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((l_u, mean_over_heads(terms)?))
}

/// Cross-branch consistency terms.
///
/// - `l_c1`: generalist student against the error-filtered specialist
///   ensemble pseudo-label B' (failed pixels excluded via `valid`);
/// - `l_c2`: specialist students against the generalist pseudo-label
///   redefined per head;
/// - `l_c3`: both branches against the agreed label inside the consensus
///   mask.
///
/// None of these carry a confidence threshold; filtering comes only from
/// the error-detection and consensus masks.
#[allow(clippy::too_many_arguments)]
pub fn consistency_losses(
    student_general: &Tensor,
    student_specialists: &[Tensor],
    b_prime: &LabelMap,
    valid: &PixelMask,
    b_k: &[SpecialistLabelMap],
    m_c: &PixelMask,
    a: &LabelMap,
    a_k: &[SpecialistLabelMap],
) -> Result<(Tensor, Tensor, Tensor)> {
    let k = student_specialists.len();
    if b_k.len() != k || a_k.len() != k {
        return Err(CoreError::InvalidConfig(
            "per-head pseudo-label count does not match specialist count".into(),
        ));
    }
    let l_c1 = seg_loss_h(student_general, &b_prime.as_indices(), Some(valid))?;

    let c2_terms = student_specialists
        .iter()
        .zip(b_k)
        .map(|(q, z)| seg_loss_h(q, &z.as_indices(), None))
        .collect::<Result<Vec<_>>>()?;
    let l_c2 = mean_over_heads(c2_terms)?;

    let general_c3 = seg_loss_h(student_general, &a.as_indices(), Some(m_c))?;
    let c3_terms = student_specialists
        .iter()
        .zip(a_k)
        .map(|(q, z)| seg_loss_h(q, &z.as_indices(), Some(m_c)))
        .collect::<Result<Vec<_>>>()?;
    let l_c3 = general_c3.add(&mean_over_heads(c3_terms)?)?;
    Ok((l_c1, l_c2, l_c3))
}

/// Per-iteration loss values for logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_sup: f64,
    pub l_sup_mh: f64,
    pub l_u: f64,
    pub l_u_mh: f64,
    pub l_c1: f64,
    pub l_c2: f64,
    pub l_c3: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.l_sup, self.l_sup_mh, self.l_u, self.l_u_mh, self.l_c1, self.l_c2, self.l_c3,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

pub struct TotalLossTerms<'a> {
    pub l_sup: &'a Tensor,
    pub l_sup_mh: &'a Tensor,
    pub l_u: &'a Tensor,
    pub l_u_mh: &'a Tensor,
    pub l_c1: &'a Tensor,
    pub l_c2: &'a Tensor,
    pub l_c3: &'a Tensor,
}

/// Total objective: supervised terms, lambda-weighted unsupervised terms,
/// and unscaled consistency terms.
pub fn total_loss(terms: TotalLossTerms<'_>, lambda: f64) -> Result<(Tensor, LossBreakdown)> {
    let unsupervised = terms.l_u.add(terms.l_u_mh)?.scale(lambda as Real);
    let consistency = terms.l_c1.add(terms.l_c2)?.add(terms.l_c3)?;
    let total = terms
        .l_sup
        .add(terms.l_sup_mh)?
        .add(&unsupervised)?
        .add(&consistency)?;
    let breakdown = LossBreakdown {
        l_sup: terms.l_sup.item() as f64,
        l_sup_mh: terms.l_sup_mh.item() as f64,
        l_u: terms.l_u.item() as f64,
        l_u_mh: terms.l_u_mh.item() as f64,
        l_c1: terms.l_c1.item() as f64,
        l_c2: terms.l_c2.item() as f64,
        l_c3: terms.l_c3.item() as f64,
        lambda,
        total: total.item() as f64,
    };
    Ok((total, breakdown))
}
