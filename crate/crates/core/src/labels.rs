//! Label maps, per-specialist label redefinition, and the participation
//! balance mathematics.
//!
//! A segmentation label map takes values in `{0..K}` where 0 is background
//! and `1..=K` are target classes. Each specialist k sees a redefined
//! three-way map: 0 = background, 1 = its own target class, 2 = the
//! remaining target classes. Because every class also participates in the
//! other K-1 specialists' training as "remaining", the effective per-class
//! training proportions contract toward 1/K; [`balanced_proportions`]
//! computes and verifies that contraction.

use crate::error::{CoreError, Result};

/// H x W integer map with values in `{0..K}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    values: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, num_classes: usize, values: Vec<u8>) -> Result<Self> {
        if num_classes < 2 {
            return Err(CoreError::InvalidLabel(format!(
                "need at least 2 target classes, got {num_classes}"
            )));
        }
        if values.len() != height * width {
            return Err(CoreError::InvalidLabel(format!(
                "{} values for {height}x{width} map",
                values.len()
            )));
        }
        if let Some(&bad) = values.iter().find(|&&v| v as usize > num_classes) {
            return Err(CoreError::InvalidLabel(format!(
                "label value {bad} exceeds class count {num_classes}"
            )));
        }
        Ok(LabelMap {
            height,
            width,
            num_classes,
            values,
        })
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.values[y * self.width + x]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Per-pixel labels as channel indices (for loss targets).
    pub fn as_indices(&self) -> Vec<usize> {
        self.values.iter().map(|&v| v as usize).collect()
    }
}

/// H x W map with values in `{0, 1, 2}` for one specialist:
/// 0 = background, 1 = target class `class_index`, 2 = remaining classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecialistLabelMap {
    pub height: usize,
    pub width: usize,
    /// 1-based target class this map belongs to.
    pub class_index: usize,
    values: Vec<u8>,
}

impl SpecialistLabelMap {
    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn as_indices(&self) -> Vec<usize> {
        self.values.iter().map(|&v| v as usize).collect()
    }
}

/// Rebuild a `{0..K}` label map into K three-way specialist maps.
pub fn redefine_labels(y: &LabelMap, num_classes: usize) -> Result<Vec<SpecialistLabelMap>> {
    if let Some(&bad) = y.values.iter().find(|&&v| v as usize > num_classes) {
        return Err(CoreError::InvalidLabel(format!(
            "label value {bad} exceeds class count {num_classes}"
        )));
    }
    Ok((1..=num_classes)
        .map(|k| SpecialistLabelMap {
            height: y.height,
            width: y.width,
            class_index: k,
            values: y
                .values
                .iter()
                .map(|&v| match v as usize {
                    0 => 0,
                    c if c == k => 1,
                    _ => 2,
                })
                .collect(),
        })
        .collect())
}

/// Dataset-level foreground proportions: p_i = |Y = i| / |Y != 0|.
pub fn class_proportions(dataset: &[LabelMap], num_classes: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0u64; num_classes + 1];
    for map in dataset {
        if map.num_classes != num_classes {
            return Err(CoreError::InvalidLabel(format!(
                "map has {} classes, expected {num_classes}",
                map.num_classes
            )));
        }
        for &v in &map.values {
            counts[v as usize] += 1;
        }
    }
    let foreground: u64 = counts[1..].iter().sum();
    if foreground == 0 {
        return Err(CoreError::InvalidProportions(
            "dataset has no foreground pixels".into(),
        ));
    }
    Ok(counts[1..]
        .iter()
        .map(|&c| c as f64 / foreground as f64)
        .collect())
}

fn check_simplex(p: &[f64]) -> Result<()> {
    if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(CoreError::InvalidProportions(format!(
            "proportions must lie in [0,1]: {p:?}"
        )));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(CoreError::InvalidProportions(format!(
            "proportions sum to {total}, expected 1"
        )));
    }
    Ok(())
}

/// Participation matrix: `P[i][j]` is the proportion of class i taking part
/// in specialist j's training — p_i on the diagonal (as the target), and
/// 1 - p_j off the diagonal (as part of the remaining classes).
pub fn participation_matrix(p: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_simplex(p)?;
    let k = p.len();
    Ok((0..k)
        .map(|i| (0..k).map(|j| if i == j { p[i] } else { 1.0 - p[j] }).collect())
        .collect())
}

/// Balance analysis of one proportion vector: effective proportions after
/// the specialist scheme, computed two ways, plus the contraction ratio.
#[derive(Debug, Clone)]
pub struct BalanceReport {
    pub p: Vec<f64>,
    pub participation: Vec<Vec<f64>>,
    pub p_prime: Vec<f64>,
    /// Contraction of per-class distance to 1/K: 2 / (K(K-2) + 2).
    pub ratio: f64,
}

impl BalanceReport {
    pub fn num_classes(&self) -> usize {
        self.p.len()
    }

    /// CSV rows: class, p, p_prime, distance_before, distance_after.
    pub fn to_csv(&self) -> String {
        let k = self.num_classes() as f64;
        let mut out = String::from("class,p,p_prime,distance_before,distance_after\n");
        for (i, (&pi, &ppi)) in self.p.iter().zip(&self.p_prime).enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                i + 1,
                pi,
                ppi,
                (pi - 1.0 / k).abs(),
                (ppi - 1.0 / k).abs()
            ));
        }
        out
    }
}

/// Effective training proportions under the specialist scheme.
///
/// Route (a) counts participation-matrix row sums over the grand total;
/// route (b) is the closed form (2 p_i + K - 2) / (K(K-2) + 2). Both are
/// computed and must agree to 1e-12, and the balance guarantee
/// |p'_i - 1/K| <= |p_i - 1/K| must hold, or construction fails.
pub fn balanced_proportions(p: &[f64]) -> Result<BalanceReport> {
    let k = p.len();
    if k < 3 {
        return Err(CoreError::InvalidProportions(format!(
            "balancing needs at least 3 target classes (the remaining-classes set \
             degenerates to a single class for K = {k})"
        )));
    }
    let participation = participation_matrix(p)?;

    let grand_total: f64 = participation.iter().flatten().sum();
    let p_prime_counted: Vec<f64> = participation
        .iter()
        .map(|row| row.iter().sum::<f64>() / grand_total)
        .collect();

    let kf = k as f64;
    let denom = kf * (kf - 2.0) + 2.0;
    let ratio = 2.0 / denom;
    let p_prime_closed: Vec<f64> = p.iter().map(|&pi| (2.0 * pi + kf - 2.0) / denom).collect();

    for (i, (&a, &b)) in p_prime_counted.iter().zip(&p_prime_closed).enumerate() {
        if (a - b).abs() > 1e-12 {
            return Err(CoreError::InvalidProportions(format!(
                "route disagreement for class {}: counted {a} vs closed form {b}",
                i + 1
            )));
        }
    }
    for (&pi, &ppi) in p.iter().zip(&p_prime_closed) {
        if (ppi - 1.0 / kf).abs() > (pi - 1.0 / kf).abs() + 1e-12 {
            return Err(CoreError::InvalidProportions(format!(
                "balance guarantee violated: |{ppi} - 1/K| > |{pi} - 1/K|"
            )));
        }
    }

    Ok(BalanceReport {
        p: p.to_vec(),
        participation,
        p_prime: p_prime_closed,
        ratio,
    })
}
