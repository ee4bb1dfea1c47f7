//! Segmentation evaluation: Dice / Jaccard overlap and 95th-percentile
//! Hausdorff / average symmetric surface distance, per class and averaged.

use crate::error::{CoreError, Result};
use crate::labels::LabelMap;

/// Dice and Jaccard for class `k`. Both masks empty counts as a perfect
/// match (1.0, 1.0).
pub fn overlap_metrics(pred: &LabelMap, gt: &LabelMap, class: usize) -> Result<(f64, f64)> {
    check_extents(pred, gt)?;
    let mut a = 0u64;
    let mut b = 0u64;
    let mut inter = 0u64;
    for (&pv, &gv) in pred.values().iter().zip(gt.values()) {
        let pa = pv as usize == class;
        let ga = gv as usize == class;
        a += pa as u64;
        b += ga as u64;
        inter += (pa && ga) as u64;
    }
    if a == 0 && b == 0 {
        return Ok((1.0, 1.0));
    }
    let union = a + b - inter;
    let dsc = 2.0 * inter as f64 / (a + b) as f64;
    let jaccard = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    Ok((dsc, jaccard))
}

/// Surface distances for class `k` in pixels: (hd95, asd, sentinel_flag).
///
/// Boundary pixels are class pixels with a 4-neighbor of a different class
/// or on the image edge. Directed distances are exact Euclidean
/// nearest-boundary distances; hd95 is the nearest-rank 95th percentile of
/// the union of both directed multisets and asd its mean. Both masks empty
/// gives (0, 0); exactly one empty reports the image diagonal and sets the
/// sentinel flag.
pub fn surface_metrics(pred: &LabelMap, gt: &LabelMap, class: usize) -> Result<(f64, f64, bool)> {
    check_extents(pred, gt)?;
    let pb = boundary_pixels(pred, class);
    let gb = boundary_pixels(gt, class);
    match (pb.is_empty(), gb.is_empty()) {
        (true, true) => return Ok((0.0, 0.0, false)),
        (true, false) | (false, true) => {
            let h = (pred.height as f64 - 1.0).max(0.0);
            let w = (pred.width as f64 - 1.0).max(0.0);
            let diagonal = (h * h + w * w).sqrt();
            return Ok((diagonal, diagonal, true));
        }
        (false, false) => {}
    }

    let mut distances = Vec::with_capacity(pb.len() + gb.len());
    directed_distances(&pb, &gb, &mut distances);
    directed_distances(&gb, &pb, &mut distances);
    distances.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let asd = distances.iter().sum::<f64>() / distances.len() as f64;
    // nearest-rank percentile: ceil(0.95 n)-th smallest, 1-indexed
    let rank = ((0.95 * distances.len() as f64).ceil() as usize).clamp(1, distances.len());
    let hd95 = distances[rank - 1];
    Ok((hd95, asd, false))
}

fn check_extents(pred: &LabelMap, gt: &LabelMap) -> Result<()> {
    if pred.height != gt.height || pred.width != gt.width {
        return Err(CoreError::ShapeMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    Ok(())
}

fn boundary_pixels(map: &LabelMap, class: usize) -> Vec<(usize, usize)> {
    let (h, w) = (map.height, map.width);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if map.get(y, x) as usize != class {
                continue;
            }
            let on_edge = y == 0 || x == 0 || y == h - 1 || x == w - 1;
            let differs = (y > 0 && map.get(y - 1, x) as usize != class)
                || (y + 1 < h && map.get(y + 1, x) as usize != class)
                || (x > 0 && map.get(y, x - 1) as usize != class)
                || (x + 1 < w && map.get(y, x + 1) as usize != class);
            if on_edge || differs {
                out.push((y, x));
            }
        }
    }
    out
}

fn directed_distances(from: &[(usize, usize)], to: &[(usize, usize)], out: &mut Vec<f64>) {
    for &(ay, ax) in from {
        let mut best = f64::INFINITY;
        for &(by, bx) in to {
            let dy = ay as f64 - by as f64;
            let dx = ax as f64 - bx as f64;
            let d2 = dy * dy + dx * dx;
            if d2 < best {
                best = d2;
            }
        }
        out.push(best.sqrt());
    }
}

/// Per-class metrics averaged over a test set.
#[derive(Debug, Clone)]
pub struct ClassMetrics {
    pub class: usize,
    pub dsc: f64,
    pub jaccard: f64,
    pub hd95: f64,
    pub asd: f64,
    /// Number of images whose surface distances hit the one-empty sentinel.
    pub sentinel_images: usize,
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub mean_dsc: f64,
    pub mean_jaccard: f64,
    pub mean_hd95: f64,
    pub mean_asd: f64,
}

impl MetricsReport {
    /// CSV rows: class, dsc, jaccard, hd95, asd (plus a macro-average row).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,dsc,jaccard,hd95,asd\n");
        for c in &self.per_class {
            out.push_str(&format!("{},{},{},{},{}\n", c.class, c.dsc, c.jaccard, c.hd95, c.asd));
        }
        out.push_str(&format!(
            "mean,{},{},{},{}\n",
            self.mean_dsc, self.mean_jaccard, self.mean_hd95, self.mean_asd
        ));
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "DSC {:.4}  Jaccard {:.4}  95HD {:.3}  ASD {:.3}",
            self.mean_dsc, self.mean_jaccard, self.mean_hd95, self.mean_asd
        )
    }
}

/// Evaluate predictions against ground truths: per-class metrics are
/// computed per image, averaged over images, then macro-averaged.
pub fn evaluate(predictions: &[LabelMap], ground_truths: &[LabelMap], num_classes: usize) -> Result<MetricsReport> {
    if predictions.len() != ground_truths.len() || predictions.is_empty() {
        return Err(CoreError::ShapeMismatch(format!(
            "{} predictions vs {} ground truths",
            predictions.len(),
            ground_truths.len()
        )));
    }
    let n = predictions.len() as f64;
    let mut per_class = Vec::with_capacity(num_classes);
    for class in 1..=num_classes {
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        let mut sentinels = 0usize;
        for (pred, gt) in predictions.iter().zip(ground_truths) {
            let (dsc, jac) = overlap_metrics(pred, gt, class)?;
            let (hd95, asd, sentinel) = surface_metrics(pred, gt, class)?;
            sums.0 += dsc;
            sums.1 += jac;
            sums.2 += hd95;
            sums.3 += asd;
            sentinels += sentinel as usize;
        }
        per_class.push(ClassMetrics {
            class,
            dsc: sums.0 / n,
            jaccard: sums.1 / n,
            hd95: sums.2 / n,
            asd: sums.3 / n,
            sentinel_images: sentinels,
        });
    }
    let kf = num_classes as f64;
    Ok(MetricsReport {
        mean_dsc: per_class.iter().map(|c| c.dsc).sum::<f64>() / kf,
        mean_jaccard: per_class.iter().map(|c| c.jaccard).sum::<f64>() / kf,
        mean_hd95: per_class.iter().map(|c| c.hd95).sum::<f64>() / kf,
        mean_asd: per_class.iter().map(|c| c.asd).sum::<f64>() / kf,
        per_class,
    })
}
