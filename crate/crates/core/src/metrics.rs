//! Region similarity (J), contour accuracy (F) and their mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{mask_iou, BinaryMask, MaskSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub j_mean: f64,
    pub f_mean: f64,
    pub jf_mean: f64,
    pub per_frame_j: Vec<f64>,
    pub per_frame_f: Vec<f64>,
}

impl EvalReport {
    /// Uniform mean over reports, field by field. Per-frame lists are concatenated.
    pub fn mean_of(reports: &[EvalReport]) -> Option<EvalReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let j = reports.iter().map(|r| r.j_mean).sum::<f64>() / n;
        let f = reports.iter().map(|r| r.f_mean).sum::<f64>() / n;
        Some(EvalReport {
            j_mean: j,
            f_mean: f,
            jf_mean: jf_mean(j, f),
            per_frame_j: reports.iter().flat_map(|r| r.per_frame_j.clone()).collect(),
            per_frame_f: reports.iter().flat_map(|r| r.per_frame_f.clone()).collect(),
        })
    }
}

/// Boundary match radius in pixels: 0.8% of the image diagonal, rounded up.
pub fn default_boundary_radius(width: u32, height: u32) -> u32 {
    let diag = (width as f64).hypot(height as f64);
    (0.008 * diag).ceil() as u32
}

fn check_sequences(pred: &MaskSequence, gt: &MaskSequence) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "prediction has {} frames, ground truth has {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

pub fn region_similarity(pred: &MaskSequence, gt: &MaskSequence) -> Result<f64> {
    Ok(mean(&per_frame_j(pred, gt)?))
}

pub fn contour_accuracy(pred: &MaskSequence, gt: &MaskSequence, radius: Option<u32>) -> Result<f64> {
    Ok(mean(&per_frame_f(pred, gt, radius)?))
}

pub fn jf_mean(j: f64, f: f64) -> f64 {
    (j + f) / 2.0
}

fn per_frame_j(pred: &MaskSequence, gt: &MaskSequence) -> Result<Vec<f64>> {
    check_sequences(pred, gt)?;
    pred.frames
        .iter()
        .zip(&gt.frames)
        .map(|(p, g)| mask_iou(p, g))
        .collect()
}

fn per_frame_f(pred: &MaskSequence, gt: &MaskSequence, radius: Option<u32>) -> Result<Vec<f64>> {
    check_sequences(pred, gt)?;
    pred.frames
        .iter()
        .zip(&gt.frames)
        .map(|(p, g)| {
            let r = radius.unwrap_or_else(|| default_boundary_radius(g.width(), g.height()));
            boundary_f_measure(p, g, r)
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// J, F and J&F for one predicted sequence. `radius = None` uses
/// [`default_boundary_radius`].
pub fn evaluate(pred: &MaskSequence, gt: &MaskSequence, radius: Option<u32>) -> Result<EvalReport> {
    let per_frame_j = per_frame_j(pred, gt)?;
    let per_frame_f = per_frame_f(pred, gt, radius)?;
    let (j, f) = (mean(&per_frame_j), mean(&per_frame_f));
    Ok(EvalReport {
        j_mean: j,
        f_mean: f,
        jf_mean: jf_mean(j, f),
        per_frame_j,
        per_frame_f,
    })
}

/// Set pixels with at least one unset 4-neighbour, or lying on the image border.
pub fn boundary_bitmap(mask: &BinaryMask) -> Vec<bool> {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let bits = mask.to_bitmap();
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !bits[i] {
                continue;
            }
            let on_border = x == 0 || y == 0 || x + 1 == w || y + 1 == h;
            out[i] = on_border || !bits[i - 1] || !bits[i + 1] || !bits[i - w] || !bits[i + w];
        }
    }
    out
}

fn disk_offsets(radius: u32) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let r2 = r * r;
    (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r2)
        .collect()
}

fn dilate_with(bits: &[bool], w: usize, h: usize, offsets: &[(i64, i64)]) -> Vec<bool> {
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if !bits[y * w + x] {
                continue;
            }
            for &(dx, dy) in offsets {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                    out[ny as usize * w + nx as usize] = true;
                }
            }
        }
    }
    out
}

/// Boundary F-measure for one frame. A boundary pixel counts as matched when
/// the other boundary has a pixel within Euclidean distance `radius`.
pub fn boundary_f_measure(pred: &BinaryMask, gt: &BinaryMask, radius: u32) -> Result<f64> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::Shape(format!(
            "mask sizes differ: {}x{} vs {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let (w, h) = (gt.width() as usize, gt.height() as usize);
    let pb = boundary_bitmap(pred);
    let gb = boundary_bitmap(gt);
    let n_pred = pb.iter().filter(|&&b| b).count();
    let n_gt = gb.iter().filter(|&&b| b).count();
    match (n_pred, n_gt) {
        (0, 0) => return Ok(1.0),
        (0, _) | (_, 0) => return Ok(0.0),
        _ => {}
    }
    let offsets = disk_offsets(radius);
    let gt_zone = dilate_with(&gb, w, h, &offsets);
    let pred_zone = dilate_with(&pb, w, h, &offsets);
    let matched_pred = pb.iter().zip(&gt_zone).filter(|(p, z)| **p && **z).count();
    let matched_gt = gb.iter().zip(&pred_zone).filter(|(g, z)| **g && **z).count();
    let precision = matched_pred as f64 / n_pred as f64;
    let recall = matched_gt as f64 / n_gt as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}
