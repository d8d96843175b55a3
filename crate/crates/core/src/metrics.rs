//! DAVIS-style region (J) and contour (F) accuracy, scaled to `[0, 100]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::types::IdMask;
use crate::{Error, Result};

/// Default boundary tolerance as a fraction of the image diagonal.
pub const DEFAULT_BOUNDARY_TOLERANCE: f64 = 0.008;

fn check_shapes(pred: &IdMask, gt: &IdMask) -> Result<()> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::Shape(alloc::format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    Ok(())
}

/// Region similarity: `100 * |P ∩ G| / |P ∪ G|`; 100 when both are empty.
pub fn jaccard(pred: &IdMask, gt: &IdMask, object_id: u8) -> Result<f64> {
    check_shapes(pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, g) in pred.object_pixels(object_id).zip(gt.object_pixels(object_id)) {
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 {
        100.0
    } else {
        100.0 * inter as f64 / union as f64
    })
}

/// One-pixel inner contour: object pixels with a 4-neighbour outside the
/// object. Image borders do not count as contour.
pub fn object_boundary(mask: &IdMask, object_id: u8) -> Vec<bool> {
    let (h, w) = (mask.height(), mask.width());
    let inside = |y: usize, x: usize| mask.get(y, x) == object_id;
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if !inside(y, x) {
                continue;
            }
            let edge = (y > 0 && !inside(y - 1, x))
                || (y + 1 < h && !inside(y + 1, x))
                || (x > 0 && !inside(y, x - 1))
                || (x + 1 < w && !inside(y, x + 1));
            out[y * w + x] = edge;
        }
    }
    out
}

/// Matching radius in pixels for an image of `h x w`.
pub fn boundary_radius(h: usize, w: usize, tolerance_frac: f64) -> usize {
    let diag = libm::sqrt((h * h + w * w) as f64);
    libm::ceil(tolerance_frac * diag) as usize
}

fn dilate_disk(src: &[bool], h: usize, w: usize, radius: usize) -> Vec<bool> {
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|&(dy, dx)| dy * dy + dx * dx <= r * r)
        .collect();
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if !src[y * w + x] {
                continue;
            }
            for &(dy, dx) in &offsets {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w {
                    out[ny as usize * w + nx as usize] = true;
                }
            }
        }
    }
    out
}

/// Contour accuracy: F-measure of boundary pixels matched within
/// `ceil(tolerance_frac * diagonal)` pixels in both directions.
pub fn boundary_f(pred: &IdMask, gt: &IdMask, object_id: u8, tolerance_frac: f64) -> Result<f64> {
    check_shapes(pred, gt)?;
    let (h, w) = (pred.height(), pred.width());
    let pb = object_boundary(pred, object_id);
    let gb = object_boundary(gt, object_id);
    let n_pred = pb.iter().filter(|&&b| b).count();
    let n_gt = gb.iter().filter(|&&b| b).count();
    match (n_pred, n_gt) {
        (0, 0) => return Ok(100.0),
        (0, _) | (_, 0) => return Ok(0.0),
        _ => {}
    }
    let r = boundary_radius(h, w, tolerance_frac);
    let gd = dilate_disk(&gb, h, w, r);
    let pd = dilate_disk(&pb, h, w, r);
    let matched_pred = pb.iter().zip(&gd).filter(|(&b, &d)| b && d).count();
    let matched_gt = gb.iter().zip(&pd).filter(|(&b, &d)| b && d).count();
    let precision = matched_pred as f64 / n_pred as f64;
    let recall = matched_gt as f64 / n_gt as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * 2.0 * precision * recall / (precision + recall))
}

/// Per-object averages over one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceResult {
    pub object_ids: Vec<u8>,
    pub per_object_j: Vec<f64>,
    pub per_object_f: Vec<f64>,
    pub jf: f64,
    pub frames_evaluated: usize,
}

impl SequenceResult {
    pub fn mean_j(&self) -> f64 {
        mean(&self.per_object_j)
    }

    pub fn mean_f(&self) -> f64 {
        mean(&self.per_object_f)
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Drop the annotated first frame and the last frame when the sequence
    /// has more than two frames.
    pub skip_first_last: bool,
    pub tolerance_frac: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            skip_first_last: true,
            tolerance_frac: DEFAULT_BOUNDARY_TOLERANCE,
        }
    }
}

/// Evaluates a sequence over the objects of the first ground-truth frame.
pub fn evaluate_sequence(
    preds: &[IdMask],
    gts: &[IdMask],
    opts: &EvalOptions,
) -> Result<SequenceResult> {
    if preds.len() != gts.len() || gts.is_empty() {
        return Err(Error::Shape(alloc::format!(
            "{} predictions for {} ground-truth frames",
            preds.len(),
            gts.len()
        )));
    }
    let n = gts.len();
    let range = if opts.skip_first_last && n > 2 { 1..n - 1 } else { 0..n };
    let object_ids = gts[0].object_ids().to_vec();
    let mut per_object_j = Vec::with_capacity(object_ids.len());
    let mut per_object_f = Vec::with_capacity(object_ids.len());
    for &id in &object_ids {
        let mut js = Vec::new();
        let mut fs = Vec::new();
        for t in range.clone() {
            js.push(jaccard(&preds[t], &gts[t], id)?);
            fs.push(boundary_f(&preds[t], &gts[t], id, opts.tolerance_frac)?);
        }
        per_object_j.push(mean(&js));
        per_object_f.push(mean(&fs));
    }
    let jf = (mean(&per_object_j) + mean(&per_object_f)) / 2.0;
    Ok(SequenceResult {
        object_ids,
        per_object_j,
        per_object_f,
        jf,
        frames_evaluated: range.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(h: usize, w: usize, y0: usize, y1: usize, x0: usize, x1: usize) -> IdMask {
        let mut labels = vec![0u8; h * w];
        for y in y0..y1 {
            for x in x0..x1 {
                labels[y * w + x] = 1;
            }
        }
        IdMask::new(h, w, labels).unwrap()
    }

    #[test]
    fn jaccard_basic_cases() {
        let a = rect(20, 20, 2, 12, 2, 12);
        assert_eq!(jaccard(&a, &a, 1).unwrap(), 100.0);
        let b = rect(20, 20, 14, 18, 14, 18);
        assert_eq!(jaccard(&a, &b, 1).unwrap(), 0.0);
        let e = IdMask::background(20, 20);
        assert_eq!(jaccard(&e, &e, 1).unwrap(), 100.0);
        assert_eq!(jaccard(&a, &e, 1).unwrap(), 0.0);
    }

    #[test]
    fn jaccard_strip_overlap() {
        let a = rect(30, 30, 0, 10, 0, 10);
        let b = rect(30, 30, 5, 15, 0, 10);
        let j = jaccard(&a, &b, 1).unwrap();
        assert!((j - 100.0 * 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_f_cases() {
        let a = rect(100, 100, 30, 60, 30, 60);
        assert_eq!(boundary_f(&a, &a, 1, 0.008).unwrap(), 100.0);
        assert_eq!(boundary_radius(100, 100, 0.008), 2);
        let b = rect(100, 100, 31, 61, 30, 60);
        assert_eq!(boundary_f(&a, &b, 1, 0.008).unwrap(), 100.0);
        let c = rect(100, 100, 35, 65, 30, 60);
        assert!(boundary_f(&a, &c, 1, 0.008).unwrap() < 100.0);
        let far = rect(100, 100, 80, 90, 80, 90);
        assert_eq!(boundary_f(&a, &far, 1, 0.008).unwrap(), 0.0);
    }

    #[test]
    fn empty_conventions() {
        let e = IdMask::background(16, 16);
        let a = rect(16, 16, 2, 8, 2, 8);
        assert_eq!(boundary_f(&e, &e, 1, 0.008).unwrap(), 100.0);
        assert_eq!(boundary_f(&a, &e, 1, 0.008).unwrap(), 0.0);
        assert_eq!(boundary_f(&e, &a, 1, 0.008).unwrap(), 0.0);
    }

    #[test]
    fn perfect_sequence_scores_100() {
        let m = rect(32, 32, 4, 20, 4, 20);
        let seq = vec![m.clone(), m.clone(), m.clone(), m];
        let r = evaluate_sequence(&seq, &seq, &EvalOptions::default()).unwrap();
        assert_eq!(r.jf, 100.0);
        assert_eq!(r.frames_evaluated, 2);
    }

    #[test]
    fn jf_is_mean_of_means() {
        let r = SequenceResult {
            object_ids: vec![1],
            per_object_j: vec![100.0],
            per_object_f: vec![80.0],
            jf: 90.0,
            frames_evaluated: 3,
        };
        assert_eq!((r.mean_j() + r.mean_f()) / 2.0, r.jf);
    }

    #[test]
    fn length_mismatch_rejected() {
        let m = rect(16, 16, 2, 8, 2, 8);
        assert!(evaluate_sequence(&[m.clone()], &[m.clone(), m], &EvalOptions::default()).is_err());
    }
}
