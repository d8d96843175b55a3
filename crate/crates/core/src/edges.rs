//! Non-learned edge machinery: the Canny prior, ground-truth structure maps,
//! and the two Hadamard fusion operators that inject them into features.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::types::{EdgeMap, FeaturePyramid, FrameTensor, IdMask, StructureKind, StructureMap};
use crate::{Array3, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CannyConfig {
    /// Hysteresis low threshold on the 0-255 gradient-magnitude scale.
    pub low_threshold: f64,
    pub high_threshold: f64,
    pub gaussian_sigma: f64,
    /// Euclidean gradient magnitude when set, `|gx| + |gy|` otherwise.
    pub l2_gradient: bool,
}

impl Default for CannyConfig {
    fn default() -> Self {
        Self {
            low_threshold: 50.0,
            high_threshold: 200.0,
            gaussian_sigma: 1.4,
            l2_gradient: true,
        }
    }
}

impl CannyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.low_threshold > 0.0 && self.low_threshold < self.high_threshold) {
            return Err(Error::Config(format!(
                "canny thresholds must satisfy 0 < low < high, got {} / {}",
                self.low_threshold, self.high_threshold
            )));
        }
        if !(self.gaussian_sigma > 0.0) {
            return Err(Error::Config("gaussian_sigma must be positive".into()));
        }
        Ok(())
    }

    pub fn kernel_radius(&self) -> usize {
        libm::ceil(3.0 * self.gaussian_sigma) as usize
    }

    /// Width of the smoothing kernel in pixels.
    pub fn kernel_support(&self) -> usize {
        2 * self.kernel_radius() + 1
    }
}

/// Importance factors of the two fusion operators.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FusionConfig {
    /// Edge-prior weight in [`edge_highlight`].
    pub epsilon: f32,
    /// Structure-map weight in [`structure_refine`].
    pub beta: f32,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            beta: 1.0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("epsilon", self.epsilon), ("beta", self.beta)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

// Grayscale values are snapped to this grid before filtering so that a
// constant intensity offset yields bit-identical gradients.
const GRAY_QUANTUM: f64 = 256.0;

/// Canny edge detector: luminance, Gaussian smoothing, Sobel gradients,
/// non-maximum suppression and 8-connected double-threshold hysteresis.
pub fn canny(frame: &FrameTensor, cfg: &CannyConfig) -> Result<EdgeMap> {
    cfg.validate()?;
    let (h, w) = (frame.height(), frame.width());
    let support = cfg.kernel_support();
    if h < support || w < support {
        return Err(Error::FrameTooSmall {
            height: h,
            width: w,
            support,
        });
    }

    let mut gray = frame.luminance();
    let min = gray.iter().cloned().fold(f64::INFINITY, f64::min);
    for v in gray.iter_mut() {
        *v = libm::round((*v - min) * 255.0 * GRAY_QUANTUM) / GRAY_QUANTUM;
    }

    let smoothed = gaussian_blur(&gray, h, w, cfg.gaussian_sigma, cfg.kernel_radius());
    let (gx, gy) = sobel(&smoothed, h, w);
    let mag: Vec<f64> = gx
        .iter()
        .zip(&gy)
        .map(|(&x, &y)| {
            if cfg.l2_gradient {
                libm::sqrt(x * x + y * y)
            } else {
                x.abs() + y.abs()
            }
        })
        .collect();
    let thin = non_maximum_suppression(&mag, &gx, &gy, h, w);
    let edges = hysteresis(&thin, h, w, cfg.low_threshold, cfg.high_threshold);

    let values = Array3::from_vec(
        [1, h, w],
        edges.into_iter().map(|e| if e { 1.0 } else { 0.0 }).collect(),
    )?;
    EdgeMap::new(values)
}

#[inline]
fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

fn gaussian_blur(src: &[f64], h: usize, w: usize, sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let mut kernel: Vec<f64> = (-r..=r)
        .map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let s: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= s);

    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                let xx = clamp_idx(x as isize + j as isize - r, w);
                acc += k * src[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                let yy = clamp_idx(y as isize + j as isize - r, h);
                acc += k * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn sobel(src: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let at = |y: isize, x: isize| src[clamp_idx(y, h) * w + clamp_idx(x, w)];
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            gy[i] = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
        }
    }
    (gx, gy)
}

fn non_maximum_suppression(mag: &[f64], gx: &[f64], gy: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    let at = |y: isize, x: isize| mag[clamp_idx(y, h) * w + clamp_idx(x, w)];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let m = mag[i];
            if m == 0.0 {
                continue;
            }
            let mut angle = libm::atan2(gy[i], gx[i]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            // (dy, dx) of the forward neighbour along the gradient; y grows downwards
            let (dy, dx) = if !(22.5..157.5).contains(&angle) {
                (0, 1)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            // exact ties on a symmetric ridge keep only the forward pixel
            if m >= at(y - dy, x - dx) && m > at(y + dy, x + dx) {
                out[i] = m;
            }
        }
    }
    out
}

fn hysteresis(thin: &[f64], h: usize, w: usize, low: f64, high: f64) -> Vec<bool> {
    let mut edge = vec![false; h * w];
    let mut stack = Vec::new();
    for (i, &m) in thin.iter().enumerate() {
        if m >= high {
            edge[i] = true;
            stack.push(i);
        }
    }
    while let Some(i) = stack.pop() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !edge[j] && thin[j] >= low {
                    edge[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    edge
}

pub const DEFAULT_BOUNDARY_WIDTH: usize = 2;

/// Binary boundary target: 1 where an 8-neighbour carries a different label,
/// then dilated by `boundary_width - 1` pixels (3x3 structuring element).
///
/// Background-background neighbourhoods never fire; the band covers both
/// sides of every object/object and object/background contact.
pub fn gt_structure_map(mask: &IdMask, boundary_width: usize) -> StructureMap {
    let (h, w) = (mask.height(), mask.width());
    let labels = mask.labels();
    let mut band = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            'scan: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (ny, nx) = (y as isize + dy, x as isize + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    if labels[ny as usize * w + nx as usize] != l {
                        band[y * w + x] = true;
                        break 'scan;
                    }
                }
            }
        }
    }
    for _ in 1..boundary_width.max(1) {
        band = dilate3x3(&band, h, w);
    }
    let values = Array3::from_vec(
        [1, h, w],
        band.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect(),
    )
    .expect("shape from mask");
    StructureMap::new(values, StructureKind::GroundTruthBinary).expect("binary by construction")
}

fn dilate3x3(src: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if !src[y * w + x] {
                continue;
            }
            for ny in y.saturating_sub(1)..(y + 2).min(h) {
                for nx in x.saturating_sub(1)..(x + 2).min(w) {
                    out[ny * w + nx] = true;
                }
            }
        }
    }
    out
}

/// `out_i = in_i + in_i * (weight * resize(map, h_i, w_i))` on every level.
fn hadamard_fuse(pyramid: &FeaturePyramid, map: &Array3, weight: f32) -> Result<FeaturePyramid> {
    if map.channels() != 1 {
        return Err(Error::Shape("fusion map must have one channel".into()));
    }
    let (h, w) = (map.height(), map.width());
    pyramid.validate(h, w)?;
    let levels = pyramid
        .levels
        .iter()
        .map(|level| {
            let [c, lh, lw] = level.shape();
            let resized = map.resize_bilinear(lh, lw);
            let gate = resized.plane(0);
            let mut out = level.clone();
            for k in 0..c {
                for (o, &g) in out.plane_mut(k).iter_mut().zip(gate) {
                    *o += *o * (weight * g);
                }
            }
            out
        })
        .collect();
    Ok(FeaturePyramid { levels })
}

/// Edge highlighting of encoder features with the Canny prior.
pub fn edge_highlight(
    pyramid: &FeaturePyramid,
    edges: &EdgeMap,
    cfg: &FusionConfig,
) -> Result<FeaturePyramid> {
    cfg.validate()?;
    hadamard_fuse(pyramid, edges.values(), cfg.epsilon)
}

/// Structure refinement of encoder features with predicted boundary logits.
pub fn structure_refine(
    pyramid: &FeaturePyramid,
    structure: &StructureMap,
    cfg: &FusionConfig,
) -> Result<FeaturePyramid> {
    cfg.validate()?;
    if structure.kind() != StructureKind::PredictedLogits {
        return Err(Error::InvalidValue(format!(
            "structure refinement takes predicted logits, got {:?}",
            structure.kind()
        )));
    }
    hadamard_fuse(pyramid, structure.values(), cfg.beta)
}
