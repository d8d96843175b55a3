//! Frames, masks, feature pyramids and structure maps.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::{Array3, Error, Result};

/// Number of encoder feature scales. Level `i` (1-based) has stride `2^(i+1)`.
pub const N_SCALES: usize = 3;

/// Spatial stride of pyramid level `i` (1-based).
#[inline]
pub const fn level_stride(level: usize) -> usize {
    1 << (level + 1)
}

/// One RGB frame with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTensor {
    pixels: Array3,
    pub frame_index: usize,
    pub source_id: String,
}

impl FrameTensor {
    pub fn new(pixels: Array3, frame_index: usize, source_id: impl Into<String>) -> Result<Self> {
        let [c, h, w] = pixels.shape();
        if c != 3 {
            return Err(Error::Shape(format!("frame has {c} channels, expected 3")));
        }
        check_frame_dims(h, w)?;
        if let Some(v) = pixels
            .data()
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::InvalidValue(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            pixels,
            frame_index,
            source_id: source_id.into(),
        })
    }

    #[inline]
    pub fn pixels(&self) -> &Array3 {
        &self.pixels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    /// Luminance with 0.299/0.587/0.114 weights, still on the `[0, 1]` scale.
    pub fn luminance(&self) -> Vec<f64> {
        let r = self.pixels.plane(0);
        let g = self.pixels.plane(1);
        let b = self.pixels.plane(2);
        r.iter()
            .zip(g)
            .zip(b)
            .map(|((&r, &g), &b)| 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
            .collect()
    }
}

pub fn check_frame_dims(h: usize, w: usize) -> Result<()> {
    if h < 16 || w < 16 || h % 16 != 0 || w % 16 != 0 {
        return Err(Error::Shape(format!(
            "frame {h}x{w}: both sides must be multiples of 16 and at least 16"
        )));
    }
    Ok(())
}

/// Multi-scale encoder output; `levels[i - 1]` is level `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<Array3>,
}

impl FeaturePyramid {
    /// Checks the pyramid shape law against a frame of `h x w` pixels.
    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        if self.levels.len() != N_SCALES {
            return Err(Error::Shape(format!(
                "{} pyramid levels, expected {N_SCALES}",
                self.levels.len()
            )));
        }
        let mut prev_c = 0;
        for (i, level) in self.levels.iter().enumerate() {
            let s = level_stride(i + 1);
            let [c, lh, lw] = level.shape();
            if lh != h / s || lw != w / s {
                return Err(Error::Shape(format!(
                    "level {} is {lh}x{lw}, expected {}x{}",
                    i + 1,
                    h / s,
                    w / s
                )));
            }
            if c <= prev_c {
                return Err(Error::Shape("channel counts must increase".into()));
            }
            prev_c = c;
        }
        Ok(())
    }

    /// Frame size implied by level 1.
    pub fn frame_size(&self) -> (usize, usize) {
        let l = &self.levels[0];
        (l.height() * level_stride(1), l.width() * level_stride(1))
    }
}

/// Integer object-id segmentation. Label 0 is background.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IdMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
    object_ids: Vec<u8>,
}

impl IdMask {
    /// Builds a mask whose object ids are the sorted nonzero labels present.
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "{} labels for a {height}x{width} mask",
                labels.len()
            )));
        }
        let mut present = [false; 256];
        for &l in &labels {
            present[l as usize] = true;
        }
        let object_ids = (1..=255u8).filter(|&i| present[i as usize]).collect();
        Ok(Self {
            height,
            width,
            labels,
            object_ids,
        })
    }

    /// Builds a mask with an explicit id set, which may list absent objects.
    pub fn with_object_ids(
        height: usize,
        width: usize,
        labels: Vec<u8>,
        object_ids: &[u8],
    ) -> Result<Self> {
        let mut mask = Self::new(height, width, labels)?;
        let ids = normalize_ids(object_ids)?;
        if let Some(&bad) = mask.object_ids.iter().find(|l| !ids.contains(l)) {
            return Err(Error::UnknownLabel(bad));
        }
        mask.object_ids = ids;
        Ok(mask)
    }

    pub fn background(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: alloc::vec![0; height * width],
            object_ids: Vec::new(),
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn object_ids(&self) -> &[u8] {
        &self.object_ids
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    /// One-hot view `[K, H, W]` over `object_ids`; channel 0 is background.
    pub fn to_onehot(&self, object_ids: &[u8]) -> Result<Array3> {
        let ids = normalize_ids(object_ids)?;
        let mut lut = [usize::MAX; 256];
        lut[0] = 0;
        for (k, &id) in ids.iter().enumerate() {
            lut[id as usize] = k + 1;
        }
        let n = self.height * self.width;
        let mut out = Array3::zeros(ids.len() + 1, self.height, self.width);
        let data = out.data_mut();
        for (p, &l) in self.labels.iter().enumerate() {
            let k = lut[l as usize];
            if k == usize::MAX {
                return Err(Error::UnknownLabel(l));
            }
            data[k * n + p] = 1.0;
        }
        Ok(out)
    }

    /// Per-pixel boolean view of one object.
    pub fn object_pixels(&self, object_id: u8) -> impl Iterator<Item = bool> + '_ {
        self.labels.iter().map(move |&l| l == object_id)
    }
}

/// Sorted, deduplicated nonzero ids.
fn normalize_ids(ids: &[u8]) -> Result<Vec<u8>> {
    if ids.contains(&0) {
        return Err(Error::InvalidValue("object id 0 is reserved for background".into()));
    }
    let mut v: Vec<u8> = ids.to_vec();
    v.sort_unstable();
    v.dedup();
    Ok(v)
}

/// See [`IdMask::to_onehot`].
pub fn id_mask_to_onehot(mask: &IdMask, object_ids: &[u8]) -> Result<Array3> {
    mask.to_onehot(object_ids)
}

/// Per-object probabilities `[K, H, W]` with the background channel first.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMask {
    probs: Array3,
    object_ids: Vec<u8>,
}

impl ProbMask {
    pub const TOLERANCE: f32 = 1e-5;

    pub fn new(probs: Array3, object_ids: &[u8]) -> Result<Self> {
        let ids = normalize_ids(object_ids)?;
        let [k, h, w] = probs.shape();
        if k != ids.len() + 1 {
            return Err(Error::Shape(format!(
                "{k} probability channels for {} objects",
                ids.len()
            )));
        }
        let n = h * w;
        let data = probs.data();
        for p in 0..n {
            let mut s = 0.0f32;
            for c in 0..k {
                let v = data[c * n + p];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidValue(format!("probability {v}")));
                }
                s += v;
            }
            if (s - 1.0).abs() > Self::TOLERANCE {
                return Err(Error::InvalidValue(format!("pixel {p} sums to {s}")));
            }
        }
        Ok(Self {
            probs,
            object_ids: ids,
        })
    }

    pub fn from_id_mask(mask: &IdMask) -> Self {
        let probs = mask.to_onehot(mask.object_ids()).expect("own ids cover labels");
        Self {
            probs,
            object_ids: mask.object_ids().to_vec(),
        }
    }

    #[inline]
    pub fn probs(&self) -> &Array3 {
        &self.probs
    }

    #[inline]
    pub fn object_ids(&self) -> &[u8] {
        &self.object_ids
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.probs.channels()
    }

    /// Per-pixel argmax; ties go to the lowest channel, so background wins.
    pub fn to_id_mask(&self) -> IdMask {
        let [k, h, w] = self.probs.shape();
        let n = h * w;
        let data = self.probs.data();
        let labels = (0..n)
            .map(|p| {
                let mut best = 0;
                let mut best_v = data[p];
                for c in 1..k {
                    let v = data[c * n + p];
                    if v > best_v {
                        best = c;
                        best_v = v;
                    }
                }
                if best == 0 {
                    0
                } else {
                    self.object_ids[best - 1]
                }
            })
            .collect();
        IdMask::with_object_ids(h, w, labels, &self.object_ids).expect("labels drawn from ids")
    }
}

/// See [`ProbMask::to_id_mask`].
pub fn onehot_to_id_mask(probs: &ProbMask) -> IdMask {
    probs.to_id_mask()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructureKind {
    GroundTruthBinary,
    PredictedLogits,
}

/// Single-channel boundary map, either a binary target or predicted logits.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureMap {
    values: Array3,
    kind: StructureKind,
}

impl StructureMap {
    pub fn new(values: Array3, kind: StructureKind) -> Result<Self> {
        if values.channels() != 1 {
            return Err(Error::Shape("structure map must have one channel".into()));
        }
        let ok = match kind {
            StructureKind::GroundTruthBinary => {
                values.data().iter().all(|&v| v == 0.0 || v == 1.0)
            }
            StructureKind::PredictedLogits => values.all_finite(),
        };
        if !ok {
            return Err(Error::InvalidValue(format!("entries invalid for {kind:?}")));
        }
        Ok(Self { values, kind })
    }

    #[inline]
    pub fn values(&self) -> &Array3 {
        &self.values
    }

    #[inline]
    pub fn kind(&self) -> StructureKind {
        self.kind
    }
}

/// Binary `{0, 1}` edge map at frame resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    values: Array3,
}

impl EdgeMap {
    pub fn new(values: Array3) -> Result<Self> {
        if values.channels() != 1 || !values.data().iter().all(|&v| v == 0.0 || v == 1.0) {
            return Err(Error::InvalidValue("edge map must be one binary channel".into()));
        }
        Ok(Self { values })
    }

    #[inline]
    pub fn values(&self) -> &Array3 {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.values.data().iter().filter(|&&v| v != 0.0).count()
    }
}
