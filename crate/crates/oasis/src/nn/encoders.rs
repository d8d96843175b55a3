//! Image encoder and memory encoder.

use candle_core::Tensor;
use oasis_core::memory::ObjectFeatures;
use oasis_core::N_SCALES;

use super::layers::{Conv2d, Scope};
use super::ops::{leaky_relu, resize};
use crate::config::{ImageEncoderConfig, MemoryEncoderConfig};
use crate::{Error, Result};

/// Output of the image encoder for a batch of frames.
#[derive(Debug, Clone)]
pub struct Features {
    /// Half-resolution stem activations `[B, c_stem, H/2, W/2]`.
    pub stem: Tensor,
    /// Pyramid levels; level `i` is `[B, c_i, H/2^(i+2), W/2^(i+2)]` for
    /// `i = 0..3` (scales 1..3).
    pub levels: Vec<Tensor>,
}

#[derive(Debug, Clone)]
struct ResStage {
    conv1: Conv2d,
    conv2: Conv2d,
    skip: Conv2d,
}

impl ResStage {
    fn new(s: &Scope, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(&s.pp("conv1"), c_in, c_out, 3, 2, true)?,
            conv2: Conv2d::new(&s.pp("conv2"), c_out, c_out, 3, 1, true)?,
            skip: Conv2d::new(&s.pp("skip"), c_in, c_out, 1, 2, false)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.conv1.forward(x)?.relu()?;
        let y = self.conv2.forward(&y)?;
        Ok((y + self.skip.forward(x)?)?.relu()?)
    }
}

/// Strided residual backbone: a stride-2 stem followed by one stride-2
/// residual stage per pyramid level.
#[derive(Debug, Clone)]
pub struct ImageEncoder {
    stem: Conv2d,
    stages: Vec<ResStage>,
}

impl ImageEncoder {
    pub fn new(s: &Scope, cfg: &ImageEncoderConfig) -> Result<Self> {
        let stem = Conv2d::new(&s.pp("stem"), 3, cfg.stem_channels, 3, 2, true)?;
        let mut stages = Vec::with_capacity(N_SCALES);
        let mut c_in = cfg.stem_channels;
        for (i, &c) in cfg.channels_per_scale.iter().enumerate() {
            stages.push(ResStage::new(&s.pp(&format!("stage{}", i + 1)), c_in, c)?);
            c_in = c;
        }
        Ok(Self { stem, stages })
    }

    /// `images` is `[B, 3, H, W]` with values in `[0, 1]`.
    pub fn forward(&self, images: &Tensor) -> Result<Features> {
        let (_, c, h, w) = images.dims4()?;
        if c != 3 {
            return Err(Error::Input(format!("expected 3 image channels, got {c}")));
        }
        oasis_core::types::check_frame_dims(h, w)?;
        let x = ((images - 0.5)? * 2.0)?;
        let stem = self.stem.forward(&x)?.relu()?;
        let mut levels = Vec::with_capacity(N_SCALES);
        let mut cur = stem.clone();
        for stage in &self.stages {
            cur = stage.forward(&cur)?;
            levels.push(cur.clone());
        }
        Ok(Features { stem, levels })
    }
}

/// Per-object memory summaries `[K - 1, C_obj, h, w]` at the coarsest
/// feature resolution. The fixed object grid is a bilinear view of this
/// tensor; resizing commutes with the linear projection and the moving
/// average, so the grid is never materialised unless asked for.
#[derive(Debug, Clone)]
pub struct ObjectMemory(pub Tensor);

impl ObjectMemory {
    pub fn grid(&self, size: usize) -> Result<Tensor> {
        resize(&self.0, size, size)
    }

    pub fn detach(&self) -> Self {
        ObjectMemory(self.0.detach())
    }
}

impl ObjectFeatures for ObjectMemory {
    type Error = candle_core::Error;

    fn num_objects(&self) -> usize {
        self.0.dims()[0]
    }

    fn blend(&self, newer: &Self, decay: f32) -> candle_core::Result<Self> {
        let d = decay as f64;
        Ok(ObjectMemory(((&self.0 * d)? + (&newer.0 * (1.0 - d))?)?))
    }
}

/// Builds global memory features from the coarsest image features and
/// per-object features by soft-masking them with object probabilities.
#[derive(Debug, Clone)]
pub struct MemoryEncoder {
    global: Conv2d,
    project: Conv2d,
    slope: f64,
}

impl MemoryEncoder {
    pub fn new(s: &Scope, cfg: &MemoryEncoderConfig, c_top: usize, slope: f64) -> Result<Self> {
        Ok(Self {
            global: Conv2d::new(&s.pp("global"), c_top, cfg.global_dim, 3, 1, true)?,
            project: Conv2d::new(&s.pp("project"), cfg.global_dim, cfg.object_dim, 1, 1, false)?,
            slope,
        })
    }

    /// `top` is the coarsest level `[1, c3, h, w]`; `probs` is `[K, H, W]`
    /// with background first. Returns `([1, C_g, h, w], [K - 1, C_obj, h, w])`.
    pub fn forward(&self, top: &Tensor, probs: &Tensor) -> Result<(Tensor, ObjectMemory)> {
        let (k, _, _) = probs.dims3()?;
        if k < 2 {
            return Err(Error::Input("memory encoding needs at least one object".into()));
        }
        let (_, _, h, w) = top.dims4()?;
        let global = leaky_relu(&self.global.forward(top)?, self.slope)?;
        let objects = probs.narrow(0, 1, k - 1)?.unsqueeze(1)?;
        let masks = resize(&objects, h, w)?;
        let masked = global.broadcast_mul(&masks)?;
        let per_object = self.project.forward(&masked)?;
        Ok((global, ObjectMemory(per_object)))
    }
}
