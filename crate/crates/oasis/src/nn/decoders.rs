//! Structure decoder and object-readout mask decoder.

use candle_core::Tensor;

use super::encoders::ObjectMemory;
use super::layers::{Conv2d, Scope, Upsample2x};
use super::ops::{leaky_relu, resize};
use crate::config::{MaskDecoderConfig, StructureDecoderConfig};
use crate::{Error, Result};

/// Init gain of the last convolution in a residual branch.
const RESIDUAL_GAIN: f64 = 0.1;
/// Init gain of the logit heads.
const HEAD_GAIN: f64 = 0.1;

/// Transposed-conv 2x upsampling, concatenation with a skip tensor and a
/// two-conv block with a residual around it.
#[derive(Debug, Clone)]
struct UpBlock {
    up: Upsample2x,
    conv1: Conv2d,
    conv2: Conv2d,
    slope: f64,
}

impl UpBlock {
    fn new(s: &Scope, c_in: usize, c_skip: usize, c_out: usize, slope: f64) -> Result<Self> {
        Ok(Self {
            up: Upsample2x::new(&s.pp("up"), c_in, c_out)?,
            conv1: Conv2d::new(&s.pp("conv1"), c_out + c_skip, c_out, 3, 1, true)?,
            conv2: Conv2d::with_gain(&s.pp("conv2"), c_out, c_out, 3, 1, true, RESIDUAL_GAIN)?,
            slope,
        })
    }

    /// `skip` may have batch 1 and is broadcast to the batch of `x`.
    fn forward(&self, x: &Tensor, skip: &Tensor) -> Result<Tensor> {
        let y = self.up.forward(x)?;
        let (b, _, h, w) = y.dims4()?;
        let (_, cs, _, _) = skip.dims4()?;
        let skip = skip.broadcast_as((b, cs, h, w))?;
        let z = leaky_relu(&self.conv1.forward(&Tensor::cat(&[&y, &skip], 1)?)?, self.slope)?;
        let z = self.conv2.forward(&z)?;
        leaky_relu(&(z + y)?, self.slope)
    }
}

/// Residual block at constant resolution.
#[derive(Debug, Clone)]
struct Bottleneck {
    conv1: Conv2d,
    conv2: Conv2d,
    skip: Option<Conv2d>,
    slope: f64,
}

impl Bottleneck {
    fn new(s: &Scope, c_in: usize, c_out: usize, slope: f64) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(&s.pp("conv1"), c_in, c_out, 3, 1, true)?,
            conv2: Conv2d::with_gain(&s.pp("conv2"), c_out, c_out, 3, 1, true, RESIDUAL_GAIN)?,
            skip: if c_in == c_out {
                None
            } else {
                Some(Conv2d::new(&s.pp("skip"), c_in, c_out, 1, 1, false)?)
            },
            slope,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = leaky_relu(&self.conv1.forward(x)?, self.slope)?;
        let y = self.conv2.forward(&y)?;
        let shortcut = match &self.skip {
            Some(s) => s.forward(x)?,
            None => x.clone(),
        };
        leaky_relu(&(y + shortcut)?, self.slope)
    }
}

/// Predicts a single-channel structure logit map from edge-highlighted
/// features, optionally fused with the pooled object memory.
#[derive(Debug, Clone)]
pub struct StructureDecoder {
    object_proj: Option<Conv2d>,
    bottleneck: Bottleneck,
    ups: Vec<UpBlock>,
    head: Conv2d,
    object_grid: usize,
}

impl StructureDecoder {
    pub fn new(
        s: &Scope,
        cfg: &StructureDecoderConfig,
        channels: &[usize],
        object_dim: usize,
        object_grid: usize,
    ) -> Result<Self> {
        let slope = cfg.activation_slope;
        let h = &cfg.hidden_channels;
        let c_top = channels[2];
        let object_proj = if cfg.use_object_fusion {
            Some(Conv2d::new(&s.pp("object_proj"), object_dim, c_top, 1, 1, true)?)
        } else {
            None
        };
        Ok(Self {
            object_proj,
            bottleneck: Bottleneck::new(&s.pp("bottleneck"), c_top, h[0], slope)?,
            ups: vec![
                UpBlock::new(&s.pp("up1"), h[0], channels[1], h[1], slope)?,
                UpBlock::new(&s.pp("up2"), h[1], channels[0], h[2], slope)?,
            ],
            head: Conv2d::with_gain(&s.pp("head"), h[2], 1, 1, 1, true, HEAD_GAIN)?,
            object_grid,
        })
    }

    pub fn uses_object_fusion(&self) -> bool {
        self.object_proj.is_some()
    }

    /// `enhanced` levels have batch 1. Returns logits `[1, 1, H, W]`.
    pub fn forward(
        &self,
        enhanced: &[Tensor],
        memory: Option<&ObjectMemory>,
        out_size: (usize, usize),
    ) -> Result<Tensor> {
        let top = &enhanced[2];
        let (_, _, h3, w3) = top.dims4()?;
        let fused = match &self.object_proj {
            Some(proj) => {
                let mem = memory.ok_or_else(|| {
                    Error::Input("structure decoder with object fusion needs object memory".into())
                })?;
                let pooled = mem.grid(self.object_grid)?.mean_keepdim(0)?;
                let m = proj.forward(&resize(&pooled, h3, w3)?)?;
                if m.dims() != top.dims() {
                    return Err(Error::Input(format!(
                        "object memory projects to {:?}, coarsest level is {:?}",
                        m.dims(),
                        top.dims()
                    )));
                }
                (top + m)?
            }
            None => top.clone(),
        };
        let x = self.bottleneck.forward(&fused)?;
        let x = self.ups[0].forward(&x, &enhanced[1])?;
        let x = self.ups[1].forward(&x, &enhanced[0])?;
        let logits = self.head.forward(&x)?;
        resize(&logits, out_size.0, out_size.1)
    }
}

/// Pixel-to-object cross-attention at the coarsest scale followed by an
/// upsampling decoder with skips down to full resolution.
#[derive(Debug, Clone)]
pub struct MaskDecoder {
    query: Conv2d,
    key: Conv2d,
    value: Conv2d,
    out: Conv2d,
    fuse: Conv2d,
    ups: Vec<UpBlock>,
    fine: Vec<UpBlock>,
    head: Conv2d,
    heads: usize,
    object_grid: usize,
    slope: f64,
}

impl MaskDecoder {
    pub fn new(
        s: &Scope,
        cfg: &MaskDecoderConfig,
        channels: &[usize],
        stem_channels: usize,
        object_dim: usize,
        object_grid: usize,
        slope: f64,
    ) -> Result<Self> {
        let d = cfg.readout_dim;
        let dc = &cfg.decoder_channels;
        let fc = &cfg.fine_channels;
        Ok(Self {
            query: Conv2d::new(&s.pp("query"), channels[2], d, 1, 1, true)?,
            key: Conv2d::new(&s.pp("key"), object_dim, d, 1, 1, false)?,
            value: Conv2d::new(&s.pp("value"), object_dim, d, 1, 1, false)?,
            out: Conv2d::new(&s.pp("out"), d, d, 1, 1, true)?,
            fuse: Conv2d::new(&s.pp("fuse"), channels[2] + d, dc[0], 3, 1, true)?,
            ups: vec![
                UpBlock::new(&s.pp("up1"), dc[0], channels[1], dc[1], slope)?,
                UpBlock::new(&s.pp("up2"), dc[1], channels[0], dc[2], slope)?,
            ],
            fine: vec![
                UpBlock::new(&s.pp("fine1"), dc[2], stem_channels, fc[0], slope)?,
                UpBlock::new(&s.pp("fine2"), fc[0], 3, fc[1], slope)?,
            ],
            head: Conv2d::with_gain(&s.pp("head"), fc[1], 1, 1, 1, true, HEAD_GAIN)?,
            heads: cfg.num_readout_heads,
            object_grid,
            slope,
        })
    }

    /// Attention readout `[K - 1, D, h, w]` of the object memory for every
    /// pixel of the coarsest level.
    fn readout(&self, top: &Tensor, memory: &ObjectMemory) -> Result<Tensor> {
        let (_, _, h, w) = top.dims4()?;
        let n_obj = memory.0.dims()[0];
        let q = self.query.forward(top)?;
        let d = q.dims()[1];
        let dh = d / self.heads;
        // keys and values are projected at memory resolution, then viewed on
        // the object grid
        let g = self.object_grid;
        let k = resize(&self.key.forward(&memory.0)?, g, g)?;
        let v = resize(&self.value.forward(&memory.0)?, g, g)?;
        let q = q
            .reshape((1, self.heads, dh, h * w))?
            .transpose(2, 3)?
            .broadcast_as((n_obj, self.heads, h * w, dh))?
            .contiguous()?;
        let k = k.reshape((n_obj, self.heads, dh, g * g))?;
        let v = v.reshape((n_obj, self.heads, dh, g * g))?.transpose(2, 3)?.contiguous()?;
        let scores = (q.matmul(&k)? / (dh as f64).sqrt())?;
        let attn = candle_nn::ops::softmax_last_dim(&scores)?;
        let r = attn.matmul(&v)?;
        let r = r.transpose(2, 3)?.reshape((n_obj, d, h, w))?;
        self.out.forward(&r)
    }

    /// Per-object logits `[K - 1, 1, H, W]`. `refined` levels and `stem`
    /// have batch 1; `image` is `[1, 3, H, W]`.
    pub fn forward(
        &self,
        refined: &[Tensor],
        stem: &Tensor,
        image: &Tensor,
        memory: &ObjectMemory,
    ) -> Result<Tensor> {
        let top = &refined[2];
        let r = self.readout(top, memory)?;
        let (n_obj, _, h, w) = r.dims4()?;
        let c_top = top.dims()[1];
        let x = Tensor::cat(&[&top.broadcast_as((n_obj, c_top, h, w))?, &r], 1)?;
        let x = leaky_relu(&self.fuse.forward(&x)?, self.slope)?;
        let x = self.ups[0].forward(&x, &refined[1])?;
        let x = self.ups[1].forward(&x, &refined[0])?;
        let x = self.fine[0].forward(&x, stem)?;
        let x = self.fine[1].forward(&x, &((image - 0.5)? * 2.0)?)?;
        self.head.forward(&x)
    }
}

/// Soft aggregation on tensors: class logits `[K, ...]` whose softmax
/// equals the product-of-complements aggregation of sigmoid object scores.
pub fn class_logits(object_logits: &Tensor) -> Result<Tensor> {
    let zeros = object_logits.narrow(0, 0, 1)?.zeros_like()?;
    Ok(Tensor::cat(&[&zeros, object_logits], 0)?)
}

pub fn softmax_classes(class_logits: &Tensor) -> Result<Tensor> {
    let max = class_logits.max_keepdim(0)?;
    let e = class_logits.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(0)?)?)
}
