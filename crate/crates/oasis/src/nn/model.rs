//! The full network: encoders, structure branch and mask decoder.

use candle_core::{DType, Device, Tensor};
use oasis_core::types::FrameTensor;
use oasis_core::EdgeMap;

use super::decoders::{class_logits, softmax_classes, MaskDecoder, StructureDecoder};
use super::encoders::{Features, ImageEncoder, MemoryEncoder, ObjectMemory};
use super::layers::ParamStore;
use super::ops::hadamard_fuse;
use crate::config::ModelConfig;
use crate::Result;

/// Parameter-name prefix of the image encoder (trained at a reduced rate).
pub const BACKBONE_PREFIX: &str = "image_encoder.";
pub const STRUCTURE_PREFIX: &str = "structure_decoder.";

#[derive(Debug)]
pub struct OasisModel {
    config: ModelConfig,
    store: ParamStore,
    image_encoder: ImageEncoder,
    memory_encoder: MemoryEncoder,
    structure: Option<StructureDecoder>,
    mask: MaskDecoder,
}

/// Result of segmenting one frame against the current object memory.
#[derive(Debug, Clone)]
pub struct Segmentation {
    /// `[K - 1, H, W]`.
    pub object_logits: Tensor,
    /// `[K, H, W]`, background first.
    pub class_logits: Tensor,
    /// `[K, H, W]` soft-aggregated probabilities.
    pub probs: Tensor,
    /// `[1, 1, H, W]` when the structure branch is enabled.
    pub structure_logits: Option<Tensor>,
}

impl OasisModel {
    pub fn new(config: &ModelConfig, seed: u64, device: &Device) -> Result<Self> {
        Self::with_dtype(config, seed, device, DType::F32)
    }

    pub fn with_dtype(config: &ModelConfig, seed: u64, device: &Device, dtype: DType) -> Result<Self> {
        config.validate()?;
        let store = ParamStore::new(seed, device.clone(), dtype);
        let root = store.root();
        let ch = &config.image_encoder.channels_per_scale;
        let mem = &config.memory;
        let slope = config.structure.activation_slope;
        let image_encoder = ImageEncoder::new(&root.pp("image_encoder"), &config.image_encoder)?;
        let memory_encoder = MemoryEncoder::new(&root.pp("memory_encoder"), mem, ch[2], slope)?;
        let structure = if config.structure.enabled {
            Some(StructureDecoder::new(
                &root.pp("structure_decoder"),
                &config.structure,
                ch,
                mem.object_dim,
                mem.object_grid,
            )?)
        } else {
            None
        };
        let mask = MaskDecoder::new(
            &root.pp("mask_decoder"),
            &config.mask,
            ch,
            config.image_encoder.stem_channels,
            mem.object_dim,
            mem.object_grid,
            slope,
        )?;
        Ok(Self {
            config: config.clone(),
            store,
            image_encoder,
            memory_encoder,
            structure,
            mask,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Changes the (non-learned) edge and structure importance factors.
    pub fn set_fusion(&mut self, fusion: oasis_core::edges::FusionConfig) -> Result<()> {
        fusion.validate()?;
        self.config.fusion = fusion;
        Ok(())
    }

    /// Changes the inference memory schedule; weights are unaffected.
    pub fn set_memory_schedule(&mut self, capacity: usize, update_interval: usize, ema_decay: f32) -> Result<()> {
        let mut m = self.config.memory.clone();
        m.capacity = capacity;
        m.update_interval = update_interval;
        m.ema_decay = ema_decay;
        m.memory_config().validate()?;
        self.config.memory = m;
        Ok(())
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn has_structure_decoder(&self) -> bool {
        self.structure.is_some()
    }

    pub fn structure_decoder_parameters(&self) -> usize {
        self.store.num_parameters_under(STRUCTURE_PREFIX)
    }

    /// `[1, 3, H, W]` tensor for a frame.
    pub fn frame_tensor(&self, frame: &FrameTensor) -> Result<Tensor> {
        let p = frame.pixels();
        let t = Tensor::from_slice(p.data(), (1, 3, p.height(), p.width()), self.device())?;
        Ok(t.to_dtype(self.dtype())?)
    }

    /// `[1, 1, H, W]` tensor for an edge map.
    pub fn edge_tensor(&self, edges: &EdgeMap) -> Result<Tensor> {
        let v = edges.values();
        let t = Tensor::from_slice(v.data(), (1, 1, v.height(), v.width()), self.device())?;
        Ok(t.to_dtype(self.dtype())?)
    }

    pub fn encode(&self, image: &Tensor) -> Result<Features> {
        self.image_encoder.forward(image)
    }

    /// Global and per-object memory features for a frame whose (soft) mask
    /// is `probs` `[K, H, W]`.
    pub fn memorize(&self, features: &Features, probs: &Tensor) -> Result<(Tensor, ObjectMemory)> {
        self.memory_encoder.forward(&features.levels[2], probs)
    }

    /// Segments one frame. `image` is `[1, 3, H, W]`, `edges` `[1, 1, H, W]`.
    pub fn segment(
        &self,
        features: &Features,
        image: &Tensor,
        edges: &Tensor,
        memory: &ObjectMemory,
    ) -> Result<Segmentation> {
        self.segment_with(features, image, edges, memory, true)
    }

    /// As [`segment`](Self::segment); with `use_structure` false the
    /// structure branch is bypassed and the mask decoder reads raw features.
    pub fn segment_with(
        &self,
        features: &Features,
        image: &Tensor,
        edges: &Tensor,
        memory: &ObjectMemory,
        use_structure: bool,
    ) -> Result<Segmentation> {
        let (_, _, h, w) = image.dims4()?;
        let branch = self.structure.as_ref().filter(|_| use_structure);
        let (refined, structure_logits) = match branch {
            Some(sd) => {
                let eps = self.config.fusion.epsilon as f64;
                let enhanced = features
                    .levels
                    .iter()
                    .map(|l| hadamard_fuse(l, edges, eps))
                    .collect::<Result<Vec<_>>>()?;
                let s = sd.forward(&enhanced, Some(memory), (h, w))?;
                let beta = self.config.fusion.beta as f64;
                let refined = features
                    .levels
                    .iter()
                    .map(|l| hadamard_fuse(l, &s, beta))
                    .collect::<Result<Vec<_>>>()?;
                (refined, Some(s))
            }
            None => (features.levels.clone(), None),
        };
        let logits = self.mask.forward(&refined, &features.stem, image, memory)?;
        let object_logits = logits.squeeze(1)?;
        let class_logits = class_logits(&object_logits)?;
        let probs = softmax_classes(&class_logits)?;
        Ok(Segmentation {
            object_logits,
            class_logits,
            probs,
            structure_logits,
        })
    }
}
