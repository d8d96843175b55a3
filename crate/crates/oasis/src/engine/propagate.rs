//! Inference: propagate a first-frame annotation through a video.

use candle_core::Tensor;
use oasis_core::edges::canny;
use oasis_core::memory::MemoryState;
use oasis_core::types::{FrameTensor, IdMask, ProbMask, StructureKind, StructureMap};

use crate::losses::{from_array, to_array};
use crate::nn::{ObjectMemory, OasisModel};
use crate::{Error, Result};

/// Output for one frame.
#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub mask: IdMask,
    /// `None` for the annotated frame.
    pub probs: Option<ProbMask>,
    /// Predicted structure logits, `None` for the annotated frame or when
    /// the structure branch is disabled.
    pub structure: Option<StructureMap>,
}

/// Streaming propagator: memory is built only from frames already seen.
#[derive(Debug)]
pub struct Propagator<'m> {
    model: &'m OasisModel,
    object_ids: Vec<u8>,
    memory: MemoryState<Tensor, ObjectMemory>,
    next_index: usize,
    size: (usize, usize),
}

impl<'m> Propagator<'m> {
    /// Starts a video from its annotated first frame.
    pub fn new(model: &'m OasisModel, first_frame: &FrameTensor, first_mask: &IdMask) -> Result<Self> {
        let size = (first_frame.height(), first_frame.width());
        if (first_mask.height(), first_mask.width()) != size {
            return Err(Error::Input(format!(
                "first mask is {}x{}, frame is {}x{}",
                first_mask.height(),
                first_mask.width(),
                size.0,
                size.1
            )));
        }
        if first_mask.object_ids().is_empty() {
            return Err(Error::Input("first-frame annotation contains no object".into()));
        }
        let mut p = Self {
            model,
            object_ids: first_mask.object_ids().to_vec(),
            memory: MemoryState::new(model.config().memory.memory_config()),
            next_index: 0,
            size,
        };
        let onehot = first_mask.to_onehot(&p.object_ids)?;
        let probs = from_array(&onehot, model.device(), model.dtype())?;
        p.write(first_frame, &probs)?;
        Ok(p)
    }

    pub fn object_ids(&self) -> &[u8] {
        &self.object_ids
    }

    pub fn memory(&self) -> &MemoryState<Tensor, ObjectMemory> {
        &self.memory
    }

    fn write(&mut self, frame: &FrameTensor, probs: &Tensor) -> Result<()> {
        let image = self.model.frame_tensor(frame)?;
        let features = self.model.encode(&image)?;
        self.write_features(&features, probs)
    }

    fn write_features(&mut self, features: &crate::nn::Features, probs: &Tensor) -> Result<()> {
        let index = self.next_index;
        self.next_index += 1;
        if !self.memory.config().should_store(index) {
            return Ok(());
        }
        let (global, objects) = self.model.memorize(features, probs)?;
        self.memory.update(index, global.detach(), objects.detach())?;
        Ok(())
    }

    /// Segments the next frame and writes it to memory.
    pub fn step(&mut self, frame: &FrameTensor) -> Result<FrameOutput> {
        if (frame.height(), frame.width()) != self.size {
            return Err(Error::Input(format!(
                "frame {} is {}x{}, video is {}x{}",
                frame.frame_index,
                frame.height(),
                frame.width(),
                self.size.0,
                self.size.1
            )));
        }
        let model = self.model;
        let image = model.frame_tensor(frame)?;
        let features = model.encode(&image)?;
        let edges = if model.has_structure_decoder() {
            model.edge_tensor(&canny(frame, &model.config().canny)?)?
        } else {
            image.narrow(1, 0, 1)?.zeros_like()?
        };
        let memory = self
            .memory
            .object_features()
            .ok_or_else(|| Error::Input("propagation memory is empty".into()))?;
        let seg = model.segment(&features, &image, &edges, memory)?;
        let probs = seg.probs.detach();
        let prob_mask = ProbMask::new(to_array(&probs)?, &self.object_ids)?;
        let mask = prob_mask.to_id_mask();
        let structure = match &seg.structure_logits {
            Some(s) => Some(StructureMap::new(to_array(&s.squeeze(0)?)?, StructureKind::PredictedLogits)?),
            None => None,
        };
        self.write_features(&features, &probs)?;
        Ok(FrameOutput {
            mask,
            probs: Some(prob_mask),
            structure,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Propagation {
    pub masks: Vec<IdMask>,
    /// One entry per frame; `None` at frame 0 or without a structure branch.
    pub structures: Vec<Option<StructureMap>>,
}

/// Runs the whole video; frame 0's output is `first_mask` verbatim.
pub fn propagate_video(model: &OasisModel, frames: &[FrameTensor], first_mask: &IdMask) -> Result<Propagation> {
    let first = frames.first().ok_or_else(|| Error::Input("empty frame list".into()))?;
    let mut prop = Propagator::new(model, first, first_mask)?;
    let mut masks = vec![first_mask.clone()];
    let mut structures = vec![None];
    for frame in &frames[1..] {
        let out = prop.step(frame)?;
        masks.push(out.mask);
        structures.push(out.structure);
    }
    Ok(Propagation { masks, structures })
}
