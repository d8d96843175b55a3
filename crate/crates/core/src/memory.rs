//! Memory-bank bookkeeping: which frames are written, FIFO eviction that
//! pins the annotated first frame, and the running object summary.
//!
//! The store is generic over the feature representation so the same policy
//! drives plain arrays here and autograd tensors in the network crate.

use alloc::vec::Vec;

use crate::{Array3, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MemoryConfig {
    /// Maximum number of stored global features, frame 0 included.
    pub capacity: usize,
    pub update_interval: usize,
    /// Weight of the previous object summary in the moving average.
    pub decay: f32,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            capacity: 5,
            update_interval: 5,
            decay: 0.8,
        }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 || self.update_interval == 0 {
            return Err(Error::Config("memory capacity and interval must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.decay) {
            return Err(Error::Config("memory decay must lie in [0, 1]".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn should_store(&self, frame_index: usize) -> bool {
        frame_index == 0 || frame_index % self.update_interval == 0
    }
}

/// Per-object feature stacks that can be blended into a running average.
pub trait ObjectFeatures: Sized {
    type Error;

    fn num_objects(&self) -> usize;

    /// `decay * self + (1 - decay) * newer`.
    fn blend(&self, newer: &Self, decay: f32) -> core::result::Result<Self, Self::Error>;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MemoryError<E> {
    #[error("memory holds {expected} objects, update carries {got}")]
    ObjectCountMismatch { expected: usize, got: usize },
    #[error("feature blend failed: {0}")]
    Blend(E),
}

/// Rolling store of global features plus the blended object summary.
#[derive(Debug, Clone)]
pub struct MemoryState<G, O> {
    global_features: Vec<G>,
    object_features: Option<O>,
    stored_frame_indices: Vec<usize>,
    config: MemoryConfig,
}

impl<G, O: ObjectFeatures> MemoryState<G, O> {
    pub fn new(config: MemoryConfig) -> Self {
        Self {
            global_features: Vec::new(),
            object_features: None,
            stored_frame_indices: Vec::new(),
            config,
        }
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.config
    }

    pub fn global_features(&self) -> &[G] {
        &self.global_features
    }

    pub fn object_features(&self) -> Option<&O> {
        self.object_features.as_ref()
    }

    pub fn stored_frame_indices(&self) -> &[usize] {
        &self.stored_frame_indices
    }

    pub fn is_empty(&self) -> bool {
        self.global_features.is_empty()
    }

    pub fn num_objects(&self) -> Option<usize> {
        self.object_features.as_ref().map(O::num_objects)
    }

    /// Writes a frame if the interval rule selects it. Returns whether the
    /// state changed.
    pub fn update(
        &mut self,
        frame_index: usize,
        global: G,
        objects: O,
    ) -> core::result::Result<bool, MemoryError<O::Error>> {
        if !self.config.should_store(frame_index) {
            return Ok(false);
        }
        let blended = match &self.object_features {
            None => objects,
            Some(old) => {
                if old.num_objects() != objects.num_objects() {
                    return Err(MemoryError::ObjectCountMismatch {
                        expected: old.num_objects(),
                        got: objects.num_objects(),
                    });
                }
                old.blend(&objects, self.config.decay)
                    .map_err(MemoryError::Blend)?
            }
        };
        self.object_features = Some(blended);
        self.global_features.push(global);
        self.stored_frame_indices.push(frame_index);
        // first stored frame is pinned; evict the oldest after it
        while self.global_features.len() > self.config.capacity {
            let victim = if self.global_features.len() > 1 { 1 } else { 0 };
            self.global_features.remove(victim);
            self.stored_frame_indices.remove(victim);
        }
        Ok(true)
    }
}

/// `[num_objects]` stack of equally shaped per-object arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectArrays(pub Vec<Array3>);

impl ObjectFeatures for ObjectArrays {
    type Error = Error;

    fn num_objects(&self) -> usize {
        self.0.len()
    }

    fn blend(&self, newer: &Self, decay: f32) -> Result<Self> {
        self.0
            .iter()
            .zip(&newer.0)
            .map(|(a, b)| {
                if a.shape() != b.shape() {
                    return Err(Error::Shape("object feature shapes differ".into()));
                }
                let data = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(&x, &y)| decay * x + (1.0 - decay) * y)
                    .collect();
                Array3::from_vec(a.shape(), data)
            })
            .collect::<Result<_>>()
            .map(ObjectArrays)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn objs(n: usize, v: f32) -> ObjectArrays {
        ObjectArrays(vec![Array3::full(1, 2, 2, v); n])
    }

    #[test]
    fn first_frame_always_stored() {
        let mut m = MemoryState::<u32, ObjectArrays>::new(MemoryConfig::default());
        assert!(m.update(0, 0, objs(1, 1.0)).unwrap());
        assert_eq!(m.global_features().len(), 1);
        assert_eq!(m.stored_frame_indices(), &[0]);
    }

    #[test]
    fn fifo_keeps_frame_zero() {
        let cfg = MemoryConfig {
            capacity: 3,
            ..Default::default()
        };
        let mut m = MemoryState::<usize, ObjectArrays>::new(cfg);
        for t in [0, 5, 10, 15] {
            m.update(t, t, objs(2, 0.0)).unwrap();
        }
        assert_eq!(m.stored_frame_indices(), &[0, 10, 15]);
        assert_eq!(m.global_features(), &[0, 10, 15]);
    }

    #[test]
    fn off_interval_frame_is_ignored() {
        let mut m = MemoryState::<u8, ObjectArrays>::new(MemoryConfig::default());
        m.update(0, 0, objs(1, 1.0)).unwrap();
        let before = m.clone();
        assert!(!m.update(7, 7, objs(1, 9.0)).unwrap());
        assert_eq!(m.stored_frame_indices(), before.stored_frame_indices());
        assert_eq!(m.object_features(), before.object_features());
    }

    #[test]
    fn object_summary_is_moving_average() {
        let mut m = MemoryState::<u8, ObjectArrays>::new(MemoryConfig::default());
        m.update(0, 0, objs(1, 1.0)).unwrap();
        m.update(5, 0, objs(1, 0.0)).unwrap();
        let v = m.object_features().unwrap().0[0].get(0, 0, 0);
        assert!((v - 0.8).abs() < 1e-7);
    }

    #[test]
    fn object_count_mismatch_rejected() {
        let mut m = MemoryState::<u8, ObjectArrays>::new(MemoryConfig::default());
        m.update(0, 0, objs(2, 1.0)).unwrap();
        assert_eq!(
            m.update(5, 0, objs(3, 1.0)),
            Err(MemoryError::ObjectCountMismatch {
                expected: 2,
                got: 3
            })
        );
    }

    #[test]
    fn capacity_bound_under_long_runs() {
        let cfg = MemoryConfig {
            capacity: 4,
            update_interval: 2,
            decay: 0.5,
        };
        let mut m = MemoryState::<usize, ObjectArrays>::new(cfg);
        for t in 0..100 {
            m.update(t, t, objs(1, t as f32)).unwrap();
            assert!(m.global_features().len() <= 4);
            assert_eq!(m.stored_frame_indices()[0], 0);
        }
    }
}
