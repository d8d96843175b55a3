//! Training data: annotated videos, random clips and static image/mask
//! pairs for pseudo-video pretraining.

use oasis_core::augment::pseudo_video;
use oasis_core::synthetic::{generate_sequence, sequence_seed, SyntheticSceneConfig};
use oasis_core::types::{FrameTensor, IdMask};
use oasis_core::Array3;
use rand::Rng;

use crate::io::layout::{frame_names, DatasetLayout};
use crate::io::png;
use crate::{Error, Result};

/// A fully annotated video.
#[derive(Debug, Clone)]
pub struct Video {
    pub name: String,
    pub frames: Vec<FrameTensor>,
    pub masks: Vec<IdMask>,
}

impl Video {
    pub fn new(name: impl Into<String>, frames: Vec<FrameTensor>, masks: Vec<IdMask>) -> Result<Self> {
        let name = name.into();
        if frames.is_empty() || frames.len() != masks.len() {
            return Err(Error::Dataset {
                sequence: name,
                message: format!("{} frames with {} masks", frames.len(), masks.len()),
            });
        }
        Ok(Self { name, frames, masks })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Loads every sequence of a dataset, requiring dense annotations.
pub fn load_videos(layout: &DatasetLayout) -> Result<Vec<Video>> {
    let mut out = Vec::new();
    for name in layout.sequences()? {
        let seq = layout.load_sequence(&name)?;
        let masks = seq.dense_masks().ok_or_else(|| Error::Dataset {
            sequence: name.clone(),
            message: "training needs an annotation for every frame".into(),
        })?;
        out.push(Video::new(name, seq.frames, masks)?);
    }
    if out.is_empty() {
        return Err(Error::Input(format!("no sequences under {}", layout.root.display())));
    }
    Ok(out)
}

/// Name of synthetic sequence `index`.
pub fn synthetic_name(index: usize) -> String {
    format!("synth{index:03}")
}

/// Renders `n` synthetic videos with pixel values on the 8-bit grid, so
/// they equal what a PNG round trip returns.
pub fn synthetic_videos(cfg: &SyntheticSceneConfig, n: usize, seed: u64) -> Result<Vec<Video>> {
    (0..n)
        .map(|i| {
            let name = synthetic_name(i);
            let seq = generate_sequence(cfg, sequence_seed(seed, i), &name)?;
            let frames = seq
                .frames
                .iter()
                .map(|f| FrameTensor::new(png::quantize(f.pixels()), f.frame_index, &name))
                .collect::<oasis_core::Result<Vec<_>>>()?;
            Video::new(name, frames, seq.masks)
        })
        .collect()
}

/// Writes videos in the benchmark layout.
pub fn write_videos(layout: &DatasetLayout, videos: &[Video]) -> Result<()> {
    let palette = png::default_palette();
    for v in videos {
        let names = frame_names(v.len());
        layout.save_frames(&v.name, &names, &v.frames)?;
        layout.save_masks(&v.name, &names, &v.masks, &palette)?;
    }
    Ok(())
}

/// One training clip. Labels absent from frame 0 are mapped to background.
#[derive(Debug, Clone)]
pub struct Clip {
    pub source: String,
    pub start: usize,
    pub frames: Vec<FrameTensor>,
    pub masks: Vec<IdMask>,
}

impl Clip {
    pub fn object_ids(&self) -> &[u8] {
        self.masks[0].object_ids()
    }
}

fn crop_frame(f: &FrameTensor, y0: usize, x0: usize, size: usize, index: usize) -> Result<FrameTensor> {
    let p = f.pixels();
    let px = Array3::from_fn([3, size, size], |c, y, x| p.get(c, y0 + y, x0 + x));
    Ok(FrameTensor::new(px, index, f.source_id.clone())?)
}

fn crop_mask(m: &IdMask, y0: usize, x0: usize, size: usize, keep: Option<&[u8]>) -> Result<IdMask> {
    let mut labels = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let l = m.get(y0 + y, x0 + x);
            labels.push(match keep {
                Some(ids) if !ids.contains(&l) => 0,
                _ => l,
            });
        }
    }
    match keep {
        Some(ids) => Ok(IdMask::with_object_ids(size, size, labels, ids)?),
        None => Ok(IdMask::new(size, size, labels)?),
    }
}

/// Draws a random clip of `len` frames cropped to `crop x crop`, whose first
/// frame shows at least one object.
pub fn sample_clip(videos: &[Video], len: usize, crop: usize, rng: &mut impl Rng) -> Result<Clip> {
    let usable: Vec<&Video> = videos
        .iter()
        .filter(|v| v.len() >= len && v.frames[0].height() >= crop && v.frames[0].width() >= crop)
        .collect();
    if usable.is_empty() {
        return Err(Error::Input(format!(
            "no video has {len} frames of at least {crop}x{crop} pixels"
        )));
    }
    for _ in 0..1000 {
        let v = usable[rng.random_range(0..usable.len())];
        let start = rng.random_range(0..=v.len() - len);
        let (h, w) = (v.frames[0].height(), v.frames[0].width());
        let y0 = rng.random_range(0..=h - crop);
        let x0 = rng.random_range(0..=w - crop);
        let first = crop_mask(&v.masks[start], y0, x0, crop, None)?;
        if first.object_ids().is_empty() {
            continue;
        }
        let ids = first.object_ids().to_vec();
        let mut frames = Vec::with_capacity(len);
        let mut masks = Vec::with_capacity(len);
        for t in 0..len {
            frames.push(crop_frame(&v.frames[start + t], y0, x0, crop, t)?);
            masks.push(crop_mask(&v.masks[start + t], y0, x0, crop, Some(&ids))?);
        }
        return Ok(Clip {
            source: v.name.clone(),
            start,
            frames,
            masks,
        });
    }
    Err(Error::Input("could not find a clip whose first frame shows an object".into()))
}

/// Every annotated frame with at least one object, as a static pair.
pub fn static_pairs(videos: &[Video]) -> Vec<(Array3, IdMask)> {
    videos
        .iter()
        .flat_map(|v| v.frames.iter().zip(&v.masks))
        .filter(|(_, m)| !m.object_ids().is_empty())
        .map(|(f, m)| (f.pixels().clone(), m.clone()))
        .collect()
}

/// A 3-frame pseudo-video composed from one or two random static pairs.
pub fn sample_pseudo_clip(pairs: &[(Array3, IdMask)], rng: &mut impl Rng) -> Result<Clip> {
    if pairs.is_empty() {
        return Err(Error::Input("no static image/mask pairs for pretraining".into()));
    }
    for _ in 0..100 {
        let n_sources = rng.random_range(1..=2);
        let sources: Vec<(Array3, IdMask)> = (0..n_sources)
            .map(|_| pairs[rng.random_range(0..pairs.len())].clone())
            .collect();
        let video = pseudo_video(&sources, rng.random(), "pseudo")?;
        if video[0].1.object_ids().is_empty() {
            continue;
        }
        let ids = video[0].1.object_ids().to_vec();
        let (frames, masks): (Vec<_>, Vec<_>) = video.into_iter().unzip();
        let masks = masks
            .iter()
            .map(|m| crop_mask(m, 0, 0, m.height(), Some(&ids)))
            .collect::<Result<Vec<_>>>()?;
        return Ok(Clip {
            source: "pseudo".into(),
            start: 0,
            frames,
            masks,
        });
    }
    Err(Error::Input("pseudo-video synthesis kept losing every object".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn clips_keep_first_frame_ids() {
        let cfg = SyntheticSceneConfig::default();
        let videos = synthetic_videos(&cfg, 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let c = sample_clip(&videos, 4, 48, &mut rng).unwrap();
            assert_eq!(c.frames.len(), 4);
            assert!(!c.object_ids().is_empty());
            for m in &c.masks {
                assert_eq!((m.height(), m.width()), (48, 48));
                assert!(m.labels().iter().all(|l| *l == 0 || c.object_ids().contains(l)));
            }
        }
    }

    #[test]
    fn pseudo_clips_have_three_frames() {
        let videos = synthetic_videos(&SyntheticSceneConfig::default(), 2, 3).unwrap();
        let pairs = static_pairs(&videos);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let c = sample_pseudo_clip(&pairs, &mut rng).unwrap();
            assert_eq!(c.frames.len(), 3);
        }
    }

    #[test]
    fn too_short_videos_rejected() {
        let videos = synthetic_videos(&SyntheticSceneConfig::default(), 1, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(sample_clip(&videos, 9, 64, &mut rng).is_err());
    }
}
