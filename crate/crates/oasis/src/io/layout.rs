//! Benchmark-style dataset layout:
//! `JPEGImages/<sequence>/<frame>.{jpg,png}` and
//! `Annotations/<sequence>/<frame>.png` (indexed palette).

use std::path::{Path, PathBuf};

use oasis_core::types::{FrameTensor, IdMask};

use super::png::{self as pngio, IndexedImage, Rgb};
use crate::{Error, Result};

pub const IMAGES_DIR: &str = "JPEGImages";
pub const ANNOTATIONS_DIR: &str = "Annotations";

#[derive(Debug, Clone)]
pub struct DatasetLayout {
    pub root: PathBuf,
    pub split: Option<Vec<String>>,
}

/// One loaded sequence. `masks[t]` is `None` where no annotation exists.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub name: String,
    pub frame_names: Vec<String>,
    pub frames: Vec<FrameTensor>,
    pub masks: Vec<Option<IdMask>>,
    pub palette: Vec<Rgb>,
}

impl Sequence {
    pub fn first_mask(&self) -> &IdMask {
        self.masks[0].as_ref().expect("frame 0 annotation checked on load")
    }

    /// All masks, if every frame is annotated.
    pub fn dense_masks(&self) -> Option<Vec<IdMask>> {
        self.masks.iter().cloned().collect()
    }
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            split: None,
        }
    }

    /// Restricts the dataset to the names listed one per line in `path`.
    pub fn with_split_file(mut self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.split = Some(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        );
        Ok(self)
    }

    pub fn images_dir(&self, name: &str) -> PathBuf {
        self.root.join(IMAGES_DIR).join(name)
    }

    pub fn annotations_dir(&self, name: &str) -> PathBuf {
        self.root.join(ANNOTATIONS_DIR).join(name)
    }

    pub fn sequences(&self) -> Result<Vec<String>> {
        if let Some(s) = &self.split {
            return Ok(s.clone());
        }
        let dir = self.root.join(IMAGES_DIR);
        Ok(read_dir_sorted(&dir)?
            .into_iter()
            .filter(|p| p.is_dir())
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect())
    }

    pub fn load_sequence(&self, name: &str) -> Result<Sequence> {
        let ds = |message: String| Error::Dataset {
            sequence: name.to_string(),
            message,
        };
        let img_dir = self.images_dir(name);
        if !img_dir.is_dir() {
            return Err(ds(format!("no frame directory {}", img_dir.display())));
        }
        let files: Vec<PathBuf> = read_dir_sorted(&img_dir)?
            .into_iter()
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                    Some("jpg" | "jpeg" | "png")
                )
            })
            .collect();
        if files.is_empty() {
            return Err(ds("sequence has no frames".into()));
        }
        let ann_dir = self.annotations_dir(name);
        let mut frames = Vec::with_capacity(files.len());
        let mut masks = Vec::with_capacity(files.len());
        let mut frame_names = Vec::with_capacity(files.len());
        let mut palette: Option<Vec<Rgb>> = None;
        for (t, file) in files.iter().enumerate() {
            let frame_name = stem(file);
            let pixels = pngio::read_frame(file).map_err(|e| ds(e.to_string()))?;
            let frame = FrameTensor::new(pixels, t, name).map_err(|e| ds(format!("{frame_name}: {e}")))?;
            if let Some(first) = frames.first() {
                let first: &FrameTensor = first;
                if (first.height(), first.width()) != (frame.height(), frame.width()) {
                    return Err(ds(format!("frame {frame_name} differs in size from frame 0")));
                }
            }
            let ann = ann_dir.join(format!("{frame_name}.png"));
            let mask = if ann.is_file() {
                let img = pngio::read_indexed(&ann).map_err(|e| ds(e.to_string()))?;
                check_palette(&img).map_err(|m| ds(format!("{}: {m}", ann.display())))?;
                if (img.height, img.width) != (frame.height(), frame.width()) {
                    return Err(ds(format!(
                        "{}: mask {}x{} vs frame {}x{}",
                        ann.display(),
                        img.height,
                        img.width,
                        frame.height(),
                        frame.width()
                    )));
                }
                palette.get_or_insert_with(|| img.palette.clone());
                Some(IdMask::new(img.height, img.width, img.indices).map_err(|e| ds(e.to_string()))?)
            } else {
                None
            };
            if t == 0 && mask.is_none() {
                return Err(ds(format!("missing frame-0 annotation {}", ann.display())));
            }
            frames.push(frame);
            masks.push(mask);
            frame_names.push(frame_name);
        }
        Ok(Sequence {
            name: name.to_string(),
            frame_names,
            frames,
            masks,
            palette: palette.unwrap_or_else(pngio::default_palette),
        })
    }

    /// Writes one indexed PNG per frame under `Annotations/<name>/`.
    pub fn save_masks(&self, name: &str, frame_names: &[String], masks: &[IdMask], palette: &[Rgb]) -> Result<()> {
        if frame_names.len() != masks.len() {
            return Err(Error::Input(format!(
                "{} frame names for {} masks",
                frame_names.len(),
                masks.len()
            )));
        }
        let dir = self.annotations_dir(name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (fname, mask) in frame_names.iter().zip(masks) {
            let img = IndexedImage {
                height: mask.height(),
                width: mask.width(),
                indices: mask.labels().to_vec(),
                palette: palette.to_vec(),
            };
            pngio::write_indexed(&dir.join(format!("{fname}.png")), &img)?;
        }
        Ok(())
    }

    /// Writes frames as PNG under `JPEGImages/<name>/`.
    pub fn save_frames(&self, name: &str, frame_names: &[String], frames: &[FrameTensor]) -> Result<()> {
        let dir = self.images_dir(name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (fname, frame) in frame_names.iter().zip(frames) {
            pngio::write_frame(&dir.join(format!("{fname}.png")), frame.pixels())?;
        }
        Ok(())
    }
}

/// Zero-padded frame names `00000, 00001, ...`.
pub fn frame_names(n: usize) -> Vec<String> {
    (0..n).map(|t| format!("{t:05}")).collect()
}

/// Two labels in use must not share a colour, or identities would be lost
/// when viewing the mask as colour.
fn check_palette(img: &IndexedImage) -> std::result::Result<(), String> {
    let mut used = [false; 256];
    for &i in &img.indices {
        used[i as usize] = true;
    }
    let colours: Vec<(usize, Rgb)> = (0..256).filter(|&i| used[i]).map(|i| (i, img.palette[i])).collect();
    for (a, ca) in &colours {
        if let Some((b, _)) = colours.iter().find(|(b, cb)| b > a && cb == ca) {
            return Err(format!("palette indices {a} and {b} share colour {ca:?}"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use oasis_core::Array3;

    fn tiny(n: usize) -> (Vec<FrameTensor>, Vec<IdMask>) {
        let frames = (0..n)
            .map(|t| FrameTensor::new(Array3::full(3, 16, 16, (t as f32 * 40.0) / 255.0), t, "s").unwrap())
            .collect();
        let masks = (0..n)
            .map(|t| {
                let mut l = vec![0u8; 256];
                l[t] = 1;
                l[100 + t] = 2;
                IdMask::new(16, 16, l).unwrap()
            })
            .collect();
        (frames, masks)
    }

    #[test]
    fn round_trip_and_sparse_annotations() {
        let dir = tempfile::tempdir().unwrap();
        let layout = DatasetLayout::new(dir.path());
        let (frames, masks) = tiny(3);
        let names = frame_names(3);
        layout.save_frames("a", &names, &frames).unwrap();
        layout.save_masks("a", &names, &masks, &pngio::default_palette()).unwrap();
        let s = layout.load_sequence("a").unwrap();
        assert_eq!(s.frame_names, names);
        assert_eq!(s.dense_masks().unwrap(), masks);
        for (a, b) in s.frames.iter().zip(&frames) {
            assert_eq!(a.pixels(), b.pixels());
        }
        layout.save_frames("b", &names, &frames).unwrap();
        layout.save_masks("b", &names[..1], &masks[..1], &pngio::default_palette()).unwrap();
        let s = layout.load_sequence("b").unwrap();
        assert_eq!(s.masks[0].as_ref(), Some(&masks[0]));
        assert!(s.masks[1].is_none() && s.masks[2].is_none());
        assert_eq!(layout.sequences().unwrap(), vec!["a", "b"]);
    }

    #[test]
    fn missing_first_annotation_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let layout = DatasetLayout::new(dir.path());
        let (frames, masks) = tiny(2);
        let names = frame_names(2);
        layout.save_frames("s", &names, &frames).unwrap();
        layout.save_masks("s", &names[1..], &masks[1..], &pngio::default_palette()).unwrap();
        let err = layout.load_sequence("s").unwrap_err();
        assert!(matches!(err, Error::Dataset { .. }));
        assert!(err.to_string().contains("frame-0"));
    }

    #[test]
    fn colliding_palette_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let layout = DatasetLayout::new(dir.path());
        let (frames, masks) = tiny(1);
        let names = frame_names(1);
        layout.save_frames("s", &names, &frames).unwrap();
        let mut pal = pngio::default_palette();
        pal[2] = pal[1];
        layout.save_masks("s", &names, &masks, &pal).unwrap();
        assert!(layout.load_sequence("s").unwrap_err().to_string().contains("share colour"));
    }
}
