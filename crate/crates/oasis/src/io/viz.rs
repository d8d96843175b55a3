//! Figure-style visualisations: coloured masks, overlays, edge and
//! structure maps, and side-by-side panels.

use std::path::Path;

use oasis_core::types::{EdgeMap, FrameTensor, IdMask, StructureKind, StructureMap};

use super::png::{self as pngio, Rgb};
use crate::Result;

/// Interleaved RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn save(&self, path: &Path) -> Result<()> {
        pngio::write_rgb(path, self.height, self.width, &self.data)
    }

    fn from_gray(height: usize, width: usize, gray: &[u8]) -> Self {
        Self {
            height,
            width,
            data: gray.iter().flat_map(|&g| [g, g, g]).collect(),
        }
    }

    /// Places images left to right; all must share the height.
    pub fn hconcat(parts: &[RgbImage]) -> RgbImage {
        let height = parts.first().map_or(0, |p| p.height);
        assert!(parts.iter().all(|p| p.height == height), "panel heights differ");
        let width = parts.iter().map(|p| p.width).sum();
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for p in parts {
                data.extend_from_slice(&p.data[y * p.width * 3..(y + 1) * p.width * 3]);
            }
        }
        RgbImage { height, width, data }
    }
}

pub fn colorize(mask: &IdMask, palette: &[Rgb]) -> RgbImage {
    RgbImage {
        height: mask.height(),
        width: mask.width(),
        data: mask
            .labels()
            .iter()
            .flat_map(|&l| palette.get(l as usize).copied().unwrap_or([255, 255, 255]))
            .collect(),
    }
}

/// Frame with object pixels blended towards their palette colour.
pub fn overlay(frame: &FrameTensor, mask: &IdMask, palette: &[Rgb], alpha: f32) -> RgbImage {
    let base = pngio::to_rgb_bytes(frame.pixels());
    let data = base
        .chunks_exact(3)
        .zip(mask.labels())
        .flat_map(|(px, &l)| {
            if l == 0 {
                [px[0], px[1], px[2]]
            } else {
                let c = palette.get(l as usize).copied().unwrap_or([255, 255, 255]);
                let mix = |a: u8, b: u8| ((1.0 - alpha) * a as f32 + alpha * b as f32).round() as u8;
                [mix(px[0], c[0]), mix(px[1], c[1]), mix(px[2], c[2])]
            }
        })
        .collect();
    RgbImage {
        height: mask.height(),
        width: mask.width(),
        data,
    }
}

/// 8-bit grey map: sigmoid of predicted logits, or the binary map as is.
pub fn structure_gray(map: &StructureMap) -> Vec<u8> {
    let v = map.values().plane(0);
    match map.kind() {
        StructureKind::PredictedLogits => v
            .iter()
            .map(|&x| (255.0 / (1.0 + (-x).exp())).round() as u8)
            .collect(),
        StructureKind::GroundTruthBinary => v.iter().map(|&x| if x > 0.5 { 255 } else { 0 }).collect(),
    }
}

pub fn edge_gray(edges: &EdgeMap) -> Vec<u8> {
    edges
        .values()
        .plane(0)
        .iter()
        .map(|&x| if x > 0.5 { 255 } else { 0 })
        .collect()
}

pub fn save_structure(path: &Path, map: &StructureMap) -> Result<()> {
    let v = map.values();
    pngio::write_gray(path, v.height(), v.width(), &structure_gray(map))
}

pub fn save_edges(path: &Path, edges: &EdgeMap) -> Result<()> {
    let v = edges.values();
    pngio::write_gray(path, v.height(), v.width(), &edge_gray(edges))
}

/// Frame overlay | edge map | structure map (if any) | coloured mask.
pub fn panel(
    frame: &FrameTensor,
    mask: &IdMask,
    edges: &EdgeMap,
    structure: Option<&StructureMap>,
    palette: &[Rgb],
) -> RgbImage {
    let (h, w) = (mask.height(), mask.width());
    let mut parts = vec![
        overlay(frame, mask, palette, 0.5),
        RgbImage::from_gray(h, w, &edge_gray(edges)),
    ];
    if let Some(s) = structure {
        parts.push(RgbImage::from_gray(h, w, &structure_gray(s)));
    }
    parts.push(colorize(mask, palette));
    RgbImage::hconcat(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use oasis_core::Array3;

    #[test]
    fn panel_layout() {
        let frame = FrameTensor::new(Array3::full(3, 16, 16, 0.5), 0, "s").unwrap();
        let mut l = vec![0u8; 256];
        l[17] = 1;
        let mask = IdMask::new(16, 16, l).unwrap();
        let edges = EdgeMap::new(Array3::zeros(1, 16, 16)).unwrap();
        let s = StructureMap::new(Array3::zeros(1, 16, 16), StructureKind::PredictedLogits).unwrap();
        let pal = pngio::default_palette();
        let p = panel(&frame, &mask, &edges, Some(&s), &pal);
        assert_eq!((p.height, p.width, p.data.len()), (16, 64, 16 * 64 * 3));
        // structure panel: sigmoid(0) = 0.5
        assert_eq!(p.data[(32) * 3], 128);
        // mask panel, pixel 17 (row 1, col 1)
        let i = (64 + 48 + 1) * 3;
        assert_eq!(&p.data[i..i + 3], &pal[1]);
    }
}
