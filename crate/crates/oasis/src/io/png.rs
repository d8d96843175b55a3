//! Indexed-palette PNG masks and RGB frame images.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use oasis_core::Array3;

use crate::{Error, Result};

pub type Rgb = [u8; 3];

/// The usual 256-entry VOS palette: index bits are spread over the high
/// bits of the three channels.
pub fn default_palette() -> Vec<Rgb> {
    (0..256u32)
        .map(|i| {
            let mut c = [0u8; 3];
            let mut id = i;
            for j in 0..8 {
                for (ch, v) in c.iter_mut().enumerate() {
                    *v |= (((id >> ch) & 1) as u8) << (7 - j);
                }
                id >>= 3;
            }
            c
        })
        .collect()
}

/// Decoded indexed image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedImage {
    pub height: usize,
    pub width: usize,
    pub indices: Vec<u8>,
    pub palette: Vec<Rgb>,
}

pub fn read_indexed(path: &Path) -> Result<IndexedImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let bad = |m: String| Error::format(path, m);
    let mut reader = decoder.read_info().map_err(|e| bad(format!("corrupt PNG: {e}")))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Indexed {
        return Err(bad(format!(
            "mask must be an indexed-palette PNG, found {:?}",
            info.color_type
        )));
    }
    let depth = info.bit_depth as usize;
    let palette: Vec<Rgb> = info
        .palette
        .as_ref()
        .ok_or_else(|| bad("indexed PNG without palette".into()))?
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| bad("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let out = reader
        .next_frame(&mut buf)
        .map_err(|e| bad(format!("corrupt PNG: {e}")))?;
    let (w, h) = (out.width as usize, out.height as usize);
    let mut indices = Vec::with_capacity(w * h);
    let per_byte = 8 / depth;
    let mask = ((1u16 << depth) - 1) as u8;
    for row in buf.chunks(out.line_size).take(h) {
        for x in 0..w {
            let byte = row[x / per_byte];
            let shift = 8 - depth * (x % per_byte + 1);
            indices.push((byte >> shift) & mask);
        }
    }
    if let Some(&bad_idx) = indices.iter().find(|&&i| i as usize >= palette.len()) {
        return Err(bad(format!("index {bad_idx} outside the {}-entry palette", palette.len())));
    }
    Ok(IndexedImage {
        height: h,
        width: w,
        indices,
        palette,
    })
}

pub fn write_indexed(path: &Path, img: &IndexedImage) -> Result<()> {
    if img.palette.is_empty() || img.palette.len() > 256 {
        return Err(Error::Input(format!("palette must hold 1..=256 colours, got {}", img.palette.len())));
    }
    if let Some(&i) = img.indices.iter().find(|&&i| i as usize >= img.palette.len()) {
        return Err(Error::Input(format!("label {i} has no palette entry")));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_palette(img.palette.iter().flatten().copied().collect::<Vec<u8>>());
    let fail = |e: png::EncodingError| Error::format(path, e.to_string());
    let mut writer = enc.write_header().map_err(fail)?;
    writer.write_image_data(&img.indices).map_err(fail)?;
    writer.finish().map_err(fail)
}

/// Reads a PNG or JPEG frame as `[3, H, W]` in `[0, 1]`.
pub fn read_frame(path: &Path) -> Result<Array3> {
    let img = image::open(path)
        .map_err(|e| Error::format(path, format!("cannot decode image: {e}")))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Ok(Array3::from_fn([3, h, w], |c, y, x| raw[(y * w + x) * 3 + c] as f32 / 255.0))
}

/// Writes a `[3, H, W]` array as an 8-bit RGB PNG.
pub fn write_frame(path: &Path, pixels: &Array3) -> Result<()> {
    write_rgb(path, pixels.height(), pixels.width(), &to_rgb_bytes(pixels))
}

pub fn write_rgb(path: &Path, h: usize, w: usize, rgb: &[u8]) -> Result<()> {
    image::save_buffer(path, rgb, w as u32, h as u32, image::ColorType::Rgb8)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_gray(path: &Path, h: usize, w: usize, gray: &[u8]) -> Result<()> {
    image::save_buffer(path, gray, w as u32, h as u32, image::ColorType::L8)
        .map_err(|e| Error::format(path, e.to_string()))
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Interleaved RGB bytes of a `[3, H, W]` array.
pub fn to_rgb_bytes(pixels: &Array3) -> Vec<u8> {
    let (h, w) = (pixels.height(), pixels.width());
    let mut out = Vec::with_capacity(h * w * 3);
    for p in 0..h * w {
        for c in 0..3 {
            out.push(to_byte(pixels.plane(c)[p]));
        }
    }
    out
}

/// Rounds pixel values to the 8-bit grid so a PNG round trip is exact.
pub fn quantize(pixels: &Array3) -> Array3 {
    let data = pixels.data().iter().map(|&v| to_byte(v) as f32 / 255.0).collect();
    Array3::from_vec(pixels.shape(), data).expect("same shape")
}
