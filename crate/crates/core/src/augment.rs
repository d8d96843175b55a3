//! Static-image augmentation and 3-frame pseudo-video synthesis.

use alloc::vec;
use alloc::vec::Vec;
use core::f32::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::types::{FrameTensor, IdMask};
use crate::{Array3, Error, Result};

/// Frames per pseudo-video.
pub const PSEUDO_VIDEO_LEN: usize = 3;

/// Inverse affine map from output pixel centres to source coordinates:
/// `src = M * (x, y) + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub m: [[f32; 2]; 2],
    pub t: [f32; 2],
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        m: [[1.0, 0.0], [0.0, 1.0]],
        t: [0.0, 0.0],
    };

    /// Horizontal mirror of an image `width` pixels wide.
    pub fn mirror(width: usize) -> Affine {
        Affine {
            m: [[-1.0, 0.0], [0.0, 1.0]],
            t: [width as f32, 0.0],
        }
    }

    /// Rotation, isotropic scale and translation about the image centre.
    pub fn similarity(h: usize, w: usize, angle: f32, scale: f32, shift: (f32, f32)) -> Affine {
        let (cx, cy) = (w as f32 / 2.0, h as f32 / 2.0);
        let (s, c) = (libm::sinf(angle) / scale, libm::cosf(angle) / scale);
        // inverse of: rotate+scale about centre, then translate by shift
        let m = [[c, s], [-s, c]];
        let (ox, oy) = (cx + shift.0, cy + shift.1);
        let t = [cx - (m[0][0] * ox + m[0][1] * oy), cy - (m[1][0] * ox + m[1][1] * oy)];
        Affine { m, t }
    }

    /// `self` applied after `first` on source coordinates (`first` maps
    /// output to intermediate, `self` maps intermediate to source).
    pub fn then(&self, first: &Affine) -> Affine {
        let a = &self.m;
        let b = &first.m;
        let m = [
            [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
            [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
        ];
        let t = [
            a[0][0] * first.t[0] + a[0][1] * first.t[1] + self.t[0],
            a[1][0] * first.t[0] + a[1][1] * first.t[1] + self.t[1],
        ];
        Affine { m, t }
    }

    #[inline]
    fn source(&self, x: f32, y: f32) -> (f32, f32) {
        (
            self.m[0][0] * x + self.m[0][1] * y + self.t[0],
            self.m[1][0] * x + self.m[1][1] * y + self.t[1],
        )
    }

    pub fn random(rng: &mut impl Rng, h: usize, w: usize) -> Affine {
        let angle = rng.random_range(-15.0..=15.0f32) * PI / 180.0;
        let scale = rng.random_range(0.9..=1.1f32);
        let shift = (
            rng.random_range(-0.1..=0.1f32) * w as f32,
            rng.random_range(-0.1..=0.1f32) * h as f32,
        );
        Affine::similarity(h, w, angle, scale, shift)
    }
}

/// Bilinear warp; samples outside the source clamp to the border.
pub fn warp_image(img: &Array3, aff: &Affine) -> Array3 {
    let [c, h, w] = img.shape();
    let mut out = Array3::zeros(c, h, w);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = aff.source(x as f32 + 0.5, y as f32 + 0.5);
            let fx = (sx - 0.5).clamp(0.0, (w - 1) as f32);
            let fy = (sy - 0.5).clamp(0.0, (h - 1) as f32);
            let (x0, y0) = (fx as usize, fy as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (ax, ay) = (fx - x0 as f32, fy - y0 as f32);
            for k in 0..c {
                let top = img.get(k, y0, x0) * (1.0 - ax) + img.get(k, y0, x1) * ax;
                let bot = img.get(k, y1, x0) * (1.0 - ax) + img.get(k, y1, x1) * ax;
                out.set(k, y, x, (top * (1.0 - ay) + bot * ay).clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// Nearest-neighbour warp; samples outside the source become background.
pub fn warp_mask(mask: &IdMask, aff: &Affine) -> IdMask {
    let (h, w) = (mask.height(), mask.width());
    let mut labels = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = aff.source(x as f32 + 0.5, y as f32 + 0.5);
            let (ix, iy) = (libm::floorf(sx), libm::floorf(sy));
            if ix >= 0.0 && iy >= 0.0 && (ix as usize) < w && (iy as usize) < h {
                labels[y * w + x] = mask.get(iy as usize, ix as usize);
            }
        }
    }
    IdMask::with_object_ids(h, w, labels, mask.object_ids()).expect("labels copied from mask")
}

/// Pastes the objects of `top` over `base`, renumbering them after the ids
/// of `base`.
pub fn cut_and_paste(
    base: (&Array3, &IdMask),
    top: (&Array3, &IdMask),
) -> Result<(Array3, IdMask)> {
    let (bimg, bmask) = base;
    let (timg, tmask) = top;
    if bimg.shape() != timg.shape() || bmask.labels().len() != tmask.labels().len() {
        return Err(Error::Shape("cut-and-paste sources differ in size".into()));
    }
    let offset = bmask.object_ids().last().copied().unwrap_or(0);
    let mut ids = bmask.object_ids().to_vec();
    for &id in tmask.object_ids() {
        let new = offset
            .checked_add(id)
            .ok_or_else(|| Error::InvalidValue("too many objects to paste".into()))?;
        ids.push(new);
    }
    let n = bmask.labels().len();
    let mut img = bimg.clone();
    let mut labels = bmask.labels().to_vec();
    for p in 0..n {
        let l = tmask.labels()[p];
        if l != 0 {
            labels[p] = l + offset;
            for k in 0..img.channels() {
                img.plane_mut(k)[p] = timg.plane(k)[p];
            }
        }
    }
    let mask = IdMask::with_object_ids(bmask.height(), bmask.width(), labels, &ids)?;
    Ok((img, mask))
}

/// Builds a 3-frame pseudo-video from one or two static image/mask pairs.
///
/// Frame 0 is the (mirrored) composite; later frames re-warp each source with
/// an independent random affine before compositing.
pub fn pseudo_video(
    sources: &[(Array3, IdMask)],
    seed: u64,
    name: &str,
) -> Result<Vec<(FrameTensor, IdMask)>> {
    if sources.is_empty() || sources.len() > 2 {
        return Err(Error::InvalidValue("pseudo-video takes one or two sources".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [_, h, w] = sources[0].0.shape();
    let mirror = rng.random_bool(0.5);
    let base_map = if mirror { Affine::mirror(w) } else { Affine::IDENTITY };
    let mut out = Vec::with_capacity(PSEUDO_VIDEO_LEN);
    for t in 0..PSEUDO_VIDEO_LEN {
        let warped: Vec<(Array3, IdMask)> = sources
            .iter()
            .map(|(img, mask)| {
                let aff = if t == 0 {
                    base_map
                } else {
                    base_map.then(&Affine::random(&mut rng, h, w))
                };
                (warp_image(img, &aff), warp_mask(mask, &aff))
            })
            .collect();
        let (img, mask) = match warped.as_slice() {
            [one] => one.clone(),
            [a, b] => cut_and_paste((&a.0, &a.1), (&b.0, &b.1))?,
            _ => unreachable!(),
        };
        out.push((FrameTensor::new(img, t, name)?, mask));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(h: usize, w: usize, id: u8, y0: usize, x0: usize, s: usize) -> (Array3, IdMask) {
        let mut labels = vec![0u8; h * w];
        let mut img = Array3::full(3, h, w, 0.1);
        for y in y0..y0 + s {
            for x in x0..x0 + s {
                labels[y * w + x] = id;
                img.set(0, y, x, 0.9);
            }
        }
        (img, IdMask::new(h, w, labels).unwrap())
    }

    #[test]
    fn identity_warp_is_exact() {
        let (img, mask) = square(32, 32, 1, 8, 8, 10);
        assert_eq!(warp_mask(&mask, &Affine::IDENTITY), mask);
        let w = warp_image(&img, &Affine::IDENTITY);
        for (a, b) in w.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn mirror_twice_is_identity() {
        let (_, mask) = square(32, 32, 1, 3, 5, 7);
        let m = Affine::mirror(32);
        assert_eq!(warp_mask(&warp_mask(&mask, &m), &m), mask);
    }

    #[test]
    fn mild_affine_preserves_label_set() {
        let (_, a) = square(64, 64, 1, 20, 20, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let aff = Affine::random(&mut rng, 64, 64);
            let w = warp_mask(&a, &aff);
            let present: Vec<u8> = IdMask::new(64, 64, w.labels().to_vec()).unwrap().object_ids().to_vec();
            assert_eq!(present, a.object_ids());
        }
    }

    #[test]
    fn pseudo_video_has_three_valid_frames() {
        let a = square(64, 64, 1, 10, 10, 16);
        let b = square(64, 64, 1, 30, 34, 14);
        let v = pseudo_video(&[a, b], 3, "pv").unwrap();
        assert_eq!(v.len(), PSEUDO_VIDEO_LEN);
        for (f, m) in &v {
            assert_eq!(m.object_ids(), &[1, 2]);
            assert_eq!((f.height(), f.width()), (m.height(), m.width()));
        }
        assert!(v[0].1.labels().contains(&2));
    }
}
