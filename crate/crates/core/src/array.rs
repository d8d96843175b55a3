//! Dense `[channels, height, width]` buffers and bilinear resampling.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Row-major `[c, h, w]` array of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Array3 {
    shape: [usize; 3],
    data: Vec<f32>,
}

impl Array3 {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self::full(c, h, w, 0.0)
    }

    pub fn full(c: usize, h: usize, w: usize, value: f32) -> Self {
        Self {
            shape: [c, h, w],
            data: vec![value; c * h * w],
        }
    }

    pub fn from_vec(shape: [usize; 3], data: Vec<f32>) -> Result<Self> {
        let n = shape[0] * shape[1] * shape[2];
        if data.len() != n {
            return Err(Error::Shape(format!(
                "{} values for shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let [c, h, w] = shape;
        let mut data = Vec::with_capacity(c * h * w);
        for k in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(k, y, x));
                }
            }
        }
        Self { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    fn offset(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.shape[1] + y) * self.shape[2] + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.offset(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let o = self.offset(c, y, x);
        self.data[o] = v;
    }

    /// One channel plane as a slice of `h * w` values.
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.shape[1] * self.shape[2];
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.shape[1] * self.shape[2];
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bilinear resize of every channel (half-pixel centers, edge clamped).
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Array3 {
        let [c, h, w] = self.shape;
        if h == out_h && w == out_w {
            return self.clone();
        }
        let ty = bilinear_taps(h, out_h);
        let tx = bilinear_taps(w, out_w);
        let mut out = Array3::zeros(c, out_h, out_w);
        for k in 0..c {
            let src = self.plane(k);
            let dst = out.plane_mut(k);
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                    let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                    dst[oy * out_w + ox] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
        out
    }
}

/// Source taps for 1-D bilinear resampling from `in_len` to `out_len` samples.
///
/// Each output sample reads `(i0, i1, frac)` and evaluates
/// `src[i0] * (1 - frac) + src[i1] * frac`. Sample centers sit at half-pixel
/// offsets and coordinates below zero clamp to the first sample.
pub fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f32)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (libm::floor(src) as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let frac = if i0 == i1 { 0.0 } else { (src - i0 as f64) as f32 };
            (i0, i1, frac)
        })
        .collect()
}

/// Dense `[out_len, in_len]` interpolation matrix equivalent to [`bilinear_taps`].
pub fn bilinear_matrix(in_len: usize, out_len: usize) -> Vec<f32> {
    let mut m = vec![0.0f32; out_len * in_len];
    for (o, (i0, i1, frac)) in bilinear_taps(in_len, out_len).into_iter().enumerate() {
        m[o * in_len + i0] += 1.0 - frac;
        m[o * in_len + i1] += frac;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_resize_is_a_copy() {
        let a = Array3::from_fn([2, 3, 4], |c, y, x| (c * 100 + y * 10 + x) as f32);
        assert_eq!(a.resize_bilinear(3, 4), a);
    }

    #[test]
    fn constant_survives_any_resize() {
        let a = Array3::full(1, 16, 16, 0.25);
        let b = a.resize_bilinear(4, 7);
        assert!(b.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
        let c = a.resize_bilinear(30, 30);
        assert!(c.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn downsample_by_two_averages_pairs() {
        let a = Array3::from_vec([1, 1, 4], alloc::vec![0.0, 2.0, 4.0, 6.0]).unwrap();
        let b = a.resize_bilinear(1, 2);
        assert_eq!(b.data(), &[1.0, 5.0]);
    }

    #[test]
    fn matrix_rows_sum_to_one() {
        for (i, o) in [(4, 30), (30, 4), (16, 64), (7, 3)] {
            let m = bilinear_matrix(i, o);
            for r in 0..o {
                let s: f32 = m[r * i..(r + 1) * i].iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Array3::from_vec([1, 2, 2], alloc::vec![0.0; 3]).is_err());
    }
}
