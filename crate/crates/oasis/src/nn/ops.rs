//! Differentiable tensor helpers: special functions, bilinear resizing,
//! softplus and the Hadamard fusion used inside the network.

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp1, DType, Layout, Shape, Tensor};
use oasis_core::array::bilinear_matrix;
use oasis_core::special;

use crate::Result;

#[derive(Debug, Clone, Copy)]
enum Special {
    Digamma,
    Trigamma,
    LnGamma,
}

impl Special {
    fn eval(self, x: f64) -> f64 {
        match self {
            Special::Digamma => special::digamma(x),
            Special::Trigamma => special::trigamma(x),
            Special::LnGamma => special::ln_gamma(x),
        }
    }
}

fn map_storage(
    storage: &CpuStorage,
    layout: &Layout,
    f: impl Fn(f64) -> f64,
) -> candle_core::Result<(CpuStorage, Shape)> {
    let (start, end) = layout
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg("special function needs contiguous input".into()))?;
    let out = match storage {
        CpuStorage::F32(v) => CpuStorage::F32(v[start..end].iter().map(|&x| f(x as f64) as f32).collect()),
        CpuStorage::F64(v) => CpuStorage::F64(v[start..end].iter().map(|&x| f(x)).collect()),
        other => {
            return Err(candle_core::Error::UnsupportedDTypeForOp(other.dtype(), "special function"))
        }
    };
    Ok((out, layout.shape().clone()))
}

impl CustomOp1 for Special {
    fn name(&self) -> &'static str {
        match self {
            Special::Digamma => "digamma",
            Special::Trigamma => "trigamma",
            Special::LnGamma => "lgamma",
        }
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let op = *self;
        map_storage(storage, layout, move |x| op.eval(x))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let d = match self {
            Special::LnGamma => arg.contiguous()?.apply_op1(Special::Digamma)?,
            Special::Digamma => arg.contiguous()?.apply_op1(Special::Trigamma)?,
            Special::Trigamma => {
                return Err(candle_core::Error::BackwardNotSupported { op: "trigamma" })
            }
        };
        Ok(Some(grad_res.mul(&d)?))
    }
}

pub fn digamma(x: &Tensor) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op1(Special::Digamma)?)
}

pub fn ln_gamma(x: &Tensor) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op1(Special::LnGamma)?)
}

/// Patch extraction for a `k x k` convolution with `k / 2` zero padding:
/// `[B, C, H, W]` to `[B, C * k * k, (H / s) * (W / s)]`, channel-major
/// then kernel row then kernel column.
#[derive(Debug, Clone, Copy)]
struct Unfold {
    k: usize,
    stride: usize,
    dims: [usize; 4],
}

impl Unfold {
    fn out_hw(&self) -> (usize, usize) {
        (self.dims[2] / self.stride, self.dims[3] / self.stride)
    }

    /// Calls `f(src_index, dst_index)` for every in-bounds tap.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let [b, c, h, w] = self.dims;
        let (oh, ow) = self.out_hw();
        let (k, s, p) = (self.k, self.stride, self.k / 2);
        let n_out = oh * ow;
        for bc in 0..b * c {
            let src = bc * h * w;
            for ky in 0..k {
                for kx in 0..k {
                    let dst = (bc * k * k + ky * k + kx) * n_out;
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix >= 0 && ix < w as isize {
                                f(src + iy as usize * w + ix as usize, dst + oy * ow + ox);
                            }
                        }
                    }
                }
            }
        }
    }

    fn fwd<T: Copy + Default>(&self, src: &[T]) -> Vec<T> {
        let (oh, ow) = self.out_hw();
        let [b, c, _, _] = self.dims;
        let mut out = vec![T::default(); b * c * self.k * self.k * oh * ow];
        self.for_each_tap(|i, o| out[o] = src[i]);
        out
    }

    fn fold<T: Copy + Default + std::ops::AddAssign>(&self, grad: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); self.dims.iter().product()];
        self.for_each_tap(|i, o| out[i] += grad[o]);
        out
    }
}

impl CustomOp1 for Unfold {
    fn name(&self) -> &'static str {
        "unfold"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (start, end) = layout
            .contiguous_offsets()
            .ok_or_else(|| candle_core::Error::Msg("unfold needs contiguous input".into()))?;
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(self.fwd(&v[start..end])),
            CpuStorage::F64(v) => CpuStorage::F64(self.fwd(&v[start..end])),
            other => return Err(candle_core::Error::UnsupportedDTypeForOp(other.dtype(), "unfold")),
        };
        let (oh, ow) = self.out_hw();
        let [b, c, _, _] = self.dims;
        Ok((out, Shape::from((b, c * self.k * self.k, oh * ow))))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad_res.contiguous()?.apply_op1_no_bwd(&Fold(*self))?))
    }
}

/// Adjoint of [`Unfold`]: scatters patch gradients back onto the input.
#[derive(Debug, Clone, Copy)]
struct Fold(Unfold);

impl CustomOp1 for Fold {
    fn name(&self) -> &'static str {
        "fold"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (start, end) = layout
            .contiguous_offsets()
            .ok_or_else(|| candle_core::Error::Msg("fold needs contiguous input".into()))?;
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(self.0.fold(&v[start..end])),
            CpuStorage::F64(v) => CpuStorage::F64(self.0.fold(&v[start..end])),
            other => return Err(candle_core::Error::UnsupportedDTypeForOp(other.dtype(), "fold")),
        };
        Ok((out, Shape::from(self.0.dims.to_vec())))
    }
}

/// Convolution patches of `x` for kernel `k` (odd) and `stride`.
pub fn unfold(x: &Tensor, k: usize, stride: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let op = Unfold {
        k,
        stride,
        dims: [b, c, h, w],
    };
    Ok(x.contiguous()?.apply_op1(op)?)
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((x.relu()? + tail)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

fn resize_matrix(in_len: usize, out_len: usize, x: &Tensor) -> Result<Tensor> {
    let m = bilinear_matrix(in_len, out_len);
    Ok(Tensor::from_vec(m, (out_len, in_len), x.device())?.to_dtype(x.dtype())?)
}

/// Half-pixel bilinear resize of the two trailing axes of a rank-4 tensor,
/// written as two matrix products so that gradients flow through it.
pub fn resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let ry = resize_matrix(h, out_h, x)?;
    let rx = resize_matrix(w, out_w, x)?.t()?;
    let flat = x.reshape((n * c, h, w))?;
    let y = ry.broadcast_matmul(&flat)?.broadcast_matmul(&rx)?;
    Ok(y.reshape((n, c, out_h, out_w))?)
}

/// `x + x * (weight * resize(map))` with a single-channel map broadcast over
/// channels.
pub fn hadamard_fuse(x: &Tensor, map: &Tensor, weight: f64) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let g = (resize(map, h, w)? * weight)?;
    Ok((x + x.broadcast_mul(&g)?)?)
}

pub fn dtype_eps(dtype: DType) -> f64 {
    match dtype {
        DType::F64 => 1e-12,
        _ => 1e-7,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    #[test]
    fn special_ops_match_scalars() {
        let xs = [0.3f64, 1.0, 2.5, 17.0];
        let t = Tensor::new(&xs, &Device::Cpu).unwrap();
        let d: Vec<f64> = digamma(&t).unwrap().to_vec1().unwrap();
        let l: Vec<f64> = ln_gamma(&t).unwrap().to_vec1().unwrap();
        for i in 0..xs.len() {
            assert_eq!(d[i], special::digamma(xs[i]));
            assert_eq!(l[i], special::ln_gamma(xs[i]));
        }
    }

    #[test]
    fn special_gradients() {
        let v = Var::new(&[0.7f64, 3.0], &Device::Cpu).unwrap();
        let g = ln_gamma(v.as_tensor()).unwrap().sum_all().unwrap().backward().unwrap();
        let g: Vec<f64> = g.get(&v).unwrap().to_vec1().unwrap();
        assert!((g[0] - special::digamma(0.7)).abs() < 1e-12);
        let g = digamma(v.as_tensor()).unwrap().sum_all().unwrap().backward().unwrap();
        let g: Vec<f64> = g.get(&v).unwrap().to_vec1().unwrap();
        assert!((g[1] - special::trigamma(3.0)).abs() < 1e-12);
    }

    #[test]
    fn unfold_gradient_is_fold() {
        // <unfold(x), g> == <x, fold(g)> for the adjoint pair
        let x = Var::new(&[[[[1.0f64, -2.0, 0.5, 3.0], [0.25, 1.5, -1.0, 2.0]]]], &Device::Cpu).unwrap();
        for stride in [1, 2] {
            let u = unfold(x.as_tensor(), 3, stride).unwrap();
            let g = Tensor::arange(0.0f64, u.elem_count() as f64, &Device::Cpu)
                .unwrap()
                .reshape(u.dims())
                .unwrap();
            let grads = (&u * &g).unwrap().sum_all().unwrap().backward().unwrap();
            let gx = grads.get(&x).unwrap();
            let lhs: f64 = (&u * &g).unwrap().sum_all().unwrap().to_scalar().unwrap();
            let rhs: f64 = (x.as_tensor() * gx).unwrap().sum_all().unwrap().to_scalar().unwrap();
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn softplus_is_stable() {
        let t = Tensor::new(&[-100.0f32, 0.0, 100.0], &Device::Cpu).unwrap();
        let s: Vec<f32> = softplus(&t).unwrap().to_vec1().unwrap();
        assert!(s[0] >= 0.0 && s[0] < 1e-30);
        assert!((s[1] - 2f32.ln()).abs() < 1e-7);
        assert_eq!(s[2], 100.0);
    }

    #[test]
    fn resize_matches_array_resize() {
        use oasis_core::Array3;
        let a = Array3::from_fn([2, 4, 6], |c, y, x| (c * 31 + y * 7 + x * 3) as f32 * 0.1);
        let t = Tensor::from_slice(a.data(), (1, 2, 4, 6), &Device::Cpu).unwrap();
        let r: Vec<f32> = resize(&t, 8, 3).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let expect = a.resize_bilinear(8, 3);
        for (x, y) in r.iter().zip(expect.data()) {
            assert!((x - y).abs() < 1e-5);
        }
    }
}
