//! Parameter store and the few layer types the network is built from.

use std::collections::BTreeMap;
use std::sync::Mutex;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Named trainable tensors, kept in name order so every reduction over
/// parameters is reproducible.
#[derive(Debug)]
pub struct ParamStore {
    vars: Mutex<BTreeMap<String, Var>>,
    device: Device,
    dtype: DType,
    seed: u64,
}

fn name_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, folded with the store seed
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl ParamStore {
    pub fn new(seed: u64, device: Device, dtype: DType) -> Self {
        Self {
            vars: Mutex::new(BTreeMap::new()),
            device,
            dtype,
            seed,
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn root(&self) -> Scope<'_> {
        Scope {
            store: self,
            prefix: String::new(),
        }
    }

    /// Uniform `[-bound, bound]` initialisation, seeded by the parameter
    /// name so construction order does not matter.
    fn create(&self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        let mut vars = self.vars.lock().expect("parameter store poisoned");
        if vars.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(self.seed, name));
        let data: Vec<f32> = if bound == 0.0 {
            vec![0.0; n]
        } else {
            (0..n).map(|_| rng.random_range(-bound..=bound) as f32).collect()
        };
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        vars.insert(name.to_string(), var);
        Ok(out)
    }

    /// All parameters in name order.
    pub fn vars(&self) -> Vec<(String, Var)> {
        let vars = self.vars.lock().expect("parameter store poisoned");
        vars.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.vars().iter().map(|(_, v)| v.elem_count()).sum()
    }

    pub fn num_parameters_under(&self, prefix: &str) -> usize {
        self.vars()
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.elem_count())
            .sum()
    }

    /// Overwrites every parameter from `values`; names and shapes must match
    /// exactly.
    pub fn load(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        let vars = self.vars.lock().expect("parameter store poisoned");
        for name in values.keys() {
            if !vars.contains_key(name) {
                return Err(Error::Input(format!("checkpoint has unknown tensor {name}")));
            }
        }
        for (name, var) in vars.iter() {
            let t = values
                .get(name)
                .ok_or_else(|| Error::Input(format!("checkpoint lacks tensor {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Input(format!(
                    "tensor {name}: checkpoint shape {:?}, model shape {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_device(&self.device)?.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Overwrites the parameters present in `values` and returns how many
    /// were set; others keep their current values. Unknown names are ignored.
    pub fn load_matching(&self, values: &BTreeMap<String, Tensor>) -> Result<usize> {
        let vars = self.vars.lock().expect("parameter store poisoned");
        let mut loaded = 0;
        for (name, var) in vars.iter() {
            let Some(t) = values.get(name) else { continue };
            if t.dims() != var.dims() {
                return Err(Error::Input(format!(
                    "tensor {name}: source shape {:?}, model shape {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_device(&self.device)?.to_dtype(self.dtype)?)?;
            loaded += 1;
        }
        Ok(loaded)
    }

    /// Detached copies of every parameter.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        let vars = self.vars.lock().expect("parameter store poisoned");
        vars.iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?.detach())))
            .collect()
    }
}

/// A name prefix into a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Scope<'a> {
    store: &'a ParamStore,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn pp(&self, name: &str) -> Scope<'a> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Scope {
            store: self.store,
            prefix,
        }
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn uniform(&self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        self.store.create(&self.full(name), shape, bound)
    }

    pub fn zeros(&self, name: &str, shape: &[usize]) -> Result<Tensor> {
        self.store.create(&self.full(name), shape, 0.0)
    }
}

/// 2-D convolution with optional bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
}

impl Conv2d {
    /// He-uniform weights (suited to rectifiers), zero bias. Padding is
    /// `kernel / 2`.
    pub fn new(s: &Scope, c_in: usize, c_out: usize, kernel: usize, stride: usize, bias: bool) -> Result<Self> {
        Self::with_gain(s, c_in, c_out, kernel, stride, bias, 1.0)
    }

    /// He-uniform bound multiplied by `gain`. A small gain on the last layer
    /// of a residual branch or an output head keeps the unnormalised network
    /// near identity at initialisation.
    pub fn with_gain(
        s: &Scope,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
        gain: f64,
    ) -> Result<Self> {
        let fan_in = (c_in * kernel * kernel) as f64;
        let weight = s.uniform("weight", &[c_out, c_in, kernel, kernel], gain * (6.0 / fan_in).sqrt())?;
        let bias = if bias { Some(s.zeros("bias", &[c_out])?) } else { None };
        Ok(Self { weight, bias, stride })
    }

    /// Lowered to a matrix product over unfolded patches; the backward pass
    /// is then plain GEMM, far faster on CPU than the native convolution
    /// gradients.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let (o, _, k, _) = self.weight.dims4()?;
        if h % self.stride != 0 || w % self.stride != 0 {
            return Err(crate::Error::Input(format!(
                "convolution input {h}x{w} not divisible by stride {}",
                self.stride
            )));
        }
        let (oh, ow) = (h / self.stride, w / self.stride);
        let cols = if k == 1 {
            subsample(x, self.stride)?
        } else {
            super::ops::unfold(x, k, self.stride)?
        };
        let cols = cols.reshape((b, c * k * k, oh * ow))?;
        let y = self.weight.reshape((o, c * k * k))?.broadcast_matmul(&cols)?;
        let y = match &self.bias {
            Some(bias) => y.broadcast_add(&bias.reshape((1, o, 1))?)?,
            None => y,
        };
        Ok(y.reshape((b, o, oh, ow))?)
    }
}

/// Keeps every `stride`-th row and column, starting at 0.
fn subsample(x: &Tensor, stride: usize) -> Result<Tensor> {
    if stride == 1 {
        return Ok(x.clone());
    }
    let (b, c, h, w) = x.dims4()?;
    Ok(x.contiguous()?
        .reshape((b, c, h / stride, stride, w / stride, stride))?
        .narrow(3, 0, 1)?
        .narrow(5, 0, 1)?
        .reshape((b, c, h / stride, w / stride))?)
}

/// Kernel-2 stride-2 transposed convolution (exact 2x upsampling).
#[derive(Debug, Clone)]
pub struct Upsample2x {
    weight: Tensor,
    bias: Tensor,
}

impl Upsample2x {
    pub fn new(s: &Scope, c_in: usize, c_out: usize) -> Result<Self> {
        let bound = (6.0 / c_in as f64).sqrt();
        Ok(Self {
            weight: s.uniform("weight", &[c_in, c_out, 2, 2], bound)?,
            bias: s.zeros("bias", &[c_out])?,
        })
    }

    /// Each input pixel emits a 2x2 patch: one matrix product and a
    /// reshuffle.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let (_, o, _, _) = self.weight.dims4()?;
        let wm = self.weight.reshape((c, o * 4))?.t()?;
        let y = wm.broadcast_matmul(&x.reshape((b, c, h * w))?)?;
        let y = y
            .reshape((b, o, 2, 2, h, w))?
            .permute((0, 1, 4, 2, 5, 3))?
            .reshape((b, o, 2 * h, 2 * w))?;
        Ok(y.broadcast_add(&self.bias.reshape((1, o, 1, 1))?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_order_independent() {
        let a = ParamStore::new(3, Device::Cpu, DType::F32);
        a.root().uniform("x", &[4], 1.0).unwrap();
        let ya = a.root().uniform("y", &[4], 1.0).unwrap();
        let b = ParamStore::new(3, Device::Cpu, DType::F32);
        let yb = b.root().uniform("y", &[4], 1.0).unwrap();
        assert_eq!(ya.to_vec1::<f32>().unwrap(), yb.to_vec1::<f32>().unwrap());
    }

    #[test]
    fn duplicate_names_rejected() {
        let p = ParamStore::new(0, Device::Cpu, DType::F32);
        p.root().pp("a").zeros("b", &[1]).unwrap();
        assert!(p.root().zeros("a.b", &[1]).is_err());
    }

    #[test]
    fn upsample_doubles_and_conv_keeps_size() {
        let p = ParamStore::new(0, Device::Cpu, DType::F32);
        let up = Upsample2x::new(&p.root().pp("up"), 4, 3).unwrap();
        let conv = Conv2d::new(&p.root().pp("c"), 3, 5, 3, 1, true).unwrap();
        let x = Tensor::ones((2, 4, 5, 6), DType::F32, &Device::Cpu).unwrap();
        let y = conv.forward(&up.forward(&x).unwrap()).unwrap();
        assert_eq!(y.dims(), &[2, 5, 10, 12]);
        let strided = Conv2d::new(&p.root().pp("s"), 4, 2, 3, 2, false).unwrap();
        assert_eq!(strided.forward(&x.pad_with_zeros(2, 0, 1).unwrap()).unwrap().dims(), &[2, 2, 3, 3]);
    }

    fn rand(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
        (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn lowered_conv_matches_native() {
        let p = ParamStore::new(1, Device::Cpu, DType::F64);
        let x = rand(&[2, 3, 8, 6], 9);
        for (k, stride) in [(3, 1), (3, 2), (1, 1), (1, 2)] {
            let conv = Conv2d::new(&p.root().pp(&format!("c{k}{stride}")), 3, 4, k, stride, true).unwrap();
            let bias = conv.bias.as_ref().unwrap();
            let bias = (bias + 0.25).unwrap().reshape((1, 4, 1, 1)).unwrap();
            let conv = Conv2d { bias: Some(bias.flatten_all().unwrap()), ..conv };
            let native = x
                .conv2d(&conv.weight, k / 2, stride, 1, 1)
                .unwrap()
                .broadcast_add(&bias)
                .unwrap();
            assert!(max_diff(&conv.forward(&x).unwrap(), &native) < 1e-12);
        }
    }

    #[test]
    fn lowered_upsample_matches_native() {
        let p = ParamStore::new(2, Device::Cpu, DType::F64);
        let up = Upsample2x::new(&p.root().pp("u"), 3, 5).unwrap();
        let x = rand(&[2, 3, 4, 5], 4);
        let native = x.conv_transpose2d(&up.weight, 0, 0, 2, 1).unwrap();
        assert!(max_diff(&up.forward(&x).unwrap(), &native) < 1e-12);
    }
}
