//! Soft aggregation of independent per-object logits into one distribution.
//!
//! With `p_k = sigmoid(l_k)` the unnormalised weights are the
//! product-of-complements background `prod_k (1 - p_k)` and, for object `k`,
//! that same product times the odds `p_k / (1 - p_k) = exp(l_k)`. After the
//! shared normaliser this is a softmax over `[0, l_1, ..., l_{K-1}]`, which is
//! how it is evaluated.

use alloc::vec;

use crate::types::ProbMask;
use crate::{Array3, Error, Result};

/// Class logits `[K, H, W]` (background logit fixed at 0) for object logits
/// `[K - 1, H, W]`.
pub fn class_logits(object_logits: &Array3) -> Array3 {
    let [k, h, w] = object_logits.shape();
    let n = h * w;
    let mut data = vec![0.0f32; (k + 1) * n];
    data[n..].copy_from_slice(object_logits.data());
    Array3::from_vec([k + 1, h, w], data).expect("shape computed above")
}

/// Aggregates `[K - 1, H, W]` object logits into a [`ProbMask`].
pub fn aggregate(object_logits: &Array3, object_ids: &[u8]) -> Result<ProbMask> {
    if !object_logits.all_finite() {
        return Err(Error::InvalidValue("non-finite object logit".into()));
    }
    let logits = class_logits(object_logits);
    let [k, h, w] = logits.shape();
    let n = h * w;
    let src = logits.data();
    let mut out = Array3::zeros(k, h, w);
    let dst = out.data_mut();
    for p in 0..n {
        let m = (0..k).map(|c| src[c * n + p]).fold(f32::NEG_INFINITY, f32::max);
        let mut z = 0.0f64;
        for c in 0..k {
            let e = libm::exp((src[c * n + p] - m) as f64);
            dst[c * n + p] = e as f32;
            z += e;
        }
        for c in 0..k {
            dst[c * n + p] = (dst[c * n + p] as f64 / z) as f32;
        }
    }
    ProbMask::new(out, object_ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logit_splits_evenly() {
        let pm = aggregate(&Array3::zeros(1, 2, 2), &[1]).unwrap();
        assert!(pm.probs().data().iter().all(|&v| (v - 0.5).abs() < 1e-7));
    }

    #[test]
    fn large_logit_saturates() {
        let pm = aggregate(&Array3::full(1, 1, 1, 20.0), &[1]).unwrap();
        assert!(pm.probs().get(1, 0, 0) >= 1.0 - 1e-6);
    }

    #[test]
    fn matches_product_of_complements_loop() {
        let vals = [
            0.3f32, -1.2, 2.5, 0.0, 4.0, -3.0, 1.1, -0.4, 0.9, -2.2, 0.7, 3.3, -0.1, 1.8, -4.5, 0.2,
            2.0, -0.8,
        ];
        let logits = Array3::from_vec([2, 3, 3], vals.to_vec()).unwrap();
        let pm = aggregate(&logits, &[1, 2]).unwrap();
        for p in 0..9 {
            let p1 = 1.0 / (1.0 + (-vals[p] as f64).exp());
            let p2 = 1.0 / (1.0 + (-vals[9 + p] as f64).exp());
            let bg = (1.0 - p1) * (1.0 - p2);
            let w1 = p1 * (1.0 - p2);
            let w2 = p2 * (1.0 - p1);
            let z = bg + w1 + w2;
            let expect = [bg / z, w1 / z, w2 / z];
            for c in 0..3 {
                assert!((pm.probs().data()[c * 9 + p] as f64 - expect[c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn permuting_objects_permutes_channels() {
        let a = Array3::from_vec([2, 1, 2], alloc::vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let b = Array3::from_vec([2, 1, 2], alloc::vec![0.5, 3.0, 1.0, -2.0]).unwrap();
        let pa = aggregate(&a, &[1, 2]).unwrap();
        let pb = aggregate(&b, &[1, 2]).unwrap();
        assert_eq!(pa.probs().plane(0), pb.probs().plane(0));
        assert_eq!(pa.probs().plane(1), pb.probs().plane(2));
        assert_eq!(pa.probs().plane(2), pb.probs().plane(1));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(aggregate(&Array3::full(1, 1, 1, f32::NAN), &[1]).is_err());
    }
}
