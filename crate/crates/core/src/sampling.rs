//! Point selection for sparse supervision: three quarters of the budget go to
//! the pixels with the smallest top-1/top-2 probability margin, the rest are
//! drawn uniformly from the remaining pixels.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Array3, Error, Result};

/// Top-1 minus top-2 probability per pixel of a `[K, H, W]` array.
pub fn uncertainty_margin(probs: &Array3) -> Vec<f32> {
    let [k, h, w] = probs.shape();
    let n = h * w;
    let d = probs.data();
    (0..n)
        .map(|p| {
            let (mut a, mut b) = (f32::NEG_INFINITY, f32::NEG_INFINITY);
            for c in 0..k {
                let v = d[c * n + p];
                if v > a {
                    b = a;
                    a = v;
                } else if v > b {
                    b = v;
                }
            }
            if k < 2 {
                0.0
            } else {
                a - b
            }
        })
        .collect()
}

/// Number of points drawn by uncertainty out of a budget of `n_points`.
#[inline]
pub fn uncertain_budget(n_points: usize) -> usize {
    n_points * 3 / 4
}

/// Selects `n_points` distinct flat pixel indices; deterministic in `seed`.
///
/// Margin ties are broken by a seeded shuffle, so flat predictions reduce to
/// uniform sampling without replacement.
pub fn sample_points(probs: &Array3, n_points: usize, seed: u64) -> Result<Vec<usize>> {
    let n = probs.height() * probs.width();
    if n_points > n {
        return Err(Error::InvalidValue(format!(
            "{n_points} points requested from {n} pixels"
        )));
    }
    let margin = uncertainty_margin(probs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order.sort_by(|&a, &b| margin[a].total_cmp(&margin[b]));

    let n_unc = uncertain_budget(n_points);
    let (head, rest) = order.split_at_mut(n_unc);
    let mut picked = head.to_vec();
    let (random, _) = rest.partial_shuffle(&mut rng, n_points - n_unc);
    picked.extend_from_slice(random);
    Ok(picked)
}

/// Gathers `[K, P]` values at the selected pixels.
pub fn gather_points(values: &Array3, indices: &[usize]) -> Vec<Vec<f32>> {
    (0..values.channels())
        .map(|c| {
            let plane = values.plane(c);
            indices.iter().map(|&i| plane[i]).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn full_budget_selects_every_pixel_once() {
        let probs = Array3::full(2, 4, 4, 0.5);
        let mut idx = sample_points(&probs, 16, 1).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn uniform_predictions_give_unique_random_points() {
        let probs = Array3::full(2, 8, 8, 0.5);
        let a = sample_points(&probs, 20, 1).unwrap();
        let b = sample_points(&probs, 20, 2).unwrap();
        let mut s = a.clone();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 20);
        assert_ne!(a, b);
        assert_eq!(a, sample_points(&probs, 20, 1).unwrap());
    }

    #[test]
    fn uncertain_budget_hits_smallest_margins() {
        // distinct margins: pixel p has foreground prob 0.5 + p / 200
        let n = 64;
        let fg: Vec<f32> = (0..n).map(|p| 0.5 + p as f32 / 200.0).collect();
        let bg: Vec<f32> = fg.iter().map(|v| 1.0 - v).collect();
        let probs = Array3::from_vec([2, 8, 8], [bg, fg].concat()).unwrap();
        let idx = sample_points(&probs, 16, 9).unwrap();

        let margin = uncertainty_margin(&probs);
        let mut oracle: Vec<usize> = (0..n).collect();
        oracle.sort_by(|&a, &b| margin[a].partial_cmp(&margin[b]).unwrap());
        let mut head = idx[..12].to_vec();
        head.sort_unstable();
        let mut expect = oracle[..12].to_vec();
        expect.sort_unstable();
        assert_eq!(head, expect);
        assert!(idx[12..].iter().all(|i| !expect.contains(i)));
    }

    #[test]
    fn oversized_budget_rejected() {
        assert!(sample_points(&Array3::zeros(2, 2, 2), 5, 0).is_err());
    }

    #[test]
    fn gather_reads_planes() {
        let a = Array3::from_vec([2, 1, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(gather_points(&a, &[2, 0]), vec![vec![3.0, 1.0], vec![6.0, 4.0]]);
    }
}
