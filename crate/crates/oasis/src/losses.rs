//! Training objective on sampled points: cross-entropy, soft dice, the
//! evidential Dirichlet loss and the structure-map BCE.

use candle_core::{DType, Tensor};
use oasis_core::types::{StructureKind, StructureMap};
use oasis_core::Array3;

use crate::config::LossConfig;
use crate::nn::ops::{digamma, ln_gamma, softplus};
use crate::{Error, Result};

/// Smallest probability fed to the logarithm in [`ce_loss`].
pub const CE_CLAMP: f64 = 1e-12;

/// `[K, H, W]` tensor restricted to flat pixel `indices`, giving `[K, P]`.
pub fn gather_points(x: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let (k, h, w) = x.dims3()?;
    let idx: Vec<u32> = indices.iter().map(|&i| i as u32).collect();
    let idx = Tensor::from_vec(idx, indices.len(), x.device())?;
    Ok(x.reshape((k, h * w))?.index_select(&idx, 1)?)
}

/// Copies a `[K, H, W]` tensor out to an [`Array3`].
pub fn to_array(x: &Tensor) -> Result<Array3> {
    let (k, h, w) = x.dims3()?;
    let v = x.detach().to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Ok(Array3::from_vec([k, h, w], v)?)
}

/// `[K, H, W]` tensor holding an [`Array3`].
pub fn from_array(a: &Array3, device: &candle_core::Device, dtype: DType) -> Result<Tensor> {
    let [k, h, w] = a.shape();
    Ok(Tensor::from_slice(a.data(), (k, h, w), device)?.to_dtype(dtype)?)
}

/// Mean over points of `-log p_true`; probabilities and targets are `[K, P]`.
pub fn ce_loss(probs: &Tensor, target: &Tensor) -> Result<Tensor> {
    let p_true = (probs * target)?.sum(0)?;
    Ok(p_true.clamp(CE_CLAMP, 1.0)?.log()?.mean_all()?.neg()?)
}

/// `1 - mean_k (2 sum p t + s) / (sum p + sum t + s)` over classes.
pub fn dice_loss(probs: &Tensor, target: &Tensor, smooth: f64) -> Result<Tensor> {
    let inter = (probs * target)?.sum(1)?;
    let num = ((inter * 2.0)? + smooth)?;
    let den = ((probs.sum(1)? + target.sum(1)?)? + smooth)?;
    Ok((1.0 - (num / den)?.mean_all()?)?)
}

/// Linear KL ramp `min(1, iteration / anneal_iters)`.
pub fn kl_weight(iteration: usize, anneal_iters: usize) -> f64 {
    if anneal_iters == 0 {
        1.0
    } else {
        (iteration as f64 / anneal_iters as f64).min(1.0)
    }
}

/// Dirichlet concentrations `1 + softplus(logits)`, `[K, P]`.
pub fn dirichlet_alpha(raw_logits: &Tensor) -> Result<Tensor> {
    Ok((softplus(raw_logits)? + 1.0)?)
}

/// Per-point `sum_k t_k (psi(S) - psi(alpha_k))`, `[P]`.
pub fn edl_data_term(alpha: &Tensor, target: &Tensor) -> Result<Tensor> {
    let s = alpha.sum_keepdim(0)?;
    let diff = digamma(&s)?.broadcast_sub(&digamma(alpha)?)?;
    Ok((target * diff)?.sum(0)?)
}

/// Per-point `KL(Dir(alpha) || Dir(1))`, `[P]`.
pub fn kl_to_uniform(alpha: &Tensor) -> Result<Tensor> {
    let k = alpha.dims()[0] as f64;
    let s = alpha.sum(0)?;
    let ln_b = (ln_gamma(&s)? - ln_gamma(alpha)?.sum(0)?)?;
    let ln_gamma_k = oasis_core::special::ln_gamma(k);
    let psi_s = digamma(&s)?.unsqueeze(0)?;
    let cross = ((alpha - 1.0)? * digamma(alpha)?.broadcast_sub(&psi_s)?)?.sum(0)?;
    Ok(((ln_b - ln_gamma_k)? + cross)?)
}

#[derive(Debug, Clone)]
pub struct EdlTerms {
    pub data: Tensor,
    pub kl: Tensor,
    pub kl_weight: f64,
    /// `data + kl_weight * kl`.
    pub total: Tensor,
}

/// Evidential loss on `[K, P]` raw logits and one-hot targets.
pub fn edl_loss(raw_logits: &Tensor, target: &Tensor, iteration: usize, anneal_iters: usize) -> Result<EdlTerms> {
    let finite = raw_logits
        .abs()?
        .max_all()?
        .to_dtype(DType::F64)?
        .to_scalar::<f64>()?
        .is_finite();
    if !finite {
        return Err(Error::Input("evidential loss received non-finite logits".into()));
    }
    let alpha = dirichlet_alpha(raw_logits)?;
    let data = edl_data_term(&alpha, target)?.mean_all()?;
    // evidence of the true class removed
    let alpha_tilde = (target + ((1.0 - target)? * &alpha)?)?;
    let kl = kl_to_uniform(&alpha_tilde)?.mean_all()?;
    let w = kl_weight(iteration, anneal_iters);
    let total = (&data + (&kl * w)?)?;
    Ok(EdlTerms {
        data,
        kl,
        kl_weight: w,
        total,
    })
}

/// Mean binary cross-entropy with logits.
pub fn bce_with_logits(logits: &Tensor, target: &Tensor) -> Result<Tensor> {
    let tail = (logits.abs()?.neg()?.exp()? + 1.0)?.log()?;
    let l = ((logits.relu()? - (logits * target)?)? + tail)?;
    Ok(l.mean_all()?)
}

/// BCE between a predicted logit map and a binary ground-truth map.
pub fn structure_supervision_loss(pred: &StructureMap, target: &StructureMap) -> Result<f64> {
    if pred.kind() != StructureKind::PredictedLogits || target.kind() != StructureKind::GroundTruthBinary {
        return Err(Error::Input(
            "structure loss needs predicted logits against a binary ground-truth map".into(),
        ));
    }
    if pred.values().shape() != target.values().shape() {
        return Err(Error::Input(format!(
            "structure maps differ in shape: {:?} vs {:?}",
            pred.values().shape(),
            target.values().shape()
        )));
    }
    let dev = candle_core::Device::Cpu;
    let x = Tensor::from_slice(pred.values().data(), pred.values().data().len(), &dev)?.to_dtype(DType::F64)?;
    let t = Tensor::from_slice(target.values().data(), target.values().data().len(), &dev)?.to_dtype(DType::F64)?;
    Ok(bce_with_logits(&x, &t)?.to_scalar::<f64>()?)
}

/// Per-term breakdown of the mask loss.
#[derive(Debug, Clone)]
pub struct MaskLoss {
    pub ce: Tensor,
    pub dice: Tensor,
    pub edl: Option<EdlTerms>,
    pub total: Tensor,
}

/// `CE + Dice + lambda * EDL` on sampled points. `probs`, `class_logits`
/// and `target` are `[K, P]`; the EDL term is skipped when `lambda_edl` is
/// zero.
pub fn total_mask_loss(
    probs: &Tensor,
    class_logits: &Tensor,
    target: &Tensor,
    iteration: usize,
    anneal_iters: usize,
    cfg: &LossConfig,
) -> Result<MaskLoss> {
    let ce = ce_loss(probs, target)?;
    let dice = dice_loss(probs, target, cfg.dice_smooth)?;
    let base = (&ce + &dice)?;
    let (edl, total) = if cfg.lambda_edl > 0.0 {
        let e = edl_loss(class_logits, target, iteration, anneal_iters)?;
        let total = (base + (&e.total * cfg.lambda_edl)?)?;
        (Some(e), total)
    } else {
        (None, base)
    };
    Ok(MaskLoss { ce, dice, edl, total })
}
