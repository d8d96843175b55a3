//! Optimisation loop shared by pseudo-video pretraining and main training.

use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use oasis_core::edges::{canny, gt_structure_map};
use oasis_core::memory::{MemoryConfig, MemoryState};
use oasis_core::sampling::sample_points;
use oasis_core::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::data::{sample_clip, sample_pseudo_clip, Clip, Video};
use crate::config::{LossConfig, OasisConfig, TrainConfig};
use crate::io::layout::{frame_names, DatasetLayout};
use crate::io::png;
use crate::losses::{bce_with_logits, from_array, gather_points, to_array, total_mask_loss};
use crate::nn::model::BACKBONE_PREFIX;
use crate::nn::{Features, ObjectMemory, OasisModel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Pseudo-video pretraining: CE + Dice only, structure branch bypassed.
    Pretrain,
    Main,
}

impl Stage {
    fn tag(self) -> u64 {
        match self {
            Stage::Pretrain => 0x5052_4554,
            Stage::Main => 0x4d41_494e,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct StepLog {
    pub stage: Stage,
    pub iteration: usize,
    pub ce: f64,
    pub dice: f64,
    pub edl: f64,
    pub kl_weight: f64,
    pub structure: f64,
    pub total: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub clipped_grad_norm: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// JSON-lines log, one line per iteration.
    pub log_path: Option<PathBuf>,
    /// Where a non-finite loss dumps its batch; defaults to the log's
    /// directory, else the working directory.
    pub dump_dir: Option<PathBuf>,
    /// Print a progress line to stderr every `log_every` iterations.
    pub progress: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub steps: Vec<StepLog>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.total)
    }

    /// Mean total loss over the last `window` steps ending at `end`.
    pub fn moving_average(&self, end: usize, window: usize) -> f64 {
        let end = end.min(self.steps.len());
        let start = end.saturating_sub(window);
        let v = &self.steps[start..end];
        v.iter().map(|s| s.total).sum::<f64>() / v.len().max(1) as f64
    }
}

/// Global L2 norm over all gradients, in parameter-name order; rescales them
/// in place when it exceeds `max_norm`. Returns the norms before and after.
pub fn clip_grad_norm(vars: &[(String, Var)], grads: &mut GradStore, max_norm: f64) -> Result<(f64, f64)> {
    let mut sq = 0.0f64;
    for (_, v) in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            sq += g.to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
        }
    }
    let norm = sq.sqrt();
    if !norm.is_finite() || norm <= max_norm {
        return Ok((norm, norm));
    }
    let scale = max_norm / (norm + 1e-6);
    let mut sq_after = 0.0f64;
    for (_, v) in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            let g = (g * scale)?;
            sq_after += g.to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
            grads.insert(v.as_tensor(), g);
        }
    }
    Ok((norm, sq_after.sqrt()))
}

struct Optimizers {
    backbone: AdamW,
    rest: AdamW,
    backbone_scale: f64,
}

impl Optimizers {
    fn new(model: &OasisModel, cfg: &TrainConfig) -> Result<Self> {
        let (bb, rest): (Vec<_>, Vec<_>) = model
            .params()
            .vars()
            .into_iter()
            .partition(|(n, _)| n.starts_with(BACKBONE_PREFIX));
        let params = |lr: f64| ParamsAdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: cfg.weight_decay,
        };
        Ok(Self {
            backbone: AdamW::new(bb.into_iter().map(|(_, v)| v).collect(), params(cfg.base_lr * cfg.backbone_lr_scale))?,
            rest: AdamW::new(rest.into_iter().map(|(_, v)| v).collect(), params(cfg.base_lr))?,
            backbone_scale: cfg.backbone_lr_scale,
        })
    }

    fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        self.backbone.set_learning_rate(lr * self.backbone_scale);
        self.rest.set_learning_rate(lr);
        self.backbone.step(grads)?;
        self.rest.step(grads)?;
        Ok(())
    }
}

fn point_seed(seed: u64, iteration: usize, clip: usize, frame: usize) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [iteration as u64, clip as u64, frame as u64] {
        h = (h ^ v).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    h
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn frame_features(all: &Features, t: usize) -> Result<Features> {
    Ok(Features {
        stem: all.stem.narrow(0, t, 1)?,
        levels: all.levels.iter().map(|l| l.narrow(0, t, 1)).collect::<candle_core::Result<_>>()?,
    })
}

/// Running sums of the logged loss terms.
#[derive(Default)]
struct Terms {
    ce: f64,
    dice: f64,
    edl: f64,
    kl_weight: f64,
    structure: f64,
}

/// Loss of one clip: mean over frames 1.. of the mask loss plus, when the
/// structure branch runs, the structure-map BCE. Memory is written after
/// every frame with the predicted soft mask.
#[allow(clippy::too_many_arguments)]
fn clip_loss(
    model: &OasisModel,
    clip: &Clip,
    stage: Stage,
    iteration: usize,
    anneal_iters: usize,
    loss_cfg: &LossConfig,
    seed: u64,
    clip_index: usize,
    terms: &mut Terms,
) -> Result<Tensor> {
    let ids = clip.object_ids().to_vec();
    let n = clip.frames.len();
    let use_structure = stage == Stage::Main && model.has_structure_decoder();
    let n_points = match stage {
        Stage::Pretrain => loss_cfg.num_points_pretrain,
        Stage::Main => loss_cfg.num_points_main,
    };
    let images = clip
        .frames
        .iter()
        .map(|f| model.frame_tensor(f))
        .collect::<Result<Vec<_>>>()?;
    let all = model.encode(&Tensor::cat(&images, 0)?)?;
    let dev = model.device();
    let to_tensor = |a: &Array3| -> Result<Tensor> {
        from_array(a, dev, model.dtype())
    };
    // every frame is written so later frames read predicted masks
    let mut memory: MemoryState<Tensor, ObjectMemory> = MemoryState::new(MemoryConfig {
        update_interval: 1,
        ..model.config().memory.memory_config()
    });
    let first = frame_features(&all, 0)?;
    let (g, om) = model.memorize(&first, &to_tensor(&clip.masks[0].to_onehot(&ids)?)?)?;
    memory.update(0, g, om)?;
    let mut total: Option<Tensor> = None;
    for t in 1..n {
        let features = frame_features(&all, t)?;
        let edges = if use_structure {
            model.edge_tensor(&canny(&clip.frames[t], &model.config().canny)?)?
        } else {
            images[t].narrow(1, 0, 1)?.zeros_like()?
        };
        let object_memory = memory.object_features().expect("frame 0 stored");
        let seg = model.segment_with(&features, &images[t], &edges, object_memory, use_structure)?;
        let target = to_tensor(&clip.masks[t].to_onehot(&ids)?)?;
        let points = sample_points(&to_array(&seg.probs)?, n_points, point_seed(seed, iteration, clip_index, t))?;
        let loss = total_mask_loss(
            &gather_points(&seg.probs, &points)?,
            &gather_points(&seg.class_logits, &points)?,
            &gather_points(&target, &points)?,
            iteration,
            anneal_iters,
            loss_cfg,
        )?;
        terms.ce += scalar(&loss.ce)?;
        terms.dice += scalar(&loss.dice)?;
        if let Some(e) = &loss.edl {
            terms.edl += scalar(&e.total)?;
            terms.kl_weight = e.kl_weight;
        }
        let mut frame_loss = loss.total;
        if let Some(s) = &seg.structure_logits {
            let gt = gt_structure_map(&clip.masks[t], model.config().boundary_width);
            let bce = bce_with_logits(&s.flatten_all()?, &to_tensor(gt.values())?.flatten_all()?)?;
            terms.structure += scalar(&bce)?;
            frame_loss = (frame_loss + bce)?;
        }
        total = Some(match total {
            None => frame_loss,
            Some(acc) => (acc + frame_loss)?,
        });
        if t + 1 < n {
            let (g, om) = model.memorize(&features, &seg.probs)?;
            memory.update(t, g, om)?;
        }
    }
    let total = total.ok_or_else(|| Error::Input("training clips need at least two frames".into()))?;
    Ok((total / (n - 1) as f64)?)
}

fn dump_batch(dir: &Path, stage: Stage, iteration: usize, clips: &[Clip], terms: &StepLog) -> Result<PathBuf> {
    let root = dir.join(format!("nonfinite_{}_{iteration:06}", serde_json::to_value(stage).unwrap().as_str().unwrap()));
    std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let layout = DatasetLayout::new(&root);
    let palette = png::default_palette();
    let mut sources = Vec::new();
    for (i, c) in clips.iter().enumerate() {
        let name = format!("clip{i}");
        let names = frame_names(c.frames.len());
        layout.save_frames(&name, &names, &c.frames)?;
        layout.save_masks(&name, &names, &c.masks, &palette)?;
        sources.push(serde_json::json!({"clip": name, "source": c.source, "start": c.start}));
    }
    let report = serde_json::json!({"step": terms, "clips": sources});
    let path = root.join("report.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report).unwrap()).map_err(|e| Error::io(&path, e))?;
    Ok(root)
}

fn fit(
    model: &OasisModel,
    cfg: &OasisConfig,
    stage: Stage,
    iterations: usize,
    mut sampler: impl FnMut(&mut ChaCha8Rng) -> Result<Clip>,
    opts: &TrainOptions,
) -> Result<TrainReport> {
    let tc = &cfg.train;
    tc.validate()?;
    cfg.loss.validate()?;
    let schedule = TrainConfig {
        total_iters: iterations.max(1),
        ..tc.clone()
    };
    let mut loss_cfg = cfg.loss.clone();
    if stage == Stage::Pretrain {
        loss_cfg.lambda_edl = 0.0;
    }
    let anneal = cfg.loss.anneal_iters(iterations);
    let vars = model.params().vars();
    let mut opt = Optimizers::new(model, tc)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ stage.tag());
    let mut log = match &opts.log_path {
        Some(p) => {
            if let Some(d) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            }
            let f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| Error::io(p, e))?;
            Some((p.clone(), std::io::BufWriter::new(f)))
        }
        None => None,
    };
    let mut report = TrainReport::default();
    for it in 0..iterations {
        let lr = schedule.lr_at(it);
        let mut terms = Terms::default();
        let mut clips = Vec::with_capacity(tc.batch);
        let mut sum: Option<Tensor> = None;
        for b in 0..tc.batch {
            let clip = sampler(&mut rng)?;
            let l = clip_loss(model, &clip, stage, it, anneal, &loss_cfg, tc.seed, b, &mut terms)?;
            clips.push(clip);
            sum = Some(match sum {
                None => l,
                Some(acc) => (acc + l)?,
            });
        }
        let loss = (sum.expect("batch is positive") / tc.batch as f64)?;
        let total = scalar(&loss)?;
        let frames = (tc.batch * (clips[0].frames.len() - 1)) as f64;
        let mut step = StepLog {
            stage,
            iteration: it,
            ce: terms.ce / frames,
            dice: terms.dice / frames,
            edl: terms.edl / frames,
            kl_weight: terms.kl_weight,
            structure: terms.structure / frames,
            total,
            lr,
            grad_norm: f64::NAN,
            clipped_grad_norm: f64::NAN,
        };
        let mut grads = if total.is_finite() { Some(loss.backward()?) } else { None };
        if let Some(g) = grads.as_mut() {
            let (before, after) = clip_grad_norm(&vars, g, tc.grad_clip_norm)?;
            step.grad_norm = before;
            step.clipped_grad_norm = after;
        }
        let grads = match grads {
            Some(g) if step.grad_norm.is_finite() => g,
            _ => {
                let dir = opts
                    .dump_dir
                    .clone()
                    .or_else(|| opts.log_path.as_ref().and_then(|p| p.parent().map(Path::to_path_buf)))
                    .unwrap_or_else(|| PathBuf::from("."));
                let dump = dump_batch(&dir, stage, it, &clips, &step)?;
                return Err(Error::NonFiniteLoss { iteration: it, dump });
            }
        };
        opt.step(&grads, lr)?;
        if let Some((path, w)) = log.as_mut() {
            let line = serde_json::to_string(&step).expect("plain struct");
            writeln!(w, "{line}").map_err(|e| Error::io(path.as_path(), e))?;
        }
        if opts.progress && (it % tc.log_every == 0 || it + 1 == iterations) {
            eprintln!(
                "[{stage:?}] it {it:>6} total {:.4} ce {:.4} dice {:.4} edl {:.4} sd {:.4} lr {:.2e}",
                step.total, step.ce, step.dice, step.edl, step.structure, lr
            );
        }
        report.steps.push(step);
    }
    if let Some((path, mut w)) = log {
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    Ok(report)
}

/// Main training on annotated videos for `cfg.train.total_iters` steps.
pub fn train(model: &OasisModel, videos: &[Video], cfg: &OasisConfig, opts: &TrainOptions) -> Result<TrainReport> {
    let (len, crop) = (cfg.train.seq_len, cfg.train.crop);
    fit(
        model,
        cfg,
        Stage::Main,
        cfg.train.total_iters,
        |rng| sample_clip(videos, len, crop, rng),
        opts,
    )
}

/// Pseudo-video pretraining on static pairs for `cfg.train.pretrain_iters`
/// steps, without the structure branch or the evidential term.
pub fn pretrain(
    model: &OasisModel,
    pairs: &[(Array3, oasis_core::IdMask)],
    cfg: &OasisConfig,
    opts: &TrainOptions,
) -> Result<TrainReport> {
    fit(
        model,
        cfg,
        Stage::Pretrain,
        cfg.train.pretrain_iters,
        |rng| sample_pseudo_clip(pairs, rng),
        opts,
    )
}
