//! Configuration tree, presets and the `key = value` text format.
//!
//! Every field is addressable by its dotted path, e.g.
//! `model.fusion.epsilon = 0.5` or `train.lr_decay_points = [0.8, 0.92]`.
//! Values are JSON literals; bare words are read as strings.

use std::path::Path;

use oasis_core::edges::{CannyConfig, FusionConfig, DEFAULT_BOUNDARY_WIDTH};
use oasis_core::memory::MemoryConfig;
use oasis_core::synthetic::SyntheticSceneConfig;
use oasis_core::N_SCALES;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, Result};

/// Environment variable overriding `train.seed`.
pub const SEED_ENV: &str = "OASIS_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEncoderConfig {
    pub channels_per_scale: Vec<usize>,
    /// Channels of the half-resolution stem.
    pub stem_channels: usize,
    /// No pretrained weights ship with this crate; must stay false.
    pub pretrained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryEncoderConfig {
    pub object_dim: usize,
    pub object_grid: usize,
    pub global_dim: usize,
    pub capacity: usize,
    pub update_interval: usize,
    pub ema_decay: f32,
}

impl MemoryEncoderConfig {
    pub fn memory_config(&self) -> MemoryConfig {
        MemoryConfig {
            capacity: self.capacity,
            update_interval: self.update_interval,
            decay: self.ema_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureDecoderConfig {
    /// When false the structure branch is removed and the mask decoder reads
    /// the edge-highlighted features directly.
    pub enabled: bool,
    pub hidden_channels: Vec<usize>,
    pub activation_slope: f64,
    pub use_object_fusion: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskDecoderConfig {
    pub readout_dim: usize,
    pub num_readout_heads: usize,
    pub decoder_channels: Vec<usize>,
    /// Channels of the two final stages at half and full resolution.
    pub fine_channels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image_encoder: ImageEncoderConfig,
    pub memory: MemoryEncoderConfig,
    pub structure: StructureDecoderConfig,
    pub mask: MaskDecoderConfig,
    pub canny: CannyConfig,
    pub fusion: FusionConfig,
    pub boundary_width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_edl: f64,
    /// Length of the KL ramp; `null` means 10% of `train.total_iters`.
    pub anneal_iters: Option<usize>,
    pub num_points_pretrain: usize,
    pub num_points_main: usize,
    pub dice_smooth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub total_iters: usize,
    pub base_lr: f64,
    pub backbone_lr_scale: f64,
    pub lr_decay_points: Vec<f64>,
    pub lr_decay_factor: f64,
    pub grad_clip_norm: f64,
    pub weight_decay: f64,
    pub seq_len: usize,
    pub crop: usize,
    pub batch: usize,
    pub seed: u64,
    pub pretrain_iters: usize,
    pub log_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub scene: SyntheticSceneConfig,
    pub n_sequences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OasisConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Config(format!("unknown preset {other:?} (desk, paper)"))),
        }
    }
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            image_encoder: ImageEncoderConfig {
                channels_per_scale: vec![32, 64, 128],
                stem_channels: 16,
                pretrained: false,
            },
            memory: MemoryEncoderConfig {
                object_dim: 256,
                object_grid: 30,
                global_dim: 128,
                capacity: 5,
                // desk videos are 8 frames long
                update_interval: 1,
                ema_decay: 0.8,
            },
            structure: StructureDecoderConfig {
                enabled: true,
                hidden_channels: vec![128, 64, 32],
                activation_slope: 0.01,
                use_object_fusion: true,
            },
            mask: MaskDecoderConfig {
                readout_dim: 128,
                num_readout_heads: 4,
                decoder_channels: vec![128, 64, 32],
                fine_channels: vec![16, 8],
            },
            canny: CannyConfig::default(),
            fusion: FusionConfig::default(),
            boundary_width: DEFAULT_BOUNDARY_WIDTH,
        }
    }

    pub fn paper() -> Self {
        let mut m = Self::desk();
        m.image_encoder.channels_per_scale = vec![64, 128, 256];
        m.image_encoder.stem_channels = 32;
        m.memory.global_dim = 256;
        m.memory.update_interval = 5;
        m.structure.hidden_channels = vec![256, 128, 64];
        m.mask.readout_dim = 256;
        m.mask.decoder_channels = vec![256, 128, 64];
        m.mask.fine_channels = vec![32, 16];
        m
    }

    pub fn validate(&self) -> Result<()> {
        let ch = &self.image_encoder.channels_per_scale;
        if ch.len() != N_SCALES || ch.windows(2).any(|w| w[0] >= w[1]) || ch[0] == 0 {
            return Err(Error::Config(format!(
                "model.image_encoder.channels_per_scale must be {N_SCALES} strictly increasing positive values, got {ch:?}"
            )));
        }
        if self.image_encoder.stem_channels == 0 {
            return Err(Error::Config("model.image_encoder.stem_channels must be positive".into()));
        }
        if self.image_encoder.pretrained {
            return Err(Error::Config(
                "model.image_encoder.pretrained: no pretrained weights are available".into(),
            ));
        }
        let m = &self.memory;
        if m.object_dim == 0 || m.object_grid == 0 || m.global_dim == 0 {
            return Err(Error::Config("model.memory dimensions must be positive".into()));
        }
        self.memory.memory_config().validate()?;
        let s = &self.structure;
        if s.hidden_channels.len() != N_SCALES || s.hidden_channels.contains(&0) {
            return Err(Error::Config(format!(
                "model.structure.hidden_channels must be {N_SCALES} positive values"
            )));
        }
        if !(s.activation_slope.is_finite() && s.activation_slope >= 0.0) {
            return Err(Error::Config("model.structure.activation_slope must be >= 0".into()));
        }
        let d = &self.mask;
        if d.num_readout_heads == 0 || d.readout_dim == 0 || d.readout_dim % d.num_readout_heads != 0 {
            return Err(Error::Config(
                "model.mask.readout_dim must be a positive multiple of num_readout_heads".into(),
            ));
        }
        if d.decoder_channels.len() != N_SCALES || d.decoder_channels.contains(&0) {
            return Err(Error::Config(format!(
                "model.mask.decoder_channels must be {N_SCALES} positive values"
            )));
        }
        if d.fine_channels.len() != 2 || d.fine_channels.contains(&0) {
            return Err(Error::Config("model.mask.fine_channels must be 2 positive values".into()));
        }
        self.canny.validate()?;
        self.fusion.validate()?;
        if self.boundary_width == 0 {
            return Err(Error::Config("model.boundary_width must be positive".into()));
        }
        Ok(())
    }
}

impl LossConfig {
    pub fn desk() -> Self {
        Self {
            lambda_edl: 0.01,
            anneal_iters: None,
            num_points_pretrain: 1024,
            num_points_main: 2048,
            dice_smooth: 1.0,
        }
    }

    pub fn paper() -> Self {
        Self {
            num_points_pretrain: 8192,
            num_points_main: 12544,
            ..Self::desk()
        }
    }

    pub fn anneal_iters(&self, total_iters: usize) -> usize {
        self.anneal_iters.unwrap_or(total_iters / 10).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_edl.is_finite() && self.lambda_edl >= 0.0) {
            return Err(Error::Config("loss.lambda_edl must be >= 0".into()));
        }
        if self.num_points_main == 0 || self.num_points_pretrain == 0 {
            return Err(Error::Config("loss point counts must be positive".into()));
        }
        if !(self.dice_smooth.is_finite() && self.dice_smooth > 0.0) {
            return Err(Error::Config("loss.dice_smooth must be positive".into()));
        }
        Ok(())
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            total_iters: 2000,
            base_lr: 1e-4,
            backbone_lr_scale: 0.1,
            lr_decay_points: vec![0.8, 0.92],
            lr_decay_factor: 0.1,
            grad_clip_norm: 3.0,
            weight_decay: 1e-4,
            seq_len: 4,
            crop: 64,
            batch: 2,
            seed: 0,
            pretrain_iters: 500,
            log_every: 1,
        }
    }

    pub fn paper() -> Self {
        Self {
            total_iters: 125_000,
            seq_len: 8,
            crop: 480,
            batch: 16,
            pretrain_iters: 80_000,
            ..Self::desk()
        }
    }

    /// Step schedule: `base_lr * factor^(decay points passed)`.
    pub fn lr_at(&self, iteration: usize) -> f64 {
        let frac = iteration as f64 / self.total_iters.max(1) as f64;
        let passed = self.lr_decay_points.iter().filter(|&&p| frac >= p).count();
        self.base_lr * self.lr_decay_factor.powi(passed as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if self.total_iters == 0 || self.seq_len < 2 || self.batch == 0 || self.log_every == 0 {
            return Err(Error::Config(
                "train.total_iters, batch and log_every must be positive and seq_len >= 2".into(),
            ));
        }
        if self.crop < 16 || self.crop % 16 != 0 {
            return Err(Error::Config("train.crop must be a positive multiple of 16".into()));
        }
        if !(pos(self.base_lr) && pos(self.backbone_lr_scale) && pos(self.lr_decay_factor) && pos(self.grad_clip_norm)) {
            return Err(Error::Config("train learning-rate and clipping values must be positive".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("train.weight_decay must be >= 0".into()));
        }
        let p = &self.lr_decay_points;
        if p.iter().any(|&v| !(v > 0.0 && v < 1.0)) || p.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "train.lr_decay_points must be strictly increasing fractions in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

impl OasisConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self {
                model: ModelConfig::desk(),
                loss: LossConfig::desk(),
                train: TrainConfig::desk(),
                data: DataConfig {
                    scene: SyntheticSceneConfig::default(),
                    n_sequences: 16,
                },
            },
            Preset::Paper => {
                let mut scene = SyntheticSceneConfig::default();
                scene.canvas = 480;
                scene.size_range = (96.0, 160.0);
                scene.speed_range = (4.0, 12.0);
                Self {
                    model: ModelConfig::paper(),
                    loss: LossConfig::paper(),
                    train: TrainConfig::paper(),
                    data: DataConfig {
                        scene,
                        n_sequences: 16,
                    },
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.data.scene.validate()?;
        Ok(())
    }

    /// Applies `key = value` lines. Returns the keys that were set.
    pub fn apply_text(&mut self, text: &str) -> Result<Vec<String>> {
        let mut tree = serde_json::to_value(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut keys = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            set_path(&mut tree, key, parse_value(value.trim()))
                .map_err(|m| Error::Config(format!("line {}: {m}", lineno + 1)))?;
            keys.push(key.to_string());
        }
        *self = serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))?;
        Ok(keys)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.apply_text(&format!("{key} = {value}")).map(|_| ())
    }

    pub fn get(&self, key: &str) -> Option<Value> {
        let tree = serde_json::to_value(self).ok()?;
        key.split('.').try_fold(&tree, |v, k| v.get(k)).cloned()
    }

    /// Serialises every field as `key = value` lines.
    pub fn to_text(&self) -> String {
        let tree = serde_json::to_value(self).expect("config serialises");
        let mut lines = Vec::new();
        flatten("", &tree, &mut lines);
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }

    pub fn load(path: &Path, preset: Preset) -> Result<(Self, Vec<String>)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::preset(preset);
        let keys = cfg.apply_text(&text)?;
        Ok((cfg, keys))
    }

    /// Replaces the seed with `OASIS_SEED` when that variable is set.
    pub fn apply_seed_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.train.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an integer")))?;
        }
        Ok(())
    }
}

fn parse_value(s: &str) -> Value {
    serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.to_string()))
}

fn set_path(tree: &mut Value, key: &str, value: Value) -> std::result::Result<(), String> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| format!("{key}: {} is not a section", parts[..i].join(".")))?;
        let child = obj.get_mut(*part).ok_or_else(|| format!("unknown key {key}"))?;
        if i + 1 == parts.len() {
            if child.is_object() {
                return Err(format!("{key} is a section, not a value"));
            }
            *child = value;
            return Ok(());
        }
        node = child;
    }
    Err(format!("empty key {key:?}"))
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        leaf => out.push(format!("{prefix} = {leaf}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        OasisConfig::preset(Preset::Desk).validate().unwrap();
        OasisConfig::preset(Preset::Paper).validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = OasisConfig::preset(Preset::Desk);
        cfg.model.fusion.epsilon = 0.25;
        cfg.train.lr_decay_points = vec![0.5, 0.75];
        let text = cfg.to_text();
        let mut back = OasisConfig::preset(Preset::Paper);
        back.apply_text(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_and_errors() {
        let mut cfg = OasisConfig::preset(Preset::Desk);
        let keys = cfg
            .apply_text("# comment\nmodel.structure.enabled = false\ndata.scene.texture = noise\n")
            .unwrap();
        assert_eq!(keys.len(), 2);
        assert!(!cfg.model.structure.enabled);
        assert!(cfg.set("train.nope", "1").is_err());
        assert!(cfg.set("train", "1").is_err());
        assert!(cfg.apply_text("garbage").is_err());
        assert!(cfg.set("train.total_iters", "\"many\"").is_err());
    }

    #[test]
    fn paper_lr_schedule() {
        let t = TrainConfig::paper();
        assert!((t.lr_at(0) - 1e-4).abs() < 1e-18);
        assert!((t.lr_at((0.85 * 125_000.0) as usize) - 1e-5).abs() < 1e-18);
        assert!((t.lr_at((0.95 * 125_000.0) as usize) - 1e-6).abs() < 1e-18);
        assert!((t.lr_at(100_000) - 1e-5).abs() < 1e-18);
        assert!((t.lr_at(115_000) - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn bad_values_rejected() {
        let mut cfg = OasisConfig::preset(Preset::Desk);
        cfg.train.lr_decay_points = vec![0.9, 0.8];
        assert!(cfg.validate().is_err());
        let mut cfg = OasisConfig::preset(Preset::Desk);
        cfg.model.image_encoder.channels_per_scale = vec![64, 64, 128];
        assert!(cfg.validate().is_err());
        let mut cfg = OasisConfig::preset(Preset::Desk);
        cfg.model.mask.readout_dim = 130;
        assert!(cfg.validate().is_err());
    }
}
