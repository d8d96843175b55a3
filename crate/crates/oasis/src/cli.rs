//! Command-line front end. Every successful command prints one JSON line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use candle_core::Device;
use clap::{Args, Parser, Subcommand};
use oasis_core::edges::{canny, gt_structure_map, FusionConfig};
use oasis_core::metrics::{EvalOptions, DEFAULT_BOUNDARY_TOLERANCE};
use oasis_core::types::FrameTensor;
use oasis_core::IdMask;
use serde_json::{json, Value};

use crate::config::{OasisConfig, Preset};
use crate::engine::{data, pretrain, propagate_video, train, TrainOptions};
use crate::eval::{evaluate_dataset, fps_benchmark, ModelProcessor, SleepProcessor};
use crate::io::layout::DatasetLayout;
use crate::io::{checkpoint, png, viz, zip_dir};
use crate::nn::OasisModel;
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "oasis", version, about = "Boundary-aware video object segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Key-value config file applied on top of the preset.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Base configuration profile.
    #[arg(long, value_name = "NAME")]
    pub preset: Option<Preset>,
    /// Overrides the config seed and OASIS_SEED.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory; nothing is written elsewhere.
    #[arg(long, value_name = "DIR", default_value = "oasis-out")]
    pub out: PathBuf,
    /// Compute device; only `cpu` is available in this build.
    #[arg(long, value_name = "STR", default_value = "cpu")]
    pub device: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic occlusion dataset in the benchmark layout.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Number of sequences (default: data.n_sequences).
        #[arg(long)]
        sequences: Option<usize>,
    },
    /// Pseudo-video pretraining on the frames of a dataset.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Iterations (default: train.pretrain_iters).
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Main training on annotated videos.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Checkpoint to start from, e.g. the pretraining output.
        #[arg(long, value_name = "PATH")]
        init: Option<PathBuf>,
        /// Iterations (default: train.total_iters).
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Propagate first-frame annotations through every sequence.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Also write predicted structure maps.
        #[arg(long)]
        structures: bool,
        /// Package the predicted masks as `submission.zip`.
        #[arg(long)]
        zip: bool,
    },
    /// Score predictions against ground truth (J, F, J&F, G).
    Eval {
        #[command(flatten)]
        common: Common,
        /// Ground-truth dataset.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Predictions (`<DIR>/Annotations/<seq>` or `<DIR>/<seq>`).
        #[arg(long, value_name = "DIR")]
        pred: PathBuf,
        /// Score the first and last frames too.
        #[arg(long)]
        keep_first_last: bool,
        /// Boundary tolerance as a fraction of the image diagonal.
        #[arg(long, default_value_t = DEFAULT_BOUNDARY_TOLERANCE)]
        tolerance: f64,
    },
    /// Frames-per-second benchmark.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Trained weights; a freshly initialised model otherwise.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Dataset to take the video from; synthetic otherwise.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long)]
        sequence: Option<String>,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        #[arg(long, default_value_t = 20)]
        frames: usize,
        /// Replace the model by a fake that sleeps this many milliseconds.
        #[arg(long, value_name = "MS")]
        fake_ms: Option<u64>,
    },
    /// Write frame overlay, edge, structure and mask panels.
    Viz {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Only this sequence.
        #[arg(long)]
        sequence: Option<String>,
    },
    /// Grid over the edge (epsilon) and structure (beta) factors.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Comma-separated epsilon values (default: the model's).
        #[arg(long, value_delimiter = ',')]
        epsilon: Vec<f32>,
        /// Comma-separated beta values (default: the model's).
        #[arg(long, value_delimiter = ',')]
        beta: Vec<f32>,
    },
    /// Canny edge maps of image files.
    Edges {
        #[command(flatten)]
        common: Common,
        #[arg(required = true, value_name = "IMAGE")]
        inputs: Vec<PathBuf>,
    },
    /// Ground-truth structure maps of palette masks.
    Structmap {
        #[command(flatten)]
        common: Common,
        #[arg(required = true, value_name = "MASK")]
        inputs: Vec<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Gen { common, .. }
            | Command::Pretrain { common, .. }
            | Command::Train { common, .. }
            | Command::Infer { common, .. }
            | Command::Eval { common, .. }
            | Command::Bench { common, .. }
            | Command::Viz { common, .. }
            | Command::Sweep { common, .. }
            | Command::Edges { common, .. }
            | Command::Structmap { common, .. } => common,
        }
    }
}

/// Preset, then config file, then `OASIS_SEED`, then `--seed`.
pub fn resolve_config(common: &Common) -> Result<OasisConfig> {
    let preset = common.preset.unwrap_or(Preset::Desk);
    let mut cfg = match &common.config {
        Some(path) => {
            let (cfg, keys) = OasisConfig::load(path, preset)?;
            if common.preset.is_some() {
                let base = OasisConfig::preset(preset);
                let overridden: Vec<&String> = keys.iter().filter(|k| base.get(k) != cfg.get(k)).collect();
                if !overridden.is_empty() {
                    eprintln!(
                        "warning: {} overrides preset {preset:?} for {}",
                        path.display(),
                        overridden.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(", ")
                    );
                }
            }
            cfg
        }
        None => OasisConfig::preset(preset),
    };
    cfg.apply_seed_env()?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn device(common: &Common) -> Result<Device> {
    match common.device.to_ascii_lowercase().as_str() {
        "cpu" => Ok(Device::Cpu),
        other => Err(Error::Input(format!("device {other:?} is not available; use cpu"))),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn train_options(out: &Path, log: &str) -> TrainOptions {
    TrainOptions {
        log_path: Some(out.join(log)),
        dump_dir: Some(out.to_path_buf()),
        progress: true,
    }
}

fn load_model(path: &Path, dev: &Device) -> Result<OasisModel> {
    Ok(checkpoint::load(path, dev)?.0)
}

fn select_sequences(layout: &DatasetLayout, only: Option<&String>) -> Result<Vec<String>> {
    let all = layout.sequences()?;
    match only {
        None => Ok(all),
        Some(name) if all.contains(name) => Ok(vec![name.clone()]),
        Some(name) => Err(Error::Input(format!("no sequence named {name}"))),
    }
}

fn infer_dataset(model: &OasisModel, layout: &DatasetLayout, out: &Path, structures: bool) -> Result<(usize, usize)> {
    let pred = DatasetLayout::new(out);
    let (mut seqs, mut frames) = (0, 0);
    for name in layout.sequences()? {
        let seq = layout.load_sequence(&name)?;
        let p = propagate_video(model, &seq.frames, seq.first_mask())?;
        pred.save_masks(&name, &seq.frame_names, &p.masks, &seq.palette)?;
        if structures {
            let dir = out.join("structures").join(&name);
            create_dir(&dir)?;
            for (fname, s) in seq.frame_names.iter().zip(&p.structures) {
                if let Some(s) = s {
                    viz::save_structure(&dir.join(format!("{fname}.png")), s)?;
                }
            }
        }
        seqs += 1;
        frames += seq.frames.len();
    }
    Ok((seqs, frames))
}

fn run_command(cmd: &Command) -> Result<Value> {
    let common = cmd.common();
    let cfg = resolve_config(common)?;
    let dev = device(common)?;
    let out = &common.out;
    match cmd {
        Command::Gen { sequences, .. } => {
            let n = sequences.unwrap_or(cfg.data.n_sequences);
            let videos = data::synthetic_videos(&cfg.data.scene, n, cfg.train.seed)?;
            data::write_videos(&DatasetLayout::new(out), &videos)?;
            Ok(json!({"command": "gen", "out": out, "sequences": n, "frames_per_sequence": cfg.data.scene.n_frames, "seed": cfg.train.seed}))
        }
        Command::Pretrain { data: dir, iters, .. } => {
            let mut cfg = cfg;
            if let Some(n) = iters {
                cfg.train.pretrain_iters = *n;
            }
            let videos = data::load_videos(&DatasetLayout::new(dir))?;
            let model = OasisModel::new(&cfg.model, cfg.train.seed, &dev)?;
            create_dir(out)?;
            let report = pretrain(&model, &data::static_pairs(&videos), &cfg, &train_options(out, "pretrain_log.jsonl"))?;
            let path = out.join("pretrain.safetensors");
            checkpoint::save(&model, &path, &stage_meta("pretrain", &cfg, report.steps.len()))?;
            Ok(json!({"command": "pretrain", "checkpoint": path, "iterations": report.steps.len(), "final_loss": report.final_loss()}))
        }
        Command::Train { data: dir, init, iters, .. } => {
            let mut cfg = cfg;
            if let Some(n) = iters {
                cfg.train.total_iters = *n;
            }
            let videos = data::load_videos(&DatasetLayout::new(dir))?;
            let model = match init {
                Some(p) => {
                    let ck = checkpoint::read(p)?;
                    if ck.config != cfg.model {
                        eprintln!("warning: using the model config stored in {}", p.display());
                    }
                    let m = OasisModel::new(&ck.config, cfg.train.seed, &dev)?;
                    m.params().load_matching(&ck.tensors)?;
                    cfg.model = ck.config;
                    m
                }
                None => OasisModel::new(&cfg.model, cfg.train.seed, &dev)?,
            };
            create_dir(out)?;
            let report = train(&model, &videos, &cfg, &train_options(out, "train_log.jsonl"))?;
            let path = out.join("model.safetensors");
            checkpoint::save(&model, &path, &stage_meta("train", &cfg, report.steps.len()))?;
            Ok(json!({"command": "train", "checkpoint": path, "iterations": report.steps.len(), "final_loss": report.final_loss()}))
        }
        Command::Infer { data: dir, checkpoint: ck, structures, zip, .. } => {
            let model = load_model(ck, &dev)?;
            let (seqs, frames) = infer_dataset(&model, &DatasetLayout::new(dir), out, *structures)?;
            let archive = if *zip {
                let a = out.join("submission.zip");
                zip_dir(&out.join(crate::io::layout::ANNOTATIONS_DIR), &a)?;
                Some(a)
            } else {
                None
            };
            Ok(json!({"command": "infer", "out": out, "sequences": seqs, "frames": frames, "zip": archive}))
        }
        Command::Eval { data: dir, pred, keep_first_last, tolerance, .. } => {
            let opts = EvalOptions {
                skip_first_last: !keep_first_last,
                tolerance_frac: *tolerance,
            };
            let report = evaluate_dataset(&DatasetLayout::new(dir), pred, &opts)?;
            let summary = report.write(out)?;
            let mut v = serde_json::to_value(&summary).expect("plain struct");
            v["command"] = json!("eval");
            Ok(v)
        }
        Command::Bench { checkpoint: ck, data: dir, sequence, warmup, frames, fake_ms, .. } => {
            let needed = (*warmup).max(1) + frames;
            let (video, mask) = bench_video(&cfg, dir.as_deref(), sequence.as_ref(), needed)?;
            let report = match fake_ms {
                Some(ms) => fps_benchmark(
                    &mut SleepProcessor { per_frame: Duration::from_millis(*ms) },
                    &video,
                    &mask,
                    *warmup,
                    *frames,
                )?,
                None => {
                    let model = match ck {
                        Some(p) => load_model(p, &dev)?,
                        None => OasisModel::new(&cfg.model, cfg.train.seed, &dev)?,
                    };
                    fps_benchmark(&mut ModelProcessor::new(&model), &video, &mask, *warmup, *frames)?
                }
            };
            let mut v = serde_json::to_value(&report).expect("plain struct");
            v["command"] = json!("bench");
            v["fake"] = json!(fake_ms.is_some());
            Ok(v)
        }
        Command::Viz { data: dir, checkpoint: ck, sequence, .. } => {
            let model = load_model(ck, &dev)?;
            let layout = DatasetLayout::new(dir);
            let mut written = 0;
            for name in select_sequences(&layout, sequence.as_ref())? {
                let seq = layout.load_sequence(&name)?;
                let p = propagate_video(&model, &seq.frames, seq.first_mask())?;
                let vdir = out.join("viz").join(&name);
                create_dir(&vdir)?;
                for t in 0..seq.frames.len() {
                    let edges = canny(&seq.frames[t], &model.config().canny)?;
                    let fname = &seq.frame_names[t];
                    viz::panel(&seq.frames[t], &p.masks[t], &edges, p.structures[t].as_ref(), &seq.palette)
                        .save(&vdir.join(format!("{fname}_panel.png")))?;
                    viz::save_edges(&vdir.join(format!("{fname}_edges.png")), &edges)?;
                    if let Some(s) = &p.structures[t] {
                        viz::save_structure(&vdir.join(format!("{fname}_structure.png")), s)?;
                    }
                    viz::colorize(&p.masks[t], &seq.palette).save(&vdir.join(format!("{fname}_mask.png")))?;
                    written += 1;
                }
            }
            Ok(json!({"command": "viz", "out": out.join("viz"), "frames": written}))
        }
        Command::Sweep { data: dir, checkpoint: ck, epsilon, beta, .. } => {
            let mut model = load_model(ck, &dev)?;
            let base = model.config().fusion;
            let eps = if epsilon.is_empty() { vec![base.epsilon] } else { epsilon.clone() };
            let betas = if beta.is_empty() { vec![base.beta] } else { beta.clone() };
            let layout = DatasetLayout::new(dir);
            let mut csv = String::from("epsilon,beta,JF,J,F\n");
            let mut rows = 0;
            for &e in &eps {
                for &b in &betas {
                    model.set_fusion(FusionConfig { epsilon: e, beta: b })?;
                    let run = out.join("runs").join(format!("eps{e}_beta{b}"));
                    infer_dataset(&model, &layout, &run, false)?;
                    let s = evaluate_dataset(&layout, &run, &EvalOptions::default())?.summary();
                    csv.push_str(&format!("{e},{b},{:.6},{:.6},{:.6}\n", s.jf, s.j, s.f));
                    rows += 1;
                }
            }
            create_dir(out)?;
            let path = out.join("sweep.csv");
            std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
            Ok(json!({"command": "sweep", "csv": path, "rows": rows}))
        }
        Command::Edges { inputs, .. } => {
            create_dir(out)?;
            let mut written = Vec::new();
            for input in inputs {
                let pixels = png::read_frame(input)?;
                let frame = FrameTensor::new(pixels, 0, input.display().to_string())?;
                let edges = canny(&frame, &cfg.model.canny)?;
                let path = out.join(format!("{}_edges.png", file_stem(input)));
                viz::save_edges(&path, &edges)?;
                written.push(path);
            }
            Ok(json!({"command": "edges", "files": written}))
        }
        Command::Structmap { inputs, .. } => {
            create_dir(out)?;
            let mut written = Vec::new();
            for input in inputs {
                let img = png::read_indexed(input)?;
                let mask = IdMask::new(img.height, img.width, img.indices)?;
                let map = gt_structure_map(&mask, cfg.model.boundary_width);
                let path = out.join(format!("{}_structure.png", file_stem(input)));
                viz::save_structure(&path, &map)?;
                written.push(path);
            }
            Ok(json!({"command": "structmap", "files": written}))
        }
    }
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into())
}

fn stage_meta(stage: &str, cfg: &OasisConfig, iterations: usize) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("stage".into(), stage.into());
    m.insert("iterations".into(), iterations.to_string());
    m.insert("seed".into(), cfg.train.seed.to_string());
    m
}

fn bench_video(
    cfg: &OasisConfig,
    dir: Option<&Path>,
    sequence: Option<&String>,
    needed: usize,
) -> Result<(Vec<FrameTensor>, IdMask)> {
    match dir {
        Some(d) => {
            let layout = DatasetLayout::new(d);
            let name = select_sequences(&layout, sequence)?
                .into_iter()
                .next()
                .ok_or_else(|| Error::Input("dataset has no sequences".into()))?;
            let seq = layout.load_sequence(&name)?;
            let mask = seq.first_mask().clone();
            Ok((seq.frames, mask))
        }
        None => {
            let mut scene = cfg.data.scene.clone();
            scene.n_frames = needed;
            let v = data::synthetic_videos(&scene, 1, cfg.train.seed)?.remove(0);
            let mask = v.masks[0].clone();
            Ok((v.frames, mask))
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 bad input, 2 internal failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_command(&cli.command) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                1
            } else {
                2
            }
        }
    }
}
