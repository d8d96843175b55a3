//! Dataset-level J / F / J&F / G reporting and the FPS benchmark.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use oasis_core::metrics::{evaluate_sequence, mean, EvalOptions, SequenceResult};
use oasis_core::types::{FrameTensor, IdMask};
use serde::Serialize;

use crate::engine::Propagator;
use crate::io::layout::{DatasetLayout, ANNOTATIONS_DIR};
use crate::io::png;
use crate::nn::OasisModel;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SequenceReport {
    pub name: String,
    pub result: SequenceResult,
}

/// Scores on the 0..100 scale. `J` and `F` average over every object of
/// every sequence; `G` averages the per-sequence J&F.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    #[serde(rename = "JF")]
    pub jf: f64,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "G")]
    pub g: f64,
    pub sequences: usize,
    pub objects: usize,
}

#[derive(Debug, Clone)]
pub struct DatasetReport {
    pub sequences: Vec<SequenceReport>,
}

impl DatasetReport {
    pub fn summary(&self) -> Summary {
        let js: Vec<f64> = self.sequences.iter().flat_map(|s| s.result.per_object_j.clone()).collect();
        let fs: Vec<f64> = self.sequences.iter().flat_map(|s| s.result.per_object_f.clone()).collect();
        let (j, f) = (mean(&js), mean(&fs));
        let g = mean(&self.sequences.iter().map(|s| s.result.jf).collect::<Vec<_>>());
        Summary {
            jf: (j + f) / 2.0,
            j,
            f,
            g,
            sequences: self.sequences.len(),
            objects: js.len(),
        }
    }

    /// `sequence,object,J,F` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sequence,object,J,F\n");
        for s in &self.sequences {
            for (i, id) in s.result.object_ids.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{:.6},{:.6}\n",
                    s.name, id, s.result.per_object_j[i], s.result.per_object_f[i]
                ));
            }
        }
        out
    }

    /// Writes `results.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Summary> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("results.csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let summary = self.summary();
        let json = dir.join("summary.json");
        std::fs::write(&json, serde_json::to_string_pretty(&summary).expect("plain struct"))
            .map_err(|e| Error::io(&json, e))?;
        Ok(summary)
    }
}

/// Directory holding predicted masks for `sequence`: `<pred>/Annotations/<seq>`
/// if that exists, else `<pred>/<seq>`.
fn prediction_dir(pred_root: &Path, sequence: &str) -> PathBuf {
    let nested = pred_root.join(ANNOTATIONS_DIR).join(sequence);
    if nested.is_dir() {
        nested
    } else {
        pred_root.join(sequence)
    }
}

/// Scores predicted palette PNGs against a densely annotated dataset.
pub fn evaluate_dataset(gt: &DatasetLayout, pred_root: &Path, opts: &EvalOptions) -> Result<DatasetReport> {
    let mut sequences = Vec::new();
    for name in gt.sequences()? {
        let seq = gt.load_sequence(&name)?;
        let gts = seq.dense_masks().ok_or_else(|| Error::Dataset {
            sequence: name.clone(),
            message: "evaluation needs ground truth for every frame".into(),
        })?;
        let dir = prediction_dir(pred_root, &name);
        let preds = seq
            .frame_names
            .iter()
            .zip(&gts)
            .map(|(f, g)| {
                let path = dir.join(format!("{f}.png"));
                let img = png::read_indexed(&path)?;
                if (img.height, img.width) != (g.height(), g.width()) {
                    return Err(Error::format(&path, "prediction size differs from ground truth"));
                }
                Ok(IdMask::new(img.height, img.width, img.indices)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let result = evaluate_sequence(&preds, &gts, opts)?;
        sequences.push(SequenceReport { name, result });
    }
    Ok(DatasetReport { sequences })
}

/// Anything that segments a video frame by frame.
pub trait FrameProcessor {
    /// Starts a video from its annotated first frame.
    fn begin(&mut self, frame: &FrameTensor, mask: &IdMask) -> Result<()>;
    fn process(&mut self, frame: &FrameTensor) -> Result<()>;
}

/// The network, memory updates included.
#[derive(Debug)]
pub struct ModelProcessor<'m> {
    model: &'m OasisModel,
    state: Option<Propagator<'m>>,
}

impl<'m> ModelProcessor<'m> {
    pub fn new(model: &'m OasisModel) -> Self {
        Self { model, state: None }
    }
}

impl FrameProcessor for ModelProcessor<'_> {
    fn begin(&mut self, frame: &FrameTensor, mask: &IdMask) -> Result<()> {
        self.state = Some(Propagator::new(self.model, frame, mask)?);
        Ok(())
    }

    fn process(&mut self, frame: &FrameTensor) -> Result<()> {
        let p = self.state.as_mut().ok_or_else(|| Error::Input("process before begin".into()))?;
        p.step(frame)?;
        Ok(())
    }
}

/// Stand-in that only sleeps; used to check the clock.
#[derive(Debug, Clone)]
pub struct SleepProcessor {
    pub per_frame: Duration,
}

impl FrameProcessor for SleepProcessor {
    fn begin(&mut self, _: &FrameTensor, _: &IdMask) -> Result<()> {
        Ok(())
    }

    fn process(&mut self, _: &FrameTensor) -> Result<()> {
        std::thread::sleep(self.per_frame);
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FpsReport {
    pub fps: f64,
    pub timed_frames: usize,
    pub seconds: f64,
    pub hardware: String,
}

/// CPU model, logical cores and platform.
pub fn hardware_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("{cpu}; {threads} threads; {}-{}; cpu backend", std::env::consts::OS, std::env::consts::ARCH)
}

/// Single-stream frames per second over `timed` frames after `warmup`.
/// Frame 0 starts the video; it counts towards the warm-up.
pub fn fps_benchmark(
    proc: &mut impl FrameProcessor,
    frames: &[FrameTensor],
    first_mask: &IdMask,
    warmup: usize,
    timed: usize,
) -> Result<FpsReport> {
    if timed == 0 {
        return Err(Error::Input("timed_frames must be positive".into()));
    }
    let warm = warmup.max(1);
    if frames.len() < warm + timed {
        return Err(Error::Input(format!(
            "video has {} frames, benchmark needs {}",
            frames.len(),
            warm + timed
        )));
    }
    proc.begin(&frames[0], first_mask)?;
    for f in &frames[1..warm] {
        proc.process(f)?;
    }
    let start = Instant::now();
    for f in &frames[warm..warm + timed] {
        proc.process(f)?;
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok(FpsReport {
        fps: timed as f64 / seconds,
        timed_frames: timed,
        seconds,
        hardware: hardware_descriptor(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use oasis_core::Array3;

    fn video(n: usize) -> (Vec<FrameTensor>, IdMask) {
        let frames = (0..n)
            .map(|t| FrameTensor::new(Array3::zeros(3, 16, 16), t, "v").unwrap())
            .collect();
        (frames, IdMask::background(16, 16))
    }

    #[test]
    fn zero_timed_frames_rejected() {
        let (frames, mask) = video(4);
        let mut p = SleepProcessor { per_frame: Duration::ZERO };
        assert!(fps_benchmark(&mut p, &frames, &mask, 1, 0).is_err());
        assert!(fps_benchmark(&mut p, &frames, &mask, 2, 3).is_err());
    }

    #[test]
    fn summary_arithmetic() {
        let r = |j: Vec<f64>, f: Vec<f64>| {
            let jf = (mean(&j) + mean(&f)) / 2.0;
            SequenceResult {
                object_ids: (1..=j.len() as u8).collect(),
                per_object_j: j,
                per_object_f: f,
                jf,
                frames_evaluated: 3,
            }
        };
        let report = DatasetReport {
            sequences: vec![
                SequenceReport {
                    name: "a".into(),
                    result: r(vec![100.0], vec![80.0]),
                },
                SequenceReport {
                    name: "b".into(),
                    result: r(vec![50.0, 70.0], vec![60.0, 40.0]),
                },
            ],
        };
        let s = report.summary();
        assert!((s.j - 220.0 / 3.0).abs() < 1e-9);
        assert!((s.f - 60.0).abs() < 1e-9);
        assert!((s.g - (90.0 + 55.0) / 2.0).abs() < 1e-9);
        assert_eq!(report.to_csv().lines().count(), 4);
    }
}
