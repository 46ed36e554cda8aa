//! Evaluation: metrics, truncation sweeps, inference timing and report files.

mod metrics;
mod report;

use std::time::Instant;

pub use metrics::{
    aggregate, compute_metrics, summarize, AggregateMetrics, ConfusionCounts, Metric, RunMetrics, Summary,
};
pub use report::{
    config_hash, emit_report, metrics_csv, sweep_csv, timing_csv, ModelResult, Report, ReportFiles, METRICS_CSV,
    METRICS_HEADER, SCHEMA_VERSION, SUMMARY_JSON, SWEEP_CSV, SWEEP_HEADER, TIMING_CSV, TIMING_HEADER,
};

use crate::data::sampling::{sample_clip, truncate, SampleStrategy};
use crate::data::VideoClip;
use crate::error::{Error, Result};
use crate::label::Label;
use crate::model::SfrModel;
use crate::tensor::Tensor;

/// Frame counts kept by the default sweep: 300, 270, …, 120.
pub const DEFAULT_SWEEP: [usize; 7] = [300, 270, 240, 210, 180, 150, 120];
pub const TIMING_WARMUP: usize = 10;
pub const TIMING_REPETITIONS: usize = 1000;

/// Predicted labels for `videos`, each sampled to `clip_len` frames.
pub fn predict_videos(
    model: &SfrModel,
    videos: &[&VideoClip],
    clip_len: usize,
    strategy: SampleStrategy,
    batch: usize,
) -> Result<Vec<Label>> {
    let mut out = Vec::with_capacity(videos.len());
    for chunk in videos.chunks(batch.max(1)) {
        let clips = chunk
            .iter()
            .map(|v| sample_clip(v, clip_len, strategy))
            .collect::<Result<Vec<_>>>()?;
        out.extend(model.predict(Tensor::stack(&clips)?)?.into_iter().map(|p| p.label));
    }
    Ok(out)
}

pub fn evaluate_videos(
    model: &SfrModel,
    videos: &[VideoClip],
    clip_len: usize,
    strategy: SampleStrategy,
    batch: usize,
) -> Result<RunMetrics> {
    let refs: Vec<&VideoClip> = videos.iter().collect();
    let predicted = predict_videos(model, &refs, clip_len, strategy, batch)?;
    let actual: Vec<Label> = videos.iter().map(|v| v.label).collect();
    compute_metrics(&predicted, &actual)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub frames_kept: usize,
    /// `None` when every video was shorter than `frames_kept`.
    pub metrics: Option<RunMetrics>,
    pub evaluated: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCurve {
    pub points: Vec<SweepPoint>,
}

/// Evaluates the model on prefixes of every video, resampling each prefix to
/// `clip_len` frames. Videos shorter than a length are skipped and counted.
pub fn truncation_sweep(
    model: &SfrModel,
    videos: &[VideoClip],
    lengths: &[usize],
    clip_len: usize,
    strategy: SampleStrategy,
    batch: usize,
) -> Result<SweepCurve> {
    if lengths.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::Param(format!("sweep lengths {lengths:?} must strictly decrease")));
    }
    let mut points = Vec::with_capacity(lengths.len());
    for &keep in lengths {
        let kept: Vec<VideoClip> = videos
            .iter()
            .filter(|v| v.frames() >= keep)
            .map(|v| truncate(v, keep))
            .collect::<Result<_>>()?;
        let metrics = if kept.is_empty() {
            None
        } else {
            Some(evaluate_videos(model, &kept, clip_len, strategy, batch)?)
        };
        points.push(SweepPoint {
            frames_kept: keep,
            metrics,
            evaluated: kept.len(),
            skipped: videos.len() - kept.len(),
        });
    }
    Ok(SweepCurve { points })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub frames_kept: usize,
    pub acc: Summary,
    pub skipped: usize,
}

/// Accuracy mean ± std per length across runs (seeds or folds).
pub fn aggregate_sweeps(curves: &[SweepCurve]) -> Result<Vec<SweepRow>> {
    let first = curves
        .first()
        .ok_or_else(|| Error::Contract("cannot aggregate zero sweeps".into()))?;
    let lengths: Vec<usize> = first.points.iter().map(|p| p.frames_kept).collect();
    let mut rows = Vec::with_capacity(lengths.len());
    for (i, &keep) in lengths.iter().enumerate() {
        let mut accs = Vec::with_capacity(curves.len());
        let mut skipped = 0;
        for c in curves {
            let p = c.points.get(i).filter(|p| p.frames_kept == keep).ok_or_else(|| {
                Error::Contract("sweeps to aggregate must share their lengths".into())
            })?;
            accs.push(p.metrics.map(|m| m.acc));
            skipped += p.skipped;
        }
        rows.push(SweepRow {
            frames_kept: keep,
            acc: summarize(&accs),
            skipped,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Timing {
    pub mean_seconds: f64,
    pub repetitions: usize,
    pub warmup: usize,
    pub hardware: String,
}

/// CPU model and available parallelism of the current machine.
pub fn hardware_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|text| {
            text.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|s| s.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{cpu} ({threads} hardware threads, timed on 1)")
}

/// Mean wall-clock seconds of one prediction on `clip` over `repetitions` runs,
/// after `warmup` untimed runs.
pub fn time_inference(model: &SfrModel, clip: &Tensor, repetitions: usize, warmup: usize) -> Result<Timing> {
    if repetitions == 0 {
        return Err(Error::Param("timing needs at least one repetition".into()));
    }
    for _ in 0..warmup {
        model.predict(clip.clone())?;
    }
    let start = Instant::now();
    for _ in 0..repetitions {
        model.predict(clip.clone())?;
    }
    Ok(Timing {
        mean_seconds: start.elapsed().as_secs_f64() / repetitions as f64,
        repetitions,
        warmup,
        hardware: hardware_descriptor(),
    })
}
