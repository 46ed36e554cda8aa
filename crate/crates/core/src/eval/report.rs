//! Report files:
//!
//! * `metrics.csv` — one row per model: runs, then mean and std of each metric.
//! * `sweep.csv` — `frames_kept,acc_mean,acc_std`, one row per truncation length.
//! * `timing.csv` — `mean_seconds,repetitions,warmup,hardware`, one row when timed.
//! * `summary.json` — everything above plus per-run metrics, config hashes and timing.
//!
//! Undefined means are written as `undefined`, absent standard deviations as `NA`.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::metrics::{aggregate, Metric, RunMetrics, Summary};
use super::{SweepRow, Timing};
use crate::config::KvMap;
use crate::error::{Error, Result};

pub const METRICS_CSV: &str = "metrics.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const TIMING_CSV: &str = "timing.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const SCHEMA_VERSION: u32 = 1;
pub const METRICS_HEADER: &str = "model,runs,acc_mean,acc_std,p_t_mean,p_t_std,r_t_mean,r_t_std,\
p_nt_mean,p_nt_std,r_nt_mean,r_nt_std,seconds_per_video_mean,seconds_per_video_std";
pub const SWEEP_HEADER: &str = "frames_kept,acc_mean,acc_std";
pub const TIMING_HEADER: &str = "mean_seconds,repetitions,warmup,hardware";

/// SHA-256 (hex) of the canonical, key-sorted serialization of `config`.
pub fn config_hash(config: &KvMap) -> String {
    Sha256::digest(config.to_text().as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// All runs (seeds / folds) of one model configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelResult {
    pub name: String,
    pub config: KvMap,
    pub runs: Vec<RunMetrics>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub models: Vec<ModelResult>,
    pub sweep: Option<Vec<SweepRow>>,
    pub timing: Option<Timing>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub metrics_csv: PathBuf,
    pub sweep_csv: Option<PathBuf>,
    pub timing_csv: Option<PathBuf>,
    pub summary_json: PathBuf,
}

fn mean_cell(s: &Summary) -> String {
    s.mean.map_or_else(|| "undefined".into(), |v| format!("{v:.6}"))
}

fn std_cell(s: &Summary) -> String {
    s.std.map_or_else(|| "NA".into(), |v| format!("{v:.6}"))
}

pub fn metrics_csv(models: &[ModelResult]) -> Result<String> {
    let mut out = format!("{METRICS_HEADER}\n");
    for m in models {
        if m.name.contains([',', '\n']) {
            return Err(Error::Param(format!("model name {:?} cannot go in a CSV cell", m.name)));
        }
        let agg = aggregate(&m.runs)?;
        let mut cells = vec![m.name.clone(), m.runs.len().to_string()];
        for metric in Metric::ALL {
            let s = agg.get(metric);
            cells.push(mean_cell(&s));
            cells.push(std_cell(&s));
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.frames_kept, mean_cell(&r.acc), std_cell(&r.acc)));
    }
    out
}

pub fn timing_csv(t: &Timing) -> String {
    // the hardware string is free text: quote it and double embedded quotes
    let hardware = t.hardware.replace('"', "\"\"");
    format!(
        "{TIMING_HEADER}\n{:.9},{},{},\"{hardware}\"\n",
        t.mean_seconds, t.repetitions, t.warmup
    )
}

fn summary_json(s: &Summary) -> Value {
    json!({ "mean": s.mean, "std": s.std, "defined": s.defined, "undefined": s.undefined })
}

fn run_json(r: &RunMetrics) -> Value {
    let mut obj = serde_json::Map::new();
    for m in Metric::ALL {
        obj.insert(m.key().into(), json!(r.get(m)));
    }
    Value::Object(obj)
}

pub fn report_json(report: &Report) -> Result<Value> {
    let mut models = Vec::with_capacity(report.models.len());
    for m in &report.models {
        let agg = aggregate(&m.runs)?;
        let mut metrics = serde_json::Map::new();
        for metric in Metric::ALL {
            metrics.insert(metric.key().into(), summary_json(&agg.get(metric)));
        }
        models.push(json!({
            "name": m.name,
            "config_hash": config_hash(&m.config),
            "config": m.config.to_text(),
            "runs": m.runs.iter().map(run_json).collect::<Vec<_>>(),
            "metrics": metrics,
        }));
    }
    let sweep = report.sweep.as_ref().map(|rows| {
        rows.iter()
            .map(|r| {
                json!({
                    "frames_kept": r.frames_kept,
                    "acc": summary_json(&r.acc),
                    "skipped": r.skipped,
                })
            })
            .collect::<Vec<_>>()
    });
    let timing = report.timing.as_ref().map(|t| {
        json!({
            "mean_seconds": t.mean_seconds,
            "repetitions": t.repetitions,
            "warmup": t.warmup,
            "hardware": t.hardware,
        })
    });
    Ok(json!({
        "schema_version": SCHEMA_VERSION,
        "models": models,
        "sweep": sweep,
        "timing": timing,
    }))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the metrics CSV, the sweep CSV (when present) and the JSON summary.
pub fn emit_report(report: &Report, dir: &Path) -> Result<ReportFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let metrics_path = dir.join(METRICS_CSV);
    write(&metrics_path, &metrics_csv(&report.models)?)?;
    let sweep_path = match &report.sweep {
        Some(rows) => {
            let p = dir.join(SWEEP_CSV);
            write(&p, &sweep_csv(rows))?;
            Some(p)
        }
        None => None,
    };
    let timing_path = match &report.timing {
        Some(t) => {
            let p = dir.join(TIMING_CSV);
            write(&p, &timing_csv(t))?;
            Some(p)
        }
        None => None,
    };
    let json_path = dir.join(SUMMARY_JSON);
    let text = serde_json::to_string_pretty(&report_json(report)?)
        .map_err(|e| Error::Format(format!("summary serialization: {e}")))?;
    write(&json_path, &(text + "\n"))?;
    Ok(ReportFiles {
        metrics_csv: metrics_path,
        sweep_csv: sweep_path,
        timing_csv: timing_path,
        summary_json: json_path,
    })
}
