use std::fs;

use proptest::prelude::*;
use sfr_core::config::KvMap;
use sfr_core::data::sampling::SampleStrategy;
use sfr_core::data::synthetic::{generate_synthetic, SyntheticParams};
use sfr_core::eval::{
    aggregate, aggregate_sweeps, compute_metrics, emit_report, evaluate_videos, time_inference, truncation_sweep,
    ConfusionCounts, Metric, ModelResult, Report, RunMetrics, DEFAULT_SWEEP, METRICS_HEADER, SUMMARY_JSON,
    SWEEP_HEADER,
};
use sfr_core::{Label, SfrConfig, SfrModel, Tensor};

fn labels() -> impl Strategy<Value = (Vec<Label>, Vec<Label>)> {
    prop::collection::vec((any::<bool>(), any::<bool>()), 1..64).prop_map(|pairs| {
        let pick = |b: bool| if b { Label::T } else { Label::NT };
        pairs.into_iter().map(|(p, a)| (pick(p), pick(a))).unzip()
    })
}

proptest! {
    #[test]
    fn swapping_classes_swaps_per_class_metrics((pred, actual) in labels()) {
        let m = compute_metrics(&pred, &actual).unwrap();
        let flip = |v: &[Label]| v.iter().map(|l| l.other()).collect::<Vec<_>>();
        let s = compute_metrics(&flip(&pred), &flip(&actual)).unwrap();
        prop_assert_eq!(m.acc, s.acc);
        prop_assert_eq!((m.p_t, m.r_t), (s.p_nt, s.r_nt));
        prop_assert_eq!((m.p_nt, m.r_nt), (s.p_t, s.r_t));
    }

    #[test]
    fn precision_and_recall_reconstruct_true_positives((pred, actual) in labels()) {
        let c = ConfusionCounts::from_labels(&pred, &actual).unwrap();
        let m = RunMetrics::from_counts(&c).unwrap();
        if let Some(p) = m.p_t {
            prop_assert!((p * (c.tp_t + c.fp_t) as f64 - c.tp_t as f64).abs() < 1e-9);
        }
        if let Some(r) = m.r_t {
            prop_assert!((r * (c.tp_t + c.fn_t) as f64 - c.tp_t as f64).abs() < 1e-9);
        }
        prop_assert_eq!(c.total(), pred.len());
    }

    #[test]
    fn aggregation_ignores_run_order(accs in prop::collection::vec(0.0f64..=1.0, 2..10), rot in 0usize..10) {
        let runs: Vec<RunMetrics> = accs
            .iter()
            .map(|&acc| RunMetrics { acc, p_t: None, r_t: Some(acc), p_nt: None, r_nt: None, seconds_per_video: None })
            .collect();
        let mut rotated = runs.clone();
        rotated.rotate_left(rot % runs.len());
        rotated.reverse();
        let (a, b) = (aggregate(&runs).unwrap(), aggregate(&rotated).unwrap());
        for metric in Metric::ALL {
            let (x, y) = (a.get(metric), b.get(metric));
            prop_assert_eq!(x.defined, y.defined);
            let close = |u: Option<f64>, v: Option<f64>| match (u, v) {
                (Some(u), Some(v)) => (u - v).abs() < 1e-12,
                (u, v) => u == v,
            };
            prop_assert!(close(x.mean, y.mean) && close(x.std, y.std), "{metric}");
        }
    }
}

#[test]
fn worked_example_from_counts() {
    let c = ConfusionCounts {
        tp_t: 10,
        fp_t: 5,
        fn_t: 3,
        tn_t: 20,
    };
    let m = RunMetrics::from_counts(&c).unwrap();
    let expected = [(m.acc, 30.0 / 38.0), (m.p_t.unwrap(), 10.0 / 15.0), (m.r_t.unwrap(), 10.0 / 13.0)];
    for (got, want) in expected {
        assert!((got - want).abs() < 1e-12);
    }
    assert!((m.p_nt.unwrap() - 20.0 / 23.0).abs() < 1e-12);
    assert!((m.r_nt.unwrap() - 0.8).abs() < 1e-12);
}

fn short_videos(n: usize, seed: u64) -> Vec<sfr_core::data::VideoClip> {
    let params = SyntheticParams {
        height: 32,
        width: 32,
        frames: 300,
        ..SyntheticParams::default()
    };
    generate_synthetic(&params, n, seed).unwrap()
}

#[test]
fn sweep_covers_every_length_and_full_length_matches_plain_evaluation() {
    let videos = short_videos(6, 3);
    let model = SfrModel::build(&SfrConfig::tiny(), 1).unwrap();
    let curve = truncation_sweep(&model, &videos, &DEFAULT_SWEEP, 8, SampleStrategy::Uniform, 4).unwrap();
    let kept: Vec<usize> = curve.points.iter().map(|p| p.frames_kept).collect();
    assert_eq!(kept, DEFAULT_SWEEP);
    let plain = evaluate_videos(&model, &videos, 8, SampleStrategy::Uniform, 4).unwrap();
    assert_eq!(curve.points[0].metrics, Some(plain));
    assert!(curve.points.iter().all(|p| p.skipped == 0 && p.evaluated == 6));
}

#[test]
fn sweep_skips_and_counts_short_videos() {
    let mut videos = short_videos(2, 4);
    let params = SyntheticParams {
        height: 32,
        width: 32,
        frames: 200,
        ..SyntheticParams::default()
    };
    videos.extend(generate_synthetic(&params, 1, 9).unwrap());
    let model = SfrModel::build(&SfrConfig::tiny(), 1).unwrap();
    let curve = truncation_sweep(&model, &videos, &DEFAULT_SWEEP, 8, SampleStrategy::Uniform, 4).unwrap();
    let skipped: Vec<usize> = curve.points.iter().map(|p| p.skipped).collect();
    assert_eq!(skipped, [1, 1, 1, 1, 0, 0, 0]);
    let rows = aggregate_sweeps(&[curve.clone(), curve]).unwrap();
    assert_eq!(rows.len(), 7);
    assert_eq!(rows[0].acc.std, Some(0.0));
}

#[test]
fn deeper_backbone_takes_longer_to_predict() {
    let clip = Tensor::zeros(&[1, 1, 8, 32, 32]).unwrap();
    let time = |depth: usize| {
        let cfg = SfrConfig::from_kv_text(&format!("model.depth={depth}\n")).unwrap();
        let model = SfrModel::build(&cfg, 0).unwrap();
        time_inference(&model, &clip, 3, 1).unwrap()
    };
    let (shallow, deep) = (time(18), time(50));
    assert!(shallow.mean_seconds.is_finite() && shallow.mean_seconds > 0.0);
    assert!(deep.mean_seconds > shallow.mean_seconds, "{deep:?} vs {shallow:?}");
    assert_eq!(shallow.repetitions, 3);
    assert!(!shallow.hardware.is_empty());
}

#[test]
fn report_files_follow_their_schemas() {
    let videos = short_videos(4, 5);
    let model = SfrModel::build(&SfrConfig::tiny(), 2).unwrap();
    let run = evaluate_videos(&model, &videos, 8, SampleStrategy::Uniform, 4).unwrap();
    let curve = truncation_sweep(&model, &videos, &DEFAULT_SWEEP, 8, SampleStrategy::Uniform, 4).unwrap();
    let mut config = KvMap::new();
    SfrConfig::tiny().write_kv(&mut config);
    let report = Report {
        models: vec![ModelResult {
            name: "sfr".into(),
            config,
            runs: vec![run, run],
        }],
        sweep: Some(aggregate_sweeps(&[curve]).unwrap()),
        timing: None,
    };
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&report, dir.path()).unwrap();
    let metrics = fs::read_to_string(&files.metrics_csv).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1].split(',').count(), METRICS_HEADER.split(',').count());
    let sweep = fs::read_to_string(files.sweep_csv.unwrap()).unwrap();
    assert_eq!(sweep.lines().next(), Some(SWEEP_HEADER));
    assert_eq!(sweep.lines().count(), 1 + DEFAULT_SWEEP.len());
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join(SUMMARY_JSON)).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert_eq!(json["models"][0]["config_hash"].as_str().unwrap().len(), 64);
}
