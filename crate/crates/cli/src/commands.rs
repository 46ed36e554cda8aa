use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sfr_core::checkpoint::{self, Checkpoint};
use sfr_core::config::KvMap;
use sfr_core::data::sampling::sample_clip;
use sfr_core::data::VideoClip;
use sfr_core::eval::{
    aggregate_sweeps, config_hash, emit_report, evaluate_videos, time_inference, truncation_sweep, ModelResult,
    Report, DEFAULT_SWEEP, TIMING_WARMUP,
};
use sfr_core::gradcheck::{run_suite, GradCheckOptions, Scope};
use sfr_core::run::{generate_to_disk, load_fold, train_fold, RunConfig, CONFIG_FILE};
use sfr_core::train::{StopReason, BEST_CHECKPOINT, SWA_CHECKPOINT};
use sfr_core::{Error, Label, SfrConfig, Tensor};

use crate::{Command, ConfigArgs, Failure, ScopeArg, SplitArg};

type CmdResult = std::result::Result<(), Failure>;

pub fn run(command: Command) -> CmdResult {
    match command {
        Command::Generate { config, out, force } => generate(&config, out, force),
        Command::Train {
            config,
            wiring,
            dataset,
            output,
        } => {
            let mut extra = Vec::new();
            if let Some(w) = wiring {
                extra.push(("model.wiring".to_string(), w.key_value().to_string()));
            }
            push_path(&mut extra, "run.dataset", dataset);
            push_path(&mut extra, "run.output", output);
            train(&load_config(&config, None, &extra)?)
        }
        Command::Eval {
            config,
            checkpoint,
            dataset,
            split,
            sweep,
            time,
            repetitions,
            out,
        } => {
            let opts = EvalOptions {
                split,
                sweep,
                time,
                repetitions,
                out,
            };
            eval(&config, &checkpoint, dataset, &opts)
        }
        Command::Gradcheck {
            scope,
            seeds,
            seed,
            tolerance,
            step,
        } => gradcheck(scope, seed, seeds, tolerance, step),
        Command::Inspect { checkpoint, params } => inspect(&checkpoint, params),
    }
}

fn push_path(extra: &mut Vec<(String, String)>, key: &str, path: Option<PathBuf>) {
    if let Some(p) = path {
        extra.push((key.to_string(), p.display().to_string()));
    }
}

/// File (or `fallback`, or defaults), then positional overrides, then flag values.
fn load_config(args: &ConfigArgs, fallback: Option<&Path>, extra: &[(String, String)]) -> Result<RunConfig, Failure> {
    let text = match args.config.as_deref().or(fallback) {
        Some(path) => fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?,
        None => String::new(),
    };
    let mut overrides = args
        .overrides
        .iter()
        .map(|o| KvMap::parse_override(o))
        .collect::<sfr_core::Result<Vec<_>>>()?;
    overrides.extend_from_slice(extra);
    Ok(RunConfig::from_text(&text, &overrides)?)
}

fn is_non_empty_dir(path: &Path) -> bool {
    fs::read_dir(path).is_ok_and(|mut entries| entries.next().is_some())
}

fn generate(args: &ConfigArgs, out: Option<PathBuf>, force: bool) -> CmdResult {
    let mut extra = Vec::new();
    push_path(&mut extra, "run.dataset", out);
    let cfg = load_config(args, None, &extra)?;
    if cfg.dataset.is_file() || (is_non_empty_dir(&cfg.dataset) && !force) {
        return Err(Failure::Usage(format!(
            "{} already exists and is not empty (pass --force to write into it)",
            cfg.dataset.display()
        )));
    }
    let start = Instant::now();
    let generated = generate_to_disk(&cfg)?;
    cfg.archive(&cfg.dataset)?;
    let count = |l: Label| generated.clips.iter().filter(|c| c.label == l).count();
    println!(
        "wrote {} videos to {} in {:.1?}",
        generated.clips.len(),
        cfg.dataset.display(),
        start.elapsed()
    );
    println!("class counts: T={} NT={}", count(Label::T), count(Label::NT));
    for s in &generated.splits {
        println!(
            "fold {}: train={} validation={} test={}",
            s.fold,
            s.train.len(),
            s.validation.len(),
            s.test.len()
        );
    }
    Ok(())
}

fn train(cfg: &RunConfig) -> CmdResult {
    let data = load_fold(cfg)?;
    println!(
        "training {} ({} parameters) on fold {}: {} train / {} validation videos",
        cfg.model.wiring,
        sfr_core::SfrModel::build(&cfg.model, cfg.train.seed)?.count_parameters(),
        cfg.fold,
        data.train.len(),
        data.validation.len()
    );
    let start = Instant::now();
    let (_, summary) = train_fold(cfg, &data, &mut |e| {
        println!(
            "epoch {:>3}  train_loss {:.4}  val_loss {:.4}  val_acc {:.4}  lr {:.2e}{}",
            e.epoch,
            e.train_loss,
            e.val_loss,
            e.val_acc,
            e.lr_last,
            if e.swa_included { "  swa" } else { "" }
        )
    })?;
    let reason = match summary.stop_reason {
        StopReason::MaxEpochs => "epoch budget exhausted",
        StopReason::EarlyStop => "early stop",
        StopReason::TargetReached => "target accuracy reached",
    };
    println!("stopped after {} epochs ({reason}) in {:.1?}", summary.log.len(), start.elapsed());
    println!("best: epoch {} val_acc {:.4} -> {}", summary.best_epoch, summary.best_val_acc, summary.best_checkpoint.display());
    println!(
        "swa: {} snapshots val_acc {:.4} -> {}",
        summary.swa_snapshots,
        summary.swa_val_acc,
        summary.swa_checkpoint.display()
    );
    println!("log: {}", summary.log_path.display());
    Ok(())
}

struct EvalOptions {
    split: SplitArg,
    sweep: bool,
    time: bool,
    repetitions: usize,
    out: Option<PathBuf>,
}

fn kv_hash(config: &SfrConfig) -> String {
    let mut map = KvMap::new();
    config.write_kv(&mut map);
    config_hash(&map)[..12].to_string()
}

fn eval(args: &ConfigArgs, target: &Path, dataset: Option<PathBuf>, opts: &EvalOptions) -> CmdResult {
    let (run_dir, checkpoints): (PathBuf, Vec<(String, PathBuf)>) = if target.is_dir() {
        let found: Vec<(String, PathBuf)> = [("best", BEST_CHECKPOINT), ("swa", SWA_CHECKPOINT)]
            .iter()
            .map(|(n, f)| (n.to_string(), target.join(f)))
            .filter(|(_, p)| p.is_file())
            .collect();
        if found.is_empty() {
            return Err(Failure::Usage(format!("no checkpoints in {}", target.display())));
        }
        (target.to_path_buf(), found)
    } else if target.is_file() {
        let name = target.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
        let dir = target.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        (dir, vec![(name, target.to_path_buf())])
    } else {
        return Err(Failure::Usage(format!("checkpoint {} does not exist", target.display())));
    };

    // The run's archived configuration is used when no file is given explicitly.
    let archived = run_dir.join(CONFIG_FILE);
    let fallback = archived.is_file().then_some(archived.as_path());
    let has_config = args.config.is_some() || fallback.is_some();
    let mut extra = Vec::new();
    push_path(&mut extra, "run.dataset", dataset);
    let mut cfg = load_config(args, fallback, &extra)?;

    let loaded: Vec<(String, Checkpoint)> = checkpoints
        .into_iter()
        .map(|(name, path)| checkpoint::read(&path).map(|c| (name, c)))
        .collect::<sfr_core::Result<_>>()?;
    for (name, ckpt) in &loaded {
        if has_config && ckpt.config != cfg.model {
            return Err(Error::Config(format!(
                "checkpoint {name} was trained with model config {} but the run config describes {}",
                kv_hash(&ckpt.config),
                kv_hash(&cfg.model)
            ))
            .into());
        }
    }
    if !has_config {
        cfg.model = loaded[0].1.config.clone();
    }

    let fold = load_fold(&cfg)?;
    let videos: &[VideoClip] = match opts.split {
        SplitArg::Train => &fold.train,
        SplitArg::Validation => &fold.validation,
        SplitArg::Test => &fold.test,
    };
    if videos.is_empty() {
        return Err(Failure::Usage(format!("the {:?} split of fold {} is empty", opts.split, cfg.fold)));
    }
    let t = &cfg.train;
    let base_out = opts.out.clone().unwrap_or_else(|| run_dir.join("eval"));
    let several = loaded.len() > 1;
    for (name, ckpt) in loaded {
        let (model, meta) = ckpt.into_model()?;
        let mut metrics = evaluate_videos(&model, videos, t.clip_len, t.sampling, t.eval_batch)?;
        let timing = if opts.time {
            let clip = Tensor::stack(&[sample_clip(&videos[0], t.clip_len, t.sampling)?])?;
            let timing = time_inference(&model, &clip, opts.repetitions, TIMING_WARMUP)?;
            metrics.seconds_per_video = Some(timing.mean_seconds);
            Some(timing)
        } else {
            None
        };
        let sweep = if opts.sweep {
            let curve = truncation_sweep(&model, videos, &DEFAULT_SWEEP, t.clip_len, t.sampling, t.eval_batch)?;
            Some(aggregate_sweeps(&[curve])?)
        } else {
            None
        };
        let report = Report {
            models: vec![ModelResult {
                name: name.clone(),
                config: cfg.to_map(),
                runs: vec![metrics],
            }],
            sweep,
            timing,
        };
        let out = if several { base_out.join(&name) } else { base_out.clone() };
        emit_report(&report, &out)?;

        let cell = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"));
        println!(
            "{name} (epoch {}, {} {:?} videos): acc {:.4}  P_T {}  R_T {}  P_NT {}  R_NT {}",
            meta.epoch,
            videos.len(),
            opts.split,
            metrics.acc,
            cell(metrics.p_t),
            cell(metrics.r_t),
            cell(metrics.p_nt),
            cell(metrics.r_nt)
        );
        if let Some(rows) = &report.sweep {
            for r in rows {
                println!("  frames {:>3}: acc {}  (skipped {})", r.frames_kept, cell(r.acc.mean), r.skipped);
            }
        }
        if let Some(tm) = &report.timing {
            println!("  {:.3} ms per clip over {} runs on {}", tm.mean_seconds * 1e3, tm.repetitions, tm.hardware);
        }
        println!("  report: {}", out.display());
    }
    Ok(())
}

fn gradcheck(scope: ScopeArg, first: u64, seeds: u64, tolerance: f64, step: f32) -> CmdResult {
    let scopes: Vec<Scope> = match scope {
        ScopeArg::Ops => vec![Scope::Ops],
        ScopeArg::Layers => vec![Scope::Layers],
        ScopeArg::Model => vec![Scope::Model],
        ScopeArg::All => Scope::ALL.to_vec(),
    };
    if seeds == 0 {
        return Err(Failure::Usage("--seeds must be ≥ 1".into()));
    }
    let opts = GradCheckOptions {
        step,
        tolerance,
        ..GradCheckOptions::default()
    };
    let mut failed = 0;
    for scope in scopes {
        let start = Instant::now();
        let entries = run_suite(scope, first..first + seeds, &opts)?;
        println!("scope {scope}: {} checks over seeds {first}..{}", entries.len(), first + seeds);
        for e in &entries {
            println!(
                "  {:<4} {:<36} checked {:>6}  skipped {:>4}  max_rel_error {:.3e}",
                if e.passed() { "ok" } else { "FAIL" },
                e.name,
                e.checked,
                e.skipped,
                e.max_rel_error
            );
            failed += usize::from(!e.passed());
        }
        println!("  {:.1?}", start.elapsed());
    }
    if failed > 0 {
        println!("{failed} check(s) exceeded tolerance {tolerance:e}");
        return Err(Failure::Failed);
    }
    println!("all checks within tolerance {tolerance:e}");
    Ok(())
}

fn inspect(path: &Path, list_params: bool) -> CmdResult {
    let ckpt = checkpoint::read(path)?;
    println!("checkpoint {}", path.display());
    println!("format version {}", ckpt.version);
    println!("epoch {}  val_accuracy {:.4}", ckpt.meta.epoch, ckpt.meta.val_accuracy);
    println!("model config {}", kv_hash(&ckpt.config));
    print!("{}", ckpt.config.to_kv_text());
    let total: usize = ckpt.params.iter().map(|p| p.value().numel()).sum();
    println!("{} parameter tensors, {total} values", ckpt.params.len());
    if list_params {
        for p in ckpt.params.iter() {
            println!("  {:<56} {:?}", p.name(), p.value().shape());
        }
    }
    Ok(())
}
