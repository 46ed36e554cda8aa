//! Mini-batch training with gradient accumulation, a cyclic learning rate, weight
//! averaging, early stopping and checkpointing.

mod optim;
mod swa;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use optim::{AdamW, AdamWConfig, CyclicSchedule};
pub use swa::{EarlyStopState, EpochOutcome, StopDecision, SwaState};

use crate::checkpoint::{self, CheckpointMeta};
use crate::config::{KvMap, KvReader};
use crate::data::augment::{expansion_plan, Variant};
use crate::data::sampling::{sample_augmented_clip, SampleStrategy};
use crate::data::{derive_seed, VideoClip};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::label::Label;
use crate::losses::LossKind;
use crate::model::{predictions_from_probs, Prediction, SfrModel};
use crate::tensor::Tensor;

pub const LOG_FILE: &str = "train_log.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const SWA_CHECKPOINT: &str = "swa.ckpt";
pub const LOG_HEADER: &str = "epoch,train_loss,val_loss,val_acc,lr_last,swa_included,stopped";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Seeds model initialization, shuffling, dropout and augmentation.
    pub seed: u64,
    pub max_epochs: usize,
    pub micro_batch: usize,
    pub accumulation_steps: usize,
    pub base_lr: f32,
    pub max_lr: f32,
    /// Half cycle of the learning-rate triangle, in epochs.
    pub half_period_epochs: usize,
    pub optimizer: AdamWConfig,
    /// First epoch (1-based) whose end-of-epoch weights enter the average.
    pub swa_start_epoch: usize,
    /// Consecutive validation-loss increases that stop training (0 disables).
    pub patience: usize,
    /// Variants per training video, the original included.
    pub augment_factor: usize,
    pub clip_len: usize,
    pub sampling: SampleStrategy,
    pub loss: LossKind,
    /// Stop as soon as validation accuracy reaches this value.
    pub target_val_acc: Option<f64>,
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_epochs: 100,
            micro_batch: 4,
            accumulation_steps: 8,
            base_lr: 1e-5,
            max_lr: 1e-4,
            half_period_epochs: 4,
            optimizer: AdamWConfig::default(),
            swa_start_epoch: 5,
            patience: 10,
            augment_factor: 20,
            clip_len: 64,
            sampling: SampleStrategy::Uniform,
            loss: LossKind::default(),
            target_val_acc: None,
            eval_batch: 4,
        }
    }
}

impl TrainConfig {
    pub fn effective_batch(&self) -> usize {
        self.micro_batch * self.accumulation_steps
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("train.max_epochs", self.max_epochs),
            ("train.micro_batch", self.micro_batch),
            ("train.accumulation_steps", self.accumulation_steps),
            ("train.half_period_epochs", self.half_period_epochs),
            ("train.augment_factor", self.augment_factor),
            ("train.clip_len", self.clip_len),
            ("train.eval_batch", self.eval_batch),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{key} must be ≥ 1")));
            }
        }
        CyclicSchedule::new(self.base_lr, self.max_lr, 1)?;
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return Err(Error::Config("optimizer needs betas in [0, 1) and eps > 0".into()));
        }
        if !(o.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be ≥ 0".into()));
        }
        Ok(())
    }

    pub fn write_kv(&self, map: &mut KvMap) {
        map.set("train.seed", self.seed);
        map.set("train.max_epochs", self.max_epochs);
        map.set("train.micro_batch", self.micro_batch);
        map.set("train.accumulation_steps", self.accumulation_steps);
        map.set("train.base_lr", self.base_lr);
        map.set("train.max_lr", self.max_lr);
        map.set("train.half_period_epochs", self.half_period_epochs);
        map.set("train.beta1", self.optimizer.beta1);
        map.set("train.beta2", self.optimizer.beta2);
        map.set("train.eps", self.optimizer.eps);
        map.set("train.weight_decay", self.optimizer.weight_decay);
        map.set("train.swa_start_epoch", self.swa_start_epoch);
        map.set("train.patience", self.patience);
        map.set("train.augment_factor", self.augment_factor);
        map.set("train.clip_len", self.clip_len);
        map.set("train.sampling", self.sampling);
        map.set("train.eval_batch", self.eval_batch);
        if let Some(t) = self.target_val_acc {
            map.set("train.target_val_acc", t);
        }
        self.loss.write_kv(map);
    }

    /// Reads `train.*` and `loss.*` keys; missing keys take the defaults.
    pub fn read_kv(r: &mut KvReader<'_>) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            seed: r.or("train.seed", d.seed)?,
            max_epochs: r.or("train.max_epochs", d.max_epochs)?,
            micro_batch: r.or("train.micro_batch", d.micro_batch)?,
            accumulation_steps: r.or("train.accumulation_steps", d.accumulation_steps)?,
            base_lr: r.or("train.base_lr", d.base_lr)?,
            max_lr: r.or("train.max_lr", d.max_lr)?,
            half_period_epochs: r.or("train.half_period_epochs", d.half_period_epochs)?,
            optimizer: AdamWConfig {
                beta1: r.or("train.beta1", d.optimizer.beta1)?,
                beta2: r.or("train.beta2", d.optimizer.beta2)?,
                eps: r.or("train.eps", d.optimizer.eps)?,
                weight_decay: r.or("train.weight_decay", d.optimizer.weight_decay)?,
            },
            swa_start_epoch: r.or("train.swa_start_epoch", d.swa_start_epoch)?,
            patience: r.or("train.patience", d.patience)?,
            augment_factor: r.or("train.augment_factor", d.augment_factor)?,
            clip_len: r.or("train.clip_len", d.clip_len)?,
            sampling: r.or("train.sampling", d.sampling)?,
            eval_batch: r.or("train.eval_batch", d.eval_batch)?,
            target_val_acc: r.opt("train.target_val_acc")?,
            loss: LossKind::read_kv(r)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Indexable collection of labelled `[C, T, H, W]` clips.
pub trait ClipSource {
    fn len(&self) -> usize;
    fn label(&self, index: usize) -> Label;
    fn clip(&self, index: usize) -> Result<Tensor>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Videos expanded lazily by augmentation: each entry is sampled to `clip_len`
/// frames and then transformed, so the expanded set never sits in memory.
pub struct VideoSource<'a> {
    videos: &'a [VideoClip],
    variants: Vec<Variant>,
    clip_len: usize,
    strategy: SampleStrategy,
}

impl<'a> VideoSource<'a> {
    /// The videos as they are, one entry each.
    pub fn plain(videos: &'a [VideoClip], clip_len: usize, strategy: SampleStrategy) -> Self {
        let variants = (0..videos.len())
            .map(|source| Variant {
                source,
                index: 0,
                chain: None,
            })
            .collect();
        Self {
            videos,
            variants,
            clip_len,
            strategy,
        }
    }

    /// `factor` variants per video (see [`expansion_plan`]).
    pub fn augmented(
        videos: &'a [VideoClip],
        factor: usize,
        seed: u64,
        clip_len: usize,
        strategy: SampleStrategy,
    ) -> Result<Self> {
        Ok(Self {
            videos,
            variants: expansion_plan(videos, factor, seed)?,
            clip_len,
            strategy,
        })
    }
}

impl ClipSource for VideoSource<'_> {
    fn len(&self) -> usize {
        self.variants.len()
    }

    fn label(&self, index: usize) -> Label {
        self.videos[self.variants[index].source].label
    }

    fn clip(&self, index: usize) -> Result<Tensor> {
        let v = &self.variants[index];
        sample_augmented_clip(&self.videos[v.source], self.clip_len, self.strategy, v.chain.as_ref())
    }
}

/// Pre-built clip tensors.
pub struct TensorSource {
    pub items: Vec<(Tensor, Label)>,
}

impl ClipSource for TensorSource {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn label(&self, index: usize) -> Label {
        self.items[index].1
    }

    fn clip(&self, index: usize) -> Result<Tensor> {
        Ok(self.items[index].0.clone())
    }
}

/// Stacks the listed clips into `[B, C, T, H, W]`.
pub fn stack_batch(source: &dyn ClipSource, indices: &[usize]) -> Result<(Tensor, Vec<Label>)> {
    let clips = indices.iter().map(|&i| source.clip(i)).collect::<Result<Vec<_>>>()?;
    let labels = indices.iter().map(|&i| source.label(i)).collect();
    Ok((Tensor::stack(&clips)?, labels))
}

/// Optimizer steps in one epoch: incomplete accumulation windows are dropped.
pub fn steps_per_epoch(samples: usize, cfg: &TrainConfig) -> usize {
    samples / cfg.effective_batch()
}

pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("epoch{epoch}")))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochTrain {
    /// Mean of the unscaled micro-batch losses.
    pub mean_loss: f64,
    pub steps: usize,
    pub last_lr: f32,
}

/// Optimizer state that persists across epochs.
pub struct Trainer {
    pub optimizer: AdamW,
    pub schedule: CyclicSchedule,
    pub global_step: u64,
}

impl Trainer {
    pub fn new(model: &SfrModel, cfg: &TrainConfig, train_samples: usize) -> Result<Self> {
        cfg.validate()?;
        let steps = steps_per_epoch(train_samples, cfg);
        if steps == 0 {
            return Err(Error::Config(format!(
                "training set of {train_samples} clips is smaller than one effective batch \
                 ({} × {} = {})",
                cfg.micro_batch,
                cfg.accumulation_steps,
                cfg.effective_batch()
            )));
        }
        Ok(Self {
            optimizer: AdamW::new(cfg.optimizer, &model.params),
            schedule: CyclicSchedule::new(
                cfg.base_lr,
                cfg.max_lr,
                (steps * cfg.half_period_epochs) as u64,
            )?,
            global_step: 0,
        })
    }

    /// One pass over a shuffled `train` set (shuffle and dropout drawn from `rng`).
    pub fn train_epoch(
        &mut self,
        model: &mut SfrModel,
        train: &dyn ClipSource,
        cfg: &TrainConfig,
        epoch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<EpochTrain> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(rng);
        let steps = steps_per_epoch(train.len(), cfg);
        let scale = 1.0 / cfg.accumulation_steps as f32;
        let mut loss_sum = 0.0;
        let mut last_lr = self.schedule.lr_at(self.global_step);
        for step in 0..steps {
            model.params.zero_grads();
            for micro in 0..cfg.accumulation_steps {
                let start = (step * cfg.accumulation_steps + micro) * cfg.micro_batch;
                let (x, labels) = stack_batch(train, &order[start..start + cfg.micro_batch])?;
                let mut g = Graph::new();
                let input = g.input(x);
                let logits = model.forward_train(&mut g, input, rng)?;
                let loss = cfg.loss.from_logits(&mut g, logits, &labels)?;
                let value = g.scalar_f64(loss).unwrap_or(f64::NAN);
                if !value.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite training loss {value} at epoch {epoch}, step {} (lr {})",
                        self.global_step,
                        self.schedule.lr_at(self.global_step)
                    )));
                }
                loss_sum += value;
                let scaled = g.mul_scalar(loss, scale)?;
                g.backward(scaled)?;
                g.accumulate_param_grads(&mut model.params);
            }
            last_lr = self.schedule.lr_at(self.global_step);
            self.optimizer.step(&mut model.params, last_lr)?;
            self.global_step += 1;
        }
        Ok(EpochTrain {
            mean_loss: loss_sum / (steps * cfg.accumulation_steps) as f64,
            steps,
            last_lr,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub mean_loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<Prediction>,
    pub labels: Vec<Label>,
}

/// Loss, accuracy and predictions on `data` without dropout.
pub fn evaluate(model: &SfrModel, data: &dyn ClipSource, loss: &LossKind, batch: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty set".into()));
    }
    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch.max(1)) {
        let (x, y) = stack_batch(data, chunk)?;
        let mut g = Graph::new();
        let input = g.input(x);
        let logits = model.forward(&mut g, input)?;
        let l = loss.from_logits(&mut g, logits, &y)?;
        loss_sum += g.scalar_f64(l).unwrap_or(f64::NAN) * chunk.len() as f64;
        let probs = g.softmax(logits)?;
        predictions.extend(predictions_from_probs(g.value(probs).data()));
        labels.extend(y);
    }
    let correct = predictions.iter().zip(&labels).filter(|(p, l)| p.label == **l).count();
    Ok(Evaluation {
        mean_loss: loss_sum / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
        predictions,
        labels,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
    TargetReached,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lr_last: f32,
    pub swa_included: bool,
    pub stopped: Option<StopReason>,
}

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.3e},{},{}",
            self.epoch,
            self.train_loss,
            self.val_loss,
            self.val_acc,
            self.lr_last,
            u8::from(self.swa_included),
            u8::from(self.stopped.is_some())
        )
    }
}

#[derive(Clone, Debug)]
pub struct FitSummary {
    pub log: Vec<EpochLog>,
    pub stop_reason: StopReason,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub swa_snapshots: usize,
    /// Validation accuracy of the averaged weights.
    pub swa_val_acc: f64,
    pub best_checkpoint: PathBuf,
    pub swa_checkpoint: PathBuf,
    pub log_path: PathBuf,
}

/// Trains `model` in place, writing the epoch log and both checkpoints to `out_dir`.
pub fn fit(
    model: &mut SfrModel,
    train: &dyn ClipSource,
    val: &dyn ClipSource,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<FitSummary> {
    fit_observed(model, train, val, cfg, out_dir, &mut |_| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_observed(
    model: &mut SfrModel,
    train: &dyn ClipSource,
    val: &dyn ClipSource,
    cfg: &TrainConfig,
    out_dir: &Path,
    observer: &mut dyn FnMut(&EpochLog),
) -> Result<FitSummary> {
    let mut trainer = Trainer::new(model, cfg, train.len())?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join(LOG_FILE);
    let best_path = out_dir.join(BEST_CHECKPOINT);
    let swa_path = out_dir.join(SWA_CHECKPOINT);
    let mut log_file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(log_file, "{LOG_HEADER}").map_err(|e| Error::io(&log_path, e))?;

    let mut swa = SwaState::new(cfg.swa_start_epoch);
    let mut early = EarlyStopState::new(cfg.patience);
    let mut log = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    for epoch in 1..=cfg.max_epochs {
        let mut rng = epoch_rng(cfg.seed, epoch);
        let train_stats = trainer.train_epoch(model, train, cfg, epoch, &mut rng)?;
        let eval = evaluate(model, val, &cfg.loss, cfg.eval_batch)?;
        let swa_included = swa.update(&model.params, epoch)?;
        let outcome = early.check(eval.mean_loss, eval.accuracy, epoch);
        if outcome.save_checkpoint {
            let meta = CheckpointMeta {
                epoch: epoch as u32,
                val_accuracy: eval.accuracy as f32,
            };
            checkpoint::save(model, meta, &best_path)?;
        }
        let stopped = if outcome.decision == StopDecision::Stop {
            Some(StopReason::EarlyStop)
        } else if cfg.target_val_acc.is_some_and(|t| eval.accuracy >= t) {
            Some(StopReason::TargetReached)
        } else {
            None
        };
        let entry = EpochLog {
            epoch,
            train_loss: train_stats.mean_loss,
            val_loss: eval.mean_loss,
            val_acc: eval.accuracy,
            lr_last: train_stats.last_lr,
            swa_included,
            stopped,
        };
        writeln!(log_file, "{}", entry.csv_row()).map_err(|e| Error::io(&log_path, e))?;
        log_file.flush().map_err(|e| Error::io(&log_path, e))?;
        observer(&entry);
        log.push(entry);
        if let Some(reason) = stopped {
            stop_reason = reason;
            break;
        }
    }

    // Without any snapshot the averaged checkpoint falls back to the final weights.
    let mut averaged = model.clone();
    swa.write_average(&mut averaged.params)?;
    let swa_eval = evaluate(&averaged, val, &cfg.loss, cfg.eval_batch)?;
    let last_epoch = log.last().map_or(0, |e| e.epoch);
    checkpoint::save(
        &averaged,
        CheckpointMeta {
            epoch: last_epoch as u32,
            val_accuracy: swa_eval.accuracy as f32,
        },
        &swa_path,
    )?;
    Ok(FitSummary {
        log,
        stop_reason,
        best_epoch: early.best_epoch.unwrap_or(0),
        best_val_acc: early.best_val_acc.unwrap_or(0.0),
        swa_snapshots: swa.count(),
        swa_val_acc: swa_eval.accuracy,
        best_checkpoint: best_path,
        swa_checkpoint: swa_path,
        log_path,
    })
}
