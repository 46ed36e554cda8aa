//! Stochastic weight averaging and early stopping bookkeeping.

use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Running arithmetic mean of parameter snapshots, accumulated in f64.
///
/// Group normalization has no batch statistics, so the averaged weights need no
/// re-estimation pass before use.
#[derive(Clone, Debug)]
pub struct SwaState {
    pub start_epoch: usize,
    sums: Vec<Vec<f64>>,
    count: usize,
}

impl SwaState {
    pub fn new(start_epoch: usize) -> Self {
        Self {
            start_epoch,
            sums: Vec::new(),
            count: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Adds a snapshot when `epoch ≥ start_epoch`; returns whether it was included.
    pub fn update(&mut self, params: &ParamStore, epoch: usize) -> Result<bool> {
        if epoch < self.start_epoch {
            return Ok(false);
        }
        if self.sums.is_empty() {
            self.sums = params.iter().map(|p| vec![0.0; p.value().numel()]).collect();
        }
        if self.sums.len() != params.len() {
            return Err(Error::Contract("snapshot has a different parameter set".into()));
        }
        for (sum, p) in self.sums.iter_mut().zip(params.iter()) {
            for (s, &v) in sum.iter_mut().zip(p.value().data()) {
                *s += v as f64;
            }
        }
        self.count += 1;
        Ok(true)
    }

    /// Writes the averaged weights into `params`; `false` when nothing was averaged.
    pub fn write_average(&self, params: &mut ParamStore) -> Result<bool> {
        if self.count == 0 {
            return Ok(false);
        }
        if self.sums.len() != params.len() {
            return Err(Error::Contract("average has a different parameter set".into()));
        }
        let n = self.count as f64;
        for (sum, p) in self.sums.iter().zip(params.iter_mut()) {
            for (dst, &s) in p.value_mut().data_mut().iter_mut().zip(sum) {
                *dst = (s / n) as f32;
            }
        }
        Ok(true)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

#[derive(Clone, Debug)]
pub struct EarlyStopState {
    pub patience: usize,
    previous_loss: Option<f64>,
    increases: usize,
    pub best_val_acc: Option<f64>,
    pub best_epoch: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpochOutcome {
    pub decision: StopDecision,
    /// The epoch set a new best validation accuracy and should be checkpointed.
    pub save_checkpoint: bool,
}

impl EarlyStopState {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            previous_loss: None,
            increases: 0,
            best_val_acc: None,
            best_epoch: None,
        }
    }

    pub fn consecutive_increases(&self) -> usize {
        self.increases
    }

    /// Stops after `patience` consecutive epochs whose validation loss exceeded the
    /// previous epoch's; independently flags strictly better validation accuracy.
    pub fn check(&mut self, val_loss: f64, val_acc: f64, epoch: usize) -> EpochOutcome {
        match self.previous_loss {
            Some(prev) if val_loss > prev => self.increases += 1,
            _ => self.increases = 0,
        }
        self.previous_loss = Some(val_loss);
        let save_checkpoint = self.best_val_acc.is_none_or(|best| val_acc > best);
        if save_checkpoint {
            self.best_val_acc = Some(val_acc);
            self.best_epoch = Some(epoch);
        }
        let decision = if self.patience > 0 && self.increases >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        };
        EpochOutcome {
            decision,
            save_checkpoint,
        }
    }
}
