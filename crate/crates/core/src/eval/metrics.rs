//! Confusion counts, per-run metrics and mean ± std aggregation.

use std::fmt;

use crate::error::{Error, Result};
use crate::label::Label;

/// Counts with T as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp_t: usize,
    pub fp_t: usize,
    pub fn_t: usize,
    pub tn_t: usize,
}

impl ConfusionCounts {
    pub fn from_labels(predicted: &[Label], actual: &[Label]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::Contract(format!(
                "{} predictions for {} labels",
                predicted.len(),
                actual.len()
            )));
        }
        let mut c = Self::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (Label::T, Label::T) => c.tp_t += 1,
                (Label::T, Label::NT) => c.fp_t += 1,
                (Label::NT, Label::T) => c.fn_t += 1,
                (Label::NT, Label::NT) => c.tn_t += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp_t + self.fp_t + self.fn_t + self.tn_t
    }

    /// The same counts with NT as the positive class.
    pub fn swapped(&self) -> Self {
        Self {
            tp_t: self.tn_t,
            fp_t: self.fn_t,
            fn_t: self.fp_t,
            tn_t: self.tp_t,
        }
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Metrics of one evaluation. `None` marks an undefined ratio (zero denominator).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunMetrics {
    pub acc: f64,
    pub p_t: Option<f64>,
    pub r_t: Option<f64>,
    pub p_nt: Option<f64>,
    pub r_nt: Option<f64>,
    /// Mean seconds per single-video prediction, when measured.
    pub seconds_per_video: Option<f64>,
}

impl RunMetrics {
    pub fn from_counts(c: &ConfusionCounts) -> Result<Self> {
        let n = c.total();
        if n == 0 {
            return Err(Error::Contract("metrics need at least one sample".into()));
        }
        Ok(Self {
            acc: (c.tp_t + c.tn_t) as f64 / n as f64,
            p_t: ratio(c.tp_t, c.tp_t + c.fp_t),
            r_t: ratio(c.tp_t, c.tp_t + c.fn_t),
            p_nt: ratio(c.tn_t, c.tn_t + c.fn_t),
            r_nt: ratio(c.tn_t, c.tn_t + c.fp_t),
            seconds_per_video: None,
        })
    }

    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Acc => Some(self.acc),
            Metric::PT => self.p_t,
            Metric::RT => self.r_t,
            Metric::PNt => self.p_nt,
            Metric::RNt => self.r_nt,
            Metric::Seconds => self.seconds_per_video,
        }
    }
}

pub fn compute_metrics(predicted: &[Label], actual: &[Label]) -> Result<RunMetrics> {
    RunMetrics::from_counts(&ConfusionCounts::from_labels(predicted, actual)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Metric {
    Acc,
    PT,
    RT,
    PNt,
    RNt,
    Seconds,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Acc,
        Metric::PT,
        Metric::RT,
        Metric::PNt,
        Metric::RNt,
        Metric::Seconds,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Metric::Acc => "acc",
            Metric::PT => "p_t",
            Metric::RT => "r_t",
            Metric::PNt => "p_nt",
            Metric::RNt => "r_nt",
            Metric::Seconds => "seconds_per_video",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Mean and sample standard deviation of the defined values of one metric.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    /// `None` when no run had the metric defined.
    pub mean: Option<f64>,
    /// `None` with fewer than two defined values.
    pub std: Option<f64>,
    pub defined: usize,
    pub undefined: usize,
}

pub fn summarize(values: &[Option<f64>]) -> Summary {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    let n = defined.len();
    let mean = (n > 0).then(|| defined.iter().sum::<f64>() / n as f64);
    let std = mean.filter(|_| n >= 2).map(|m| {
        let ss: f64 = defined.iter().map(|v| (v - m).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    Summary {
        mean,
        std,
        defined: n,
        undefined: values.len() - n,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateMetrics {
    pub runs: usize,
    pub summaries: Vec<(Metric, Summary)>,
}

impl AggregateMetrics {
    pub fn get(&self, m: Metric) -> Summary {
        self.summaries
            .iter()
            .find(|(k, _)| *k == m)
            .map(|(_, s)| *s)
            .expect("every metric is summarized")
    }
}

/// Per-metric mean ± std over runs; undefined entries are excluded and counted.
pub fn aggregate(runs: &[RunMetrics]) -> Result<AggregateMetrics> {
    if runs.is_empty() {
        return Err(Error::Contract("cannot aggregate zero runs".into()));
    }
    let summaries = Metric::ALL
        .iter()
        .map(|&m| (m, summarize(&runs.iter().map(|r| r.get(m)).collect::<Vec<_>>())))
        .collect();
    Ok(AggregateMetrics {
        runs: runs.len(),
        summaries,
    })
}
