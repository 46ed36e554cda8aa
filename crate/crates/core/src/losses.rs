//! Focal loss and cross-entropy on predicted class probabilities.
//!
//! Both reduce the batch by the mean so that a loss divided by the number of
//! accumulation steps reproduces the gradient of one large batch.

use std::fmt;
use std::str::FromStr;

use crate::config::{KvMap, KvReader};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::label::Label;

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before the logarithm.
pub const PROB_CLAMP: f32 = 1e-7;
/// Allowed deviation of a probability row sum from 1.
pub const ROW_SUM_TOLERANCE: f32 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FocalParams {
    pub gamma: f32,
    /// Weights for `[T, NT]`.
    pub class_weights: [f32; 2],
}

impl Default for FocalParams {
    /// `γ = 2`, weights `(1.25, 0.833)` — inverse class frequencies for a 35/65 split
    /// scaled so that their mean is about one.
    fn default() -> Self {
        Self {
            gamma: 2.0,
            class_weights: [1.25, 0.833],
        }
    }
}

impl FocalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::Config(format!("focal gamma {} must be ≥ 0", self.gamma)));
        }
        if self.class_weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::Config(format!(
                "class weights {:?} must be positive",
                self.class_weights
            )));
        }
        Ok(())
    }
}

fn check_rows(g: &Graph, probs: Var, labels: &[Label]) -> Result<()> {
    let shape = g.shape(probs);
    if shape.len() != 2 || shape[1] != 2 || shape[0] != labels.len() {
        return Err(Error::Contract(format!(
            "probabilities {shape:?} for {} labels; expected [B, 2]",
            labels.len()
        )));
    }
    for (b, row) in g.value(probs).data().chunks_exact(2).enumerate() {
        let s = row[0] + row[1];
        if !((s - 1.0).abs() <= ROW_SUM_TOLERANCE) {
            return Err(Error::Contract(format!(
                "probability row {b} sums to {s}, not 1 ± {ROW_SUM_TOLERANCE}"
            )));
        }
    }
    Ok(())
}

/// Clamped probability of each sample's true class, `[B]`.
fn true_class_probs(g: &mut Graph, probs: Var, labels: &[Label]) -> Result<Var> {
    let cols: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    let p = g.select_columns(probs, &cols)?;
    g.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn mean_weights(labels: &[Label], class_weights: [f32; 2]) -> Vec<f32> {
    let n = labels.len() as f32;
    labels.iter().map(|l| class_weights[l.index()] / n).collect()
}

/// `mean_b α_{c*}·(1 − p̂_{c*})^γ·(−log p̂_{c*})` over the batch, `c*` the true class.
pub fn focal_loss(g: &mut Graph, probs: Var, labels: &[Label], params: &FocalParams) -> Result<Var> {
    params.validate()?;
    check_rows(g, probs, labels)?;
    let p = true_class_probs(g, probs, labels)?;
    let nll = g.log(p)?;
    let nll = g.neg(nll)?;
    let q = g.neg(p)?;
    let q = g.add_scalar(q, 1.0)?;
    let modulator = g.pow_scalar(q, params.gamma)?;
    let per_sample = g.mul(modulator, nll)?;
    g.weighted_sum(per_sample, &mean_weights(labels, params.class_weights))
}

/// `mean_b w_{c*}·(−log p̂_{c*})`; unweighted when `class_weights` is `None`.
pub fn cross_entropy(
    g: &mut Graph,
    probs: Var,
    labels: &[Label],
    class_weights: Option<[f32; 2]>,
) -> Result<Var> {
    check_rows(g, probs, labels)?;
    let p = true_class_probs(g, probs, labels)?;
    let nll = g.log(p)?;
    let nll = g.neg(nll)?;
    g.weighted_sum(nll, &mean_weights(labels, class_weights.unwrap_or([1.0, 1.0])))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossKind {
    Focal(FocalParams),
    CrossEntropy { class_weights: Option<[f32; 2]> },
}

impl Default for LossKind {
    fn default() -> Self {
        LossKind::Focal(FocalParams::default())
    }
}

impl LossKind {
    /// Softmax of `logits` followed by the loss.
    pub fn from_logits(&self, g: &mut Graph, logits: Var, labels: &[Label]) -> Result<Var> {
        let probs = g.softmax(logits)?;
        match self {
            LossKind::Focal(p) => focal_loss(g, probs, labels, p),
            LossKind::CrossEntropy { class_weights } => {
                cross_entropy(g, probs, labels, *class_weights)
            }
        }
    }

    pub fn write_kv(&self, map: &mut KvMap) {
        match self {
            LossKind::Focal(p) => {
                map.set("loss.kind", LossName::Focal);
                map.set("loss.gamma", p.gamma);
                map.set("loss.weight_t", p.class_weights[0]);
                map.set("loss.weight_nt", p.class_weights[1]);
            }
            LossKind::CrossEntropy { class_weights } => {
                map.set("loss.kind", LossName::CrossEntropy);
                let w = class_weights.unwrap_or([1.0, 1.0]);
                map.set("loss.weight_t", w[0]);
                map.set("loss.weight_nt", w[1]);
            }
        }
    }

    pub fn read_kv(r: &mut KvReader<'_>) -> Result<Self> {
        let d = FocalParams::default();
        let kind = r.or("loss.kind", LossName::Focal)?;
        let weights = [r.or("loss.weight_t", d.class_weights[0])?, r.or("loss.weight_nt", d.class_weights[1])?];
        let gamma = r.or("loss.gamma", d.gamma)?;
        let loss = match kind {
            LossName::Focal => LossKind::Focal(FocalParams {
                gamma,
                class_weights: weights,
            }),
            LossName::CrossEntropy => LossKind::CrossEntropy {
                class_weights: Some(weights),
            },
        };
        if let LossKind::Focal(p) = &loss {
            p.validate()?;
        }
        Ok(loss)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum LossName {
    Focal,
    CrossEntropy,
}

impl fmt::Display for LossName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossName::Focal => "focal",
            LossName::CrossEntropy => "cross-entropy",
        })
    }
}

impl FromStr for LossName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "focal" => Ok(LossName::Focal),
            "cross-entropy" | "ce" => Ok(LossName::CrossEntropy),
            other => Err(Error::Config(format!("unknown loss {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn eval(probs: &[f32], labels: &[Label], f: impl Fn(&mut Graph, Var) -> Result<Var>) -> Result<f64> {
        let mut g = Graph::new();
        let p = g.input(Tensor::new(&[labels.len(), 2], probs.to_vec())?);
        let l = f(&mut g, p)?;
        Ok(g.scalar_f64(l).unwrap())
    }

    #[test]
    fn focal_hand_value() {
        let v = eval(&[0.5, 0.5], &[Label::T], |g, p| {
            focal_loss(g, p, &[Label::T], &FocalParams::default())
        })
        .unwrap();
        assert!((v - 1.25 * 0.25 * std::f64::consts::LN_2).abs() < 1e-6, "{v}");
    }

    #[test]
    fn confident_correct_is_near_zero() {
        let v = eval(&[1.0, 0.0], &[Label::T], |g, p| {
            focal_loss(g, p, &[Label::T], &FocalParams::default())
        })
        .unwrap();
        assert!(v < 1e-5);
    }

    #[test]
    fn cross_entropy_hand_values() {
        let ln2 = std::f64::consts::LN_2;
        let v = eval(&[0.5, 0.5], &[Label::NT], |g, p| cross_entropy(g, p, &[Label::NT], None)).unwrap();
        assert!((v - ln2).abs() < 1e-6);
        let v = eval(&[0.5, 0.5], &[Label::T], |g, p| {
            cross_entropy(g, p, &[Label::T], Some([1.25, 0.833]))
        })
        .unwrap();
        assert!((v - 1.25 * ln2).abs() < 1e-6);
        let v = eval(&[0.0, 1.0], &[Label::NT], |g, p| cross_entropy(g, p, &[Label::NT], None)).unwrap();
        assert!(v < 1e-6);
    }

    #[test]
    fn rows_must_sum_to_one() {
        let err = eval(&[0.5, 0.6], &[Label::T], |g, p| cross_entropy(g, p, &[Label::T], None)).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn kv_round_trip() {
        for loss in [
            LossKind::default(),
            LossKind::CrossEntropy {
                class_weights: Some([1.0, 2.0]),
            },
        ] {
            let mut map = KvMap::new();
            loss.write_kv(&mut map);
            let mut r = map.reader();
            assert_eq!(LossKind::read_kv(&mut r).unwrap(), loss);
            r.finish().unwrap();
        }
    }
}
