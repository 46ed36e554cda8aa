//! Central finite-difference verification of analytic gradients.
//!
//! Tensor-valued functions are reduced to a scalar with fixed pseudo-random
//! weights of magnitude in [0.5, 1] and random sign, `L = Σⱼ wⱼ·outⱼ`, accumulated in f64. The numeric derivative uses
//! the f32 outputs directly, `Σⱼ wⱼ·(out⁺ⱼ − out⁻ⱼ) / (x⁺ − x⁻)`, where `x±` are the
//! perturbed inputs as actually representable in f32. Scalar-valued functions
//! use `w = [1]` and, when their last operation is a reduction, its unrounded f64
//! accumulator.
//!
//! A central difference is only an oracle where the function is smooth across the
//! step. Perturbations that change a ReLU sign, a clamp region or a max-pool winner
//! (see [`Graph::branch_fingerprint`]) are skipped and counted instead of compared.

mod suites;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use suites::{run_suite, Scope, SuiteEntry};

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub step: f32,
    pub tolerance: f64,
    /// Each element's error is `|a − n| / max(|a|, |n|, floor)` with
    /// `floor = max(floor_fraction · ‖grad‖∞, abs_floor)`, the norm taken over the
    /// whole analytic gradient (not only the sampled elements). The default `1.0` makes this
    /// the normwise (infinity-norm) relative error; smaller values approach the
    /// componentwise error, which f32 round-off defeats for near-cancelling gradients
    /// at a 1e-3 step. Differences below `abs_floor` are treated as rounding noise.
    pub floor_fraction: f64,
    pub abs_floor: f64,
    /// Lower bound for `‖grad‖∞`. A function of several arguments (input and
    /// parameters) is checked one argument at a time; setting this to the norm of
    /// its whole gradient makes the error normwise over all arguments together.
    pub grad_norm_floor: f64,
    /// Seed of the projection weights.
    pub seed: u64,
    /// Skip elements whose perturbation crosses a kink of a piecewise operation.
    pub skip_kinks: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            tolerance: 1e-3,
            floor_fraction: 1.0,
            abs_floor: 1e-4,
            grad_norm_floor: 0.0,
            seed: 0,
            skip_kinks: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Elements compared.
    pub checked: usize,
    /// Elements not compared because the step crossed a kink.
    pub skipped: usize,
    pub max_rel_error: f64,
    /// Indices (into the checked elements) whose error exceeded the tolerance.
    pub failures: Vec<usize>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub(crate) fn merge(&mut self, other: GradCheckReport) {
        let offset = self.checked;
        self.failures
            .extend(other.failures.iter().map(|i| i + offset));
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
    }
}

/// Weights reducing an `n`-element output to the checked scalar.
pub(crate) fn projection(n: usize, seed: u64) -> Vec<f32> {
    if n == 1 {
        return vec![1.0];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..n)
        .map(|_| {
            let m = rng.random_range(0.5f32..=1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect()
}

/// Projected output and branch fingerprint of one evaluation.
struct Evaluated {
    value: f64,
    branches: u64,
}

fn evaluated(g: &Graph, out: Var, w: &[f32]) -> Evaluated {
    let value = match g.scalar_f64(out) {
        Some(s) => s * w[0] as f64,
        None => g
            .value(out)
            .data()
            .iter()
            .zip(w)
            .map(|(&o, &w)| o as f64 * w as f64)
            .sum(),
    };
    Evaluated {
        value,
        branches: g.branch_fingerprint(),
    }
}

/// Compares analytic and numeric derivatives element-wise; `None` marks a skip.
/// `grad_norm` is the infinity norm of the full analytic gradient.
fn compare(
    analytic: &[f64],
    numeric: &[Option<f64>],
    grad_norm: f64,
    opts: &GradCheckOptions,
) -> GradCheckReport {
    let pairs: Vec<(f64, f64)> = analytic
        .iter()
        .zip(numeric)
        .filter_map(|(&a, n)| n.map(|n| (a, n)))
        .collect();
    let scale = pairs
        .iter()
        .fold(grad_norm.max(opts.grad_norm_floor), |m, (a, n)| m.max(a.abs()).max(n.abs()));
    let floor = (scale * opts.floor_fraction).max(opts.abs_floor);
    let mut report = GradCheckReport {
        checked: pairs.len(),
        skipped: analytic.len() - pairs.len(),
        max_rel_error: 0.0,
        failures: Vec::new(),
        tolerance: opts.tolerance,
    };
    for (i, &(a, n)) in pairs.iter().enumerate() {
        let err = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        report.max_rel_error = report.max_rel_error.max(err);
        if !(err < opts.tolerance) {
            report.failures.push(i);
        }
    }
    report
}

/// Checks `d f(x) / dx` for every element of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let indices: Vec<usize> = (0..x.numel()).collect();
    grad_check_at(f, x, &indices, opts)
}

/// Like [`grad_check`] but only perturbs the listed flat indices.
pub fn grad_check_at<F>(
    f: F,
    x: &Tensor,
    indices: &[usize],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), true);
    let out = f(&mut g, xv)?;
    let w = projection(g.value(out).numel(), opts.seed);
    let loss = g.weighted_sum(out, &w)?;
    g.backward(loss)?;
    let zeros = vec![0.0; x.numel()];
    let grad = g.grad(xv).unwrap_or(&zeros);
    let analytic: Vec<f64> = indices.iter().map(|&i| grad[i] as f64).collect();
    let grad_norm = inf_norm(grad);
    let base = g.branch_fingerprint();

    let mut numeric = Vec::with_capacity(indices.len());
    for &i in indices {
        numeric.push(central_difference(x.data()[i], base, opts, |v| {
            let mut t = x.clone();
            t.data_mut()[i] = v;
            let mut g = Graph::new();
            let input = g.input(t);
            let out = f(&mut g, input)?;
            Ok(evaluated(&g, out, &w))
        })?);
    }
    Ok(compare(&analytic, &numeric, grad_norm, opts))
}

pub(crate) fn inf_norm(v: &[f32]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs() as f64))
}

/// Checks parameter gradients of `f` for up to `per_param` sampled elements of each
/// listed parameter, as one gradient vector (one norm for the relative error).
/// Parameters are restored before returning.
pub fn grad_check_params<F>(
    f: F,
    store: &mut ParamStore,
    params: &[ParamId],
    per_param: usize,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let w = projection(g.value(out).numel(), opts.seed);
    let loss = g.weighted_sum(out, &w)?;
    g.backward(loss)?;
    let base = g.branch_fingerprint();
    let saved: Vec<Vec<f32>> = params.iter().map(|&p| store.get(p).grad().to_vec()).collect();
    for &p in params {
        store.get_mut(p).grad_mut().fill(0.0);
    }
    g.accumulate_param_grads(store);
    drop(g);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    let grad_norm = params
        .iter()
        .fold(0.0f64, |m, &p| m.max(inf_norm(store.get(p).grad())));
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (&p, old_grad) in params.iter().zip(saved) {
        let n = store.get(p).value().numel();
        let picks: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            (0..per_param).map(|_| rng.random_range(0..n)).collect()
        };
        analytic.extend(picks.iter().map(|&i| store.get(p).grad()[i] as f64));
        for &i in &picks {
            let orig = store.get(p).value().data()[i];
            let d = central_difference(orig, base, opts, |v| {
                store.get_mut(p).value_mut().data_mut()[i] = v;
                let mut g = Graph::new();
                let out = f(&mut g, store)?;
                Ok(evaluated(&g, out, &w))
            });
            store.get_mut(p).value_mut().data_mut()[i] = orig;
            numeric.push(d?);
        }
        store.get_mut(p).grad_mut().copy_from_slice(&old_grad);
    }
    Ok(compare(&analytic, &numeric, grad_norm, opts))
}

/// Central difference around `x0`, dividing by the perturbation as actually
/// represented in f32; `None` when either side leaves the branch `base`.
fn central_difference(
    x0: f32,
    base: u64,
    opts: &GradCheckOptions,
    mut eval: impl FnMut(f32) -> Result<Evaluated>,
) -> Result<Option<f64>> {
    let (xp, xm) = (x0 + opts.step, x0 - opts.step);
    let (plus, minus) = (eval(xp)?, eval(xm)?);
    if opts.skip_kinks && (plus.branches != base || minus.branches != base) {
        return Ok(None);
    }
    Ok(Some((plus.value - minus.value) / (xp as f64 - xm as f64)))
}

/// Random tensor with entries uniform in `[-scale, scale]`, for checks and tests.
pub fn random_tensor(shape: &[usize], scale: f32, rng: &mut impl Rng) -> Result<Tensor> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact_to_1e4() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&[4, 5], 2.0, &mut rng).unwrap();
        let report = grad_check(
            |g, x| {
                let sq = g.mul(x, x)?;
                g.sum(sq)
            },
            &x,
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        assert_eq!(report.checked, 20);
    }

    #[test]
    fn mismatch_is_detected_when_kinks_are_compared() {
        // relu at exactly zero: analytic slope 0, central difference 0.5
        let x = Tensor::from_slice(&[0.0, 1.0]).unwrap();
        let opts = GradCheckOptions {
            skip_kinks: false,
            ..GradCheckOptions::default()
        };
        let report = grad_check(|g, x| g.relu(x), &x, &opts).unwrap();
        assert!(!report.passed());
        assert_eq!(report.failures, vec![0]);
    }

    #[test]
    fn kink_crossings_are_skipped_and_counted() {
        let x = Tensor::from_slice(&[0.0, 1.0, -2.0]).unwrap();
        let report = grad_check(|g, x| g.relu(x), &x, &GradCheckOptions::default()).unwrap();
        assert!(report.passed());
        assert_eq!((report.checked, report.skipped), (2, 1));
    }
}
