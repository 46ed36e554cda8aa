//! Ready-made gradient-check suites over the primitives, the layers and the full
//! model, each repeated over a range of seeds.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    grad_check, grad_check_at, grad_check_params, inf_norm, projection, random_tensor, GradCheckOptions,
    GradCheckReport,
};
use crate::error::{Error, Result};
use crate::graph::{Conv3dOptions, ElementwiseOp, Graph, Operand, PoolWindow, Var};
use crate::label::Label;
use crate::layers::{BlockKind, BlockShape, Conv3d, GroupNorm, ResidualBlock};
use crate::losses::{cross_entropy, focal_loss, FocalParams};
use crate::model::{SfrConfig, SfrModel};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Ops,
    Layers,
    Model,
}

impl Scope {
    pub const ALL: [Scope; 3] = [Scope::Ops, Scope::Layers, Scope::Model];
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Ops => "ops",
            Scope::Layers => "layers",
            Scope::Model => "model",
        })
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ops" => Ok(Scope::Ops),
            "layers" => Ok(Scope::Layers),
            "model" => Ok(Scope::Model),
            other => Err(Error::Config(format!(
                "unknown gradcheck scope {other:?} (expected ops, layers or model)"
            ))),
        }
    }
}

/// Result of one check repeated over several seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub seeds: usize,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    pub failures: usize,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

type Case = fn(u64, &GradCheckOptions) -> Result<GradCheckReport>;

fn cases(scope: Scope) -> Vec<(&'static str, Case)> {
    match scope {
        Scope::Ops => vec![
            ("add", |s, o| binary(ElementwiseOp::Add, s, o)),
            ("sub", |s, o| binary(ElementwiseOp::Sub, s, o)),
            ("mul", |s, o| binary(ElementwiseOp::Mul, s, o)),
            ("div", |s, o| binary(ElementwiseOp::Div, s, o)),
            ("pow", |s, o| unary(ElementwiseOp::Pow, s, o)),
            ("log", |s, o| unary(ElementwiseOp::Log, s, o)),
            ("exp", |s, o| unary(ElementwiseOp::Exp, s, o)),
            ("relu", |s, o| unary(ElementwiseOp::Relu, s, o)),
            ("negate", |s, o| unary(ElementwiseOp::Negate, s, o)),
            ("sum/mean", reductions),
            ("linear", linear),
            ("conv3d", conv3d),
            ("max_pool3d", max_pool),
            ("global_avg_pool3d", avg_pool),
            ("group_norm", group_norm_op),
            ("softmax", softmax),
            ("concat", concat),
            ("temporal_subsample", subsample),
            ("select_columns", select_columns),
            ("narrow", narrow),
        ],
        Scope::Layers => vec![
            ("conv3d layer", conv_layer),
            ("group_norm layer", group_norm_layer),
            ("residual block (basic, projected)", |s, o| residual(BlockKind::Basic, s, o)),
            ("residual block (bottleneck)", |s, o| residual(BlockKind::Bottleneck, s, o)),
            ("residual block (lateral channels)", lateral_residual),
            ("focal loss", focal),
            ("cross-entropy", ce),
        ],
        Scope::Model => vec![("tiny SFR (inputs and parameters)", tiny_model)],
    }
}

/// Runs every check of `scope` once per seed in `seeds`.
pub fn run_suite(scope: Scope, seeds: Range<u64>, base: &GradCheckOptions) -> Result<Vec<SuiteEntry>> {
    let mut out = Vec::new();
    for (name, case) in cases(scope) {
        let mut entry = SuiteEntry {
            name,
            seeds: 0,
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
            failures: 0,
        };
        for seed in seeds.clone() {
            let opts = GradCheckOptions {
                seed,
                ..base.clone()
            };
            let r = case(seed, &opts)?;
            entry.seeds += 1;
            entry.checked += r.checked;
            entry.skipped += r.skipped;
            entry.max_rel_error = entry.max_rel_error.max(r.max_rel_error);
            entry.failures += r.failures.len();
        }
        out.push(entry);
    }
    Ok(out)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entries of magnitude in [0.1, 2] with random sign, away from kinks and poles.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1f32..2.0);
            if rng.random() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data)
}

fn small_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    vec![rng.random_range(1..=6), rng.random_range(1..=6)]
}

fn merge(parts: Vec<GradCheckReport>) -> GradCheckReport {
    let mut it = parts.into_iter();
    let mut acc = it.next().expect("at least one report");
    for r in it {
        acc.merge(r);
    }
    acc
}

/// Options whose norm floor is `‖∂L/∂(x, params)‖∞` of `f`, so that the input and
/// parameter checks of one function share a single normwise error.
fn joint_norm_options<F>(f: &F, store: &ParamStore, x: &Tensor, o: &GradCheckOptions) -> Result<GradCheckOptions>
where
    F: Fn(&mut Graph, &ParamStore, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), true);
    let out = f(&mut g, store, xv)?;
    let w = projection(g.value(out).numel(), o.seed);
    let loss = g.weighted_sum(out, &w)?;
    g.backward(loss)?;
    let mut grads = store.clone();
    grads.zero_grads();
    g.accumulate_param_grads(&mut grads);
    let params = grads.iter().fold(0.0f64, |m, p| m.max(inf_norm(p.grad())));
    Ok(GradCheckOptions {
        grad_norm_floor: o.grad_norm_floor.max(params).max(g.grad(xv).map_or(0.0, inf_norm)),
        ..o.clone()
    })
}

fn binary(op: ElementwiseOp, seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let shape = small_shape(&mut r);
    let a = away_from_zero(&shape, &mut r)?;
    let b = away_from_zero(&shape, &mut r)?;
    let (b1, a1) = (b.clone(), a.clone());
    let lhs = grad_check(
        move |g: &mut Graph, x| {
            let y = g.input(b1.clone());
            g.elementwise(op, x, Operand::Var(y))
        },
        &a,
        o,
    )?;
    let rhs = grad_check(
        move |g: &mut Graph, y| {
            let x = g.input(a1.clone());
            g.elementwise(op, x, Operand::Var(y))
        },
        &b,
        o,
    )?;
    // Broadcast a scalar over positive entries and sum, so the derivative (n, −n or
    // a multiple of Σa) cannot cancel down to round-off.
    let s = away_from_zero(&[1], &mut r)?.reshape(&[])?;
    let positive = Tensor::new(a.shape(), a.data().iter().map(|v| v.abs()).collect())?;
    let scalar = grad_check(
        move |g: &mut Graph, s| {
            let x = g.input(positive.clone());
            let y = g.elementwise(op, x, Operand::Var(s))?;
            g.sum(y)
        },
        &s,
        o,
    )?;
    Ok(merge(vec![lhs, rhs, scalar]))
}

fn unary(op: ElementwiseOp, seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let shape = small_shape(&mut r);
    let mut x = away_from_zero(&shape, &mut r)?;
    let rhs = match op {
        ElementwiseOp::Pow => Operand::Scalar(r.random_range(0.5f32..3.0)),
        _ => Operand::None,
    };
    if matches!(op, ElementwiseOp::Pow | ElementwiseOp::Log) {
        x.data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.2);
    }
    grad_check(move |g: &mut Graph, x| g.elementwise(op, x, rhs), &x, o)
}

fn reductions(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let x = away_from_zero(&small_shape(&mut r), &mut r)?;
    let sum = grad_check(
        |g: &mut Graph, x| {
            let sq = g.mul(x, x)?;
            g.sum(sq)
        },
        &x,
        o,
    )?;
    let mean = grad_check(
        |g: &mut Graph, x| {
            let sq = g.mul(x, x)?;
            g.mean(sq)
        },
        &x,
        o,
    )?;
    Ok(merge(vec![sum, mean]))
}

fn linear(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (b, fin, fout) = (r.random_range(1..=6), r.random_range(1..=6), r.random_range(1..=6));
    let x = random_tensor(&[b, fin], 1.0, &mut r)?;
    let w = random_tensor(&[fout, fin], 1.0, &mut r)?;
    let bias = random_tensor(&[fout], 1.0, &mut r)?;
    let inputs = [x, w, bias];
    let mut parts = Vec::new();
    for k in 0..3 {
        let fixed = inputs.clone();
        parts.push(grad_check(
            move |g: &mut Graph, v| {
                let mut vars: Vec<Var> = fixed.iter().map(|t| g.input(t.clone())).collect();
                vars[k] = v;
                g.linear(vars[0], vars[1], Some(vars[2]))
            },
            &inputs[k],
            o,
        )?);
    }
    Ok(merge(parts))
}

fn conv3d(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (cin, cout) = (r.random_range(1..=3), r.random_range(1..=3));
    let size = [r.random_range(3..=5), r.random_range(3..=7), r.random_range(3..=7)];
    let kernel = [r.random_range(1..=3), r.random_range(1..=3), r.random_range(1..=3)];
    let opts3 = Conv3dOptions {
        stride: [r.random_range(1..=2), r.random_range(1..=2), r.random_range(1..=2)],
        padding: [r.random_range(0..=1), r.random_range(0..=1), r.random_range(0..=1)],
    };
    let inputs = [
        random_tensor(&[2, cin, size[0], size[1], size[2]], 0.25, &mut r)?,
        random_tensor(&[cout, cin, kernel[0], kernel[1], kernel[2]], 0.5, &mut r)?,
        random_tensor(&[cout], 0.5, &mut r)?,
    ];
    let mut parts = Vec::new();
    for k in 0..3 {
        let fixed = inputs.clone();
        parts.push(grad_check(
            move |g: &mut Graph, v| {
                let mut vars: Vec<Var> = fixed.iter().map(|t| g.input(t.clone())).collect();
                vars[k] = v;
                g.conv3d(vars[0], vars[1], Some(vars[2]), opts3)
            },
            &inputs[k],
            o,
        )?);
    }
    Ok(merge(parts))
}

fn max_pool(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let shape = [1, 2, r.random_range(1..=3), r.random_range(3..=7), r.random_range(3..=7)];
    let n: usize = shape.iter().product();
    // distinct values spaced far beyond the step keep every argmax stable
    let mut values: Vec<f32> = (0..n).map(|i| (i as f32 - n as f32 / 2.0) * 0.05).collect();
    for i in (1..n).rev() {
        values.swap(i, r.random_range(0..=i));
    }
    let win = PoolWindow {
        window: [1, 3, 3],
        stride: [1, 2, 2],
        padding: [0, 1, 1],
    };
    grad_check(move |g: &mut Graph, x| g.max_pool3d(x, win), &Tensor::new(&shape, values)?, o)
}

fn avg_pool(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let shape = [2, 2, r.random_range(1..=3), r.random_range(1..=5), r.random_range(1..=5)];
    grad_check(|g: &mut Graph, x| g.global_avg_pool3d(x), &random_tensor(&shape, 1.0, &mut r)?, o)
}

fn group_norm_op(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let groups = r.random_range(1..=3);
    let c = groups * r.random_range(1..=2);
    let shape = [2, c, r.random_range(1..=3), r.random_range(2..=4), r.random_range(2..=4)];
    let inputs = [
        random_tensor(&shape, 0.25, &mut r)?,
        random_tensor(&[c], 1.5, &mut r)?,
        random_tensor(&[c], 1.0, &mut r)?,
    ];
    let mut parts = Vec::new();
    for k in 0..3 {
        let fixed = inputs.clone();
        parts.push(grad_check(
            move |g: &mut Graph, v| {
                let mut vars: Vec<Var> = fixed.iter().map(|t| g.input(t.clone())).collect();
                vars[k] = v;
                g.group_norm(vars[0], vars[1], vars[2], groups, 1e-5)
            },
            &inputs[k],
            o,
        )?);
    }
    Ok(merge(parts))
}

fn softmax(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let x = random_tensor(&[r.random_range(1..=4), r.random_range(2..=5)], 1.5, &mut r)?;
    grad_check(|g: &mut Graph, x| g.softmax(x), &x, o)
}

fn concat(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let b = r.random_range(1..=4);
    let x = random_tensor(&[b, 3], 1.0, &mut r)?;
    let other = random_tensor(&[b, 5], 1.0, &mut r)?;
    grad_check(
        move |g: &mut Graph, x| {
            let y = g.input(other.clone());
            g.concat(&[y, x, y], 1)
        },
        &x,
        o,
    )
}

fn narrow(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let shape = [r.random_range(1..=3), r.random_range(2..=6), r.random_range(1..=4)];
    let axis = r.random_range(0..3);
    let len = r.random_range(1..=shape[axis]);
    let start = r.random_range(0..=shape[axis] - len);
    let x = random_tensor(&shape, 1.0, &mut r)?;
    grad_check(move |g: &mut Graph, x| g.narrow(x, axis, start, len), &x, o)
}

fn subsample(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let x = random_tensor(&[1, 2, r.random_range(1..=8), 2, 3], 1.0, &mut r)?;
    let k = r.random_range(1..=4);
    grad_check(move |g: &mut Graph, x| g.temporal_subsample(x, k), &x, o)
}

fn select_columns(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let b = r.random_range(1..=4);
    let x = random_tensor(&[b, 3], 1.0, &mut r)?;
    let cols: Vec<usize> = (0..b).map(|_| r.random_range(0..3)).collect();
    grad_check(move |g: &mut Graph, x| g.select_columns(x, &cols), &x, o)
}

/// Overwrites every listed parameter with uniform values in `[-scale, scale]`.
fn randomize(store: &mut ParamStore, ids: &[ParamId], scale: f32, r: &mut ChaCha8Rng) {
    for &id in ids {
        for v in store.get_mut(id).value_mut().data_mut() {
            *v = r.random_range(-scale..scale);
        }
    }
}

fn all_ids(store: &ParamStore) -> Vec<ParamId> {
    store.names().map(|n| store.id(n).expect("listed name")).collect()
}

/// Input gradient at sampled positions plus parameter gradients of a layer.
fn layer_check<F>(
    f: F,
    store: &mut ParamStore,
    x: &Tensor,
    input_samples: usize,
    per_param: usize,
    seed: u64,
    o: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore, Var) -> Result<Var>,
{
    let o = &joint_norm_options(&f, store, x, o)?;
    let mut r = rng(seed ^ 0x5eed);
    let n = x.numel();
    let picks: Vec<usize> = if n <= input_samples {
        (0..n).collect()
    } else {
        sample(&mut r, n, input_samples).into_vec()
    };
    let input = {
        let store = &*store;
        grad_check_at(|g: &mut Graph, v| f(g, store, v), x, &picks, o)?
    };
    let ids = all_ids(store);
    let params = grad_check_params(
        |g: &mut Graph, s: &ParamStore| {
            let v = g.input(x.clone());
            f(g, s, v)
        },
        store,
        &ids,
        per_param,
        o,
    )?;
    Ok(merge(vec![input, params]))
}

fn conv_layer(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let (cin, cout) = (r.random_range(1..=3), r.random_range(1..=4));
    let conv = Conv3d::new(
        &mut store,
        &mut r,
        "conv",
        cin,
        cout,
        [3, 3, 3],
        Conv3dOptions {
            stride: [1, 2, 2],
            padding: [1, 1, 1],
        },
        true,
    )?;
    let x = random_tensor(&[1, cin, 3, 5, 5], 1.0, &mut r)?;
    layer_check(|g, s, v| conv.forward(g, s, v), &mut store, &x, 40, 12, seed, o)
}

fn group_norm_layer(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let c = 2 * r.random_range(1..=4);
    let gn = GroupNorm::new(&mut store, "gn", c)?;
    let ids = all_ids(&store);
    randomize(&mut store, &ids, 1.5, &mut r);
    let x = random_tensor(&[2, c, 2, 3, 3], 1.0, &mut r)?;
    layer_check(|g, s, v| gn.forward(g, s, v), &mut store, &x, 40, 8, seed, o)
}

fn residual(kind: BlockKind, seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let shape = match kind {
        BlockKind::Basic => BlockShape {
            in_channels: 2,
            planes: 4,
            temporal_kernel: 3,
            spatial_stride: 2,
            lateral_channels: 0,
        },
        BlockKind::Bottleneck => BlockShape {
            in_channels: 4,
            planes: 2,
            temporal_kernel: 3,
            spatial_stride: 1,
            lateral_channels: 0,
        },
    };
    block_check(kind, shape, seed, o)
}

/// A stride-1 block whose input carries fused channels: identity on the leading ones.
fn lateral_residual(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let shape = BlockShape {
        in_channels: 6,
        planes: 4,
        temporal_kernel: 3,
        spatial_stride: 1,
        lateral_channels: 2,
    };
    block_check(BlockKind::Basic, shape, seed, o)
}

fn block_check(kind: BlockKind, shape: BlockShape, seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let block = ResidualBlock::new(&mut store, &mut r, "block", kind, shape)?;
    // unit-scale weights: every path carries gradient, and a 1e-3 step stays a
    // small relative change for the single-channel normalization groups
    let ids = all_ids(&store);
    randomize(&mut store, &ids, 1.0, &mut r);
    let x = random_tensor(&[1, shape.in_channels, 3, 6, 6], 1.0, &mut r)?;
    layer_check(|g, s, v| block.forward(g, s, v), &mut store, &x, 24, 4, seed, o)
}

fn random_labels(n: usize, r: &mut ChaCha8Rng) -> Vec<Label> {
    (0..n).map(|_| Label::ALL[r.random_range(0..2)]).collect()
}

fn focal(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let b = r.random_range(1..=8);
    let logits = random_tensor(&[b, 2], 2.0, &mut r)?;
    let labels = random_labels(b, &mut r);
    let params = FocalParams {
        gamma: r.random_range(0.0f32..3.0),
        class_weights: [r.random_range(0.5f32..2.0), r.random_range(0.5f32..2.0)],
    };
    grad_check(
        move |g: &mut Graph, x| {
            let p = g.softmax(x)?;
            focal_loss(g, p, &labels, &params)
        },
        &logits,
        o,
    )
}

fn ce(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let b = r.random_range(1..=8);
    let logits = random_tensor(&[b, 2], 2.0, &mut r)?;
    let labels = random_labels(b, &mut r);
    let weights = [r.random_range(0.5f32..2.0), r.random_range(0.5f32..2.0)];
    grad_check(
        move |g: &mut Graph, x| {
            let p = g.softmax(x)?;
            cross_entropy(g, p, &labels, Some(weights))
        },
        &logits,
        o,
    )
}

/// The tiny three-pathway model on an 8-frame 32×32 clip: sampled input elements,
/// the head, the first lateral convolution and a random subset of other tensors.
fn tiny_model(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let mut model = SfrModel::build(&SfrConfig::tiny(), seed)?;
    let x = random_tensor(&[1, 1, 8, 32, 32], 1.0, &mut r)?;
    let shell = model.clone();
    let forward = |g: &mut Graph, s: &ParamStore, v: Var| shell.forward_with(g, s, v);
    let o = &joint_norm_options(&forward, &model.params, &x, o)?;
    let picks = sample(&mut r, x.numel(), 6).into_vec();
    let input = {
        let store = &model.params;
        grad_check_at(|g: &mut Graph, v| forward(g, store, v), &x, &picks, o)?
    };
    let all = all_ids(&model.params);
    let mut ids: Vec<ParamId> = model.head_params().to_vec();
    ids.extend(model.fusion_params().into_iter().take(2));
    ids.extend(sample(&mut r, all.len(), 6).into_iter().map(|i| all[i]));
    ids.sort_by_key(|id| id.index());
    ids.dedup();
    let params = grad_check_params(
        |g: &mut Graph, s: &ParamStore| {
            let v = g.input(x.clone());
            forward(g, s, v)
        },
        &mut model.params,
        &ids,
        2,
        o,
    )?;
    Ok(merge(vec![input, params]))
}
