//! Reverse-mode automatic differentiation over an append-only operation arena.
//!
//! Every operation appends one node holding its output value and the ids of its
//! inputs, so node order is a topological order by construction. [`Graph::backward`]
//! walks the arena once in reverse, visiting each recorded operation at most once.
//! Leaf gradients accumulate across backward calls until [`Graph::zero_grads`].

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::kernels::conv::{conv3d_backward, conv3d_forward, ConvGeom};
use crate::kernels::gemm;
use crate::kernels::norm::{group_norm_backward, group_norm_forward, NormGeom};
use crate::kernels::pool::{
    global_avg_backward, global_avg_forward, max_pool_backward, max_pool_forward, PoolGeom,
};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Log,
    Exp,
    Relu,
    Negate,
}

/// Right-hand side of [`Graph::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Operand {
    None,
    Var(Var),
    Scalar(f32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dOptions {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Default for Conv3dOptions {
    fn default() -> Self {
        Self {
            stride: [1, 1, 1],
            padding: [0, 0, 0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolWindow {
    pub window: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max(PoolWindow),
    GlobalAverage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum ScalarKind {
    Add(f32),
    Mul(f32),
    Pow(f32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum UnaryKind {
    Log,
    Exp,
    Relu,
    Neg,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
        broadcast: bool,
    },
    Scalar {
        kind: ScalarKind,
        a: Var,
    },
    Unary {
        kind: UnaryKind,
        a: Var,
    },
    Clamp {
        a: Var,
        lo: f32,
        hi: f32,
    },
    Sum(Var),
    Mean(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv3d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    GlobalAvg {
        x: Var,
        volume: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    TemporalSubsample {
        x: Var,
        k: usize,
    },
    Softmax(Var),
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        geom: NormGeom,
        mean: Vec<f32>,
        rstd: Vec<f32>,
    },
    Reshape(Var),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    SelectColumns {
        x: Var,
        cols: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<f32>,
    },
    WeightedSum {
        x: Var,
        weights: Vec<f32>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
    param: Option<ParamId>,
    grad: Option<Vec<f32>>,
    /// f64 accumulator of scalar reductions, before rounding to f32.
    wide: Option<f64>,
}

/// Records a forward computation for later differentiation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    visits: usize,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Operations processed by the most recent [`Graph::backward`] call.
    pub fn last_backward_visits(&self) -> usize {
        self.visits
    }

    /// Number of non-leaf nodes that participate in differentiation.
    pub fn differentiable_ops(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.requires_grad && !matches!(n.op, Op::Leaf))
            .count()
    }

    /// Fingerprint of every branch taken by piecewise operations in the forward
    /// pass: ReLU input signs, clamp regions and max-pool winners. Evaluations with
    /// equal fingerprints lie on the same smooth piece of the function.
    pub fn branch_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Unary {
                    kind: UnaryKind::Relu,
                    a,
                } => {
                    for &x in self.nodes[a.0].value.data() {
                        (x > 0.0).hash(&mut h);
                    }
                }
                &Op::Clamp { a, lo, hi } => {
                    for &x in self.nodes[a.0].value.data() {
                        (x < lo, x > hi).hash(&mut h);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// A constant input that never receives gradients.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push_node(Node {
            value,
            requires_grad,
            op: Op::Leaf,
            param: None,
            grad: None,
            wide: None,
        })
    }

    /// Loads a registered parameter as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        store.note_read(id);
        self.push_node(Node {
            value: store.get(id).value().clone(),
            requires_grad: true,
            op: Op::Leaf,
            param: Some(id),
            grad: None,
            wide: None,
        })
    }

    /// Adds the gradients of parameter leaves into the store's gradient buffers.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for n in &self.nodes {
            if let (Some(id), Some(g)) = (n.param, n.grad.as_ref()) {
                for (dst, src) in store.get_mut(id).grad_mut().iter_mut().zip(g) {
                    *dst += src;
                }
            }
        }
    }

    fn push_node(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(Node {
            value,
            requires_grad,
            op,
            param: None,
            grad: None,
            wide: None,
        })
    }

    fn push_reduction(&mut self, wide: f64, op: Op, input: Var) -> Var {
        let v = self.push_op(Tensor::scalar(wide as f32), op, &[input]);
        self.nodes[v.0].wide = Some(wide);
        v
    }

    /// Unrounded value of a scalar reduction (`sum`, `mean`, `weighted_sum`), or the
    /// f32 value widened for any other one-element node.
    pub fn scalar_f64(&self, v: Var) -> Option<f64> {
        let n = &self.nodes[v.0];
        n.wide.or_else(|| n.value.item().map(f64::from))
    }

    // ----- elementwise -------------------------------------------------------

    /// Dispatches one of the elementwise operations. Binary kinds take
    /// [`Operand::Var`] (equal shape, or a one-element tensor broadcast over `a`)
    /// or [`Operand::Scalar`]; unary kinds take [`Operand::None`].
    pub fn elementwise(&mut self, op: ElementwiseOp, a: Var, rhs: Operand) -> Result<Var> {
        use ElementwiseOp as E;
        match (op, rhs) {
            (E::Add, Operand::Var(b)) => self.binary(BinaryKind::Add, a, b),
            (E::Sub, Operand::Var(b)) => self.binary(BinaryKind::Sub, a, b),
            (E::Mul, Operand::Var(b)) => self.binary(BinaryKind::Mul, a, b),
            (E::Div, Operand::Var(b)) => self.binary(BinaryKind::Div, a, b),
            (E::Add, Operand::Scalar(s)) => self.scalar_op(ScalarKind::Add(s), a),
            (E::Sub, Operand::Scalar(s)) => self.scalar_op(ScalarKind::Add(-s), a),
            (E::Mul, Operand::Scalar(s)) => self.scalar_op(ScalarKind::Mul(s), a),
            (E::Div, Operand::Scalar(s)) => {
                if s == 0.0 {
                    return Err(Error::Domain { op: "div", index: 0 });
                }
                self.scalar_op(ScalarKind::Mul(1.0 / s), a)
            }
            (E::Pow, Operand::Scalar(p)) => self.scalar_op(ScalarKind::Pow(p), a),
            (E::Log, Operand::None) => self.unary(UnaryKind::Log, a),
            (E::Exp, Operand::None) => self.unary(UnaryKind::Exp, a),
            (E::Relu, Operand::None) => self.unary(UnaryKind::Relu, a),
            (E::Negate, Operand::None) => self.unary(UnaryKind::Neg, a),
            (op, rhs) => Err(Error::Contract(format!(
                "elementwise {op:?} does not accept operand {rhs:?}"
            ))),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn add_scalar(&mut self, a: Var, s: f32) -> Result<Var> {
        self.scalar_op(ScalarKind::Add(s), a)
    }

    pub fn mul_scalar(&mut self, a: Var, s: f32) -> Result<Var> {
        self.scalar_op(ScalarKind::Mul(s), a)
    }

    pub fn pow_scalar(&mut self, a: Var, p: f32) -> Result<Var> {
        self.scalar_op(ScalarKind::Pow(p), a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Exp, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, a)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Neg, a)
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let broadcast = av.shape() != bv.shape();
        if broadcast && bv.numel() != 1 {
            return Err(shape_err!(
                "{kind:?}: shapes {:?} and {:?} differ",
                av.shape(),
                bv.shape()
            ));
        }
        let bd = bv.data();
        let at = |i: usize| if broadcast { bd[0] } else { bd[i] };
        let mut out = Vec::with_capacity(av.numel());
        for (i, &x) in av.data().iter().enumerate() {
            let y = at(i);
            out.push(match kind {
                BinaryKind::Add => x + y,
                BinaryKind::Sub => x - y,
                BinaryKind::Mul => x * y,
                BinaryKind::Div => {
                    if y == 0.0 {
                        return Err(Error::Domain { op: "div", index: i });
                    }
                    x / y
                }
            });
        }
        let value = Tensor::new(av.shape(), out)?;
        Ok(self.push_op(
            value,
            Op::Binary {
                kind,
                a,
                b,
                broadcast,
            },
            &[a, b],
        ))
    }

    fn scalar_op(&mut self, kind: ScalarKind, a: Var) -> Result<Var> {
        let av = self.value(a);
        let data: Vec<f32> = match kind {
            ScalarKind::Add(s) => av.data().iter().map(|x| x + s).collect(),
            ScalarKind::Mul(s) => av.data().iter().map(|x| x * s).collect(),
            ScalarKind::Pow(p) => {
                if p.fract() != 0.0 {
                    if let Some(i) = av.data().iter().position(|&x| x < 0.0) {
                        return Err(Error::Domain { op: "pow", index: i });
                    }
                }
                av.data().iter().map(|x| x.powf(p)).collect()
            }
        };
        let value = Tensor::new(av.shape(), data)?;
        Ok(self.push_op(value, Op::Scalar { kind, a }, &[a]))
    }

    fn unary(&mut self, kind: UnaryKind, a: Var) -> Result<Var> {
        let av = self.value(a);
        let data: Vec<f32> = match kind {
            UnaryKind::Log => {
                if let Some(i) = av.data().iter().position(|&x| x <= 0.0 || x.is_nan()) {
                    return Err(Error::Domain { op: "log", index: i });
                }
                av.data().iter().map(|x| x.ln()).collect()
            }
            UnaryKind::Exp => av.data().iter().map(|x| x.exp()).collect(),
            UnaryKind::Relu => av.data().iter().map(|&x| x.max(0.0)).collect(),
            UnaryKind::Neg => av.data().iter().map(|x| -x).collect(),
        };
        let value = Tensor::new(av.shape(), data)?;
        Ok(self.push_op(value, Op::Unary { kind, a }, &[a]))
    }

    /// Clamps into `[lo, hi]`; gradient flows only where the input was inside the range.
    pub fn clamp(&mut self, a: Var, lo: f32, hi: f32) -> Result<Var> {
        if lo > hi {
            return Err(Error::Param(format!("clamp range [{lo}, {hi}] is empty")));
        }
        let av = self.value(a);
        let data = av.data().iter().map(|x| x.clamp(lo, hi)).collect();
        let value = Tensor::new(av.shape(), data)?;
        Ok(self.push_op(value, Op::Clamp { a, lo, hi }, &[a]))
    }

    // ----- reductions --------------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().map(|&x| x as f64).sum::<f64>();
        Ok(self.push_reduction(s, Op::Sum(a), a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let s = av.data().iter().map(|&x| x as f64).sum::<f64>() / av.numel() as f64;
        Ok(self.push_reduction(s, Op::Mean(a), a))
    }

    /// Scalar `Σ wᵢ·xᵢ` with f64 accumulation; `weights` is a constant.
    pub fn weighted_sum(&mut self, a: Var, weights: &[f32]) -> Result<Var> {
        let av = self.value(a);
        if weights.len() != av.numel() {
            return Err(shape_err!(
                "weighted_sum: {} weights for {} elements",
                weights.len(),
                av.numel()
            ));
        }
        let s: f64 = av
            .data()
            .iter()
            .zip(weights)
            .map(|(&x, &w)| x as f64 * w as f64)
            .sum();
        Ok(self.push_reduction(
            s,
            Op::WeightedSum {
                x: a,
                weights: weights.to_vec(),
            },
            a,
        ))
    }

    // ----- dense layers ------------------------------------------------------

    /// `out[b, o] = Σᵢ x[b, i]·w[o, i] + bias[o]`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err!("linear: input {xs:?} vs weight {ws:?}"));
        }
        let (batch, fin, fout) = (xs[0], xs[1], ws[0]);
        if let Some(b) = bias {
            if self.shape(b) != [fout] {
                return Err(shape_err!(
                    "linear: bias {:?} for {fout} outputs",
                    self.shape(b)
                ));
            }
        }
        let mut out = vec![0.0; batch * fout];
        gemm(
            batch,
            fin,
            fout,
            self.value(x).data(),
            (fin, 1),
            self.value(w).data(),
            (1, fin),
            0.0,
            &mut out,
        );
        if let Some(b) = bias {
            let bd = self.value(b).data();
            for row in out.chunks_exact_mut(fout) {
                row.iter_mut().zip(bd).for_each(|(o, b)| *o += b);
            }
        }
        let value = Tensor::new(&[batch, fout], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.push_op(value, Op::Linear { x, w, b: bias }, &inputs))
    }

    /// 3D cross-correlation of `[B, Cin, T, H, W]` with `[Cout, Cin, kT, kH, kW]` kernels
    /// and zero padding.
    pub fn conv3d(
        &mut self,
        x: Var,
        kernels: Var,
        bias: Option<Var>,
        opts: Conv3dOptions,
    ) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(kernels));
        if xs.len() != 5 || ws.len() != 5 || xs[1] != ws[1] {
            return Err(shape_err!("conv3d: input {xs:?} vs kernels {ws:?}"));
        }
        if opts.stride.contains(&0) {
            return Err(Error::Param(format!(
                "conv3d: stride {:?} must be positive",
                opts.stride
            )));
        }
        let mut output = [0; 3];
        for i in 0..3 {
            let padded = xs[2 + i] + 2 * opts.padding[i];
            if ws[2 + i] > padded {
                return Err(shape_err!(
                    "conv3d: kernel {:?} larger than padded input {xs:?} (padding {:?})",
                    &ws[2..],
                    opts.padding
                ));
            }
            output[i] = (padded - ws[2 + i]) / opts.stride[i] + 1;
        }
        if let Some(b) = bias {
            if self.shape(b) != [ws[0]] {
                return Err(shape_err!(
                    "conv3d: bias {:?} for {} kernels",
                    self.shape(b),
                    ws[0]
                ));
            }
        }
        let geom = ConvGeom {
            batch: xs[0],
            cin: xs[1],
            input: [xs[2], xs[3], xs[4]],
            cout: ws[0],
            kernel: [ws[2], ws[3], ws[4]],
            stride: opts.stride,
            pad: opts.padding,
            output,
        };
        let out = conv3d_forward(
            self.value(x).data(),
            self.value(kernels).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
        );
        let value = Tensor::new(
            &[geom.batch, geom.cout, output[0], output[1], output[2]],
            out,
        )?;
        let mut inputs = vec![x, kernels];
        inputs.extend(bias);
        Ok(self.push_op(
            value,
            Op::Conv3d {
                x,
                w: kernels,
                b: bias,
                geom,
            },
            &inputs,
        ))
    }

    pub fn pool3d(&mut self, x: Var, kind: PoolKind) -> Result<Var> {
        match kind {
            PoolKind::Max(w) => self.max_pool3d(x, w),
            PoolKind::GlobalAverage => self.global_avg_pool3d(x),
        }
    }

    pub fn max_pool3d(&mut self, x: Var, win: PoolWindow) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 5 {
            return Err(shape_err!("max_pool3d expects rank 5, got {xs:?}"));
        }
        if win.stride.contains(&0) || win.window.contains(&0) {
            return Err(Error::Param(format!("max_pool3d: invalid window {win:?}")));
        }
        let mut output = [0; 3];
        for i in 0..3 {
            let padded = xs[2 + i] + 2 * win.padding[i];
            if win.window[i] > padded || win.padding[i] >= win.window[i] {
                return Err(shape_err!(
                    "max_pool3d: window {:?} (padding {:?}) does not fit input {xs:?}",
                    win.window,
                    win.padding
                ));
            }
            output[i] = (padded - win.window[i]) / win.stride[i] + 1;
        }
        let geom = PoolGeom {
            planes: xs[0] * xs[1],
            input: [xs[2], xs[3], xs[4]],
            window: win.window,
            stride: win.stride,
            pad: win.padding,
            output,
        };
        let shape = [xs[0], xs[1], output[0], output[1], output[2]];
        let (out, argmax) = max_pool_forward(self.value(x).data(), &geom);
        let value = Tensor::new(&shape, out)?;
        Ok(self.push_op(value, Op::MaxPool { x, argmax }, &[x]))
    }

    /// Averages over (T, H, W): `[B, C, T, H, W] -> [B, C, 1, 1, 1]`.
    pub fn global_avg_pool3d(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 5 {
            return Err(shape_err!("global_avg_pool3d expects rank 5, got {xs:?}"));
        }
        let volume = xs[2] * xs[3] * xs[4];
        let shape = [xs[0], xs[1], 1, 1, 1];
        let out = global_avg_forward(self.value(x).data(), volume);
        let value = Tensor::new(&shape, out)?;
        Ok(self.push_op(value, Op::GlobalAvg { x, volume }, &[x]))
    }

    // ----- structural --------------------------------------------------------

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| shape_err!("concat of an empty list"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(shape_err!("concat axis {axis} out of range for {base:?}"));
        }
        let mut extent = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err!(
                    "concat: {s:?} incompatible with {base:?} along axis {axis}"
                ));
            }
            extent += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * extent * inner);
        for o in 0..outer {
            for &v in inputs {
                let chunk = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = extent;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push_op(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// Keeps frames `0, k, 2k, …` of a `[B, C, T, H, W]` tensor.
    pub fn temporal_subsample(&mut self, x: Var, k: usize) -> Result<Var> {
        if k == 0 {
            return Err(Error::Param("temporal stride must be at least 1".into()));
        }
        let xs = self.shape(x).to_vec();
        if xs.len() != 5 {
            return Err(shape_err!("temporal_subsample expects rank 5, got {xs:?}"));
        }
        let out = subsample_frames(self.value(x).data(), &xs, k);
        let shape = [xs[0], xs[1], xs[2].div_ceil(k), xs[3], xs[4]];
        let value = Tensor::new(&shape, out)?;
        Ok(self.push_op(value, Op::TemporalSubsample { x, k }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push_op(value, Op::Reshape(x), &[x]))
    }

    /// Indices `start..start + len` of `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() || start + len > xs[axis] {
            return Err(shape_err!("narrow {start}..{} of axis {axis} in {xs:?}", start + len));
        }
        let outer: usize = xs[..axis].iter().product();
        let inner: usize = xs[axis + 1..].iter().product();
        let (row, chunk) = (xs[axis] * inner, len * inner);
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(outer * chunk);
        for o in 0..outer {
            let from = o * row + start * inner;
            out.extend_from_slice(&data[from..from + chunk]);
        }
        let mut shape = xs;
        shape[axis] = len;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push_op(value, Op::Narrow { x, axis, start }, &[x]))
    }

    /// Picks `x[b, cols[b]]` from a `[B, C]` tensor, giving `[B]`.
    pub fn select_columns(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 2 || xs[0] != cols.len() {
            return Err(shape_err!(
                "select_columns: {xs:?} with {} indices",
                cols.len()
            ));
        }
        let c = xs[1];
        if let Some(&bad) = cols.iter().find(|&&i| i >= c) {
            return Err(shape_err!("select_columns: column {bad} out of {c}"));
        }
        let data = self.value(x).data();
        let out = cols.iter().enumerate().map(|(b, &i)| data[b * c + i]).collect();
        let value = Tensor::new(&[cols.len()], out)?;
        Ok(self.push_op(
            value,
            Op::SelectColumns {
                x,
                cols: cols.to_vec(),
            },
            &[x],
        ))
    }

    /// Inverted dropout; `rate == 0` records an identity mask.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f32, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Param(format!("dropout rate {rate} outside [0, 1)")));
        }
        let keep = 1.0 - rate;
        let n = self.value(x).numel();
        let mask: Vec<f32> = (0..n)
            .map(|_| {
                if rate == 0.0 || rng.random::<f32>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let xv = self.value(x);
        let out = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let value = Tensor::new(xv.shape(), out)?;
        Ok(self.push_op(value, Op::Dropout { x, mask }, &[x]))
    }

    // ----- probabilistic / normalization -------------------------------------

    /// Row-wise softmax of `[B, C]` logits with max subtraction.
    pub fn softmax(&mut self, logits: Var) -> Result<Var> {
        let xs = self.shape(logits);
        if xs.len() != 2 {
            return Err(shape_err!("softmax expects [B, C], got {xs:?}"));
        }
        let c = xs[1];
        let data = self.value(logits).data();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "softmax: non-finite logit at flat index {i}"
            )));
        }
        let mut out = Vec::with_capacity(data.len());
        for row in data.chunks_exact(c) {
            let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let e: Vec<f64> = row.iter().map(|&v| ((v - m) as f64).exp()).collect();
            let z: f64 = e.iter().sum();
            out.extend(e.iter().map(|v| (v / z) as f32));
        }
        let value = Tensor::new(self.shape(logits), out)?;
        Ok(self.push_op(value, Op::Softmax(logits), &[logits]))
    }

    /// Group normalization of `[B, C, …]` with per-channel scale `gamma` and shift `beta`.
    pub fn group_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        eps: f32,
    ) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() < 2 {
            return Err(shape_err!("group_norm expects [B, C, ...], got {xs:?}"));
        }
        let c = xs[1];
        if groups == 0 || c % groups != 0 {
            return Err(Error::Config(format!(
                "group_norm: {c} channels not divisible into {groups} groups"
            )));
        }
        if eps <= 0.0 {
            return Err(Error::Config(format!("group_norm: epsilon {eps} must be positive")));
        }
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err!(
                "group_norm: gamma {:?} / beta {:?} for {c} channels",
                self.shape(gamma),
                self.shape(beta)
            ));
        }
        let geom = NormGeom {
            batch: xs[0],
            channels: c,
            spatial: xs[2..].iter().product(),
            groups,
        };
        let (y, mean, rstd) = group_norm_forward(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            &geom,
            eps,
        );
        let value = Tensor::new(self.shape(x), y)?;
        Ok(self.push_op(
            value,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                geom,
                mean,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    // ----- backward ----------------------------------------------------------

    /// Back-propagates from a one-element `loss`, adding `dloss/dleaf` into every
    /// reachable leaf that requires gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.visits = 0;
        let mut grads: Vec<Option<Vec<f32>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);
        let mut leaf_grads = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaf_grads.push((i, g));
                continue;
            }
            self.visits += 1;
            for (v, contrib) in self.node_backward(i, &g) {
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        for (i, g) in leaf_grads {
            match &mut self.nodes[i].grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, c)| *a += c),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn data(&self, v: Var) -> &[f32] {
        self.nodes[v.0].value.data()
    }

    /// Gradient contributions of node `i` to its inputs, given its output gradient.
    fn node_backward(&self, i: usize, g: &[f32]) -> Vec<(Var, Vec<f32>)> {
        let node = &self.nodes[i];
        let out = node.value.data();
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf => {}
            &Op::Binary {
                kind,
                a,
                b,
                broadcast,
            } => {
                let (ad, bd) = (self.data(a), self.data(b));
                let bat = |k: usize| if broadcast { bd[0] } else { bd[k] };
                if self.wants(a) {
                    let ga = match kind {
                        BinaryKind::Add | BinaryKind::Sub => g.to_vec(),
                        BinaryKind::Mul => g.iter().enumerate().map(|(k, &x)| x * bat(k)).collect(),
                        BinaryKind::Div => g.iter().enumerate().map(|(k, &x)| x / bat(k)).collect(),
                    };
                    res.push((a, ga));
                }
                if self.wants(b) {
                    let per: Vec<f32> = match kind {
                        BinaryKind::Add => g.to_vec(),
                        BinaryKind::Sub => g.iter().map(|x| -x).collect(),
                        BinaryKind::Mul => g.iter().zip(ad).map(|(x, a)| x * a).collect(),
                        BinaryKind::Div => g
                            .iter()
                            .enumerate()
                            .map(|(k, &x)| -x * ad[k] / (bat(k) * bat(k)))
                            .collect(),
                    };
                    let gb = if broadcast {
                        vec![per.iter().map(|&v| v as f64).sum::<f64>() as f32]
                    } else {
                        per
                    };
                    res.push((b, gb));
                }
            }
            &Op::Scalar { kind, a } => {
                let ad = self.data(a);
                let ga = match kind {
                    ScalarKind::Add(_) => g.to_vec(),
                    ScalarKind::Mul(s) => g.iter().map(|x| x * s).collect(),
                    ScalarKind::Pow(p) => {
                        if p == 0.0 {
                            vec![0.0; g.len()]
                        } else {
                            g.iter()
                                .zip(ad)
                                .map(|(x, &v)| x * p * v.powf(p - 1.0))
                                .collect()
                        }
                    }
                };
                res.push((a, ga));
            }
            &Op::Unary { kind, a } => {
                let ad = self.data(a);
                let ga = match kind {
                    UnaryKind::Log => g.iter().zip(ad).map(|(x, v)| x / v).collect(),
                    UnaryKind::Exp => g.iter().zip(out).map(|(x, y)| x * y).collect(),
                    UnaryKind::Relu => g
                        .iter()
                        .zip(ad)
                        .map(|(&x, &v)| if v > 0.0 { x } else { 0.0 })
                        .collect(),
                    UnaryKind::Neg => g.iter().map(|x| -x).collect(),
                };
                res.push((a, ga));
            }
            &Op::Clamp { a, lo, hi } => {
                let ga = g
                    .iter()
                    .zip(self.data(a))
                    .map(|(&x, &v)| if v >= lo && v <= hi { x } else { 0.0 })
                    .collect();
                res.push((a, ga));
            }
            &Op::Sum(a) => res.push((a, vec![g[0]; self.data(a).len()])),
            &Op::Mean(a) => {
                let n = self.data(a).len();
                res.push((a, vec![g[0] / n as f32; n]));
            }
            Op::WeightedSum { x, weights } => {
                res.push((*x, weights.iter().map(|w| w * g[0]).collect()));
            }
            &Op::Linear { x, w, b } => {
                let (xs, ws) = (self.shape(x), self.shape(w));
                let (batch, fin, fout) = (xs[0], xs[1], ws[0]);
                if self.wants(x) {
                    let mut gx = vec![0.0; batch * fin];
                    gemm(batch, fout, fin, g, (fout, 1), self.data(w), (fin, 1), 0.0, &mut gx);
                    res.push((x, gx));
                }
                if self.wants(w) {
                    let mut gw = vec![0.0; fout * fin];
                    gemm(fout, batch, fin, g, (1, fout), self.data(x), (fin, 1), 0.0, &mut gw);
                    res.push((w, gw));
                }
                if let Some(b) = b.filter(|&b| self.wants(b)) {
                    let mut gb = vec![0.0; fout];
                    for row in g.chunks_exact(fout) {
                        gb.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                    }
                    res.push((b, gb));
                }
            }
            &Op::Conv3d { x, w, b, geom } => {
                let mut gx = self.wants(x).then(|| vec![0.0; self.data(x).len()]);
                let mut gw = self.wants(w).then(|| vec![0.0; self.data(w).len()]);
                let mut gb = b
                    .filter(|&b| self.wants(b))
                    .map(|_| vec![0.0; geom.cout]);
                conv3d_backward(
                    self.data(x),
                    self.data(w),
                    &geom,
                    g,
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                res.extend(gx.map(|v| (x, v)));
                res.extend(gw.map(|v| (w, v)));
                if let (Some(b), Some(v)) = (b, gb) {
                    res.push((b, v));
                }
            }
            Op::MaxPool { x, argmax } => {
                let mut gx = vec![0.0; self.data(*x).len()];
                max_pool_backward(g, argmax, &mut gx);
                res.push((*x, gx));
            }
            &Op::GlobalAvg { x, volume } => {
                let mut gx = vec![0.0; self.data(x).len()];
                global_avg_backward(g, volume, &mut gx);
                res.push((x, gx));
            }
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let chunk = self.shape(v)[*axis] * inner;
                    if self.wants(v) {
                        let mut gv = Vec::with_capacity(outer * chunk);
                        for o in 0..outer {
                            gv.extend_from_slice(&g[o * row + offset..o * row + offset + chunk]);
                        }
                        res.push((v, gv));
                    }
                    offset += chunk;
                }
            }
            &Op::TemporalSubsample { x, k } => {
                let xs = self.shape(x);
                let (t, plane) = (xs[2], xs[3] * xs[4]);
                let to = t.div_ceil(k);
                let mut gx = vec![0.0; self.data(x).len()];
                for (bc, go) in g.chunks_exact(to * plane).enumerate() {
                    for (j, frame) in go.chunks_exact(plane).enumerate() {
                        let dst = (bc * t + j * k) * plane;
                        gx[dst..dst + plane].copy_from_slice(frame);
                    }
                }
                res.push((x, gx));
            }
            &Op::Softmax(x) => {
                let c = self.shape(x)[1];
                let mut gx = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks_exact(c).zip(out.chunks_exact(c)) {
                    let dot: f32 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    gx.extend(gr.iter().zip(yr).map(|(gv, y)| y * (gv - dot)));
                }
                res.push((x, gx));
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                geom,
                mean,
                rstd,
            } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let mut gx = self.wants(x).then(|| vec![0.0; self.data(x).len()]);
                let mut gg = self.wants(gamma).then(|| vec![0.0; geom.channels]);
                let mut gb = self.wants(beta).then(|| vec![0.0; geom.channels]);
                group_norm_backward(
                    self.data(x),
                    self.data(gamma),
                    mean,
                    rstd,
                    geom,
                    g,
                    gx.as_deref_mut(),
                    gg.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                res.extend(gx.map(|v| (x, v)));
                res.extend(gg.map(|v| (gamma, v)));
                res.extend(gb.map(|v| (beta, v)));
            }
            &Op::Reshape(x) => res.push((x, g.to_vec())),
            &Op::Narrow { x, axis, start } => {
                let xs = self.shape(x);
                let inner: usize = xs[axis + 1..].iter().product();
                let row = xs[axis] * inner;
                let chunk = node.value.shape()[axis] * inner;
                let mut gx = vec![0.0; self.data(x).len()];
                for (o, go) in g.chunks_exact(chunk).enumerate() {
                    let from = o * row + start * inner;
                    gx[from..from + chunk].copy_from_slice(go);
                }
                res.push((x, gx));
            }
            Op::SelectColumns { x, cols } => {
                let c = self.shape(*x)[1];
                let mut gx = vec![0.0; self.data(*x).len()];
                for (b, (&col, &gv)) in cols.iter().zip(g).enumerate() {
                    gx[b * c + col] = gv;
                }
                res.push((*x, gx));
            }
            Op::Dropout { x, mask } => {
                res.push((*x, g.iter().zip(mask).map(|(a, m)| a * m).collect()));
            }
        }
        res.retain(|(v, _)| self.wants(*v));
        res
    }
}

/// Frame subsampling on a raw `[B, C, T, H, W]` buffer; usable before any graph exists.
pub fn subsample_frames(data: &[f32], shape: &[usize], k: usize) -> Vec<f32> {
    let (t, plane) = (shape[2], shape[3] * shape[4]);
    let to = t.div_ceil(k);
    let mut out = Vec::with_capacity(shape[0] * shape[1] * to * plane);
    for clip in data.chunks_exact(t * plane) {
        for j in 0..to {
            out.extend_from_slice(&clip[j * k * plane..(j * k + 1) * plane]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn add_and_relu_values() {
        let mut g = Graph::new();
        let a = g.input(t(&[2], &[1.0, 2.0]));
        let b = g.input(t(&[2], &[3.0, 4.0]));
        let s = g.elementwise(ElementwiseOp::Add, a, Operand::Var(b)).unwrap();
        assert_eq!(g.value(s).data(), &[4.0, 6.0]);
        let r = g.input(t(&[3], &[-1.0, 0.0, 2.0]));
        let r = g.elementwise(ElementwiseOp::Relu, r, Operand::None).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn shape_mismatch_and_log_domain_errors() {
        let mut g = Graph::new();
        let a = g.input(t(&[2], &[1.0, 2.0]));
        let b = g.input(t(&[3], &[1.0, 2.0, 3.0]));
        assert!(matches!(g.add(a, b), Err(Error::Shape(_))));
        let c = g.input(t(&[3], &[1.0, -2.0, 3.0]));
        assert!(matches!(g.log(c), Err(Error::Domain { op: "log", index: 1 })));
        assert!(g
            .elementwise(ElementwiseOp::Log, a, Operand::Scalar(1.0))
            .is_err());
    }

    #[test]
    fn scalar_broadcast_rhs() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[3], &[1.0, 2.0, 3.0]), true);
        let s = g.leaf(Tensor::scalar(2.0), true);
        let m = g.mul(a, s).unwrap();
        assert_eq!(g.value(m).data(), &[2.0, 4.0, 6.0]);
        let l = g.sum(m).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[2.0, 2.0, 2.0]);
        assert_eq!(g.grad(s).unwrap(), &[6.0]);
    }

    #[test]
    fn sum_gives_all_ones_and_square_gives_two_x() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[5], &[1.0, -2.0, 3.0, 0.5, 9.0]), true);
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 5]);

        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0), true);
        let sq = g.mul(x, x).unwrap();
        g.backward(sq).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn repeated_backward_accumulates_until_reset() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]), true);
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0]);
        g.zero_grads();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]), true);
        let y = g.relu(x).unwrap();
        assert!(matches!(g.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_visits_each_op_once() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[3], &[1.0, 2.0, 3.0]), true);
        let c = g.input(t(&[3], &[1.0, 1.0, 1.0]));
        let a = g.mul(x, x).unwrap();
        let b = g.add(a, x).unwrap();
        let d = g.mul(b, c).unwrap();
        let e = g.add(d, a).unwrap();
        let l = g.sum(e).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.last_backward_visits(), g.differentiable_ops());
        assert_eq!(g.last_backward_visits(), 5);
        // d/dx of Σ (x² + x + x²) = 4x + 1
        assert_eq!(g.grad(x).unwrap(), &[5.0, 9.0, 13.0]);
    }

    #[test]
    fn linear_values() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 2], &[1.0, 2.0]));
        let w = g.input(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.input(t(&[2], &[0.0, 0.0]));
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0]);
        let w = g.input(t(&[1, 2], &[3.0, 4.0]));
        let b = g.input(t(&[1], &[1.0]));
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1]);
        assert_eq!(g.value(y).data(), &[12.0]);
        let bad = g.input(t(&[2, 3], &[0.0; 6]));
        assert!(g.linear(x, bad, None).is_err());
    }

    #[test]
    fn conv3d_shapes_and_values() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 3, 8, 32, 32]).unwrap());
        let k = g.input(Tensor::zeros(&[8, 3, 3, 3, 3]).unwrap());
        let opts = Conv3dOptions {
            stride: [1, 1, 1],
            padding: [1, 1, 1],
        };
        let y = g.conv3d(x, k, None, opts).unwrap();
        assert_eq!(g.shape(y), &[1, 8, 8, 32, 32]);

        let x = g.input(t(&[1, 1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let k = g.input(Tensor::full(&[1, 1, 1, 2, 2], 1.0).unwrap());
        let y = g.conv3d(x, k, None, Conv3dOptions::default()).unwrap();
        assert_eq!(g.value(y).data(), &[10.0]);

        let x = g.input(Tensor::full(&[1, 2, 3, 4, 4], 0.7).unwrap());
        let k = g.input(Tensor::zeros(&[3, 2, 1, 3, 3]).unwrap());
        let b = g.input(t(&[3], &[0.5, -1.0, 2.0]));
        let y = g.conv3d(x, k, Some(b), Conv3dOptions::default()).unwrap();
        for (c, plane) in g.value(y).data().chunks_exact(3 * 2 * 2).enumerate() {
            assert!(plane.iter().all(|&v| v == [0.5, -1.0, 2.0][c]));
        }

        let k = g.input(Tensor::zeros(&[1, 2, 5, 1, 1]).unwrap());
        assert!(matches!(
            g.conv3d(x, k, None, Conv3dOptions::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn pooling_values() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full(&[1, 2, 2, 3, 3], 1.5).unwrap(), true);
        let y = g.global_avg_pool3d(x).unwrap();
        assert_eq!(g.shape(y), &[1, 2, 1, 1, 1]);
        assert!(g.value(y).data().iter().all(|&v| (v - 1.5).abs() < 1e-7));

        let x = g.input(t(&[1, 1, 1, 1, 3], &[1.0, 5.0, 3.0]));
        let win = PoolWindow {
            window: [1, 1, 3],
            stride: [1, 1, 1],
            padding: [0, 0, 0],
        };
        let y = g.pool3d(x, PoolKind::Max(win)).unwrap();
        assert_eq!(g.value(y).data(), &[5.0]);
        let wide = PoolWindow {
            window: [1, 1, 4],
            ..win
        };
        assert!(g.max_pool3d(x, wide).is_err());

        let mut g = Graph::new();
        let x = g.leaf(t(&[1, 1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), true);
        let y = g.global_avg_pool3d(x).unwrap();
        let l = g.sum(y).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.25; 4]);
    }

    #[test]
    fn concat_shapes_and_errors() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(&[3, 64]).unwrap());
        let b = g.input(Tensor::zeros(&[3, 8]).unwrap());
        let c = g.input(Tensor::zeros(&[3, 64]).unwrap());
        let y = g.concat(&[a, b, c], 1).unwrap();
        assert_eq!(g.shape(y), &[3, 136]);
        let one = g.concat(&[b], 1).unwrap();
        assert_eq!(g.value(one), g.value(b));
        let d = g.input(Tensor::zeros(&[2, 8]).unwrap());
        assert!(g.concat(&[a, d], 1).is_err());
    }

    #[test]
    fn temporal_subsample_frames() {
        let frames = |t: usize| {
            Tensor::new(&[1, 1, t, 1, 1], (0..t).map(|i| i as f32).collect()).unwrap()
        };
        let mut g = Graph::new();
        let x = g.input(frames(64));
        let y = g.temporal_subsample(x, 4).unwrap();
        let want: Vec<f32> = (0..16).map(|i| (4 * i) as f32).collect();
        assert_eq!(g.value(y).data(), want.as_slice());
        let y = g.temporal_subsample(x, 1).unwrap();
        assert_eq!(g.value(y), g.value(x));
        let x = g.input(frames(10));
        let y = g.temporal_subsample(x, 4).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 4.0, 8.0]);
        assert!(matches!(g.temporal_subsample(x, 0), Err(Error::Param(_))));
    }

    #[test]
    fn softmax_values_and_stability() {
        let mut g = Graph::new();
        let x = g.input(t(&[3, 2], &[0.0, 0.0, 1000.0, 1000.0, 2f32.ln(), 0.0]));
        let p = g.softmax(x).unwrap();
        let d = g.value(p).data();
        assert!((d[0] - 0.5).abs() < 1e-7 && (d[1] - 0.5).abs() < 1e-7);
        assert!((d[2] - 0.5).abs() < 1e-7 && (d[3] - 0.5).abs() < 1e-7);
        assert!((d[4] - 2.0 / 3.0).abs() < 1e-6 && (d[5] - 1.0 / 3.0).abs() < 1e-6);
        let bad = g.input(t(&[1, 2], &[f32::NAN, 0.0]));
        assert!(matches!(g.softmax(bad), Err(Error::Numeric(_))));
    }

    #[test]
    fn group_norm_rejects_indivisible_channels() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 6, 1, 2, 2]).unwrap());
        let gamma = g.input(Tensor::full(&[6], 1.0).unwrap());
        let beta = g.input(Tensor::zeros(&[6]).unwrap());
        assert!(matches!(
            g.group_norm(x, gamma, beta, 4, 1e-5),
            Err(Error::Config(_))
        ));
    }
}
