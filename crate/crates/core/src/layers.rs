//! Network layers on top of [`Graph`]: convolution, group normalization, 3D residual
//! blocks and ResNet-18/50 style backbones.
//!
//! Layers only hold [`ParamId`]s; the tensors live in a [`ParamStore`] so that one
//! registry enumerates every trainable tensor under a stable dotted name.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Conv3dOptions, Graph, PoolWindow, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const GROUP_NORM_EPS: f32 = 1e-5;

/// Number of normalization groups for `channels`: `min(8, C)`, falling back to
/// `gcd(C, 8)` when 8 does not divide `C`.
pub fn default_groups(channels: usize) -> usize {
    if channels <= 8 {
        return channels.max(1);
    }
    if channels % 8 == 0 {
        8
    } else {
        gcd(channels, 8)
    }
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zero-mean uniform initialization with bound `1/√fan_in`.
pub fn uniform_init(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Result<Tensor> {
    let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-bound..=bound)).collect())
}

#[derive(Clone, Debug)]
pub struct Conv3d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub options: Conv3dOptions,
}

impl Conv3d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: [usize; 3],
        options: Conv3dOptions,
        with_bias: bool,
    ) -> Result<Self> {
        let fan_in = cin * kernel.iter().product::<usize>();
        let w = uniform_init(&[cout, cin, kernel[0], kernel[1], kernel[2]], fan_in, rng)?;
        let weight = store.insert(format!("{name}.weight"), w)?;
        let bias = if with_bias {
            Some(store.insert(format!("{name}.bias"), Tensor::zeros(&[cout])?)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            options,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv3d(x, w, b, self.options)
    }

    pub fn out_channels(&self, store: &ParamStore) -> usize {
        store.get(self.weight).value().shape()[0]
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
    pub eps: f32,
}

impl GroupNorm {
    /// `gamma = 1`, `beta = 0`, [`default_groups`] groups.
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Self::with_groups(store, name, channels, default_groups(channels), GROUP_NORM_EPS)
    }

    pub fn with_groups(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        groups: usize,
        eps: f32,
    ) -> Result<Self> {
        if groups == 0 || channels % groups != 0 {
            return Err(Error::Config(format!(
                "group norm {name}: {channels} channels not divisible into {groups} groups"
            )));
        }
        if !(eps > 0.0) {
            return Err(Error::Config(format!("group norm {name}: epsilon {eps} must be > 0")));
        }
        let gamma = store.insert(format!("{name}.gamma"), Tensor::full(&[channels], 1.0)?)?;
        let beta = store.insert(format!("{name}.beta"), Tensor::zeros(&[channels])?)?;
        Ok(Self {
            gamma,
            beta,
            groups,
            eps,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.group_norm(x, gamma, beta, self.groups, self.eps)
    }
}

/// Convolution followed by group normalization.
#[derive(Clone, Debug)]
pub struct ConvNorm {
    pub conv: Conv3d,
    pub norm: GroupNorm,
}

impl ConvNorm {
    fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
    ) -> Result<Self> {
        let padding = [kernel[0] / 2, kernel[1] / 2, kernel[2] / 2];
        let conv = Conv3d::new(
            store,
            rng,
            &format!("{name}.conv"),
            cin,
            cout,
            kernel,
            Conv3dOptions { stride, padding },
            false,
        )?;
        let norm = GroupNorm::new(store, &format!("{name}.gn"), cout)?;
        Ok(Self { conv, norm })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, store, x)?;
        self.norm.forward(g, store, y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    /// Two 3×3 convolutions.
    Basic,
    /// 1×1 reduce, 3×3, 1×1 expand (×4).
    Bottleneck,
}

impl BlockKind {
    pub fn expansion(self) -> usize {
        match self {
            BlockKind::Basic => 1,
            BlockKind::Bottleneck => 4,
        }
    }
}

/// `relu(branch(x) + shortcut(x))` with a conv→gn→relu→…→conv→gn branch.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub kind: BlockKind,
    pub branch: Vec<ConvNorm>,
    pub shortcut: Shortcut,
}

#[derive(Clone, Debug)]
pub enum Shortcut {
    Identity,
    /// Identity on the first `n` channels, dropping channels appended by lateral
    /// fusion, so a block whose width only grew by fused channels keeps its identity.
    LeadingChannels(usize),
    /// Projection used when the stride or the block's own channel count changes.
    Projection(ConvNorm),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockShape {
    pub in_channels: usize,
    /// Channels of the inner convolutions; the block emits `planes · expansion`.
    pub planes: usize,
    /// Temporal extent of the first convolution's kernel.
    pub temporal_kernel: usize,
    /// Spatial stride of the block (applied to H and W).
    pub spatial_stride: usize,
    /// Trailing input channels that come from lateral fusion (included in
    /// `in_channels`).
    pub lateral_channels: usize,
}

impl ResidualBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        kind: BlockKind,
        shape: BlockShape,
    ) -> Result<Self> {
        let BlockShape {
            in_channels,
            planes,
            temporal_kernel: kt,
            spatial_stride: s,
            lateral_channels,
        } = shape;
        if planes == 0 || kt == 0 || kt % 2 == 0 || s == 0 || lateral_channels >= in_channels {
            return Err(Error::Config(format!("residual block {name}: invalid shape {shape:?}")));
        }
        let out = planes * kind.expansion();
        let branch = match kind {
            BlockKind::Basic => vec![
                ConvNorm::new(store, rng, &format!("{name}.conv1"), in_channels, planes, [kt, 3, 3], [1, s, s])?,
                ConvNorm::new(store, rng, &format!("{name}.conv2"), planes, planes, [1, 3, 3], [1, 1, 1])?,
            ],
            BlockKind::Bottleneck => vec![
                ConvNorm::new(store, rng, &format!("{name}.conv1"), in_channels, planes, [kt, 1, 1], [1, 1, 1])?,
                ConvNorm::new(store, rng, &format!("{name}.conv2"), planes, planes, [1, 3, 3], [1, s, s])?,
                ConvNorm::new(store, rng, &format!("{name}.conv3"), planes, out, [1, 1, 1], [1, 1, 1])?,
            ],
        };
        let own = in_channels - lateral_channels;
        let shortcut = if s != 1 || own != out {
            Shortcut::Projection(ConvNorm::new(
                store,
                rng,
                &format!("{name}.shortcut"),
                in_channels,
                out,
                [1, 1, 1],
                [1, s, s],
            )?)
        } else if lateral_channels > 0 {
            Shortcut::LeadingChannels(own)
        } else {
            Shortcut::Identity
        };
        Ok(Self {
            kind,
            branch,
            shortcut,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut y = x;
        let last = self.branch.len() - 1;
        for (i, layer) in self.branch.iter().enumerate() {
            y = layer.forward(g, store, y)?;
            if i != last {
                y = g.relu(y)?;
            }
        }
        let skip = match &self.shortcut {
            Shortcut::Identity => x,
            &Shortcut::LeadingChannels(n) => g.narrow(x, 1, 0, n)?,
            Shortcut::Projection(p) => p.forward(g, store, x)?,
        };
        if g.shape(skip) != g.shape(y) {
            return Err(Error::Config(format!(
                "residual block: branch {:?} vs shortcut {:?} without projection",
                g.shape(y),
                g.shape(skip)
            )));
        }
        let sum = g.add(y, skip)?;
        g.relu(sum)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Depth {
    D18,
    D50,
}

impl Depth {
    pub fn layers(self) -> usize {
        match self {
            Depth::D18 => 18,
            Depth::D50 => 50,
        }
    }

    pub fn from_layers(n: usize) -> Result<Self> {
        match n {
            18 => Ok(Depth::D18),
            50 => Ok(Depth::D50),
            _ => Err(Error::Config(format!("unsupported backbone depth {n} (expected 18 or 50)"))),
        }
    }

    pub fn block_kind(self) -> BlockKind {
        match self {
            Depth::D18 => BlockKind::Basic,
            Depth::D50 => BlockKind::Bottleneck,
        }
    }

    pub fn blocks_per_stage(self) -> [usize; 4] {
        match self {
            Depth::D18 => [2, 2, 2, 2],
            Depth::D50 => [3, 4, 6, 3],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BackboneSpec {
    pub depth: Depth,
    /// Channels after the stem; stage `i` uses `base_width · 2^i` planes.
    pub base_width: usize,
    pub stem_kernel: [usize; 3],
    pub stem_stride: [usize; 3],
    /// Temporal kernel extent of each stage's first convolution per block.
    pub temporal_kernels: [usize; 4],
}

impl BackboneSpec {
    pub fn new(depth: Depth, base_width: usize) -> Self {
        Self {
            depth,
            base_width,
            stem_kernel: [1, 7, 7],
            stem_stride: [1, 2, 2],
            temporal_kernels: [1, 1, 3, 3],
        }
    }

    pub fn stage_planes(&self, stage: usize) -> usize {
        self.base_width << stage
    }

    pub fn stage_out_channels(&self, stage: usize) -> usize {
        self.stage_planes(stage) * self.depth.block_kind().expansion()
    }

    pub fn out_channels(&self) -> usize {
        self.stage_out_channels(3)
    }
}

pub const STAGES: usize = 4;

const STEM_POOL: PoolWindow = PoolWindow {
    window: [1, 3, 3],
    stride: [1, 2, 2],
    padding: [0, 1, 1],
};

/// Stem (conv, gn, relu, max-pool) followed by four residual stages.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub spec: BackboneSpec,
    pub stem: ConvNorm,
    pub stages: Vec<Vec<ResidualBlock>>,
}

impl Backbone {
    /// `extra_inputs[i]` channels are concatenated onto the input of stage `i` by the
    /// caller (lateral fusion); the stage is built to accept them.
    pub fn build(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        spec: BackboneSpec,
        in_channels: usize,
        extra_inputs: [usize; STAGES],
    ) -> Result<Self> {
        if spec.base_width == 0 || in_channels == 0 {
            return Err(Error::Config(format!("backbone {name}: widths must be positive")));
        }
        let stem_opts = Conv3dOptions {
            stride: spec.stem_stride,
            padding: spec.stem_kernel.map(|k| k / 2),
        };
        let stem = ConvNorm {
            conv: Conv3d::new(
                store,
                rng,
                &format!("{name}.stem.conv"),
                in_channels,
                spec.base_width,
                spec.stem_kernel,
                stem_opts,
                false,
            )?,
            norm: GroupNorm::new(store, &format!("{name}.stem.gn"), spec.base_width)?,
        };
        let kind = spec.depth.block_kind();
        let mut channels = spec.base_width;
        let mut stages = Vec::with_capacity(STAGES);
        for (s, &count) in spec.depth.blocks_per_stage().iter().enumerate() {
            channels += extra_inputs[s];
            let mut lateral = extra_inputs[s];
            let mut blocks = Vec::with_capacity(count);
            for b in 0..count {
                let shape = BlockShape {
                    in_channels: channels,
                    planes: spec.stage_planes(s),
                    temporal_kernel: spec.temporal_kernels[s],
                    spatial_stride: if b == 0 && s > 0 { 2 } else { 1 },
                    lateral_channels: lateral,
                };
                lateral = 0;
                blocks.push(ResidualBlock::new(
                    store,
                    rng,
                    &format!("{name}.stage{}.block{b}", s + 1),
                    kind,
                    shape,
                )?);
                channels = spec.stage_out_channels(s);
            }
            stages.push(blocks);
        }
        Ok(Self { spec, stem, stages })
    }

    pub fn stem_forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let y = self.stem.forward(g, store, x)?;
        let y = g.relu(y)?;
        g.max_pool3d(y, STEM_POOL)
    }

    pub fn stage_forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        stage: usize,
        x: Var,
    ) -> Result<Var> {
        let mut y = x;
        for block in &self.stages[stage] {
            y = block.forward(g, store, y)?;
        }
        Ok(y)
    }

    /// Stem and all stages without any fusion.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut y = self.stem_forward(g, store, x)?;
        for s in 0..STAGES {
            y = self.stage_forward(g, store, s, y)?;
        }
        Ok(y)
    }

    pub fn block_count(&self) -> usize {
        self.stages.iter().map(Vec::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn group_counts() {
        assert_eq!(default_groups(2), 2);
        assert_eq!(default_groups(8), 8);
        assert_eq!(default_groups(64), 8);
        assert_eq!(default_groups(12), 4);
        assert_eq!(default_groups(36), 4);
    }

    #[test]
    fn group_norm_rejects_indivisible_channels() {
        let mut store = ParamStore::new();
        let err = GroupNorm::with_groups(&mut store, "gn", 6, 4, 1e-5).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn stride_two_block_halves_space_only() {
        let mut store = ParamStore::new();
        let shape = BlockShape {
            in_channels: 4,
            planes: 4,
            temporal_kernel: 3,
            spatial_stride: 2,
            lateral_channels: 0,
        };
        let block = ResidualBlock::new(&mut store, &mut rng(), "b", BlockKind::Basic, shape).unwrap();
        assert!(matches!(block.shortcut, Shortcut::Projection(_)));
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[1, 4, 5, 8, 8], 0.5).unwrap());
        let y = block.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.shape(y), &[1, 4, 5, 4, 4]);
    }

    #[test]
    fn zero_branch_is_relu_of_input() {
        let mut store = ParamStore::new();
        let shape = BlockShape {
            in_channels: 4,
            planes: 4,
            temporal_kernel: 1,
            spatial_stride: 1,
            lateral_channels: 0,
        };
        let block = ResidualBlock::new(&mut store, &mut rng(), "b", BlockKind::Basic, shape).unwrap();
        assert!(matches!(block.shortcut, Shortcut::Identity));
        for p in store.iter_mut() {
            p.value_mut().data_mut().fill(0.0);
        }
        let input: Vec<f32> = (0..4 * 2 * 3 * 3).map(|i| (i as f32 - 30.0) / 7.0).collect();
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[1, 4, 2, 3, 3], input.clone()).unwrap());
        let y = block.forward(&mut g, &store, x).unwrap();
        let expected: Vec<f32> = input.iter().map(|v| v.max(0.0)).collect();
        assert_eq!(g.value(y).data(), expected.as_slice());
    }

    #[test]
    fn lateral_channels_keep_the_identity_shortcut() {
        let mut store = ParamStore::new();
        let shape = BlockShape {
            in_channels: 6,
            planes: 4,
            temporal_kernel: 1,
            spatial_stride: 1,
            lateral_channels: 2,
        };
        let block = ResidualBlock::new(&mut store, &mut rng(), "b", BlockKind::Basic, shape).unwrap();
        assert!(matches!(block.shortcut, Shortcut::LeadingChannels(4)));
        assert!(store.names().all(|n| !n.contains("shortcut")));
        for p in store.iter_mut() {
            p.value_mut().data_mut().fill(0.0);
        }
        let input: Vec<f32> = (0..6 * 2 * 2 * 2).map(|i| (i as f32 - 20.0) / 5.0).collect();
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[1, 6, 2, 2, 2], input.clone()).unwrap());
        let y = block.forward(&mut g, &store, x).unwrap();
        let expected: Vec<f32> = input[..4 * 8].iter().map(|v| v.max(0.0)).collect();
        assert_eq!(g.value(y).data(), expected.as_slice());
    }

    #[test]
    fn backbone_widths_and_blocks() {
        let mut store = ParamStore::new();
        let spec = BackboneSpec::new(Depth::D18, 8);
        let bb = Backbone::build(&mut store, &mut rng(), "p", spec, 1, [0; 4]).unwrap();
        assert_eq!(bb.block_count(), 8);
        assert_eq!(spec.out_channels(), 64);
        assert_eq!(BackboneSpec::new(Depth::D18, 64).out_channels(), 512);
        assert_eq!(BackboneSpec::new(Depth::D50, 64).out_channels(), 2048);
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[1, 1, 4, 32, 32], 0.3).unwrap());
        let y = bb.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.shape(y), &[1, 64, 4, 1, 1]);
    }

    #[test]
    fn unsupported_depth() {
        assert!(matches!(Depth::from_layers(34), Err(Error::Config(_))));
    }
}
