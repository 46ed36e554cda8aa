//! The Slow / Fast / Regular network.
//!
//! * **Slow** sees the clip at `1/(α·fast_stride)` of the frame rate with full width.
//! * **Fast** sees every `fast_stride`-th frame with a fraction `β` of the width.
//! * **Regular** sees the Fast frame rate at full width.
//!
//! Lateral connections fuse features at stage boundaries (after the stem and after
//! stages 1–3). Fast→Slow uses a `5×1×1` convolution with temporal stride `α` that
//! doubles the Fast channels, concatenated onto Slow. Regular→Fast and Regular→Slow
//! use `1×1×1` projections (temporal stride `α` for Slow) added to the destination.
//! Each pathway is globally average-pooled and the concatenation feeds one linear
//! layer producing two logits (index 0 = T, 1 = NT).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{KvMap, KvReader};
use crate::error::{shape_err, Error, Result};
use crate::graph::{Conv3dOptions, Graph, Var};
use crate::label::Label;
use crate::layers::{uniform_init, Backbone, BackboneSpec, Conv3d, Depth, STAGES};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 2;
/// Smallest supported frame height/width.
pub const MIN_SPATIAL: usize = 32;
/// Names of the fusion points: after the stem, then after stages 1–3.
pub const FUSION_POINTS: [&str; STAGES] = ["stem", "stage1", "stage2", "stage3"];
const FAST_TO_SLOW_KERNEL: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LateralWiring {
    /// Regular→Fast and Fast→Slow.
    RegularToFastFastToSlow,
    /// Regular→Slow and Fast→Slow.
    RegularToSlowFastToSlow,
    /// Late fusion: pathways only meet at the head.
    NoConnections,
}

impl fmt::Display for LateralWiring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LateralWiring::RegularToFastFastToSlow => "option1",
            LateralWiring::RegularToSlowFastToSlow => "option2",
            LateralWiring::NoConnections => "late-fusion",
        })
    }
}

impl FromStr for LateralWiring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "option1" | "regular-to-fast" => Ok(LateralWiring::RegularToFastFastToSlow),
            "option2" | "regular-to-slow" => Ok(LateralWiring::RegularToSlowFastToSlow),
            "late-fusion" | "none" => Ok(LateralWiring::NoConnections),
            other => Err(Error::Config(format!(
                "unknown wiring {other:?} (expected option1, option2 or late-fusion)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PathwayConfig {
    /// Keep one frame in `temporal_stride` of the clip.
    pub temporal_stride: usize,
    pub backbone: BackboneSpec,
}

impl PathwayConfig {
    pub fn new(temporal_stride: usize, depth: Depth, base_width: usize) -> Self {
        Self {
            temporal_stride,
            backbone: BackboneSpec::new(depth, base_width),
        }
    }

    pub fn base_width(&self) -> usize {
        self.backbone.base_width
    }

    /// Channels at fusion point `p` (0 = after the stem).
    fn channels_at(&self, p: usize) -> usize {
        if p == 0 {
            self.backbone.base_width
        } else {
            self.backbone.stage_out_channels(p - 1)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SfrConfig {
    pub slow: PathwayConfig,
    pub fast: PathwayConfig,
    /// `None` gives the two-pathway Slow+Fast network.
    pub regular: Option<PathwayConfig>,
    /// Frame-rate ratio between Fast and Slow.
    pub alpha: usize,
    /// Fast width as a fraction of the full (Regular, else Slow) width.
    pub beta: f64,
    pub wiring: LateralWiring,
    /// Which of [`FUSION_POINTS`] carry lateral connections.
    pub fusion_points: [bool; STAGES],
    pub head_dropout: f32,
    pub in_channels: usize,
}

impl SfrConfig {
    /// Three pathways of one `depth` with the given base widths; strides derived
    /// from `alpha` with a Fast stride of 1; Option-1 wiring at every fusion point.
    pub fn new(depth: Depth, widths: [usize; 3], alpha: usize, beta: f64) -> Self {
        Self {
            slow: PathwayConfig::new(alpha, depth, widths[0]),
            fast: PathwayConfig::new(1, depth, widths[1]),
            regular: Some(PathwayConfig::new(1, depth, widths[2])),
            alpha,
            beta,
            wiring: LateralWiring::RegularToFastFastToSlow,
            fusion_points: [true; STAGES],
            head_dropout: 0.0,
            in_channels: 1,
        }
    }

    /// Widths 64/8/64, α = 4, β = 1/8, depth 18.
    pub fn standard() -> Self {
        Self::new(Depth::D18, [64, 8, 64], 4, 0.125)
    }

    /// Widths 16/2/16, α = 4, β = 1/8, depth 18.
    pub fn tiny() -> Self {
        Self::new(Depth::D18, [16, 2, 16], 4, 0.125)
    }

    pub fn with_wiring(mut self, wiring: LateralWiring) -> Self {
        self.wiring = wiring;
        self
    }

    /// Drops the Regular pathway, leaving Slow+Fast with a Fast→Slow connection.
    pub fn without_regular(mut self) -> Self {
        self.regular = None;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.alpha == 0 || self.fast.temporal_stride == 0 {
            return err("alpha and temporal strides must be ≥ 1".into());
        }
        if self.slow.temporal_stride != self.fast.temporal_stride * self.alpha {
            return err(format!(
                "slow stride {} ≠ fast stride {} × alpha {}",
                self.slow.temporal_stride, self.fast.temporal_stride, self.alpha
            ));
        }
        if let Some(r) = &self.regular {
            if r.temporal_stride != self.fast.temporal_stride {
                return err(format!(
                    "regular stride {} must equal fast stride {}",
                    r.temporal_stride, self.fast.temporal_stride
                ));
            }
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return err(format!("beta {} outside (0, 1]", self.beta));
        }
        let full = self.regular.as_ref().unwrap_or(&self.slow).base_width();
        let expected = ((full as f64 * self.beta).round() as usize).max(1);
        if self.fast.base_width() != expected {
            return err(format!(
                "fast width {} ≠ round({full} × beta {}) = {expected}",
                self.fast.base_width(),
                self.beta
            ));
        }
        for p in self.pathways() {
            if p.base_width() == 0 {
                return err("pathway widths must be positive".into());
            }
        }
        if !(0.0..1.0).contains(&self.head_dropout) {
            return err(format!("head dropout {} outside [0, 1)", self.head_dropout));
        }
        if self.in_channels == 0 {
            return err("in_channels must be positive".into());
        }
        Ok(())
    }

    fn pathways(&self) -> impl Iterator<Item = &PathwayConfig> {
        [Some(&self.slow), Some(&self.fast), self.regular.as_ref()]
            .into_iter()
            .flatten()
    }

    pub fn fast_to_slow(&self) -> bool {
        self.wiring != LateralWiring::NoConnections
    }

    pub fn regular_to_fast(&self) -> bool {
        self.regular.is_some() && self.wiring == LateralWiring::RegularToFastFastToSlow
    }

    pub fn regular_to_slow(&self) -> bool {
        self.regular.is_some() && self.wiring == LateralWiring::RegularToSlowFastToSlow
    }

    /// Width of the concatenated pooled features feeding the head.
    pub fn head_features(&self) -> usize {
        self.pathways().map(|p| p.backbone.out_channels()).sum()
    }

    /// Minimum clip length: one slow step.
    pub fn min_frames(&self) -> usize {
        self.slow.temporal_stride
    }

    pub fn write_kv(&self, map: &mut KvMap) {
        map.set("model.depth", self.slow.backbone.depth.layers());
        map.set("model.alpha", self.alpha);
        map.set("model.beta", self.beta);
        map.set("model.slow.width", self.slow.base_width());
        map.set("model.slow.stride", self.slow.temporal_stride);
        map.set("model.fast.width", self.fast.base_width());
        map.set("model.fast.stride", self.fast.temporal_stride);
        match &self.regular {
            Some(r) => {
                map.set("model.regular.enabled", true);
                map.set("model.regular.width", r.base_width());
            }
            None => map.set("model.regular.enabled", false),
        }
        map.set("model.wiring", self.wiring);
        let points: Vec<&str> = FUSION_POINTS
            .iter()
            .zip(self.fusion_points)
            .filter(|(_, on)| *on)
            .map(|(n, _)| *n)
            .collect();
        map.set("model.fusion_points", points.join(","));
        map.set("model.head_dropout", self.head_dropout);
        map.set("model.in_channels", self.in_channels);
    }

    /// Reads `model.*` keys; missing keys take the values of [`SfrConfig::tiny`].
    pub fn read_kv(r: &mut KvReader<'_>) -> Result<Self> {
        let base = Self::tiny();
        let depth = Depth::from_layers(r.or("model.depth", 18usize)?)?;
        let alpha = r.or("model.alpha", base.alpha)?;
        let fast_stride = r.or("model.fast.stride", 1usize)?;
        let slow = PathwayConfig::new(
            r.or("model.slow.stride", fast_stride * alpha)?,
            depth,
            r.or("model.slow.width", base.slow.base_width())?,
        );
        let fast = PathwayConfig::new(
            fast_stride,
            depth,
            r.or("model.fast.width", base.fast.base_width())?,
        );
        let regular_width = r.or("model.regular.width", slow.base_width())?;
        let regular = r
            .or("model.regular.enabled", true)?
            .then(|| PathwayConfig::new(fast_stride, depth, regular_width));
        let points: String = r.or("model.fusion_points", "stem,stage1,stage2,stage3".to_string())?;
        let mut fusion_points = [false; STAGES];
        for item in points.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let i = FUSION_POINTS
                .iter()
                .position(|n| *n == item || n.trim_start_matches("stage") == item)
                .ok_or_else(|| Error::Config(format!("unknown fusion point {item:?}")))?;
            fusion_points[i] = true;
        }
        let cfg = Self {
            slow,
            fast,
            regular,
            alpha,
            beta: r.or("model.beta", base.beta)?,
            wiring: r.or("model.wiring", base.wiring)?,
            fusion_points,
            head_dropout: r.or("model.head_dropout", 0.0)?,
            in_channels: r.or("model.in_channels", 1usize)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv_text(&self) -> String {
        let mut map = KvMap::new();
        self.write_kv(&mut map);
        map.to_text()
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let map = KvMap::parse(text)?;
        let mut r = map.reader();
        let cfg = Self::read_kv(&mut r)?;
        r.finish()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Default)]
struct Fusion {
    fast_to_slow: Option<Conv3d>,
    regular_to_fast: Option<Conv3d>,
    regular_to_slow: Option<Conv3d>,
}

/// Pooled `[B, C]` features of each pathway.
#[derive(Clone, Copy, Debug)]
pub struct PathwayFeatures {
    pub slow: Var,
    pub fast: Var,
    pub regular: Option<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub label: Label,
    /// Softmax probabilities `[p_T, p_NT]`.
    pub probs: [f32; 2],
}

#[derive(Clone, Debug)]
pub struct SfrModel {
    config: SfrConfig,
    pub params: ParamStore,
    slow: Backbone,
    fast: Backbone,
    regular: Option<Backbone>,
    fusions: Vec<Fusion>,
    head_weight: ParamId,
    head_bias: ParamId,
}

impl SfrModel {
    /// Builds and initializes the network; parameters are a deterministic function of
    /// `(config, seed)`.
    pub fn build(config: &SfrConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let c = config;
        let mut slow_extra = [0; STAGES];
        for (p, extra) in slow_extra.iter_mut().enumerate() {
            if c.fusion_points[p] && c.fast_to_slow() {
                *extra = 2 * c.fast.channels_at(p);
            }
        }
        let inc = c.in_channels;
        let slow = Backbone::build(&mut params, &mut rng, "slow", c.slow.backbone, inc, slow_extra)?;
        let fast = Backbone::build(&mut params, &mut rng, "fast", c.fast.backbone, inc, [0; STAGES])?;
        let regular = c
            .regular
            .map(|r| Backbone::build(&mut params, &mut rng, "regular", r.backbone, inc, [0; STAGES]))
            .transpose()?;

        let mut fusions = vec![Fusion::default(); STAGES];
        for (p, fusion) in fusions.iter_mut().enumerate() {
            if !c.fusion_points[p] {
                continue;
            }
            let name = format!("fusion.{}", FUSION_POINTS[p]);
            let (cs, cf) = (c.slow.channels_at(p), c.fast.channels_at(p));
            if c.fast_to_slow() {
                fusion.fast_to_slow = Some(Conv3d::new(
                    &mut params,
                    &mut rng,
                    &format!("{name}.fast_to_slow"),
                    cf,
                    2 * cf,
                    [FAST_TO_SLOW_KERNEL, 1, 1],
                    Conv3dOptions {
                        stride: [c.alpha, 1, 1],
                        padding: [FAST_TO_SLOW_KERNEL / 2, 0, 0],
                    },
                    true,
                )?);
            }
            if let Some(r) = &c.regular {
                let cr = r.channels_at(p);
                if c.regular_to_fast() {
                    fusion.regular_to_fast = Some(Conv3d::new(
                        &mut params,
                        &mut rng,
                        &format!("{name}.regular_to_fast"),
                        cr,
                        cf,
                        [1, 1, 1],
                        Conv3dOptions::default(),
                        true,
                    )?);
                }
                if c.regular_to_slow() {
                    fusion.regular_to_slow = Some(Conv3d::new(
                        &mut params,
                        &mut rng,
                        &format!("{name}.regular_to_slow"),
                        cr,
                        cs,
                        [1, 1, 1],
                        Conv3dOptions {
                            stride: [c.alpha, 1, 1],
                            padding: [0, 0, 0],
                        },
                        true,
                    )?);
                }
            }
        }

        let features = c.head_features();
        let head_weight = params.insert(
            "head.weight",
            uniform_init(&[NUM_CLASSES, features], features, &mut rng)?,
        )?;
        let head_bias = params.insert("head.bias", Tensor::zeros(&[NUM_CLASSES])?)?;
        Ok(Self {
            config: config.clone(),
            params,
            slow,
            fast,
            regular,
            fusions,
            head_weight,
            head_bias,
        })
    }

    pub fn config(&self) -> &SfrConfig {
        &self.config
    }

    pub fn count_parameters(&self) -> usize {
        self.params.count()
    }

    /// Parameters of all lateral-connection convolutions.
    pub fn fusion_params(&self) -> Vec<ParamId> {
        self.fusions
            .iter()
            .flat_map(|f| [&f.fast_to_slow, &f.regular_to_fast, &f.regular_to_slow])
            .flatten()
            .flat_map(Conv3d::params)
            .collect()
    }

    pub fn head_params(&self) -> [ParamId; 2] {
        [self.head_weight, self.head_bias]
    }

    /// Checks a `[B, C, T, H, W]` clip shape against the configuration.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 5 || shape[1] != self.config.in_channels {
            return Err(shape_err!(
                "clip must be [B, {}, T, H, W], got {shape:?}",
                self.config.in_channels
            ));
        }
        if shape[2] < self.config.min_frames() {
            return Err(Error::Input(format!(
                "clip has {} frames; at least {} (alpha × fast stride) are required",
                shape[2],
                self.config.min_frames()
            )));
        }
        if shape[3] < MIN_SPATIAL || shape[4] < MIN_SPATIAL {
            return Err(Error::Input(format!(
                "frames are {}×{}; at least {MIN_SPATIAL}×{MIN_SPATIAL} is required",
                shape[3], shape[4]
            )));
        }
        Ok(())
    }

    /// Runs all pathways with lateral fusion and returns the pooled features.
    pub fn forward_features(&self, g: &mut Graph, clip: Var) -> Result<PathwayFeatures> {
        self.features_with(g, &self.params, clip)
    }

    fn features_with(&self, g: &mut Graph, store: &ParamStore, clip: Var) -> Result<PathwayFeatures> {
        self.check_input(g.shape(clip))?;
        let c = &self.config;
        let slow_in = g.temporal_subsample(clip, c.slow.temporal_stride)?;
        let fast_in = g.temporal_subsample(clip, c.fast.temporal_stride)?;
        let mut s = self.slow.stem_forward(g, store, slow_in)?;
        let mut f = self.fast.stem_forward(g, store, fast_in)?;
        let mut r = match &self.regular {
            Some(bb) => Some(bb.stem_forward(g, store, fast_in)?),
            None => None,
        };
        for stage in 0..STAGES {
            let fusion = &self.fusions[stage];
            if let (Some(conv), Some(rv)) = (&fusion.regular_to_fast, r) {
                let proj = conv.forward(g, store, rv)?;
                f = g.add(f, proj)?;
            }
            if let (Some(conv), Some(rv)) = (&fusion.regular_to_slow, r) {
                let proj = conv.forward(g, store, rv)?;
                s = g.add(s, proj)?;
            }
            if let Some(conv) = &fusion.fast_to_slow {
                let lateral = conv.forward(g, store, f)?;
                s = g.concat(&[s, lateral], 1)?;
            }
            s = self.slow.stage_forward(g, store, stage, s)?;
            f = self.fast.stage_forward(g, store, stage, f)?;
            if let (Some(bb), Some(rv)) = (&self.regular, r) {
                r = Some(bb.stage_forward(g, store, stage, rv)?);
            }
        }
        let pool = |g: &mut Graph, v: Var| -> Result<Var> {
            let p = g.global_avg_pool3d(v)?;
            let shape = g.shape(p)[..2].to_vec();
            g.reshape(p, &shape)
        };
        Ok(PathwayFeatures {
            slow: pool(g, s)?,
            fast: pool(g, f)?,
            regular: r.map(|rv| pool(g, rv)).transpose()?,
        })
    }

    /// Logits `[B, 2]` without dropout.
    pub fn forward(&self, g: &mut Graph, clip: Var) -> Result<Var> {
        self.forward_impl(g, &self.params, clip, None::<&mut ChaCha8Rng>)
    }

    /// [`SfrModel::forward`] reading weights from `store`, which must have this
    /// model's layout (e.g. a perturbed copy of [`SfrModel::params`]).
    pub fn forward_with(&self, g: &mut Graph, store: &ParamStore, clip: Var) -> Result<Var> {
        if store.len() != self.params.len() {
            return Err(Error::Contract("parameter store does not match the model".into()));
        }
        self.forward_impl(g, store, clip, None::<&mut ChaCha8Rng>)
    }

    /// Logits `[B, 2]` with head dropout drawn from `rng` (training mode).
    pub fn forward_train(&self, g: &mut Graph, clip: Var, rng: &mut impl Rng) -> Result<Var> {
        self.forward_impl(g, &self.params, clip, Some(rng))
    }

    fn forward_impl<R: Rng>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        clip: Var,
        rng: Option<&mut R>,
    ) -> Result<Var> {
        let feats = self.features_with(g, store, clip)?;
        let mut parts = vec![feats.slow, feats.fast];
        parts.extend(feats.regular);
        let mut x = g.concat(&parts, 1)?;
        if let Some(rng) = rng {
            if self.config.head_dropout > 0.0 {
                x = g.dropout(x, self.config.head_dropout, rng)?;
            }
        }
        let w = g.param(store, self.head_weight);
        let b = g.param(store, self.head_bias);
        g.linear(x, w, Some(b))
    }

    /// Logits for a `[B, C, T, H, W]` clip tensor.
    pub fn logits(&self, clip: Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.input(clip);
        let out = self.forward(&mut g, x)?;
        Ok(g.value(out).clone())
    }

    /// Arg-max of the softmax; ties go to NT.
    pub fn predict(&self, clip: Tensor) -> Result<Vec<Prediction>> {
        let mut g = Graph::new();
        let x = g.input(clip);
        let logits = self.forward(&mut g, x)?;
        let probs = g.softmax(logits)?;
        Ok(predictions_from_probs(g.value(probs).data()))
    }
}

/// Turns `[B, 2]` probability rows into predictions (T only when strictly greater).
pub fn predictions_from_probs(rows: &[f32]) -> Vec<Prediction> {
    rows.chunks_exact(NUM_CLASSES)
        .map(|p| Prediction {
            label: if p[0] > p[1] { Label::T } else { Label::NT },
            probs: [p[0], p[1]],
        })
        .collect()
}
