//! Per-video augmentation: one parameterized chain applied identically to every
//! frame of a video.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{derive_seed, quantize, to_unit, VideoClip};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Transform {
    /// Additive Gaussian noise; the field is drawn once from `seed` and shared by
    /// all frames.
    GaussianNoise { sigma: f32, seed: u64 },
    GaussianBlur { sigma: f32 },
    HorizontalFlip,
    VerticalFlip,
    /// Swaps rows and columns (square frames only).
    Transpose,
    /// Crops the box then resizes it back to the frame size (bilinear).
    Crop {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentationChain {
    pub transforms: Vec<Transform>,
}

pub const NOISE_SIGMA_RANGE: (f32, f32) = (0.01, 0.05);
pub const BLUR_SIGMA_RANGE: (f32, f32) = (0.5, 1.5);
/// A crop keeps at least this fraction of each dimension.
pub const MIN_CROP_FRACTION: f32 = 0.8;

impl AugmentationChain {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Random chain: each transform is included with probability ½, in a fixed order
    /// (crop, flips, transpose, blur, noise).
    pub fn sample(rng: &mut impl Rng, height: usize, width: usize) -> Self {
        let mut t = Vec::new();
        if rng.random_bool(0.5) {
            let ch = rng.random_range(((height as f32 * MIN_CROP_FRACTION).ceil() as usize)..=height);
            let cw = rng.random_range(((width as f32 * MIN_CROP_FRACTION).ceil() as usize)..=width);
            t.push(Transform::Crop {
                top: rng.random_range(0..=height - ch),
                left: rng.random_range(0..=width - cw),
                height: ch,
                width: cw,
            });
        }
        if rng.random_bool(0.5) {
            t.push(Transform::HorizontalFlip);
        }
        if rng.random_bool(0.5) {
            t.push(Transform::VerticalFlip);
        }
        if height == width && rng.random_bool(0.5) {
            t.push(Transform::Transpose);
        }
        if rng.random_bool(0.5) {
            t.push(Transform::GaussianBlur {
                sigma: rng.random_range(BLUR_SIGMA_RANGE.0..=BLUR_SIGMA_RANGE.1),
            });
        }
        if rng.random_bool(0.5) {
            t.push(Transform::GaussianNoise {
                sigma: rng.random_range(NOISE_SIGMA_RANGE.0..=NOISE_SIGMA_RANGE.1),
                seed: rng.random(),
            });
        }
        Self { transforms: t }
    }

    pub fn is_identity(&self) -> bool {
        self.transforms.is_empty()
    }

    fn validate(&self, height: usize, width: usize) -> Result<()> {
        for t in &self.transforms {
            match *t {
                Transform::Crop {
                    top,
                    left,
                    height: ch,
                    width: cw,
                } => {
                    if ch == 0 || cw == 0 || top + ch > height || left + cw > width {
                        return Err(Error::Param(format!(
                            "crop box {ch}×{cw} at ({top}, {left}) outside {height}×{width} frame"
                        )));
                    }
                }
                Transform::Transpose if height != width => {
                    return Err(Error::Param(format!(
                        "transpose needs square frames, got {height}×{width}"
                    )));
                }
                Transform::GaussianNoise { sigma, .. } | Transform::GaussianBlur { sigma }
                    if !(sigma >= 0.0 && sigma.is_finite()) =>
                {
                    return Err(Error::Param(format!("invalid sigma {sigma}")));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Precomputed per-chain state shared by every frame.
struct Prepared<'a> {
    chain: &'a AugmentationChain,
    noise: Vec<Option<Vec<f32>>>,
    kernels: Vec<Option<Vec<f32>>>,
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

impl<'a> Prepared<'a> {
    fn new(chain: &'a AugmentationChain, height: usize, width: usize) -> Self {
        let noise = chain
            .transforms
            .iter()
            .map(|t| match *t {
                Transform::GaussianNoise { sigma, seed } if sigma > 0.0 => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let normal = Normal::new(0.0f32, sigma).expect("validated sigma");
                    Some((0..height * width).map(|_| normal.sample(&mut rng)).collect())
                }
                _ => None,
            })
            .collect();
        let kernels = chain
            .transforms
            .iter()
            .map(|t| match *t {
                Transform::GaussianBlur { sigma } if sigma > 0.0 => Some(gaussian_kernel(sigma)),
                _ => None,
            })
            .collect();
        Self {
            chain,
            noise,
            kernels,
        }
    }

    fn apply(&self, frame: &mut Vec<f32>, height: usize, width: usize) {
        for (i, t) in self.chain.transforms.iter().enumerate() {
            match *t {
                Transform::GaussianNoise { .. } => {
                    if let Some(field) = &self.noise[i] {
                        frame.iter_mut().zip(field).for_each(|(v, n)| *v += n);
                    }
                }
                Transform::GaussianBlur { .. } => {
                    if let Some(k) = &self.kernels[i] {
                        blur(frame, height, width, k);
                    }
                }
                Transform::HorizontalFlip => {
                    for row in frame.chunks_exact_mut(width) {
                        row.reverse();
                    }
                }
                Transform::VerticalFlip => {
                    for y in 0..height / 2 {
                        for x in 0..width {
                            frame.swap(y * width + x, (height - 1 - y) * width + x);
                        }
                    }
                }
                Transform::Transpose => {
                    for y in 0..height {
                        for x in y + 1..width {
                            frame.swap(y * width + x, x * width + y);
                        }
                    }
                }
                Transform::Crop {
                    top,
                    left,
                    height: ch,
                    width: cw,
                } => *frame = crop_resize(frame, width, [top, left, ch, cw], height, width),
            }
        }
        frame.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
}

/// Separable blur with edge clamping.
fn blur(frame: &mut [f32], height: usize, width: usize, k: &[f32]) {
    let r = (k.len() / 2) as i64;
    let mut tmp = vec![0.0f32; frame.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (j, w) in k.iter().enumerate() {
                let xx = (x as i64 + j as i64 - r).clamp(0, width as i64 - 1) as usize;
                acc += w * frame[y * width + xx];
            }
            tmp[y * width + x] = acc;
        }
    }
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (j, w) in k.iter().enumerate() {
                let yy = (y as i64 + j as i64 - r).clamp(0, height as i64 - 1) as usize;
                acc += w * tmp[yy * width + x];
            }
            frame[y * width + x] = acc;
        }
    }
}

/// Bilinear resize of the `[top, left, h, w]` box to `out_h × out_w` (pixel centers
/// aligned).
fn crop_resize(src: &[f32], src_w: usize, bx: [usize; 4], out_h: usize, out_w: usize) -> Vec<f32> {
    let [top, left, ch, cw] = bx;
    let mut out = Vec::with_capacity(out_h * out_w);
    let coord = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f32) {
        let s = ((i as f32 + 0.5) * n_in as f32 / n_out as f32 - 0.5).clamp(0.0, (n_in - 1) as f32);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f32)
    };
    for y in 0..out_h {
        let (y0, y1, fy) = coord(y, out_h, ch);
        for x in 0..out_w {
            let (x0, x1, fx) = coord(x, out_w, cw);
            let at = |yy: usize, xx: usize| src[(top + yy) * src_w + left + xx];
            let a = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let b = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            out.push(a * (1.0 - fy) + b * fy);
        }
    }
    out
}

/// Applies `chain` to every frame with identical parameters; label, source and seed
/// are preserved. An empty chain returns the clip unchanged.
pub fn augment(clip: &VideoClip, chain: &AugmentationChain) -> Result<VideoClip> {
    let (h, w) = (clip.height(), clip.width());
    chain.validate(h, w)?;
    if chain.is_identity() {
        return Ok(clip.clone());
    }
    let prepared = Prepared::new(chain, h, w);
    let mut pixels = Vec::with_capacity(clip.pixels().len());
    let mut frame = Vec::with_capacity(h * w);
    for t in 0..clip.frames() {
        frame.clear();
        frame.extend(clip.frame(t).iter().map(|&p| to_unit(p)));
        prepared.apply(&mut frame, h, w);
        pixels.extend(frame.iter().map(|&v| quantize(v)));
    }
    Ok(clip.with_pixels(clip.frames(), pixels))
}

/// One entry of an expanded training set: a source clip and the chain applied to it
/// (`None` for the original).
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub source: usize,
    pub index: usize,
    pub chain: Option<AugmentationChain>,
}

/// Plan of `factor` variants per clip (the original first), each chain seeded from
/// `(seed, clip id, variant index)`. Deterministic and independent of clip order.
pub fn expansion_plan(clips: &[VideoClip], factor: usize, seed: u64) -> Result<Vec<Variant>> {
    if factor == 0 {
        return Err(Error::Param("augmentation factor must be ≥ 1".into()));
    }
    let mut plan = Vec::with_capacity(clips.len() * factor);
    for (source, clip) in clips.iter().enumerate() {
        plan.push(Variant {
            source,
            index: 0,
            chain: None,
        });
        for k in 1..factor {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("{}#{k}", clip.id)));
            plan.push(Variant {
                source,
                index: k,
                chain: Some(AugmentationChain::sample(&mut rng, clip.height(), clip.width())),
            });
        }
    }
    Ok(plan)
}

pub fn variant_id(source_id: &str, index: usize) -> String {
    if index == 0 {
        source_id.to_string()
    } else {
        format!("{source_id}~aug{index:02}")
    }
}

/// Materializes [`expansion_plan`]: `factor · |clips|` clips, originals included.
pub fn expand_training_set(clips: &[VideoClip], factor: usize, seed: u64) -> Result<Vec<VideoClip>> {
    expansion_plan(clips, factor, seed)?
        .into_iter()
        .map(|v| {
            let src = &clips[v.source];
            let mut out = match &v.chain {
                None => src.clone(),
                Some(chain) => augment(src, chain)?,
            };
            out.id = variant_id(&src.id, v.index);
            out.source_id = src.source_id.clone();
            Ok(out)
        })
        .collect()
}
