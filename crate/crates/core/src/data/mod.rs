//! Video clips, the synthetic embryo generator, augmentation, temporal sampling,
//! stratified splits and the on-disk dataset format.

pub mod augment;
pub mod blobs;
pub mod disk;
pub mod sampling;
pub mod splits;
pub mod synthetic;

use crate::error::{Error, Result};
use crate::label::Label;
use crate::tensor::Tensor;

/// Nominal acquisition period between frames.
pub const FRAME_PERIOD_MINUTES: f32 = 15.0;

/// A labeled grayscale video. Pixels are stored as 8-bit intensities (the on-disk
/// PNG depth); `value / 255` is the `[0, 1]` intensity seen by the model.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub id: String,
    /// Id of the original video this clip derives from (itself when original).
    pub source_id: String,
    pub label: Label,
    pub seed: u64,
    pub frame_period_minutes: f32,
    frames: usize,
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl VideoClip {
    pub fn new(
        id: impl Into<String>,
        label: Label,
        seed: u64,
        dims: [usize; 3],
        pixels: Vec<u8>,
    ) -> Result<Self> {
        let [frames, height, width] = dims;
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::Param(format!("video dimensions {dims:?} must be positive")));
        }
        if pixels.len() != frames * height * width {
            return Err(Error::Param(format!(
                "video {dims:?} needs {} pixels, got {}",
                frames * height * width,
                pixels.len()
            )));
        }
        let id = id.into();
        Ok(Self {
            source_id: id.clone(),
            id,
            label,
            seed,
            frame_period_minutes: FRAME_PERIOD_MINUTES,
            frames,
            height,
            width,
            pixels,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.frame_len();
        &self.pixels[t * n..(t + 1) * n]
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Same metadata, new pixels of possibly different frame count.
    pub(crate) fn with_pixels(&self, frames: usize, pixels: Vec<u8>) -> Self {
        debug_assert_eq!(pixels.len(), frames * self.frame_len());
        Self {
            frames,
            pixels,
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        Self {
            id: self.id.clone(),
            source_id: self.source_id.clone(),
            label: self.label,
            seed: self.seed,
            frame_period_minutes: self.frame_period_minutes,
            frames: self.frames,
            height: self.height,
            width: self.width,
            pixels: Vec::new(),
        }
    }

    /// `[T, 1, H, W]` tensor of intensities in `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.pixels.iter().map(|&p| to_unit(p)).collect();
        Tensor::new(&[self.frames, 1, self.height, self.width], data)
            .expect("video dimensions are validated at construction")
    }
}

pub fn to_unit(p: u8) -> f32 {
    p as f32 / 255.0
}

/// Rounds a `[0, 1]` intensity (clamped) to 8 bits.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Mixes a global seed with a string id (FNV-1a followed by a SplitMix64 finalizer),
/// so per-video randomness does not depend on generation order.
pub fn derive_seed(seed: u64, id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h.rotate_left(17);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_seed_separates_ids_and_seeds() {
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_ne!(derive_seed(1, "a"), derive_seed(2, "a"));
        assert_eq!(derive_seed(7, "vid"), derive_seed(7, "vid"));
    }

    #[test]
    fn quantize_round_trips_bytes() {
        for p in 0..=255u8 {
            assert_eq!(quantize(to_unit(p)), p);
        }
        assert_eq!(quantize(-1.0), 0);
        assert_eq!(quantize(2.0), 255);
    }

    #[test]
    fn clip_validates_pixel_count() {
        assert!(VideoClip::new("v", Label::T, 0, [2, 2, 2], vec![0; 7]).is_err());
        let c = VideoClip::new("v", Label::T, 0, [2, 2, 2], (0..8).collect()).unwrap();
        assert_eq!(c.frame(1), &[4, 5, 6, 7]);
        assert_eq!(c.to_tensor().shape(), &[2, 1, 2, 2]);
    }
}
