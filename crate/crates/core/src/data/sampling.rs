//! Fixed-length clip sampling and prefix truncation.

use std::fmt;
use std::str::FromStr;

use super::augment::{augment, AugmentationChain};
use super::{to_unit, VideoClip};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleStrategy {
    /// `clip_len` indices evenly spaced over `[0, T − 1]`.
    Uniform,
    /// The first `clip_len` frames.
    Front,
}

impl fmt::Display for SampleStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SampleStrategy::Uniform => "uniform",
            SampleStrategy::Front => "front",
        })
    }
}

impl FromStr for SampleStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SampleStrategy::Uniform),
            "front" => Ok(SampleStrategy::Front),
            other => Err(Error::Config(format!("unknown sampling strategy {other:?}"))),
        }
    }
}

/// Frame indices of a `clip_len` clip from a `frames`-long video. Videos shorter
/// than the clip are padded by repeating their last frame.
pub fn sample_indices(frames: usize, clip_len: usize, strategy: SampleStrategy) -> Result<Vec<usize>> {
    if frames == 0 || clip_len == 0 {
        return Err(Error::Param(format!(
            "cannot sample {clip_len} frames from a {frames}-frame video"
        )));
    }
    if frames <= clip_len {
        return Ok((0..clip_len).map(|i| i.min(frames - 1)).collect());
    }
    Ok(match strategy {
        SampleStrategy::Front => (0..clip_len).collect(),
        SampleStrategy::Uniform if clip_len == 1 => vec![0],
        SampleStrategy::Uniform => {
            let (num, den) = ((frames - 1) as u64, (clip_len - 1) as u64);
            // round(i·num/den) with exact integer arithmetic, halves rounded up
            (0..clip_len as u64)
                .map(|i| ((2 * i * num + den) / (2 * den)) as usize)
                .collect()
        }
    })
}

fn gather(video: &VideoClip, indices: &[usize]) -> VideoClip {
    let mut pixels = Vec::with_capacity(indices.len() * video.frame_len());
    for &t in indices {
        pixels.extend_from_slice(video.frame(t));
    }
    video.with_pixels(indices.len(), pixels)
}

fn clip_tensor(clip: &VideoClip) -> Tensor {
    let data = clip.pixels().iter().map(|&p| to_unit(p)).collect();
    Tensor::new(&[1, clip.frames(), clip.height(), clip.width()], data)
        .expect("clip dimensions are validated")
}

/// `[1, clip_len, H, W]` clip (channel first, ready to batch as `[B, C, T, H, W]`).
pub fn sample_clip(video: &VideoClip, clip_len: usize, strategy: SampleStrategy) -> Result<Tensor> {
    let idx = sample_indices(video.frames(), clip_len, strategy)?;
    Ok(clip_tensor(&gather(video, &idx)))
}

/// Samples, then augments only the selected frames. Because every frame receives
/// the same transform, this equals sampling from the fully augmented video.
pub fn sample_augmented_clip(
    video: &VideoClip,
    clip_len: usize,
    strategy: SampleStrategy,
    chain: Option<&AugmentationChain>,
) -> Result<Tensor> {
    let idx = sample_indices(video.frames(), clip_len, strategy)?;
    let clip = gather(video, &idx);
    Ok(match chain {
        Some(c) => clip_tensor(&augment(&clip, c)?),
        None => clip_tensor(&clip),
    })
}

/// Keeps the first `keep_frames` frames.
pub fn truncate(video: &VideoClip, keep_frames: usize) -> Result<VideoClip> {
    if keep_frames == 0 || keep_frames > video.frames() {
        return Err(Error::Param(format!(
            "cannot keep {keep_frames} of {} frames",
            video.frames()
        )));
    }
    let n = keep_frames * video.frame_len();
    Ok(video.with_pixels(keep_frames, video.pixels()[..n].to_vec()))
}

/// `from, from − step, …` down to the last length ≥ `to`.
pub fn sweep_lengths(from: usize, to: usize, step: usize) -> Vec<usize> {
    (to.min(from)..=from).rev().step_by(step.max(1)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::Label;

    fn video(frames: usize) -> VideoClip {
        let pixels = (0..frames * 4).map(|i| (i / 4) as u8).collect();
        VideoClip::new("v", Label::T, 0, [frames, 2, 2], pixels).unwrap()
    }

    #[test]
    fn uniform_indices_match_rounding_definition() {
        let idx = sample_indices(300, 64, SampleStrategy::Uniform).unwrap();
        for (i, &v) in idx.iter().enumerate() {
            assert_eq!(v, (i as f64 * 299.0 / 63.0).round() as usize);
        }
        assert_eq!(idx[0], 0);
        assert_eq!(idx[63], 299);
    }

    #[test]
    fn identity_and_padding() {
        assert_eq!(
            sample_indices(64, 64, SampleStrategy::Uniform).unwrap(),
            (0..64).collect::<Vec<_>>()
        );
        let idx = sample_indices(40, 64, SampleStrategy::Uniform).unwrap();
        assert_eq!(&idx[..40], &(0..40).collect::<Vec<_>>()[..]);
        assert!(idx[40..].iter().all(|&i| i == 39));
        assert_eq!(idx[40..].len(), 24);
    }

    #[test]
    fn front_takes_prefix() {
        assert_eq!(sample_indices(10, 3, SampleStrategy::Front).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn clip_tensor_layout() {
        let t = sample_clip(&video(10), 4, SampleStrategy::Front).unwrap();
        assert_eq!(t.shape(), &[1, 4, 2, 2]);
        assert_eq!(t.data()[4], 1.0 / 255.0);
    }

    #[test]
    fn truncation_rules() {
        let v = video(300);
        let t = truncate(&v, 270).unwrap();
        assert_eq!(t.frames(), 270);
        assert_eq!(t.frame(269), v.frame(269));
        assert_eq!(truncate(&v, 300).unwrap(), v);
        assert!(truncate(&v, 301).is_err());
        assert!(truncate(&v, 0).is_err());
    }

    #[test]
    fn default_sweep() {
        assert_eq!(sweep_lengths(300, 120, 30), vec![300, 270, 240, 210, 180, 150, 120]);
    }
}
