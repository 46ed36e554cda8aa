//! Hand-written reference feature: number of dark blobs (cells) in a frame.
//!
//! Dark pixels are 4-connected into components; components whose area lies in a
//! plausible cell-size range are counted. The frame background is dark too but
//! forms one component far larger than any cell.

use std::collections::VecDeque;

use super::VideoClip;
use crate::label::Label;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlobOptions {
    /// Pixels strictly darker than this `[0, 1]` intensity are foreground.
    pub threshold: f32,
    pub min_area: usize,
    /// Upper area bound as a fraction of the frame.
    pub max_area_fraction: f32,
}

impl Default for BlobOptions {
    fn default() -> Self {
        Self {
            threshold: 0.36,
            min_area: 4,
            max_area_fraction: 0.1,
        }
    }
}

pub fn count_blobs(frame: &[u8], height: usize, width: usize, opts: &BlobOptions) -> usize {
    let cutoff = opts.threshold * 255.0;
    let max_area = (opts.max_area_fraction * (height * width) as f32) as usize;
    let mut seen = vec![false; frame.len()];
    let mut queue = VecDeque::new();
    let mut count = 0;
    for start in 0..frame.len() {
        if seen[start] || (frame[start] as f32) >= cutoff {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut area = 0;
        while let Some(i) = queue.pop_front() {
            area += 1;
            let (y, x) = (i / width, i % width);
            let mut visit = |j: usize| {
                if !seen[j] && (frame[j] as f32) < cutoff {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if y > 0 {
                visit(i - width);
            }
            if y + 1 < height {
                visit(i + width);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < width {
                visit(i + 1);
            }
        }
        if area >= opts.min_area && area <= max_area {
            count += 1;
        }
    }
    count
}

/// Blob count of the last frame.
pub fn final_blob_count(clip: &VideoClip, opts: &BlobOptions) -> usize {
    count_blobs(clip.frame(clip.frames() - 1), clip.height(), clip.width(), opts)
}

/// Predicts `T` when the last frame shows at least `min_cells` blobs.
pub fn blob_classifier(clip: &VideoClip, min_cells: usize, opts: &BlobOptions) -> Label {
    if final_blob_count(clip, opts) >= min_cells {
        Label::T
    } else {
        Label::NT
    }
}
