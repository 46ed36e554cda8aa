//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sfr_core::gradcheck::random_tensor;
use sfr_core::train::TensorSource;
use sfr_core::{Graph, Label, SfrModel, Tensor};

/// Parameter name → shape.
pub fn registry(model: &SfrModel) -> BTreeMap<String, Vec<usize>> {
    model
        .params
        .iter()
        .map(|p| (p.name().to_string(), p.value().shape().to_vec()))
        .collect()
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Values held by the lateral (fusion) convolutions.
pub fn fusion_count(model: &SfrModel) -> usize {
    model
        .fusion_params()
        .iter()
        .map(|&id| model.params.get(id).value().numel())
        .sum()
}

/// Values added to same-named tensors by widening their input-channel axis.
pub fn widened_count(fused: &SfrModel, plain: &SfrModel) -> usize {
    let (rf, rp) = (registry(fused), registry(plain));
    rp.iter()
        .filter_map(|(name, shape)| rf.get(name).filter(|s| *s != shape).map(|s| numel(s) - numel(shape)))
        .sum()
}

/// Copies every late-fusion parameter into `fused`, placing widened Slow weights in
/// the leading input channels, then zeroes all lateral convolutions.
pub fn transplant(none: &SfrModel, fused: &mut SfrModel) {
    for p in none.params.iter() {
        let id = fused.params.id(p.name()).unwrap();
        let src = p.value();
        let dst = fused.params.get_mut(id).value_mut();
        if dst.shape() == src.shape() {
            dst.data_mut().copy_from_slice(src.data());
            continue;
        }
        let (cout, cin, cin_wide) = (src.shape()[0], src.shape()[1], dst.shape()[1]);
        let k = numel(&src.shape()[2..]);
        for o in 0..cout {
            let from = &src.data()[o * cin * k..(o + 1) * cin * k];
            dst.data_mut()[o * cin_wide * k..o * cin_wide * k + cin * k].copy_from_slice(from);
        }
    }
    for id in fused.fusion_params() {
        fused.params.get_mut(id).value_mut().data_mut().fill(0.0);
    }
}

/// Slow, Fast and (when present) Regular pooled features, then the logits.
pub fn features(model: &SfrModel, clip: &Tensor) -> Vec<Vec<f32>> {
    let mut g = Graph::new();
    let x = g.input(clip.clone());
    let f = model.forward_features(&mut g, x).unwrap();
    let mut out = vec![g.value(f.slow).data().to_vec(), g.value(f.fast).data().to_vec()];
    out.extend(f.regular.map(|r| g.value(r).data().to_vec()));
    out.push(model.logits(clip.clone()).unwrap().data().to_vec());
    out
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// `n` random `[1, frames, 32, 32]` clips with alternating labels.
pub fn random_source(n: usize, frames: usize, seed: u64) -> TensorSource {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = (0..n)
        .map(|i| {
            let clip = random_tensor(&[1, frames, 32, 32], 1.0, &mut rng).unwrap();
            (clip, Label::ALL[i % 2])
        })
        .collect();
    TensorSource { items }
}

/// Relative L2 distance `‖a − b‖ / ‖b‖` (absolute when `b` is zero).
pub fn relative(a: &[f32], b: &[f32]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum();
    let norm: f64 = b.iter().map(|y| (*y as f64).powi(2)).sum();
    if norm == 0.0 {
        diff.sqrt()
    } else {
        (diff / norm).sqrt()
    }
}
