#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct PoolGeom {
    /// batch · channels
    pub planes: usize,
    pub input: [usize; 3],
    pub window: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub output: [usize; 3],
}

/// Max pooling; padded cells never win. Returns the output and, for every output
/// element, the flat input index it was taken from.
pub(crate) fn max_pool_forward(x: &[f32], g: &PoolGeom) -> (Vec<f32>, Vec<u32>) {
    let [ti, hi, wi] = g.input;
    let [to, ho, wo] = g.output;
    let vin = ti * hi * wi;
    let vout = to * ho * wo;
    let mut out = vec![0.0; g.planes * vout];
    let mut arg = vec![0u32; g.planes * vout];
    for plane in 0..g.planes {
        let base = plane * vin;
        let xp = &x[base..base + vin];
        for ot in 0..to {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for a in 0..g.window[0] {
                        let it = (ot * g.stride[0] + a) as isize - g.pad[0] as isize;
                        if it < 0 || it >= ti as isize {
                            continue;
                        }
                        for b in 0..g.window[1] {
                            let ih = (oh * g.stride[1] + b) as isize - g.pad[1] as isize;
                            if ih < 0 || ih >= hi as isize {
                                continue;
                            }
                            for c in 0..g.window[2] {
                                let iw = (ow * g.stride[2] + c) as isize - g.pad[2] as isize;
                                if iw < 0 || iw >= wi as isize {
                                    continue;
                                }
                                let idx = (it as usize * hi + ih as usize) * wi + iw as usize;
                                let v = xp[idx];
                                if v > best || best_idx == usize::MAX {
                                    best = v;
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    let o = plane * vout + (ot * ho + oh) * wo + ow;
                    out[o] = best;
                    arg[o] = (base + best_idx) as u32;
                }
            }
        }
    }
    (out, arg)
}

pub(crate) fn max_pool_backward(dout: &[f32], argmax: &[u32], dx: &mut [f32]) {
    for (g, &i) in dout.iter().zip(argmax) {
        dx[i as usize] += g;
    }
}

/// Mean over each plane of `volume` elements.
pub(crate) fn global_avg_forward(x: &[f32], volume: usize) -> Vec<f32> {
    x.chunks_exact(volume)
        .map(|plane| (plane.iter().map(|&v| v as f64).sum::<f64>() / volume as f64) as f32)
        .collect()
}

pub(crate) fn global_avg_backward(dout: &[f32], volume: usize, dx: &mut [f32]) {
    let scale = 1.0 / volume as f32;
    for (plane, &g) in dx.chunks_exact_mut(volume).zip(dout) {
        let v = g * scale;
        plane.iter_mut().for_each(|d| *d += v);
    }
}
