use super::gemm;

/// Fully resolved geometry of one 3D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub input: [usize; 3],
    pub cout: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeom {
    fn in_volume(&self) -> usize {
        self.input.iter().product()
    }

    fn out_volume(&self) -> usize {
        self.output.iter().product()
    }

    fn patch(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }

    fn pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }
}

/// Unfolds one sample `[cin, T, H, W]` into `[cin·kT·kH·kW, T'·H'·W']`.
fn im2col(x: &[f32], g: &ConvGeom, cols: &mut [f32]) {
    let [ti, hi, wi] = g.input;
    let [to, ho, wo] = g.output;
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.pad;
    let p = to * ho * wo;
    let mut row = 0;
    for ci in 0..g.cin {
        let xc = &x[ci * ti * hi * wi..(ci + 1) * ti * hi * wi];
        for dt in 0..kt {
            for dh in 0..kh {
                for dw in 0..kw {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    let (lo, hi_ow) = valid_range(wo, sw, dw, pw, wi);
                    for ot in 0..to {
                        let plane = &mut dst[ot * ho * wo..(ot + 1) * ho * wo];
                        let it = (ot * st + dt) as isize - pt as isize;
                        if it < 0 || it >= ti as isize {
                            plane.fill(0.0);
                            continue;
                        }
                        let it = it as usize;
                        for oh in 0..ho {
                            let line = &mut plane[oh * wo..(oh + 1) * wo];
                            let ih = (oh * sh + dh) as isize - ph as isize;
                            if ih < 0 || ih >= hi as isize {
                                line.fill(0.0);
                                continue;
                            }
                            let src = &xc[(it * hi + ih as usize) * wi..][..wi];
                            line[..lo].fill(0.0);
                            line[hi_ow..].fill(0.0);
                            if sw == 1 {
                                let start = lo + dw - pw;
                                line[lo..hi_ow].copy_from_slice(&src[start..start + hi_ow - lo]);
                            } else {
                                for (ow, v) in line.iter_mut().enumerate().take(hi_ow).skip(lo) {
                                    *v = src[ow * sw + dw - pw];
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into one sample's input gradient.
fn col2im(cols: &[f32], g: &ConvGeom, dx: &mut [f32]) {
    let [ti, hi, wi] = g.input;
    let [to, ho, wo] = g.output;
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.pad;
    let p = to * ho * wo;
    let mut row = 0;
    for ci in 0..g.cin {
        let xc = &mut dx[ci * ti * hi * wi..(ci + 1) * ti * hi * wi];
        for dt in 0..kt {
            for dh in 0..kh {
                for dw in 0..kw {
                    let src = &cols[row * p..(row + 1) * p];
                    let (lo, hi_ow) = valid_range(wo, sw, dw, pw, wi);
                    for ot in 0..to {
                        let it = (ot * st + dt) as isize - pt as isize;
                        if it < 0 || it >= ti as isize {
                            continue;
                        }
                        let it = it as usize;
                        for oh in 0..ho {
                            let ih = (oh * sh + dh) as isize - ph as isize;
                            if ih < 0 || ih >= hi as isize {
                                continue;
                            }
                            let line = &src[(ot * ho + oh) * wo..][..wo];
                            let dst = &mut xc[(it * hi + ih as usize) * wi..][..wi];
                            for ow in lo..hi_ow {
                                dst[ow * sw + dw - pw] += line[ow];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Output columns `ow` in `[lo, hi)` read an in-bounds input column for kernel offset `dw`.
fn valid_range(wo: usize, sw: usize, dw: usize, pw: usize, wi: usize) -> (usize, usize) {
    // need 0 <= ow*sw + dw - pw < wi
    let lo = if pw > dw { (pw - dw).div_ceil(sw) } else { 0 };
    let hi = if wi + pw > dw {
        ((wi + pw - dw - 1) / sw + 1).min(wo)
    } else {
        0
    };
    (lo.min(hi), hi)
}

pub(crate) fn conv3d_forward(x: &[f32], w: &[f32], bias: Option<&[f32]>, g: &ConvGeom) -> Vec<f32> {
    let k = g.patch();
    let p = g.out_volume();
    let vin = g.cin * g.in_volume();
    let mut out = vec![0.0; g.batch * g.cout * p];
    let mut cols = if g.pointwise() { Vec::new() } else { vec![0.0; k * p] };
    for b in 0..g.batch {
        let xb = &x[b * vin..(b + 1) * vin];
        let rhs: &[f32] = if g.pointwise() {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols
        };
        let ob = &mut out[b * g.cout * p..(b + 1) * g.cout * p];
        gemm(g.cout, k, p, w, (k, 1), rhs, (p, 1), 0.0, ob);
        if let Some(bias) = bias {
            for (co, plane) in ob.chunks_exact_mut(p).enumerate() {
                let bv = bias[co];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

/// Accumulates gradients into whichever of `dx`, `dw`, `dbias` are requested.
pub(crate) fn conv3d_backward(
    x: &[f32],
    w: &[f32],
    g: &ConvGeom,
    dout: &[f32],
    mut dx: Option<&mut [f32]>,
    mut dw: Option<&mut [f32]>,
    mut dbias: Option<&mut [f32]>,
) {
    let k = g.patch();
    let p = g.out_volume();
    let vin = g.cin * g.in_volume();
    let mut cols = if g.pointwise() { Vec::new() } else { vec![0.0; k * p] };
    for b in 0..g.batch {
        let xb = &x[b * vin..(b + 1) * vin];
        let db = &dout[b * g.cout * p..(b + 1) * g.cout * p];
        if let Some(dw) = dw.as_deref_mut() {
            let lhs: &[f32] = if g.pointwise() {
                xb
            } else {
                im2col(xb, g, &mut cols);
                &cols
            };
            // dW[cout, k] += dout[cout, p] · colsᵀ[p, k]
            gemm(g.cout, p, k, db, (p, 1), lhs, (1, p), 1.0, dw);
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxb = &mut dx[b * vin..(b + 1) * vin];
            if g.pointwise() {
                gemm(k, g.cout, p, w, (1, k), db, (p, 1), 1.0, dxb);
            } else {
                gemm(k, g.cout, p, w, (1, k), db, (p, 1), 0.0, &mut cols);
                col2im(&cols, g, dxb);
            }
        }
        if let Some(dbias) = dbias.as_deref_mut() {
            for (co, plane) in db.chunks_exact(p).enumerate() {
                dbias[co] += plane.iter().sum::<f32>();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(input: [usize; 3], kernel: [usize; 3], stride: [usize; 3], pad: [usize; 3]) -> ConvGeom {
        let output = [0, 1, 2].map(|i| (input[i] + 2 * pad[i] - kernel[i]) / stride[i] + 1);
        ConvGeom {
            batch: 1,
            cin: 2,
            input,
            cout: 3,
            kernel,
            stride,
            pad,
            output,
        }
    }

    /// Direct seven-loop convolution used as an independent reference.
    fn naive(x: &[f32], w: &[f32], g: &ConvGeom) -> Vec<f32> {
        let [ti, hi, wi] = g.input;
        let [to, ho, wo] = g.output;
        let [kt, kh, kw] = g.kernel;
        let mut out = vec![0.0f32; g.cout * to * ho * wo];
        for co in 0..g.cout {
            for ot in 0..to {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = 0.0f64;
                        for ci in 0..g.cin {
                            for a in 0..kt {
                                for b in 0..kh {
                                    for c in 0..kw {
                                        let it = (ot * g.stride[0] + a) as isize - g.pad[0] as isize;
                                        let ih = (oh * g.stride[1] + b) as isize - g.pad[1] as isize;
                                        let iw = (ow * g.stride[2] + c) as isize - g.pad[2] as isize;
                                        if it < 0 || ih < 0 || iw < 0 || it >= ti as isize || ih >= hi as isize || iw >= wi as isize {
                                            continue;
                                        }
                                        let xv = x[((ci * ti + it as usize) * hi + ih as usize) * wi + iw as usize];
                                        let wv = w[(((co * g.cin + ci) * kt + a) * kh + b) * kw + c];
                                        acc += (xv * wv) as f64;
                                    }
                                }
                            }
                        }
                        out[((co * to + ot) * ho + oh) * wo + ow] = acc as f32;
                    }
                }
            }
        }
        out
    }

    fn ramp(n: usize, scale: f32) -> Vec<f32> {
        (0..n).map(|i| ((i * 7919 % 23) as f32 - 11.0) * scale).collect()
    }

    #[test]
    fn im2col_path_matches_direct_loops() {
        for (kernel, stride, pad) in [
            ([3, 3, 3], [1, 1, 1], [1, 1, 1]),
            ([1, 3, 3], [1, 2, 2], [0, 1, 1]),
            ([5, 1, 1], [4, 1, 1], [2, 0, 0]),
            ([1, 1, 1], [2, 1, 1], [0, 0, 0]),
            ([1, 1, 1], [1, 1, 1], [0, 0, 0]),
            ([1, 7, 7], [1, 2, 2], [0, 3, 3]),
        ] {
            let g = geom([6, 9, 8], kernel, stride, pad);
            let x = ramp(2 * 6 * 9 * 8, 0.1);
            let w = ramp(3 * 2 * kernel.iter().product::<usize>(), 0.05);
            let got = conv3d_forward(&x, &w, None, &g);
            let want = naive(&x, &w, &g);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-4, "{kernel:?} {stride:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = geom([4, 7, 6], [3, 3, 3], [2, 2, 1], [1, 1, 1]);
        let x = ramp(2 * 4 * 7 * 6, 0.3);
        let k = g.patch();
        let p = g.out_volume();
        let c = ramp(k * p, 0.2);
        let mut cols = vec![0.0; k * p];
        im2col(&x, &g, &mut cols);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        let mut dx = vec![0.0; x.len()];
        col2im(&c, &g, &mut dx);
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        assert!((lhs - rhs).abs() < 1e-3, "{lhs} vs {rhs}");
    }
}
