/// Group normalization over `[batch, channels, spatial]` with `groups` channel groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct NormGeom {
    pub batch: usize,
    pub channels: usize,
    pub spatial: usize,
    pub groups: usize,
}

impl NormGeom {
    fn group_len(&self) -> usize {
        self.channels / self.groups * self.spatial
    }
}

/// Returns `(y, mean, rstd)`; statistics are per (sample, group) and accumulated in f64.
pub(crate) fn group_norm_forward(
    x: &[f32],
    gamma: &[f32],
    beta: &[f32],
    g: &NormGeom,
    eps: f32,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let n = g.group_len();
    let cpg = g.channels / g.groups;
    let mut y = vec![0.0; x.len()];
    let mut means = Vec::with_capacity(g.batch * g.groups);
    let mut rstds = Vec::with_capacity(g.batch * g.groups);
    for (gi, (xs, ys)) in x.chunks_exact(n).zip(y.chunks_exact_mut(n)).enumerate() {
        let mean = xs.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var = xs
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n as f64;
        let rstd = 1.0 / (var + eps as f64).sqrt();
        let (mean, rstd) = (mean as f32, rstd as f32);
        let c0 = (gi % g.groups) * cpg;
        for (ci, (xc, yc)) in xs
            .chunks_exact(g.spatial)
            .zip(ys.chunks_exact_mut(g.spatial))
            .enumerate()
        {
            let scale = gamma[c0 + ci] * rstd;
            let shift = beta[c0 + ci] - mean * scale;
            for (o, &v) in yc.iter_mut().zip(xc) {
                *o = v * scale + shift;
            }
        }
        means.push(mean);
        rstds.push(rstd);
    }
    (y, means, rstds)
}

/// Accumulates `dx`, `dgamma`, `dbeta` when requested.
#[allow(clippy::too_many_arguments)]
pub(crate) fn group_norm_backward(
    x: &[f32],
    gamma: &[f32],
    means: &[f32],
    rstds: &[f32],
    g: &NormGeom,
    dy: &[f32],
    mut dx: Option<&mut [f32]>,
    mut dgamma: Option<&mut [f32]>,
    mut dbeta: Option<&mut [f32]>,
) {
    let n = g.group_len();
    let cpg = g.channels / g.groups;
    for (gi, (xs, dys)) in x.chunks_exact(n).zip(dy.chunks_exact(n)).enumerate() {
        let (mean, rstd) = (means[gi], rstds[gi]);
        let c0 = (gi % g.groups) * cpg;
        // sums of dxhat and dxhat·xhat over the group
        let mut s1 = 0.0f64;
        let mut s2 = 0.0f64;
        for (ci, (xc, dc)) in xs
            .chunks_exact(g.spatial)
            .zip(dys.chunks_exact(g.spatial))
            .enumerate()
        {
            let c = c0 + ci;
            let mut sg = 0.0f64;
            let mut sb = 0.0f64;
            for (&v, &d) in xc.iter().zip(dc) {
                let xhat = (v - mean) * rstd;
                sg += (d * xhat) as f64;
                sb += d as f64;
            }
            if let Some(dgamma) = dgamma.as_deref_mut() {
                dgamma[c] += sg as f32;
            }
            if let Some(dbeta) = dbeta.as_deref_mut() {
                dbeta[c] += sb as f32;
            }
            s1 += sb * gamma[c] as f64;
            s2 += sg * gamma[c] as f64;
        }
        if let Some(dx) = dx.as_deref_mut() {
            let m1 = (s1 / n as f64) as f32;
            let m2 = (s2 / n as f64) as f32;
            let dxs = &mut dx[gi * n..(gi + 1) * n];
            for (ci, ((xc, dc), oc)) in xs
                .chunks_exact(g.spatial)
                .zip(dys.chunks_exact(g.spatial))
                .zip(dxs.chunks_exact_mut(g.spatial))
                .enumerate()
            {
                let gm = gamma[c0 + ci];
                for ((&v, &d), o) in xc.iter().zip(dc).zip(oc.iter_mut()) {
                    let xhat = (v - mean) * rstd;
                    *o += rstd * (d * gm - m1 - xhat * m2);
                }
            }
        }
    }
}
