//! Batched layer kernels. Activations are sample-major, each sample stored
//! `channels x height x width`. Every output element is produced by one
//! sequential loop, so parallel chunking never changes the arithmetic.

use super::spec::Shape;
use crate::par;
use crate::tensor::dot;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug)]
pub struct Window {
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
}

/// Rows of `x` (each `w` wide) rearranged so that, per row, the entries with
/// column index `p (mod s)` are contiguous. Column `m * s + p` of a row lands at
/// `offsets[p] + m`. Strided windows then read contiguous runs.
struct Phased {
    data: Vec<f64>,
    offsets: Vec<usize>,
}

impl Phased {
    fn new(x: &[f64], w: usize, s: usize) -> Self {
        let mut offsets = Vec::with_capacity(s);
        let mut acc = 0;
        for p in 0..s {
            offsets.push(acc);
            acc += (w + s - 1 - p) / s;
        }
        let mut data = vec![0.0; x.len()];
        for (src, dst) in x.chunks_exact(w).zip(data.chunks_exact_mut(w)) {
            for (col, &v) in src.iter().enumerate() {
                dst[offsets[col % s] + col / s] = v;
            }
        }
        Self { data, offsets }
    }

    /// `len` values of row `r` starting at column `j`, stepping by the stride.
    #[inline]
    fn run(&self, r: usize, w: usize, s: usize, j: usize, len: usize) -> &[f64] {
        let start = r * w + self.offsets[j % s] + j / s;
        &self.data[start..start + len]
    }
}

fn unphase(ph: &[f64], w: usize, s: usize, out: &mut [f64]) {
    let p = Phased::new(&vec![0.0; w], w, s);
    for (src, dst) in ph.chunks_exact(w).zip(out.chunks_exact_mut(w)) {
        for (col, d) in dst.iter_mut().enumerate() {
            *d = src[p.offsets[col % s] + col / s];
        }
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

pub fn conv_forward(x: &[f64], n: usize, ins: Shape, outs: Shape, win: Window, w: &[f64], b: &[f64]) -> Vec<f64> {
    let Window { kh, kw, sh, sw } = win;
    let (ow_n, oh_n) = (outs.w, outs.h);
    let mut y = vec![0.0; n * outs.len()];
    par::chunks_mut(&mut y, outs.len(), |s, ys| {
        let xs = Phased::new(&x[s * ins.len()..(s + 1) * ins.len()], ins.w, sw);
        for f in 0..outs.c {
            for oh in 0..oh_n {
                let row = &mut ys[(f * oh_n + oh) * ow_n..(f * oh_n + oh + 1) * ow_n];
                row.fill(b[f]);
                for c in 0..ins.c {
                    for i in 0..kh {
                        let r = c * ins.h + oh * sh + i;
                        for j in 0..kw {
                            let wv = w[((f * ins.c + c) * kh + i) * kw + j];
                            axpy(row, wv, xs.run(r, ins.w, sw, j, ow_n));
                        }
                    }
                }
            }
        }
    });
    y
}

/// Weight and bias gradients; `dx` only when `need_dx`.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    x: &[f64],
    dy: &[f64],
    n: usize,
    ins: Shape,
    outs: Shape,
    win: Window,
    w: &[f64],
    need_dx: bool,
) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
    let Window { kh, kw, sh, sw } = win;
    let (oh_n, ow_n) = (outs.h, outs.w);
    let per_filter = ins.c * kh * kw;
    let phased: Vec<Phased> = par::map_range(n, |s| Phased::new(&x[s * ins.len()..(s + 1) * ins.len()], ins.w, sw));
    let mut dw = vec![0.0; outs.c * per_filter];
    par::chunks_mut(&mut dw, per_filter, |f, dwf| {
        for (s, xs) in phased.iter().enumerate() {
            let dys = &dy[s * outs.len()..(s + 1) * outs.len()];
            for oh in 0..oh_n {
                let g = &dys[(f * oh_n + oh) * ow_n..(f * oh_n + oh + 1) * ow_n];
                for c in 0..ins.c {
                    for i in 0..kh {
                        let r = c * ins.h + oh * sh + i;
                        for j in 0..kw {
                            dwf[(c * kh + i) * kw + j] += dot(g, xs.run(r, ins.w, sw, j, ow_n));
                        }
                    }
                }
            }
        }
    });
    let mut db = vec![0.0; outs.c];
    for s in 0..n {
        for (f, dbf) in db.iter_mut().enumerate() {
            let start = s * outs.len() + f * oh_n * ow_n;
            *dbf += dy[start..start + oh_n * ow_n].iter().sum::<f64>();
        }
    }
    let dx = need_dx.then(|| {
        let mut dx = vec![0.0; n * ins.len()];
        let layout = Phased::new(&vec![0.0; ins.w], ins.w, sw);
        par::chunks_mut(&mut dx, ins.len(), |s, dxs| {
            let dys = &dy[s * outs.len()..(s + 1) * outs.len()];
            let mut acc = vec![0.0; ins.len()];
            for f in 0..outs.c {
                for oh in 0..oh_n {
                    let g = &dys[(f * oh_n + oh) * ow_n..(f * oh_n + oh + 1) * ow_n];
                    for c in 0..ins.c {
                        for i in 0..kh {
                            let r = c * ins.h + oh * sh + i;
                            for j in 0..kw {
                                let wv = w[((f * ins.c + c) * kh + i) * kw + j];
                                let start = r * ins.w + layout.offsets[j % sw] + j / sw;
                                axpy(&mut acc[start..start + ow_n], wv, g);
                            }
                        }
                    }
                }
            }
            unphase(&acc, ins.w, sw, dxs);
        });
        dx
    });
    (dw, db, dx)
}

/// Per-channel statistics over the batch and both spatial axes.
pub struct BnBatch {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Unbiased variance, for the running estimate.
    pub var_unbiased: Vec<f64>,
}

pub fn bn_forward_train(x: &[f64], n: usize, s: Shape, gamma: &[f64], beta: &[f64]) -> (Vec<f64>, BnBatch) {
    let hw = s.h * s.w;
    let count = (n * hw) as f64;
    let mut mean = vec![0.0; s.c];
    let mut var = vec![0.0; s.c];
    for c in 0..s.c {
        let mut acc = 0.0;
        for smp in 0..n {
            let start = smp * s.len() + c * hw;
            acc += x[start..start + hw].iter().sum::<f64>();
        }
        mean[c] = acc / count;
        let mut acc2 = 0.0;
        for smp in 0..n {
            let start = smp * s.len() + c * hw;
            acc2 += x[start..start + hw].iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
        }
        var[c] = acc2 / count;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for smp in 0..n {
        for c in 0..s.c {
            let start = smp * s.len() + c * hw;
            for k in start..start + hw {
                xhat[k] = (x[k] - mean[c]) * inv_std[c];
                y[k] = gamma[c] * xhat[k] + beta[c];
            }
        }
    }
    let var_unbiased = var
        .iter()
        .map(|v| if count > 1.0 { v * count / (count - 1.0) } else { *v })
        .collect();
    (
        y,
        BnBatch {
            xhat,
            inv_std,
            mean,
            var_unbiased,
        },
    )
}

pub fn bn_forward_eval(x: &[f64], n: usize, s: Shape, gamma: &[f64], beta: &[f64], rm: &[f64], rv: &[f64]) -> Vec<f64> {
    let hw = s.h * s.w;
    let mut y = vec![0.0; x.len()];
    for smp in 0..n {
        for c in 0..s.c {
            let scale = gamma[c] / (rv[c] + BN_EPS).sqrt();
            let shift = beta[c] - rm[c] * scale;
            let start = smp * s.len() + c * hw;
            for k in start..start + hw {
                y[k] = x[k] * scale + shift;
            }
        }
    }
    y
}

/// Backward through batch statistics: returns `(dgamma, dbeta, dx)`.
pub fn bn_backward_train(dy: &[f64], n: usize, s: Shape, gamma: &[f64], bn: &BnBatch) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hw = s.h * s.w;
    let count = (n * hw) as f64;
    let mut dgamma = vec![0.0; s.c];
    let mut dbeta = vec![0.0; s.c];
    for smp in 0..n {
        for c in 0..s.c {
            let start = smp * s.len() + c * hw;
            for k in start..start + hw {
                dgamma[c] += dy[k] * bn.xhat[k];
                dbeta[c] += dy[k];
            }
        }
    }
    let mut dx = vec![0.0; dy.len()];
    for smp in 0..n {
        for c in 0..s.c {
            let k_scale = gamma[c] * bn.inv_std[c] / count;
            let start = smp * s.len() + c * hw;
            for k in start..start + hw {
                dx[k] = k_scale * (count * dy[k] - dbeta[c] - bn.xhat[k] * dgamma[c]);
            }
        }
    }
    (dgamma, dbeta, dx)
}

/// Backward with fixed (running) statistics.
#[allow(clippy::too_many_arguments)]
pub fn bn_backward_eval(
    x: &[f64],
    dy: &[f64],
    n: usize,
    s: Shape,
    gamma: &[f64],
    rm: &[f64],
    rv: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hw = s.h * s.w;
    let mut dgamma = vec![0.0; s.c];
    let mut dbeta = vec![0.0; s.c];
    let mut dx = vec![0.0; dy.len()];
    for smp in 0..n {
        for c in 0..s.c {
            let inv = 1.0 / (rv[c] + BN_EPS).sqrt();
            let start = smp * s.len() + c * hw;
            for k in start..start + hw {
                dgamma[c] += dy[k] * (x[k] - rm[c]) * inv;
                dbeta[c] += dy[k];
                dx[k] = dy[k] * gamma[c] * inv;
            }
        }
    }
    (dgamma, dbeta, dx)
}

/// Returns pooled values and, per output, the winning input offset within its sample.
pub fn pool_forward(x: &[f64], n: usize, ins: Shape, outs: Shape, win: Window) -> (Vec<f64>, Vec<u32>) {
    let Window { kh, kw, sh, sw } = win;
    let mut y = vec![0.0; n * outs.len()];
    let mut arg = vec![0u32; n * outs.len()];
    for s in 0..n {
        let xs = &x[s * ins.len()..(s + 1) * ins.len()];
        for c in 0..outs.c {
            for oh in 0..outs.h {
                for ow in 0..outs.w {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_k = 0;
                    for i in 0..kh {
                        for j in 0..kw {
                            let k = (c * ins.h + oh * sh + i) * ins.w + ow * sw + j;
                            if xs[k] > best {
                                best = xs[k];
                                best_k = k;
                            }
                        }
                    }
                    let o = s * outs.len() + (c * outs.h + oh) * outs.w + ow;
                    y[o] = best;
                    arg[o] = best_k as u32;
                }
            }
        }
    }
    (y, arg)
}

pub fn pool_backward(dy: &[f64], arg: &[u32], n: usize, ins: Shape, outs: Shape) -> Vec<f64> {
    let mut dx = vec![0.0; n * ins.len()];
    for s in 0..n {
        for o in 0..outs.len() {
            let g = s * outs.len() + o;
            dx[s * ins.len() + arg[g] as usize] += dy[g];
        }
    }
    dx
}

pub fn fc_forward(x: &[f64], n: usize, in_len: usize, units: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n * units];
    par::chunks_mut(&mut y, units, |s, ys| {
        let xs = &x[s * in_len..(s + 1) * in_len];
        for (u, yu) in ys.iter_mut().enumerate() {
            *yu = b[u] + dot(&w[u * in_len..(u + 1) * in_len], xs);
        }
    });
    y
}

pub fn fc_backward(
    x: &[f64],
    dy: &[f64],
    n: usize,
    in_len: usize,
    units: usize,
    w: &[f64],
    need_dx: bool,
) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
    let mut dw = vec![0.0; units * in_len];
    par::chunks_mut(&mut dw, in_len, |u, row| {
        for s in 0..n {
            let g = dy[s * units + u];
            if g != 0.0 {
                for (r, &xv) in row.iter_mut().zip(&x[s * in_len..(s + 1) * in_len]) {
                    *r += g * xv;
                }
            }
        }
    });
    let mut db = vec![0.0; units];
    for s in 0..n {
        for (u, d) in db.iter_mut().enumerate() {
            *d += dy[s * units + u];
        }
    }
    let dx = need_dx.then(|| {
        let mut dx = vec![0.0; n * in_len];
        par::chunks_mut(&mut dx, in_len, |s, dxs| {
            for u in 0..units {
                let g = dy[s * units + u];
                if g != 0.0 {
                    for (d, &wv) in dxs.iter_mut().zip(&w[u * in_len..(u + 1) * in_len]) {
                        *d += g * wv;
                    }
                }
            }
        });
        dx
    });
    (dw, db, dx)
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
