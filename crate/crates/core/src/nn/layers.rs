//! Scalar kernels shared by the forward and backward passes. Tensors are
//! flat row-major slices; shapes are passed explicitly.

use crate::real::{axpy, dot, Real};

/// Left padding of a "same" convolution with an odd or even kernel.
#[inline]
pub fn same_pad_left(k: usize) -> usize {
    (k - 1) / 2
}

/// Copy `x` into `buf` surrounded by the zero padding of a same convolution.
pub fn pad_same<F: Real>(x: &[F], k: usize, buf: &mut Vec<F>) {
    let left = same_pad_left(k);
    buf.clear();
    buf.resize(left, F::zero());
    buf.extend_from_slice(x);
    buf.resize(left + x.len() + (k - 1 - left), F::zero());
}

/// `out[t] = Σ_k w[k]·xpad[t+k]` for every `t < out.len()`.
pub fn correlate<F: Real>(xpad: &[F], w: &[F], out: &mut [F]) {
    const L: usize = 16;
    let n = out.len();
    let k = w.len();
    debug_assert!(xpad.len() + 1 >= n + k);
    let mut t0 = 0;
    while t0 + L <= n {
        let mut acc = [F::zero(); L];
        for (kk, &wk) in w.iter().enumerate() {
            let xs = &xpad[t0 + kk..t0 + kk + L];
            for l in 0..L {
                acc[l] += wk * xs[l];
            }
        }
        out[t0..t0 + L].copy_from_slice(&acc);
        t0 += L;
    }
    for t in t0..n {
        out[t] = dot(w, &xpad[t..t + k]);
    }
}

/// Kernel gradient of [`correlate`]: `gw[k] += Σ_t g[t]·xpad[t+k]`, itself a
/// correlation of `xpad` with `g`.
pub fn correlate_kernel_grad<F: Real>(xpad: &[F], g: &[F], gw: &mut [F]) {
    let mut tmp = vec![F::zero(); gw.len()];
    correlate(xpad, g, &mut tmp);
    for (a, b) in gw.iter_mut().zip(&tmp) {
        *a += *b;
    }
}

/// Input gradient of [`correlate`]: `gxpad[t+k] += w[k]·g[t]`.
pub fn correlate_input_grad<F: Real>(w: &[F], g: &[F], gxpad: &mut [F]) {
    let n = g.len();
    for (kk, &wk) in w.iter().enumerate() {
        axpy(wk, g, &mut gxpad[kk..kk + n]);
    }
}

/// Per-channel statistics of one batch-norm application.
#[derive(Debug, Clone, Default)]
pub struct BnCache<F> {
    pub mean: Vec<F>,
    pub inv_std: Vec<F>,
    pub batch_stats: bool,
}

/// Batch norm over a `[batch][channels][len]` tensor.
///
/// With `batch_stats` the statistics come from the batch and are returned
/// alongside the unbiased variance for the running-average update; otherwise
/// the supplied running statistics are used.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm_forward<F: Real>(
    x: &[F],
    batch: usize,
    channels: usize,
    len: usize,
    gamma: &[F],
    beta: &[F],
    running_mean: &[F],
    running_var: &[F],
    batch_stats: bool,
    eps: F,
    out: &mut [F],
) -> (BnCache<F>, Vec<F>) {
    let mut mean = vec![F::zero(); channels];
    let mut inv_std = vec![F::zero(); channels];
    let mut unbiased = vec![F::zero(); channels];
    let count = batch * len;
    for c in 0..channels {
        let (m, var) = if batch_stats {
            let mut s = F::zero();
            for b in 0..batch {
                let row = &x[(b * channels + c) * len..][..len];
                s += crate::real::sum(row);
            }
            let m = s / F::of(count as f64);
            let mut ss = F::zero();
            for b in 0..batch {
                let row = &x[(b * channels + c) * len..][..len];
                let mut acc = [F::zero(); 8];
                let chunks = row.chunks_exact(8);
                let rem = chunks.remainder();
                for ch in chunks {
                    for l in 0..8 {
                        let d = ch[l] - m;
                        acc[l] += d * d;
                    }
                }
                let mut tail = F::zero();
                for v in rem {
                    tail += (*v - m) * (*v - m);
                }
                ss += acc.iter().copied().sum::<F>() + tail;
            }
            let var = ss / F::of(count as f64);
            unbiased[c] = if count > 1 { ss / F::of((count - 1) as f64) } else { var };
            (m, var)
        } else {
            (running_mean[c], running_var[c])
        };
        mean[c] = m;
        inv_std[c] = F::one() / (var + eps).sqrt();
        let scale = gamma[c] * inv_std[c];
        let shift = beta[c] - m * scale;
        for b in 0..batch {
            let off = (b * channels + c) * len;
            for (o, v) in out[off..off + len].iter_mut().zip(&x[off..off + len]) {
                *o = *v * scale + shift;
            }
        }
    }
    (
        BnCache {
            mean,
            inv_std,
            batch_stats,
        },
        unbiased,
    )
}

/// Returns `dx` (written into `gx`) and accumulates `dγ`, `dβ` when given.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm_backward<F: Real>(
    x: &[F],
    g: &[F],
    batch: usize,
    channels: usize,
    len: usize,
    gamma: &[F],
    cache: &BnCache<F>,
    gx: Option<&mut [F]>,
    mut gparams: Option<(&mut [F], &mut [F])>,
) {
    let count = F::of((batch * len) as f64);
    let mut sum_g = vec![F::zero(); channels];
    let mut sum_gx = vec![F::zero(); channels];
    for c in 0..channels {
        let (m, is) = (cache.mean[c], cache.inv_std[c]);
        for b in 0..batch {
            let off = (b * channels + c) * len;
            let (xr, gr) = (&x[off..off + len], &g[off..off + len]);
            sum_g[c] += crate::real::sum(gr);
            let mut acc = [F::zero(); 8];
            let cx = xr.chunks_exact(8);
            let cg = gr.chunks_exact(8);
            let (rx, rg) = (cx.remainder(), cg.remainder());
            for (a, d) in cx.zip(cg) {
                for l in 0..8 {
                    acc[l] += d[l] * ((a[l] - m) * is);
                }
            }
            let mut tail = F::zero();
            for (a, d) in rx.iter().zip(rg) {
                tail += *d * ((*a - m) * is);
            }
            sum_gx[c] += acc.iter().copied().sum::<F>() + tail;
        }
    }
    if let Some((ggamma, gbeta)) = gparams.as_mut() {
        for c in 0..channels {
            ggamma[c] += sum_gx[c];
            gbeta[c] += sum_g[c];
        }
    }
    if let Some(gx) = gx {
        for c in 0..channels {
            let (m, is) = (cache.mean[c], cache.inv_std[c]);
            let k = gamma[c] * is;
            if cache.batch_stats {
                let mg = sum_g[c] / count;
                let mgx = sum_gx[c] / count;
                for b in 0..batch {
                    let off = (b * channels + c) * len;
                    for ((o, d), a) in gx[off..off + len].iter_mut().zip(&g[off..off + len]).zip(&x[off..off + len]) {
                        let xh = (*a - m) * is;
                        *o = k * (*d - mg - xh * mgx);
                    }
                }
            } else {
                for b in 0..batch {
                    let off = (b * channels + c) * len;
                    for (o, d) in gx[off..off + len].iter_mut().zip(&g[off..off + len]) {
                        *o = k * *d;
                    }
                }
            }
        }
    }
}

/// Non-overlapping average pooling of each row; trailing samples are dropped.
pub fn avg_pool<F: Real>(x: &[F], rows: usize, len: usize, p: usize, out: &mut [F]) {
    let n = len / p;
    let inv = F::one() / F::of(p as f64);
    for r in 0..rows {
        let row = &x[r * len..(r + 1) * len];
        for (i, o) in out[r * n..(r + 1) * n].iter_mut().enumerate() {
            *o = row[i * p..(i + 1) * p].iter().copied().sum::<F>() * inv;
        }
    }
}

pub fn avg_pool_backward<F: Real>(g: &[F], rows: usize, len: usize, p: usize, gx: &mut [F]) {
    let n = len / p;
    let inv = F::one() / F::of(p as f64);
    for r in 0..rows {
        let grow = &g[r * n..(r + 1) * n];
        let out = &mut gx[r * len..(r + 1) * len];
        for (i, gi) in grow.iter().enumerate() {
            for o in &mut out[i * p..(i + 1) * p] {
                *o = *gi * inv;
            }
        }
        for o in &mut out[n * p..] {
            *o = F::zero();
        }
    }
}
