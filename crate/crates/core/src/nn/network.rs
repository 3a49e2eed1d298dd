//! Forward and backward passes of the CNN, with optional fake quantization.
//!
//! Activation layout is `[batch][channel][time]`; the temporal stage keeps an
//! extra electrode axis, `[batch][filter][electrode][time]`, until the
//! depthwise spatial conv collapses it.

use rand::{Rng, RngCore};

use super::config::{AdaptationDepth, ModelConfig};
use super::layers::{
    avg_pool, avg_pool_backward, batch_norm_backward, batch_norm_forward, correlate, correlate_input_grad,
    correlate_kernel_grad, pad_same, same_pad_left, BnCache,
};
use super::model::Model;
use super::params::*;
use crate::dsp::TrialTensor;
use crate::error::{Error, Result};
use crate::quant::fake::{fake_quant, fake_quant_grads, scale_from_log2};
use crate::real::{axpy, dot, Real};

/// A stack of trials flattened to `[batch][channel][time]`.
#[derive(Debug, Clone)]
pub struct Batch<F> {
    pub inputs: Vec<F>,
    pub labels: Vec<usize>,
    /// Caller-defined identifiers (e.g. positions in the training set).
    pub ids: Vec<usize>,
}

impl<F: Real> Batch<F> {
    pub fn from_trials(trials: &[&TrialTensor]) -> Self {
        Self::from_trials_with_ids(trials, (0..trials.len()).collect())
    }

    pub fn from_trials_with_ids(trials: &[&TrialTensor], ids: Vec<usize>) -> Self {
        let n: usize = trials.iter().map(|t| t.samples.len()).sum();
        let mut inputs = Vec::with_capacity(n);
        for t in trials {
            inputs.extend(t.samples.iter().map(|v| F::of_f32(*v)));
        }
        Self {
            inputs,
            labels: trials.iter().map(|t| t.label).collect(),
            ids,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mode {
    /// Dropout on, and batch statistics when batch norm is trainable.
    pub train: bool,
    pub depth: AdaptationDepth,
}

impl Mode {
    pub const EVAL: Self = Self {
        train: false,
        depth: AdaptationDepth::FULL,
    };

    pub fn train(depth: AdaptationDepth) -> Self {
        Self { train: true, depth }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Output<F> {
    /// `[batch][class]`
    pub logits: Vec<F>,
    /// `[batch][filter][time]`, flattened filter-major: the dense-layer input
    /// before dropout.
    pub features: Vec<F>,
}

#[derive(Debug, Clone, Copy)]
struct Dims {
    b: usize,
    c: usize,
    t: usize,
    f1: usize,
    k1: usize,
    d: usize,
    m: usize,
    p1: usize,
    t1: usize,
    k3: usize,
    f2: usize,
    p2: usize,
    t2: usize,
    nf: usize,
    nc: usize,
}

impl Dims {
    fn new(cfg: &ModelConfig, b: usize) -> Self {
        Self {
            b,
            c: cfg.n_channels,
            t: cfg.n_samples,
            f1: cfg.temporal_filters,
            k1: cfg.temporal_kernel,
            d: cfg.depth_multiplier,
            m: cfg.spatial_maps(),
            p1: cfg.pool1,
            t1: cfg.len_after_pool1(),
            k3: cfg.separable_kernel,
            f2: cfg.separable_filters,
            p2: cfg.pool2,
            t2: cfg.len_after_pool2(),
            nf: cfg.feature_len(),
            nc: cfg.n_classes,
        }
    }
}

/// Everything backward needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    generation: u64,
    dims: Dims,
    mode: Mode,
    quant: bool,
    pub output: Output<F>,
    xpad: Vec<F>,
    w1q: Vec<F>,
    w2q: Vec<F>,
    w3q: Vec<F>,
    w4q: Vec<F>,
    wdq: Vec<F>,
    /// Spatially mixed padded input, `[batch][map][time + K1 − 1]`.
    u: Vec<F>,
    /// Temporal conv of `u`, `[batch][map][time]`.
    v: Vec<F>,
    moments: Option<WindowMoments>,
    bn1: BnCache<F>,
    a2: Vec<F>,
    bn2: BnCache<F>,
    r2: Vec<F>,
    p1: Vec<F>,
    mask1: Option<Vec<F>>,
    d1pad: Vec<F>,
    a3: Vec<F>,
    s3: Vec<F>,
    a4: Vec<F>,
    bn3: BnCache<F>,
    r4: Vec<F>,
    p2: Vec<F>,
    mask2: Option<Vec<F>>,
    d2: Vec<F>,
    /// `(mean, unbiased var)` per batch-norm layer when batch statistics ran.
    batch_stats: Option<[(Vec<F>, Vec<F>); 3]>,
}

impl<F: Real> ForwardCache<F> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Largest magnitude seen at the three activation quantizer sites
    /// (after the spatial block, the separable depthwise conv, the second
    /// block), for calibration.
    pub fn activation_peaks(&self) -> [F; 3] {
        let peak = |v: &[F]| v.iter().fold(F::zero(), |a, x| a.max(x.abs()));
        [peak(&self.r2), peak(&self.a3), peak(&self.r4)]
    }
}

fn quant_weights<F: Real>(w: &[F], log2_t: &[F], channel: impl Fn(usize) -> usize) -> Vec<F> {
    w.iter()
        .enumerate()
        .map(|(i, v)| fake_quant(*v, scale_from_log2(log2_t[channel(i)])))
        .collect()
}

/// Turns the gradient w.r.t. quantized weights into gradients w.r.t. the
/// float weights and the per-channel thresholds.
fn quant_weights_backward<F: Real>(
    w: &[F],
    log2_t: &[F],
    channel: impl Fn(usize) -> usize,
    gwq: &[F],
    gw: &mut [F],
    gl: &mut [F],
) {
    for (i, (v, g)) in w.iter().zip(gwq).enumerate() {
        let ch = channel(i);
        let (dx, dl) = fake_quant_grads(*v, scale_from_log2(log2_t[ch]));
        gw[i] += *g * dx;
        gl[ch] += *g * dl;
    }
}

fn quant_act<F: Real>(x: &[F], log2_t: F) -> Vec<F> {
    let s = scale_from_log2(log2_t);
    x.iter().map(|v| fake_quant(*v, s)).collect()
}

/// In place `g ← g·∂q/∂x`; returns `Σ g·∂q/∂l`.
fn quant_act_backward<F: Real>(x: &[F], log2_t: F, g: &mut [F]) -> F {
    let s = scale_from_log2(log2_t);
    let mut gl = F::zero();
    for (gi, v) in g.iter_mut().zip(x) {
        let (dx, dl) = fake_quant_grads(*v, s);
        gl += *gi * dl;
        *gi *= dx;
    }
    gl
}

/// NaN passes through so a poisoned input surfaces as a non-finite loss.
fn relu<F: Real>(x: &[F]) -> Vec<F> {
    x.iter().map(|v| if *v < F::zero() { F::zero() } else { *v }).collect()
}

fn dropout_mask<F: Real>(n: usize, rate: f64, rng: &mut dyn RngCore) -> Vec<F> {
    let keep = F::of(1.0 / (1.0 - rate));
    (0..n)
        .map(|_| if rng.random::<f64>() < rate { F::zero() } else { keep })
        .collect()
}

fn check_batch<F: Real>(cfg: &ModelConfig, batch: &Batch<F>) -> Result<()> {
    let per = cfg.n_channels * cfg.n_samples;
    if batch.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    if batch.inputs.len() != batch.len() * per {
        return Err(Error::Shape(format!(
            "batch of {} labels carries {} values, expected {}x{}x{}",
            batch.len(),
            batch.inputs.len(),
            batch.len(),
            cfg.n_channels,
            cfg.n_samples
        )));
    }
    if batch.ids.len() != batch.len() {
        return Err(Error::Shape("batch ids and labels differ in length".into()));
    }
    if let Some(l) = batch.labels.iter().find(|l| **l >= cfg.n_classes) {
        return Err(Error::Shape(format!("label {l} outside 0..{}", cfg.n_classes)));
    }
    Ok(())
}

/// Forward pass keeping the cache needed by [`backward`].
///
/// `rng` drives dropout and is required only in train mode with a nonzero
/// dropout rate. Running statistics are not touched; see [`forward_train`].
pub fn forward<F: Real>(
    model: &Model<F>,
    batch: &Batch<F>,
    mode: Mode,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<ForwardCache<F>> {
    let cfg = model.config();
    check_batch(cfg, batch)?;
    let dm = Dims::new(cfg, batch.len());
    let Dims {
        b,
        c,
        t,
        f1,
        k1,
        d,
        m,
        p1,
        t1,
        k3,
        f2,
        p2,
        t2,
        nf,
        nc,
    } = dm;
    let p = &model.params().tensors;
    let quant = model.fake_quant_active();
    let qstate = model.quant().copied();
    let bn_batch = mode.train && mode.depth.trains_batch_norm();
    let dropout = mode.train && cfg.dropout > 0.0;
    if dropout && rng.is_none() {
        return Err(Error::State("dropout in train mode needs an rng".into()));
    }
    let eps = F::of(cfg.bn_eps);
    let running = model.running();

    // Weights as the forward pass sees them.
    let (w1q, w2q, w3q, w4q, wdq) = if quant {
        let head = qstate.is_some_and(|q| q.quantize_head);
        (
            quant_weights(&p[TEMPORAL], &p[Q_TEMPORAL], |i| i / k1),
            quant_weights(&p[SPATIAL], &p[Q_SPATIAL], |i| i / c),
            quant_weights(&p[SEP_DEPTHWISE], &p[Q_SEP_DEPTHWISE], |i| i / k3),
            quant_weights(&p[SEP_POINTWISE], &p[Q_SEP_POINTWISE], |i| i / m),
            if head {
                quant_weights(&p[DENSE_WEIGHT], &p[Q_DENSE], |i| i % nc)
            } else {
                p[DENSE_WEIGHT].clone()
            },
        )
    } else {
        (
            p[TEMPORAL].clone(),
            p[SPATIAL].clone(),
            p[SEP_DEPTHWISE].clone(),
            p[SEP_POINTWISE].clone(),
            p[DENSE_WEIGHT].clone(),
        )
    };
    let (la1, la2, la3) = if quant {
        (p[Q_ACT1][0], p[Q_ACT2][0], p[Q_ACT3][0])
    } else {
        (F::zero(), F::zero(), F::zero())
    };

    // Input quantization and padding for the temporal conv.
    let row1 = t + k1 - 1;
    let mut xpad = Vec::with_capacity(b * c * row1);
    let mut tmp = Vec::new();
    let s_in = qstate.map(|q| scale_from_log2(F::of(q.input_log2_t)));
    for r in 0..b * c {
        let x = &batch.inputs[r * t..(r + 1) * t];
        if let (true, Some(s)) = (quant, s_in) {
            let xq: Vec<F> = x.iter().map(|v| fake_quant(*v, s)).collect();
            pad_same(&xq, k1, &mut tmp);
        } else {
            pad_same(x, k1, &mut tmp);
        }
        xpad.extend_from_slice(&tmp);
    }

    // Electrodes are mixed before the temporal conv. Both convs are linear and
    // the first batch norm is a per-filter affine map, so
    //   a2[m] = sc_f·(w1[f] ⋆ u[m]) + sh_f·Σ_c w2[m][c],  u[m] = Σ_c w2[m][c]·x[c]
    // equals conv → batch norm → spatial mix on 4× fewer rows.
    let mut u = vec![F::zero(); b * m * row1];
    for bi in 0..b {
        for mi in 0..m {
            let dst = &mut u[(bi * m + mi) * row1..][..row1];
            for ci in 0..c {
                axpy(w2q[mi * c + ci], &xpad[(bi * c + ci) * row1..][..row1], dst);
            }
        }
    }
    let mut v = vec![F::zero(); b * m * t];
    for bi in 0..b {
        for mi in 0..m {
            let f = mi / d;
            correlate(
                &u[(bi * m + mi) * row1..][..row1],
                &w1q[f * k1..(f + 1) * k1],
                &mut v[(bi * m + mi) * t..][..t],
            );
        }
    }

    // First batch norm. Its statistics over the temporal-conv output follow
    // from the window sums and Gram matrix of the padded input.
    let moments = bn_batch.then(|| WindowMoments::new(&xpad, b * c, row1, t, k1));
    let n1 = (b * c * t) as f64;
    let mut mean1 = vec![F::zero(); f1];
    let mut inv1 = vec![F::zero(); f1];
    let mut var1 = vec![F::zero(); f1];
    for f in 0..f1 {
        let (mu, var) = match &moments {
            Some(wm) => {
                let w: Vec<f64> = w1q[f * k1..(f + 1) * k1].iter().map(|x| x.as_f64()).collect();
                let mu = wm.linear(&w) / n1;
                let var = (wm.quadratic(&w) / n1 - mu * mu).max(0.0);
                var1[f] = F::of(if n1 > 1.0 { var * n1 / (n1 - 1.0) } else { var });
                (F::of(mu), F::of(var))
            }
            None => (running[0].mean[f], running[0].var[f]),
        };
        mean1[f] = mu;
        inv1[f] = F::one() / (var + eps).sqrt();
    }
    let bn1 = BnCache {
        mean: mean1,
        inv_std: inv1,
        batch_stats: bn_batch,
    };
    let (sc1, sh1) = bn_affine(&bn1, &p[BN1_GAMMA], &p[BN1_BETA]);
    let wsum: Vec<F> = (0..m).map(|mi| w2q[mi * c..(mi + 1) * c].iter().copied().sum()).collect();
    let mut a2 = v.clone();
    for bi in 0..b {
        for mi in 0..m {
            let f = mi / d;
            let (k, o) = (sc1[f], sh1[f] * wsum[mi]);
            for x in &mut a2[(bi * m + mi) * t..][..t] {
                *x = *x * k + o;
            }
        }
    }
    let mut z2 = vec![F::zero(); a2.len()];
    let (bn2, var2) = batch_norm_forward(
        &a2,
        b,
        m,
        t,
        &p[BN2_GAMMA],
        &p[BN2_BETA],
        &running[1].mean,
        &running[1].var,
        bn_batch,
        eps,
        &mut z2,
    );
    let r2 = relu(&z2);
    drop(z2);
    let q2 = if quant { quant_act(&r2, la1) } else { r2.clone() };
    let mut p1v = vec![F::zero(); b * m * t1];
    avg_pool(&q2, b * m, t, p1, &mut p1v);
    drop(q2);
    let mut d1 = if quant { quant_act(&p1v, la1) } else { p1v.clone() };
    let mask1 = if dropout {
        let mask = dropout_mask::<F>(d1.len(), cfg.dropout, rng.as_deref_mut().unwrap());
        for (v, k) in d1.iter_mut().zip(&mask) {
            *v *= *k;
        }
        Some(mask)
    } else {
        None
    };

    // Separable conv: depthwise temporal then pointwise.
    let row3 = t1 + k3 - 1;
    let mut d1pad = Vec::with_capacity(b * m * row3);
    for r in 0..b * m {
        pad_same(&d1[r * t1..(r + 1) * t1], k3, &mut tmp);
        d1pad.extend_from_slice(&tmp);
    }
    drop(d1);
    let mut a3 = vec![F::zero(); b * m * t1];
    for bi in 0..b {
        for mi in 0..m {
            correlate(
                &d1pad[(bi * m + mi) * row3..][..row3],
                &w3q[mi * k3..(mi + 1) * k3],
                &mut a3[(bi * m + mi) * t1..][..t1],
            );
        }
    }
    let s3 = if quant { quant_act(&a3, la2) } else { a3.clone() };
    let mut a4 = vec![F::zero(); b * f2 * t1];
    for bi in 0..b {
        for g in 0..f2 {
            let dst = &mut a4[(bi * f2 + g) * t1..][..t1];
            for mi in 0..m {
                axpy(w4q[g * m + mi], &s3[(bi * m + mi) * t1..][..t1], dst);
            }
        }
    }
    let mut z4 = vec![F::zero(); a4.len()];
    let (bn3, var3) = batch_norm_forward(
        &a4,
        b,
        f2,
        t1,
        &p[BN3_GAMMA],
        &p[BN3_BETA],
        &running[2].mean,
        &running[2].var,
        bn_batch,
        eps,
        &mut z4,
    );
    let r4 = relu(&z4);
    drop(z4);
    let q4 = if quant { quant_act(&r4, la3) } else { r4.clone() };
    let mut p2v = vec![F::zero(); b * f2 * t2];
    avg_pool(&q4, b * f2, t1, p2, &mut p2v);
    drop(q4);
    let features = if quant { quant_act(&p2v, la3) } else { p2v.clone() };
    debug_assert_eq!(features.len(), b * nf);
    let mut d2 = features.clone();
    let mask2 = if dropout {
        let mask = dropout_mask::<F>(d2.len(), cfg.dropout, rng.as_deref_mut().unwrap());
        for (v, k) in d2.iter_mut().zip(&mask) {
            *v *= *k;
        }
        Some(mask)
    } else {
        None
    };

    // Dense head, weights stored [feature][class].
    let bias = &p[DENSE_BIAS];
    let mut logits = vec![F::zero(); b * nc];
    let mut wt = vec![F::zero(); nc * nf];
    for i in 0..nf {
        for k in 0..nc {
            wt[k * nf + i] = wdq[i * nc + k];
        }
    }
    for bi in 0..b {
        let x = &d2[bi * nf..(bi + 1) * nf];
        for k in 0..nc {
            logits[bi * nc + k] = dot(x, &wt[k * nf..(k + 1) * nf]) + bias[k];
        }
    }

    let batch_stats = bn_batch.then(|| {
        [
            (bn1.mean.clone(), var1),
            (bn2.mean.clone(), var2),
            (bn3.mean.clone(), var3),
        ]
    });
    Ok(ForwardCache {
        generation: model.generation(),
        dims: dm,
        mode,
        quant,
        output: Output { logits, features },
        xpad,
        w1q,
        w2q,
        w3q,
        w4q,
        wdq,
        u,
        v,
        moments,
        bn1,
        a2,
        bn2,
        r2,
        p1: p1v,
        mask1,
        d1pad,
        a3,
        s3,
        a4,
        bn3,
        r4,
        p2: p2v,
        mask2,
        d2,
        batch_stats,
    })
}

/// Forward in train mode, folding batch statistics into the running averages
/// when batch norm is trainable.
pub fn forward_train<F: Real>(
    model: &mut Model<F>,
    batch: &Batch<F>,
    depth: AdaptationDepth,
    rng: &mut dyn RngCore,
) -> Result<ForwardCache<F>> {
    let cache = forward(model, batch, Mode::train(depth), Some(rng))?;
    if let Some(stats) = &cache.batch_stats {
        let mom = F::of(model.config().bn_momentum);
        for (run, (mean, var)) in model.running_mut().iter_mut().zip(stats) {
            for (r, v) in run.mean.iter_mut().zip(mean) {
                *r = (F::one() - mom) * *r + mom * *v;
            }
            for (r, v) in run.var.iter_mut().zip(var) {
                *r = (F::one() - mom) * *r + mom * *v;
            }
        }
    }
    Ok(cache)
}

/// Inference: running statistics, no dropout, no cache retained.
pub fn forward_eval<F: Real>(model: &Model<F>, batch: &Batch<F>) -> Result<Output<F>> {
    Ok(forward(model, batch, Mode::EVAL, None)?.output)
}

/// Gradients of the loss w.r.t. every parameter, given `dlogits = ∂L/∂logits`.
/// Tensors outside the cache's adaptation depth get zero gradients and the
/// pass stops as soon as no deeper layer is trainable.
pub fn backward<F: Real>(model: &Model<F>, cache: &ForwardCache<F>, dlogits: &[F]) -> Result<Params<F>> {
    if cache.generation != model.generation() {
        return Err(Error::State(format!(
            "forward cache from generation {} used with parameters at generation {}",
            cache.generation,
            model.generation()
        )));
    }
    let Dims {
        b,
        c,
        t,
        f1,
        k1,
        d,
        m,
        p1,
        t1,
        k3,
        f2,
        p2,
        t2: _,
        nf,
        nc,
    } = cache.dims;
    if dlogits.len() != b * nc {
        return Err(Error::Shape(format!("dlogits has {} values, expected {}", dlogits.len(), b * nc)));
    }
    let depth = cache.mode.depth;
    let bn_trainable = depth.trains_batch_norm();
    let quant = cache.quant;
    let p = &model.params().tensors;
    let mut grads = Params::zeros_like(model.params());
    let head_quant = quant && model.quant().is_some_and(|q| q.quantize_head);

    // Dense head.
    {
        let mut gwq = vec![F::zero(); nf * nc];
        for bi in 0..b {
            let x = &cache.d2[bi * nf..(bi + 1) * nf];
            let g = &dlogits[bi * nc..(bi + 1) * nc];
            for (i, xi) in x.iter().enumerate() {
                for k in 0..nc {
                    gwq[i * nc + k] += *xi * g[k];
                }
            }
            for k in 0..nc {
                grads.tensors[DENSE_BIAS][k] += g[k];
            }
        }
        if head_quant {
            let (gw, gl) = split_pair(&mut grads.tensors, DENSE_WEIGHT, Q_DENSE);
            quant_weights_backward(&p[DENSE_WEIGHT], &p[Q_DENSE], |i| i % nc, &gwq, gw, gl);
        } else {
            grads.tensors[DENSE_WEIGHT] = gwq;
        }
    }
    if !depth.trains_group(2) {
        return Ok(grads);
    }

    // Back through dropout, pool2 and the act3 quantizer.
    let mut g = vec![F::zero(); b * nf];
    for bi in 0..b {
        let gl = &dlogits[bi * nc..(bi + 1) * nc];
        for i in 0..nf {
            g[bi * nf + i] = dot(gl, &cache.wdq[i * nc..(i + 1) * nc]);
        }
    }
    if let Some(mask) = &cache.mask2 {
        for (v, k) in g.iter_mut().zip(mask) {
            *v *= *k;
        }
    }
    let mut gl3 = F::zero();
    if quant {
        gl3 += quant_act_backward(&cache.p2, p[Q_ACT3][0], &mut g);
    }
    let mut ga4 = vec![F::zero(); b * f2 * t1];
    avg_pool_backward(&g, b * f2, t1, p2, &mut ga4);
    if quant {
        gl3 += quant_act_backward(&cache.r4, p[Q_ACT3][0], &mut ga4);
    }
    for (v, r) in ga4.iter_mut().zip(&cache.r4) {
        if *r <= F::zero() {
            *v = F::zero();
        }
    }
    let mut gz = ga4;
    let mut ga4 = vec![F::zero(); gz.len()];
    {
        let (gg, gb) = split_pair(&mut grads.tensors, BN3_GAMMA, BN3_BETA);
        batch_norm_backward(
            &cache.a4,
            &gz,
            b,
            f2,
            t1,
            &p[BN3_GAMMA],
            &cache.bn3,
            Some(&mut ga4),
            bn_trainable.then_some((gg, gb)),
        );
    }

    // Pointwise conv.
    let mut gw4 = vec![F::zero(); f2 * m];
    for bi in 0..b {
        for gi in 0..f2 {
            let gr = &ga4[(bi * f2 + gi) * t1..][..t1];
            for mi in 0..m {
                gw4[gi * m + mi] += dot(gr, &cache.s3[(bi * m + mi) * t1..][..t1]);
            }
        }
    }
    if quant {
        let (gw, gl) = split_pair(&mut grads.tensors, SEP_POINTWISE, Q_SEP_POINTWISE);
        quant_weights_backward(&p[SEP_POINTWISE], &p[Q_SEP_POINTWISE], |i| i / m, &gw4, gw, gl);
        grads.tensors[Q_ACT3][0] = gl3;
    } else {
        grads.tensors[SEP_POINTWISE] = gw4;
    }
    if !depth.trains_group(3) {
        return Ok(grads);
    }

    let mut gs3 = vec![F::zero(); b * m * t1];
    for bi in 0..b {
        for mi in 0..m {
            let dst = &mut gs3[(bi * m + mi) * t1..][..t1];
            for gi in 0..f2 {
                axpy(cache.w4q[gi * m + mi], &ga4[(bi * f2 + gi) * t1..][..t1], dst);
            }
        }
    }
    if quant {
        grads.tensors[Q_ACT2][0] = quant_act_backward(&cache.a3, p[Q_ACT2][0], &mut gs3);
    }
    let ga3 = gs3;

    // Separable depthwise conv.
    let row3 = t1 + k3 - 1;
    let mut gw3 = vec![F::zero(); m * k3];
    for bi in 0..b {
        for mi in 0..m {
            correlate_kernel_grad(
                &cache.d1pad[(bi * m + mi) * row3..][..row3],
                &ga3[(bi * m + mi) * t1..][..t1],
                &mut gw3[mi * k3..(mi + 1) * k3],
            );
        }
    }
    if quant {
        let (gw, gl) = split_pair(&mut grads.tensors, SEP_DEPTHWISE, Q_SEP_DEPTHWISE);
        quant_weights_backward(&p[SEP_DEPTHWISE], &p[Q_SEP_DEPTHWISE], |i| i / k3, &gw3, gw, gl);
    } else {
        grads.tensors[SEP_DEPTHWISE] = gw3;
    }
    if !depth.trains_group(4) {
        return Ok(grads);
    }

    let left3 = same_pad_left(k3);
    let mut gd1 = vec![F::zero(); b * m * t1];
    let mut gpad = vec![F::zero(); row3];
    for bi in 0..b {
        for mi in 0..m {
            gpad.iter_mut().for_each(|v| *v = F::zero());
            correlate_input_grad(&cache.w3q[mi * k3..(mi + 1) * k3], &ga3[(bi * m + mi) * t1..][..t1], &mut gpad);
            gd1[(bi * m + mi) * t1..][..t1].copy_from_slice(&gpad[left3..left3 + t1]);
        }
    }
    if let Some(mask) = &cache.mask1 {
        for (v, k) in gd1.iter_mut().zip(mask) {
            *v *= *k;
        }
    }
    let mut gl1 = F::zero();
    if quant {
        gl1 += quant_act_backward(&cache.p1, p[Q_ACT1][0], &mut gd1);
    }
    let mut gr2 = vec![F::zero(); b * m * t];
    avg_pool_backward(&gd1, b * m, t, p1, &mut gr2);
    if quant {
        gl1 += quant_act_backward(&cache.r2, p[Q_ACT1][0], &mut gr2);
        grads.tensors[Q_ACT1][0] = gl1;
    }
    for (v, r) in gr2.iter_mut().zip(&cache.r2) {
        if *r <= F::zero() {
            *v = F::zero();
        }
    }
    gz = gr2;
    let mut ga2 = vec![F::zero(); gz.len()];
    {
        let (gg, gb) = split_pair(&mut grads.tensors, BN2_GAMMA, BN2_BETA);
        batch_norm_backward(
            &cache.a2,
            &gz,
            b,
            m,
            t,
            &p[BN2_GAMMA],
            &cache.bn2,
            Some(&mut ga2),
            bn_trainable.then_some((gg, gb)),
        );
    }

    // Spatial conv: gw2[m][c] = Σ_t g_a2[m]·z1[f][c] with z1 = sc·(w1 ⋆ x[c]) + sh,
    // evaluated as sc·⟨w1 ⋆ᵀ g_a2[m], x[c]⟩ + sh·Σ_t g_a2[m].
    let row1 = t + k1 - 1;
    let (sc1, sh1) = bn_affine(&cache.bn1, &p[BN1_GAMMA], &p[BN1_BETA]);
    let mut gw2 = vec![F::zero(); m * c];
    let mut gsum = vec![F::zero(); b * m];
    let mut y = vec![F::zero(); row1];
    for bi in 0..b {
        for mi in 0..m {
            let f = mi / d;
            let gr = &ga2[(bi * m + mi) * t..][..t];
            gsum[bi * m + mi] = crate::real::sum(gr);
            y.iter_mut().for_each(|v| *v = F::zero());
            correlate_input_grad(&cache.w1q[f * k1..(f + 1) * k1], gr, &mut y);
            for ci in 0..c {
                let xr = &cache.xpad[(bi * c + ci) * row1..][..row1];
                gw2[mi * c + ci] += sc1[f] * dot(&y, xr) + sh1[f] * gsum[bi * m + mi];
            }
        }
    }
    if quant {
        let (gw, gl) = split_pair(&mut grads.tensors, SPATIAL, Q_SPATIAL);
        quant_weights_backward(&p[SPATIAL], &p[Q_SPATIAL], |i| i / c, &gw2, gw, gl);
    } else {
        grads.tensors[SPATIAL] = gw2;
    }
    if !depth.trains_group(5) {
        return Ok(grads);
    }

    // First batch norm and temporal conv, again without materializing the
    // per-electrode activations: with gz1[f][c] = Σ_d w2[m][c]·g_a2[m],
    //   Σ gz1 = Σ_m wsum[m]·Σ g_a2[m],  Σ gz1·a1 = Σ_m ⟨g_a2[m], v[m]⟩,
    //   Σ_{c,t} gz1·x[c][t+k] = Σ_m (g_a2[m] ⋆ u[m])[k].
    let w2q = &cache.w2q;
    let wsum: Vec<F> = (0..m).map(|mi| w2q[mi * c..(mi + 1) * c].iter().copied().sum()).collect();
    let mut gsum_f = vec![F::zero(); f1];
    let mut gdot_f = vec![F::zero(); f1];
    let mut cross = vec![F::zero(); f1 * k1];
    for bi in 0..b {
        for mi in 0..m {
            let f = mi / d;
            let gr = &ga2[(bi * m + mi) * t..][..t];
            gsum_f[f] += wsum[mi] * gsum[bi * m + mi];
            gdot_f[f] += dot(gr, &cache.v[(bi * m + mi) * t..][..t]);
            correlate_kernel_grad(&cache.u[(bi * m + mi) * row1..][..row1], gr, &mut cross[f * k1..(f + 1) * k1]);
        }
    }
    let gamma = &p[BN1_GAMMA];
    let n1 = F::of((b * c * t) as f64);
    let mut gw1 = vec![F::zero(); f1 * k1];
    for f in 0..f1 {
        let (mu, is) = (cache.bn1.mean[f], cache.bn1.inv_std[f]);
        let gxhat = is * (gdot_f[f] - mu * gsum_f[f]);
        if bn_trainable {
            grads.tensors[BN1_GAMMA][f] += gxhat;
            grads.tensors[BN1_BETA][f] += gsum_f[f];
        }
        let k = gamma[f] * is;
        let row = &mut gw1[f * k1..(f + 1) * k1];
        match (&cache.moments, cache.bn1.batch_stats) {
            (Some(wm), true) => {
                let (mg, mgx) = (gsum_f[f] / n1, gxhat / n1);
                let w: Vec<f64> = cache.w1q[f * k1..(f + 1) * k1].iter().map(|x| x.as_f64()).collect();
                let rw = wm.gram_times(&w);
                for kk in 0..k1 {
                    let s = F::of(wm.sums[kk]);
                    let corr = F::of(rw[kk]) - mu * s;
                    row[kk] = k * (cross[f * k1 + kk] - mg * s - mgx * is * corr);
                }
            }
            _ => {
                for kk in 0..k1 {
                    row[kk] = k * cross[f * k1 + kk];
                }
            }
        }
    }
    if quant {
        let (gw, gl) = split_pair(&mut grads.tensors, TEMPORAL, Q_TEMPORAL);
        quant_weights_backward(&p[TEMPORAL], &p[Q_TEMPORAL], |i| i / k1, &gw1, gw, gl);
    } else {
        grads.tensors[TEMPORAL] = gw1;
    }
    Ok(grads)
}

/// Per-channel `(scale, shift)` of a batch norm: `y = scale·x + shift`.
fn bn_affine<F: Real>(cache: &BnCache<F>, gamma: &[F], beta: &[F]) -> (Vec<F>, Vec<F>) {
    let sc: Vec<F> = gamma.iter().zip(&cache.inv_std).map(|(g, i)| *g * *i).collect();
    let sh = beta.iter().zip(&sc).zip(&cache.mean).map(|((b, s), m)| *b - *m * *s).collect();
    (sc, sh)
}

/// First and second moments of every length-`T` window of padded rows:
/// `sums[k] = Σ_rows Σ_{t<T} x[t+k]` and
/// `gram[l][k] = Σ_rows Σ_{t<T} x[t+l]·x[t+k]`, accumulated in f64.
#[derive(Debug, Clone)]
struct WindowMoments {
    k: usize,
    sums: Vec<f64>,
    gram: Vec<f64>,
}

impl WindowMoments {
    fn new<F: Real>(xpad: &[F], rows: usize, row_len: usize, t: usize, k: usize) -> Self {
        let mut sums = vec![0.0; k];
        let mut gram = vec![0.0; k * k];
        let mut x = vec![0.0f64; row_len];
        for r in 0..rows {
            for (d, s) in x.iter_mut().zip(&xpad[r * row_len..(r + 1) * row_len]) {
                *d = s.as_f64();
            }
            let mut s: f64 = x[..t].iter().sum();
            for kk in 0..k {
                sums[kk] += s;
                if kk + 1 < k {
                    s += x[t + kk] - x[kk];
                }
            }
            // first row by dot products, the rest by sliding the window
            let mut g = vec![0.0; k * k];
            for kk in 0..k {
                g[kk] = dot(&x[..t], &x[kk..kk + t]);
            }
            for l in 1..k {
                for kk in l..k {
                    g[l * k + kk] = g[(l - 1) * k + kk - 1] - x[l - 1] * x[kk - 1] + x[t + l - 1] * x[t + kk - 1];
                }
            }
            for l in 0..k {
                for kk in l..k {
                    gram[l * k + kk] += g[l * k + kk];
                }
            }
        }
        for l in 0..k {
            for kk in 0..l {
                gram[l * k + kk] = gram[kk * k + l];
            }
        }
        Self { k, sums, gram }
    }

    fn linear(&self, w: &[f64]) -> f64 {
        dot(w, &self.sums)
    }

    fn gram_times(&self, w: &[f64]) -> Vec<f64> {
        (0..self.k).map(|kk| dot(w, &self.gram[kk * self.k..(kk + 1) * self.k])).collect()
    }

    fn quadratic(&self, w: &[f64]) -> f64 {
        dot(w, &self.gram_times(w))
    }
}

/// Two distinct tensors borrowed mutably at once (`i < j`).
fn split_pair<F>(tensors: &mut [Vec<F>], i: usize, j: usize) -> (&mut [F], &mut [F]) {
    debug_assert!(i < j);
    let (lo, hi) = tensors.split_at_mut(j);
    (&mut lo[i], &mut hi[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::init_model;

    fn toy_batch(cfg: &ModelConfig, n: usize) -> Batch<f32> {
        let per = cfg.n_channels * cfg.n_samples;
        Batch {
            inputs: (0..n * per).map(|i| ((i * 37 % 101) as f32 / 50.0) - 1.0).collect(),
            labels: (0..n).map(|i| i % cfg.n_classes).collect(),
            ids: (0..n).collect(),
        }
    }

    #[test]
    fn standard_shapes_and_eval_determinism() {
        let cfg = ModelConfig::standard(2);
        let model = init_model(&cfg, 1).unwrap();
        let batch = toy_batch(&cfg, 2);
        let a = forward_eval(&model, &batch).unwrap();
        let b = forward_eval(&model, &batch).unwrap();
        assert_eq!(a.features.len(), 2 * 32 * 29);
        assert_eq!(a.logits.len(), 4);
        assert_eq!(a, b);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let cfg = ModelConfig::tiny(2, 10, 2);
        let mut model = init_model(&cfg, 1).unwrap();
        let cache = forward(&model, &toy_batch(&cfg, 2), Mode::EVAL, None).unwrap();
        model.params_mut().tensors[0][0] += 1.0;
        assert!(matches!(backward(&model, &cache, &[0.0; 4]), Err(Error::State(_))));
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let cfg = ModelConfig::tiny(2, 10, 2);
        let model = init_model(&cfg, 1).unwrap();
        let mut batch = toy_batch(&cfg, 2);
        batch.inputs.pop();
        assert!(matches!(forward_eval(&model, &batch), Err(Error::Shape(_))));
    }
}
