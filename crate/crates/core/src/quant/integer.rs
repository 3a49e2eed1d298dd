//! Integer-only inference of a quantization-aware-trained model.
//!
//! Every batch norm is folded into the requantization of the layer that
//! precedes its ReLU. A requantization is an integer multiply by a signed
//! 31-bit multiplier, an integer bias and a rounding right shift, evaluated in
//! 128-bit arithmetic. Pools divide by the pool size with the same rounding.
//!
//! Blob layout (little-endian):
//!
//! ```text
//! magic "BMICLQ8\0" | u32 version | model config | u8 rounding
//! f64 input scale | 3 × f64 activation scales
//! 4 × weight tensor (i8 values, f64 per-channel scales)
//! 3 × folded batch norm (f64 scales, f64 shifts)
//! 3 × requant list (u32 n, then n × (i64 multiplier, u8 shift, i64 bias))
//! -- end of backbone --
//! u8 head kind: 1 int8 (i8 weights, f64 per-class scales, f32 bias)
//!               2 float (f32 weights, f32 bias)
//! ```

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fake::{quantize_index, scale_from_log2, Rounding, QMAX, QMIN};
use super::qat::{attach_quantizers, calibrate_activations, init_clip_bounds};
use crate::dsp::TrialTensor;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{read_config, write_config, Reader, Writer};
use crate::nn::layers::same_pad_left;
use crate::nn::params::*;
use crate::nn::{ConfusionMatrix, Model, ModelConfig};
use crate::real::dot;

const MAGIC: &[u8; 8] = b"BMICLQ8\0";
pub const VERSION: u32 = 1;
const MAX_SHIFT: i32 = 62;

/// `y = round((acc·multiplier + bias) / 2^shift)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requant {
    pub multiplier: i32,
    pub shift: u8,
    pub bias: i64,
}

/// `(m, e)` with `x = m·2^e` and `0.5 ≤ |m| < 1`.
fn frexp(x: f64) -> (f64, i32) {
    let mut e = x.abs().log2().floor() as i32 + 1;
    let mut m = x / 2f64.powi(e);
    while m.abs() >= 1.0 {
        m /= 2.0;
        e += 1;
    }
    while m.abs() < 0.5 {
        m *= 2.0;
        e -= 1;
    }
    (m, e)
}

impl Requant {
    /// Integer form of `y = scale·acc + bias`.
    pub fn derive(scale: f64, bias: f64) -> Result<Self> {
        if !scale.is_finite() || !bias.is_finite() {
            return Err(Error::Config(format!("non-finite requantization ({scale}, {bias})")));
        }
        let mut shift = if scale == 0.0 { 31 } else { 31 - frexp(scale).1 };
        if shift < 0 {
            return Err(Error::Config(format!("scale overflow: multiplier {scale} needs a left shift")));
        }
        shift = shift.min(MAX_SHIFT);
        let limit = 2f64.powi(62);
        while shift > 0 && bias.abs() * 2f64.powi(shift) >= limit {
            shift -= 1;
        }
        if bias.abs() * 2f64.powi(shift) >= limit {
            return Err(Error::Config(format!("scale overflow: bias {bias} does not fit 64 bits")));
        }
        let mut m = (scale * 2f64.powi(shift)).round();
        if m.abs() > i32::MAX as f64 {
            // mantissa rounded up to 1.0
            shift -= 1;
            if shift < 0 {
                return Err(Error::Config(format!("scale overflow: multiplier {scale}")));
            }
            m = (scale * 2f64.powi(shift)).round();
        }
        Ok(Self {
            multiplier: m as i32,
            shift: shift as u8,
            bias: (bias * 2f64.powi(shift)).round() as i64,
        })
    }

    #[inline]
    pub fn apply(&self, acc: i64, rounding: Rounding) -> i64 {
        let v = acc as i128 * self.multiplier as i128 + self.bias as i128;
        round_shift(v, self.shift as u32, rounding) as i64
    }

    /// The real multiplier this pair represents.
    pub fn real_scale(&self) -> f64 {
        self.multiplier as f64 / 2f64.powi(self.shift as i32)
    }
}

/// `v / 2^s` rounded to nearest with ties per `rounding`.
#[inline]
pub fn round_shift(v: i128, s: u32, rounding: Rounding) -> i128 {
    if s == 0 {
        return v;
    }
    let q = v >> s;
    let r = v - (q << s);
    let half = 1i128 << (s - 1);
    if r > half {
        q + 1
    } else if r < half {
        q
    } else {
        match rounding {
            Rounding::HalfUp => q + 1,
            Rounding::HalfEven => q + (q & 1),
        }
    }
}

/// `sum / n` rounded to nearest with ties per `rounding`, `n > 0`.
#[inline]
pub fn round_div(sum: i64, n: i64, rounding: Rounding) -> i64 {
    let q = sum.div_euclid(n);
    let r = sum.rem_euclid(n);
    match (2 * r).cmp(&n) {
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Equal => match rounding {
            Rounding::HalfUp => q + 1,
            Rounding::HalfEven => q + (q & 1),
        },
    }
}

#[inline]
fn clamp_i8(v: i64, lo: i32) -> i8 {
    v.clamp(lo as i64, QMAX as i64) as i8
}

/// int8 values with one scale per output channel (rows, or columns for the
/// dense head).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTensor {
    pub values: Vec<i8>,
    pub scales: Vec<f64>,
}

impl QTensor {
    fn quantize(w: &[f32], log2_t: &[f32], channel: impl Fn(usize) -> usize) -> Self {
        let scales: Vec<f32> = log2_t.iter().map(|l| scale_from_log2(*l)).collect();
        Self {
            values: w
                .iter()
                .enumerate()
                .map(|(i, v)| quantize_index(*v, scales[channel(i)]) as i8)
                .collect(),
            scales: scales.iter().map(|s| *s as f64).collect(),
        }
    }

    pub fn dequantize(&self, channel: impl Fn(usize) -> usize) -> Vec<f32> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, q)| (*q as f64 * self.scales[channel(i)]) as f32)
            .collect()
    }
}

/// Per-channel affine form `scale·x + shift` of an eval-mode batch norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnFold {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

/// Everything before the dense head, integer-only at inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedBackbone {
    pub config: ModelConfig,
    pub rounding: Rounding,
    pub input_scale: f64,
    /// After the spatial block, after the separable depthwise conv, after the
    /// second block.
    pub act_scales: [f64; 3],
    pub temporal: QTensor,
    pub spatial: QTensor,
    pub separable_depthwise: QTensor,
    pub pointwise: QTensor,
    pub folded_bn: [BnFold; 3],
    /// Per spatial map, per spatial map, per separable filter.
    pub requant: [Vec<Requant>; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Head {
    /// Weights `[feature][class]` with one scale per class.
    Int8 { weights: QTensor, bias: Vec<f32> },
    Float { weights: Vec<f32>, bias: Vec<f32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedModel {
    pub backbone: QuantizedBackbone,
    pub head: Head,
}

fn fold_bn(model: &Model<f32>, layer: usize, gamma: usize, beta: usize) -> BnFold {
    let p = &model.params().tensors;
    let run = &model.running()[layer];
    let eps = model.config().bn_eps;
    let scale: Vec<f64> = p[gamma]
        .iter()
        .zip(&run.var)
        .map(|(g, v)| *g as f64 / (*v as f64 + eps).sqrt())
        .collect();
    let shift = p[beta]
        .iter()
        .zip(&scale)
        .zip(&run.mean)
        .map(|((b, s), m)| *b as f64 - *m as f64 * s)
        .collect();
    BnFold { scale, shift }
}

/// Integerize with round-half-to-even requantization.
pub fn integerize(model: &Model<f32>, calibration: &[&TrialTensor]) -> Result<QuantizedModel> {
    integerize_with(model, calibration, Rounding::HalfEven)
}

/// Convert a model to integer form. A model carrying quantizer thresholds
/// keeps them; one without is first given max-|w| weight bounds, an input
/// threshold and activation thresholds calibrated on `calibration`.
pub fn integerize_with(model: &Model<f32>, calibration: &[&TrialTensor], rounding: Rounding) -> Result<QuantizedModel> {
    let calibrated;
    let model = if model.params().has_thresholds() {
        model
    } else {
        let mut m = model.clone();
        let bounds = init_clip_bounds(&m);
        attach_quantizers(&mut m, &bounds, calibration, true)?;
        calibrate_activations(&mut m, calibration)?;
        calibrated = m;
        &calibrated
    };
    let cfg = model.config().clone();
    let q = *model.quant().expect("thresholds imply quantizer state");
    let p = &model.params().tensors;
    let (c, k1, d, m, k3, nc) = (
        cfg.n_channels,
        cfg.temporal_kernel,
        cfg.depth_multiplier,
        cfg.spatial_maps(),
        cfg.separable_kernel,
        cfg.n_classes,
    );

    let temporal = QTensor::quantize(&p[TEMPORAL], &p[Q_TEMPORAL], |i| i / k1);
    let spatial = QTensor::quantize(&p[SPATIAL], &p[Q_SPATIAL], |i| i / c);
    let separable_depthwise = QTensor::quantize(&p[SEP_DEPTHWISE], &p[Q_SEP_DEPTHWISE], |i| i / k3);
    let pointwise = QTensor::quantize(&p[SEP_POINTWISE], &p[Q_SEP_POINTWISE], |i| i / m);
    let input_scale = scale_from_log2(q.input_log2_t as f32) as f64;
    let act_scales = [Q_ACT1, Q_ACT2, Q_ACT3].map(|i| scale_from_log2(p[i][0]) as f64);
    let folded_bn = [
        fold_bn(model, 0, BN1_GAMMA, BN1_BETA),
        fold_bn(model, 1, BN2_GAMMA, BN2_BETA),
        fold_bn(model, 2, BN3_GAMMA, BN3_BETA),
    ];
    let [bn1, bn2, bn3] = &folded_bn;

    // Block 1: A = w1 ⋆ (w2 · x) in integers; the real pre-ReLU value is
    // sc2·(sc1·s1·s2·s_in·A + sh1·Σ_c w2) + sh2.
    let block1 = (0..m)
        .map(|mi| {
            let f = mi / d;
            let wsum: f64 = spatial.values[mi * c..(mi + 1) * c].iter().map(|v| *v as f64).sum::<f64>()
                * spatial.scales[mi];
            let scale =
                bn2.scale[mi] * bn1.scale[f] * temporal.scales[f] * spatial.scales[mi] * input_scale / act_scales[0];
            let bias = (bn2.scale[mi] * bn1.shift[f] * wsum + bn2.shift[mi]) / act_scales[0];
            Requant::derive(scale, bias)
        })
        .collect::<Result<Vec<_>>>()?;
    let sep = (0..m)
        .map(|mi| Requant::derive(separable_depthwise.scales[mi] * act_scales[0] / act_scales[1], 0.0))
        .collect::<Result<Vec<_>>>()?;
    let point = (0..cfg.separable_filters)
        .map(|g| {
            Requant::derive(
                bn3.scale[g] * pointwise.scales[g] * act_scales[1] / act_scales[2],
                bn3.shift[g] / act_scales[2],
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let bias = p[DENSE_BIAS].clone();
    let head = if q.quantize_head {
        Head::Int8 {
            weights: QTensor::quantize(&p[DENSE_WEIGHT], &p[Q_DENSE], |i| i % nc),
            bias,
        }
    } else {
        Head::Float {
            weights: p[DENSE_WEIGHT].clone(),
            bias,
        }
    };
    Ok(QuantizedModel {
        backbone: QuantizedBackbone {
            config: cfg,
            rounding,
            input_scale,
            act_scales,
            temporal,
            spatial,
            separable_depthwise,
            pointwise,
            folded_bn,
            requant: [block1, sep, point],
        },
        head,
    })
}

impl QuantizedBackbone {
    /// int8 feature map `[filter][time]` of one trial (`[channel][time]`).
    pub fn features(&self, x: &[f32]) -> Result<Vec<i8>> {
        self.features_from_input(&self.quantize_input(x)?)
    }

    /// The trial on the input grid, as the first layer consumes it.
    pub fn quantize_input(&self, x: &[f32]) -> Result<Vec<i8>> {
        let n = self.config.n_channels * self.config.n_samples;
        if x.len() != n {
            return Err(Error::Shape(format!("trial has {} values, expected {n}", x.len())));
        }
        let s_in = self.input_scale as f32;
        Ok(x.iter().map(|v| quantize_index(*v, s_in) as i8).collect())
    }

    /// Feature map of an already quantized input.
    pub fn features_from_input(&self, xq_in: &[i8]) -> Result<Vec<i8>> {
        let cfg = &self.config;
        let (c, t, k1, d, m) = (
            cfg.n_channels,
            cfg.n_samples,
            cfg.temporal_kernel,
            cfg.depth_multiplier,
            cfg.spatial_maps(),
        );
        let (p1, t1, k3, f2, p2, t2) = (
            cfg.pool1,
            cfg.len_after_pool1(),
            cfg.separable_kernel,
            cfg.separable_filters,
            cfg.pool2,
            cfg.len_after_pool2(),
        );
        if xq_in.len() != c * t {
            return Err(Error::Shape(format!("trial has {} values, expected {c}x{t}", xq_in.len())));
        }
        let rnd = self.rounding;

        // input to the int8 grid, zero padded for the temporal conv
        let row1 = t + k1 - 1;
        let left1 = same_pad_left(k1);
        let mut xq = vec![0i32; c * row1];
        for ci in 0..c {
            for (ti, v) in xq_in[ci * t..(ci + 1) * t].iter().enumerate() {
                xq[ci * row1 + left1 + ti] = *v as i32;
            }
        }

        // block 1: spatial mix, temporal conv, folded batch norms, ReLU
        let mut r2 = vec![0i8; m * t];
        let mut u = vec![0i32; row1];
        for mi in 0..m {
            u.fill(0);
            for ci in 0..c {
                let w = self.spatial.values[mi * c + ci] as i32;
                for (o, v) in u.iter_mut().zip(&xq[ci * row1..(ci + 1) * row1]) {
                    *o += w * v;
                }
            }
            let f = mi / d;
            let w1: Vec<i64> = self.temporal.values[f * k1..(f + 1) * k1].iter().map(|v| *v as i64).collect();
            let rq = self.requant[0][mi];
            for ti in 0..t {
                let acc: i64 = w1.iter().zip(&u[ti..ti + k1]).map(|(w, v)| w * *v as i64).sum();
                r2[mi * t + ti] = clamp_i8(rq.apply(acc, rnd), 0);
            }
        }

        // pool, then the separable depthwise conv
        let row3 = t1 + k3 - 1;
        let left3 = same_pad_left(k3);
        let mut pooled = vec![0i64; m * row3];
        for mi in 0..m {
            for i in 0..t1 {
                let s: i64 = r2[mi * t + i * p1..mi * t + (i + 1) * p1].iter().map(|v| *v as i64).sum();
                pooled[mi * row3 + left3 + i] = round_div(s, p1 as i64, rnd).clamp(QMIN as i64, QMAX as i64);
            }
        }
        let mut a3 = vec![0i64; m * t1];
        for mi in 0..m {
            let w3 = &self.separable_depthwise.values[mi * k3..(mi + 1) * k3];
            let rq = self.requant[1][mi];
            let row = &pooled[mi * row3..(mi + 1) * row3];
            for ti in 0..t1 {
                let acc: i64 = w3.iter().zip(&row[ti..ti + k3]).map(|(w, v)| *w as i64 * v).sum();
                a3[mi * t1 + ti] = clamp_i8(rq.apply(acc, rnd), QMIN) as i64;
            }
        }

        // pointwise conv with the third batch norm folded in, ReLU, pool
        let mut out = vec![0i8; f2 * t2];
        let mut acc = vec![0i64; t1];
        for g in 0..f2 {
            acc.fill(0);
            for mi in 0..m {
                let w = self.pointwise.values[g * m + mi] as i64;
                for (o, v) in acc.iter_mut().zip(&a3[mi * t1..(mi + 1) * t1]) {
                    *o += w * v;
                }
            }
            let rq = self.requant[2][g];
            let r4: Vec<i64> = acc.iter().map(|a| clamp_i8(rq.apply(*a, rnd), 0) as i64).collect();
            for i in 0..t2 {
                let s: i64 = r4[i * p2..(i + 1) * p2].iter().sum();
                out[g * t2 + i] = clamp_i8(round_div(s, p2 as i64, rnd), QMIN);
            }
        }
        Ok(out)
    }

    pub fn dequantize_features(&self, q: &[i8]) -> Vec<f32> {
        q.iter().map(|v| (*v as f64 * self.act_scales[2]) as f32).collect()
    }

    pub fn feature_len(&self) -> usize {
        self.config.feature_len()
    }

    /// Serialized form without the head; the bytes a deployment would freeze.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        write_config(&mut w, &self.config);
        w.u8(match self.rounding {
            Rounding::HalfEven => 0,
            Rounding::HalfUp => 1,
        });
        w.f64(self.input_scale);
        for s in self.act_scales {
            w.f64(s);
        }
        for t in [&self.temporal, &self.spatial, &self.separable_depthwise, &self.pointwise] {
            w.i8s(&t.values);
            w.f64s(&t.scales);
        }
        for b in &self.folded_bn {
            w.f64s(&b.scale);
            w.f64s(&b.shift);
        }
        for list in &self.requant {
            w.u32(list.len() as u32);
            for r in list {
                w.i64(r.multiplier as i64);
                w.u8(r.shift);
                w.i64(r.bias);
            }
        }
        w.0
    }

    fn read(r: &mut Reader) -> Result<Self> {
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a quantized model blob".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("quantized blob version {version}, expected {VERSION}")));
        }
        let config = read_config(r)?;
        let rounding = match r.u8()? {
            0 => Rounding::HalfEven,
            1 => Rounding::HalfUp,
            v => return Err(Error::Format(format!("unknown rounding mode {v}"))),
        };
        let input_scale = r.f64()?;
        let act_scales = [r.f64()?, r.f64()?, r.f64()?];
        let mut tensor = || -> Result<QTensor> {
            Ok(QTensor {
                values: r.i8s()?,
                scales: r.f64s()?,
            })
        };
        let (temporal, spatial, separable_depthwise, pointwise) = (tensor()?, tensor()?, tensor()?, tensor()?);
        let mut fold = || -> Result<BnFold> {
            Ok(BnFold {
                scale: r.f64s()?,
                shift: r.f64s()?,
            })
        };
        let folded_bn = [fold()?, fold()?, fold()?];
        let mut list = || -> Result<Vec<Requant>> {
            let n = r.u32()? as usize;
            (0..n)
                .map(|_| {
                    let multiplier = i32::try_from(r.i64()?).map_err(|_| Error::Format("multiplier overflows i32".into()))?;
                    let shift = r.u8()?;
                    if shift as i32 > MAX_SHIFT {
                        return Err(Error::Format(format!("shift {shift} out of range")));
                    }
                    Ok(Requant {
                        multiplier,
                        shift,
                        bias: r.i64()?,
                    })
                })
                .collect()
        };
        let requant = [list()?, list()?, list()?];
        let b = Self {
            config,
            rounding,
            input_scale,
            act_scales,
            temporal,
            spatial,
            separable_depthwise,
            pointwise,
            folded_bn,
            requant,
        };
        b.validate()?;
        Ok(b)
    }

    fn validate(&self) -> Result<()> {
        let cfg = &self.config;
        let (c, k1, m, k3, f1, f2) = (
            cfg.n_channels,
            cfg.temporal_kernel,
            cfg.spatial_maps(),
            cfg.separable_kernel,
            cfg.temporal_filters,
            cfg.separable_filters,
        );
        let check = |t: &QTensor, n: usize, ch: usize, name: &str| -> Result<()> {
            if t.values.len() != n || t.scales.len() != ch {
                return Err(Error::Format(format!("{name} weights do not match the config")));
            }
            Ok(())
        };
        check(&self.temporal, f1 * k1, f1, "temporal")?;
        check(&self.spatial, m * c, m, "spatial")?;
        check(&self.separable_depthwise, m * k3, m, "separable depthwise")?;
        check(&self.pointwise, f2 * m, f2, "pointwise")?;
        let lens = [f1, m, f2];
        for (b, n) in self.folded_bn.iter().zip(lens) {
            if b.scale.len() != n || b.shift.len() != n {
                return Err(Error::Format("folded batch norm does not match the config".into()));
            }
        }
        if self.requant[0].len() != m || self.requant[1].len() != m || self.requant[2].len() != f2 {
            return Err(Error::Format("requantization lists do not match the config".into()));
        }
        let scales = std::iter::once(&self.input_scale).chain(&self.act_scales);
        if scales.into_iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Format("activation scales must be positive".into()));
        }
        Ok(())
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        let b = Self::read(&mut r)?;
        r.finish()?;
        Ok(b)
    }
}

impl Head {
    pub fn n_classes(&self) -> usize {
        match self {
            Head::Int8 { bias, .. } | Head::Float { bias, .. } => bias.len(),
        }
    }

    /// Logits from the int8 feature map with feature scale `s_feat`.
    pub fn logits(&self, q: &[i8], s_feat: f64) -> Vec<f32> {
        let nc = self.n_classes();
        match self {
            Head::Int8 { weights, bias } => (0..nc)
                .map(|k| {
                    let acc: i32 = q
                        .iter()
                        .enumerate()
                        .map(|(i, v)| *v as i32 * weights.values[i * nc + k] as i32)
                        .sum();
                    (acc as f64 * s_feat * weights.scales[k]) as f32 + bias[k]
                })
                .collect(),
            Head::Float { weights, bias } => {
                let x: Vec<f32> = q.iter().map(|v| (*v as f64 * s_feat) as f32).collect();
                (0..nc)
                    .map(|k| {
                        let col: Vec<f32> = (0..x.len()).map(|i| weights[i * nc + k]).collect();
                        dot(&x, &col) + bias[k]
                    })
                    .collect()
            }
        }
    }

    /// Float weights `[feature][class]` (dequantized for an int8 head) and bias.
    pub fn to_float(&self) -> (Vec<f32>, Vec<f32>) {
        match self {
            Head::Int8 { weights, bias } => {
                let nc = bias.len();
                (weights.dequantize(|i| i % nc), bias.clone())
            }
            Head::Float { weights, bias } => (weights.clone(), bias.clone()),
        }
    }
}

/// Integer features of one trial and their dequantized, flattened form.
pub fn int8_forward(qm: &QuantizedModel, t: &TrialTensor) -> Result<(Vec<i8>, Vec<f32>)> {
    let q = qm.backbone.features(&t.samples)?;
    let f = qm.backbone.dequantize_features(&q);
    Ok((q, f))
}

impl QuantizedModel {
    pub fn config(&self) -> &ModelConfig {
        &self.backbone.config
    }

    pub fn logits(&self, t: &TrialTensor) -> Result<Vec<f32>> {
        let q = self.backbone.features(&t.samples)?;
        Ok(self.head.logits(&q, self.backbone.act_scales[2]))
    }

    /// Logits of every trial, in order; trials run in parallel.
    pub fn predict_logits(&self, set: &[&TrialTensor]) -> Result<Vec<Vec<f32>>> {
        set.par_iter().map(|t| self.logits(t)).collect()
    }

    pub fn confusion(&self, set: &[&TrialTensor]) -> Result<ConfusionMatrix> {
        let mut cm = ConfusionMatrix::new(self.head.n_classes());
        for (t, l) in set.iter().zip(self.predict_logits(set)?) {
            cm.add(t.label, crate::nn::train::argmax(&l));
        }
        Ok(cm)
    }

    pub fn backbone_bytes(&self) -> Vec<u8> {
        self.backbone.to_bytes()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(self.backbone.to_bytes());
        match &self.head {
            Head::Int8 { weights, bias } => {
                w.u8(1);
                w.i8s(&weights.values);
                w.f64s(&weights.scales);
                w.f32s(bias);
            }
            Head::Float { weights, bias } => {
                w.u8(2);
                w.f32s(weights);
                w.f32s(bias);
            }
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        let backbone = QuantizedBackbone::read(&mut r)?;
        let head = match r.u8()? {
            1 => Head::Int8 {
                weights: QTensor {
                    values: r.i8s()?,
                    scales: r.f64s()?,
                },
                bias: r.f32s()?,
            },
            2 => Head::Float {
                weights: r.f32s()?,
                bias: r.f32s()?,
            },
            v => return Err(Error::Format(format!("unknown head kind {v}"))),
        };
        r.finish()?;
        let (nf, nc) = (backbone.config.feature_len(), backbone.config.n_classes);
        let ok = match &head {
            Head::Int8 { weights, bias } => {
                weights.values.len() == nf * nc && weights.scales.len() == nc && bias.len() == nc
            }
            Head::Float { weights, bias } => weights.len() == nf * nc && bias.len() == nc,
        };
        if !ok {
            return Err(Error::Format("head does not match the config".into()));
        }
        Ok(Self { backbone, head })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::load(path, e.to_string()))?;
        Self::from_bytes(&buf).map_err(|e| Error::load(path, e.to_string()))
    }
}
