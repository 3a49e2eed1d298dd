//! Fake quantization with trained quantization thresholds (TQT).
//!
//! A quantizer owns a learnable log2-threshold `l`. Its scale is the power of
//! two `s = 2^ceil(l) / 128`, the integer grid is `[-128, 127]`, and
//! rounding is round-half-to-even. Gradients follow the straight-through
//! estimator: `∂q/∂x = 1` inside the clipping range and `0` outside, and
//! `∂q/∂l = s·ln2·(round(x/s) − x/s)` inside, `s·ln2·q_int` when clipped.

use serde::{Deserialize, Serialize};

use crate::real::Real;

pub const BITS: u32 = 8;
pub const QMIN: i32 = -128;
pub const QMAX: i32 = 127;

/// Rounding applied when mapping onto the integer grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    HalfEven,
    HalfUp,
}

/// Bit width and granularity used throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub bits: u32,
    pub weights_per_channel: bool,
    pub activations_per_layer: bool,
    pub rounding: Rounding,
}

impl Default for QuantSpec {
    fn default() -> Self {
        Self {
            bits: BITS,
            weights_per_channel: true,
            activations_per_layer: true,
            rounding: Rounding::HalfEven,
        }
    }
}

#[inline]
pub fn round_half_even<F: Real>(x: F) -> F {
    let f = x.floor();
    let diff = x - f;
    let half = F::of(0.5);
    if diff < half {
        f
    } else if diff > half {
        f + F::one()
    } else if (f / F::of(2.0)).floor() * F::of(2.0) == f {
        f
    } else {
        f + F::one()
    }
}

/// Step size of the quantizer with log2-threshold `log2_t`.
#[inline]
pub fn scale_from_log2<F: Real>(log2_t: F) -> F {
    F::of(2.0).powf(log2_t.ceil()) / F::of(128.0)
}

/// Integer grid index of `x` for step `s`.
#[inline]
pub fn quantize_index<F: Real>(x: F, s: F) -> F {
    round_half_even(x / s).max(F::of(QMIN as f64)).min(F::of(QMAX as f64))
}

/// Quantize-dequantize.
#[inline]
pub fn fake_quant<F: Real>(x: F, s: F) -> F {
    quantize_index(x, s) * s
}

/// Returns `(∂q/∂x, ∂q/∂log2_t)` at `x` for step `s`.
#[inline]
pub fn fake_quant_grads<F: Real>(x: F, s: F) -> (F, F) {
    let ln2 = F::of(std::f64::consts::LN_2);
    let v = x / s;
    let r = round_half_even(v);
    if r < F::of(QMIN as f64) {
        (F::zero(), s * ln2 * F::of(QMIN as f64))
    } else if r > F::of(QMAX as f64) {
        (F::zero(), s * ln2 * F::of(QMAX as f64))
    } else {
        (F::one(), s * ln2 * (r - v))
    }
}

/// Symmetric clipping bounds of one quantizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipBounds {
    pub lower: f64,
    pub upper: f64,
    pub trainable: bool,
}

impl ClipBounds {
    pub fn symmetric(t: f64, trainable: bool) -> Self {
        Self {
            lower: -t,
            upper: t,
            trainable,
        }
    }

    pub fn log2_threshold(&self) -> f64 {
        self.upper.log2()
    }

    /// Effective step of the power-of-two grid covering these bounds.
    pub fn scale(&self) -> f64 {
        scale_from_log2(self.log2_threshold())
    }
}
