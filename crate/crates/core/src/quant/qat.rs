//! Quantizer initialization and quantization-aware training.

use serde::{Deserialize, Serialize};

use super::fake::ClipBounds;
use crate::dsp::TrialTensor;
use crate::error::{Error, Result};
use crate::nn::network::{forward, Batch, Mode};
use crate::nn::params::{network_shapes, DENSE_WEIGHT, N_NETWORK, SEP_DEPTHWISE, SEP_POINTWISE, SPATIAL, TEMPORAL};
use crate::nn::{train, Model, Objective, QuantState, TrainConfig, TrainReport};

/// Bound used for an all-zero weight channel.
pub const ZERO_CHANNEL_BOUND: f64 = 1e-3;

/// Initial clip bounds, one list per quantizer in threshold order: weights
/// of the temporal, spatial, separable depthwise, pointwise and dense layers
/// (±max|w| per output channel), then the three activation sites (±1).
pub fn init_clip_bounds(model: &Model<f32>) -> Vec<Vec<ClipBounds>> {
    let cfg = model.config();
    let shapes = network_shapes(cfg);
    let p = &model.params().tensors;
    let per_row = |i: usize| -> Vec<ClipBounds> {
        let (rows, cols) = shapes[i];
        (0..rows)
            .map(|r| channel_bound(p[i][r * cols..(r + 1) * cols].iter().copied()))
            .collect()
    };
    let (rows, cols) = shapes[DENSE_WEIGHT];
    // dense weights are stored [feature][class]; channels are the classes
    let dense = (0..cols)
        .map(|k| channel_bound((0..rows).map(|i| p[DENSE_WEIGHT][i * cols + k])))
        .collect();
    let act = || vec![ClipBounds::symmetric(1.0, true)];
    vec![
        per_row(TEMPORAL),
        per_row(SPATIAL),
        per_row(SEP_DEPTHWISE),
        per_row(SEP_POINTWISE),
        dense,
        act(),
        act(),
        act(),
    ]
}

fn channel_bound(w: impl Iterator<Item = f32>) -> ClipBounds {
    let m = w.fold(0.0f64, |a, v| a.max(v.abs() as f64));
    ClipBounds::symmetric(if m > 0.0 { m } else { ZERO_CHANNEL_BOUND }, true)
}

/// log2 of the largest input magnitude in `set` (the input quantizer's
/// fixed threshold).
pub fn calibrate_input(set: &[&TrialTensor]) -> Result<f64> {
    let m = set
        .iter()
        .flat_map(|t| t.samples.iter())
        .fold(0.0f64, |a, v| a.max(v.abs() as f64));
    if set.is_empty() {
        return Err(Error::Data("empty calibration set".into()));
    }
    Ok(if m > 0.0 { m.log2() } else { ZERO_CHANNEL_BOUND.log2() })
}

/// Attach quantizers initialized from `bounds` with the input threshold
/// calibrated on `calibration`.
pub fn attach_quantizers(
    model: &mut Model<f32>,
    bounds: &[Vec<ClipBounds>],
    calibration: &[&TrialTensor],
    quantize_head: bool,
) -> Result<()> {
    let thresholds = bounds
        .iter()
        .map(|b| b.iter().map(|c| c.log2_threshold() as f32).collect())
        .collect();
    model.attach_quantizers(thresholds, calibrate_input(calibration)?)?;
    model.set_quant_state(QuantState {
        input_log2_t: model.quant().unwrap().input_log2_t,
        enabled: true,
        quantize_head,
    })
}

/// Post-training calibration: activation thresholds from the largest
/// eval-mode activation seen on `set` instead of ±1.
pub fn calibrate_activations(model: &mut Model<f32>, set: &[&TrialTensor]) -> Result<()> {
    let state = *model
        .quant()
        .ok_or_else(|| Error::State("no quantizers attached".into()))?;
    let mut float = model.clone();
    float.set_quant_state(QuantState {
        enabled: false,
        ..state
    })?;
    let mut peaks = [0.0f32; 3];
    for chunk in set.chunks(16) {
        let cache = forward(&float, &Batch::from_trials(chunk), Mode::EVAL, None)?;
        for (p, v) in peaks.iter_mut().zip(cache.activation_peaks()) {
            *p = p.max(v);
        }
    }
    let params = model.params_mut();
    for (j, p) in peaks.iter().enumerate() {
        let t = if *p > 0.0 { *p } else { ZERO_CHANNEL_BOUND as f32 };
        params.tensors[N_NETWORK + 5 + j][0] = t.log2();
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QatConfig {
    /// Float pretraining epochs before quantizers are inserted.
    pub fp32_epochs: usize,
    pub qat_epochs: usize,
    pub train: TrainConfig,
    /// Fake-quantize the dense head during training and evaluation.
    pub quantize_head: bool,
    /// When false the quantizers are attached but inactive (float graph).
    pub fake_quant: bool,
}

impl Default for QatConfig {
    fn default() -> Self {
        Self {
            fp32_epochs: 40,
            qat_epochs: 50,
            train: TrainConfig::default(),
            quantize_head: true,
            fake_quant: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QatReport {
    pub fp32: Option<TrainReport>,
    pub qat: TrainReport,
    /// Thresholds (log2) right after initialization and after training.
    pub initial_log2_thresholds: Vec<Vec<f32>>,
    pub final_log2_thresholds: Vec<Vec<f32>>,
}

/// Float pretraining, then quantizer insertion (max-|w| weight bounds, ±1
/// activation bounds, data-calibrated input) and QAT with learned thresholds.
pub fn qat_train<O: Objective<f32> + ?Sized>(
    model: &mut Model<f32>,
    set: &[&TrialTensor],
    cfg: &QatConfig,
    objective: &O,
) -> Result<QatReport> {
    let fp32 = if cfg.fp32_epochs > 0 && !model.params().has_thresholds() {
        let tc = TrainConfig {
            epochs: cfg.fp32_epochs,
            ..cfg.train.clone()
        };
        Some(train(model, set, &tc, objective)?)
    } else {
        None
    };
    if !model.params().has_thresholds() {
        let bounds = init_clip_bounds(model);
        attach_quantizers(model, &bounds, set, cfg.quantize_head)?;
    }
    let state = *model.quant().unwrap();
    model.set_quant_state(QuantState {
        enabled: cfg.fake_quant,
        quantize_head: cfg.quantize_head,
        ..state
    })?;
    let initial = model.params().tensors[N_NETWORK..].to_vec();
    let tc = TrainConfig {
        epochs: cfg.qat_epochs,
        ..cfg.train.clone()
    };
    let qat = train(model, set, &tc, objective)?;
    Ok(QatReport {
        fp32,
        qat,
        initial_log2_thresholds: initial,
        final_log2_thresholds: model.params().tensors[N_NETWORK..].to_vec(),
    })
}
