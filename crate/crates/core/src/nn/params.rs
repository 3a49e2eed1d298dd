//! Flat parameter storage. Every trainable tensor lives in `Params::tensors`
//! at a fixed index, which keeps the optimizer, Fisher accumulation and the
//! checkpoint codec indifferent to layer structure.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{AdaptationDepth, ModelConfig};
use crate::real::Real;

pub const TEMPORAL: usize = 0;
pub const BN1_GAMMA: usize = 1;
pub const BN1_BETA: usize = 2;
pub const SPATIAL: usize = 3;
pub const BN2_GAMMA: usize = 4;
pub const BN2_BETA: usize = 5;
pub const SEP_DEPTHWISE: usize = 6;
pub const SEP_POINTWISE: usize = 7;
pub const BN3_GAMMA: usize = 8;
pub const BN3_BETA: usize = 9;
pub const DENSE_WEIGHT: usize = 10;
pub const DENSE_BIAS: usize = 11;
/// Number of network tensors; quantizer thresholds follow when attached.
pub const N_NETWORK: usize = 12;

pub const Q_TEMPORAL: usize = 12;
pub const Q_SPATIAL: usize = 13;
pub const Q_SEP_DEPTHWISE: usize = 14;
pub const Q_SEP_POINTWISE: usize = 15;
pub const Q_DENSE: usize = 16;
/// Activation after the spatial block (also reused after the first pool).
pub const Q_ACT1: usize = 17;
/// Activation after the separable depthwise conv.
pub const Q_ACT2: usize = 18;
/// Activation after the second block (also the pre-head features).
pub const Q_ACT3: usize = 19;
pub const N_WITH_QUANT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Weight,
    Bias,
    Norm,
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: &'static str,
    /// Adaptation-depth group (1 = head … 6 = batch norm).
    pub group: u8,
    pub kind: TensorKind,
}

pub const INFO: [TensorInfo; N_WITH_QUANT] = [
    TensorInfo { name: "temporal.weight", group: 5, kind: TensorKind::Weight },
    TensorInfo { name: "bn1.gamma", group: 6, kind: TensorKind::Norm },
    TensorInfo { name: "bn1.beta", group: 6, kind: TensorKind::Norm },
    TensorInfo { name: "spatial.weight", group: 4, kind: TensorKind::Weight },
    TensorInfo { name: "bn2.gamma", group: 6, kind: TensorKind::Norm },
    TensorInfo { name: "bn2.beta", group: 6, kind: TensorKind::Norm },
    TensorInfo { name: "separable.depthwise.weight", group: 3, kind: TensorKind::Weight },
    TensorInfo { name: "separable.pointwise.weight", group: 2, kind: TensorKind::Weight },
    TensorInfo { name: "bn3.gamma", group: 6, kind: TensorKind::Norm },
    TensorInfo { name: "bn3.beta", group: 6, kind: TensorKind::Norm },
    TensorInfo { name: "dense.weight", group: 1, kind: TensorKind::Weight },
    TensorInfo { name: "dense.bias", group: 1, kind: TensorKind::Bias },
    TensorInfo { name: "quant.temporal.log2_t", group: 5, kind: TensorKind::Threshold },
    TensorInfo { name: "quant.spatial.log2_t", group: 4, kind: TensorKind::Threshold },
    TensorInfo { name: "quant.separable.depthwise.log2_t", group: 3, kind: TensorKind::Threshold },
    TensorInfo { name: "quant.separable.pointwise.log2_t", group: 2, kind: TensorKind::Threshold },
    TensorInfo { name: "quant.dense.log2_t", group: 1, kind: TensorKind::Threshold },
    TensorInfo { name: "quant.act1.log2_t", group: 4, kind: TensorKind::Threshold },
    TensorInfo { name: "quant.act2.log2_t", group: 3, kind: TensorKind::Threshold },
    TensorInfo { name: "quant.act3.log2_t", group: 2, kind: TensorKind::Threshold },
];

/// Shapes `(rows, cols)` of the network tensors for a configuration.
pub fn network_shapes(cfg: &ModelConfig) -> [(usize, usize); N_NETWORK] {
    let m = cfg.spatial_maps();
    [
        (cfg.temporal_filters, cfg.temporal_kernel),
        (1, cfg.temporal_filters),
        (1, cfg.temporal_filters),
        (m, cfg.n_channels),
        (1, m),
        (1, m),
        (m, cfg.separable_kernel),
        (cfg.separable_filters, m),
        (1, cfg.separable_filters),
        (1, cfg.separable_filters),
        (cfg.feature_len(), cfg.n_classes),
        (1, cfg.n_classes),
    ]
}

/// One threshold per output channel of each weight tensor, one per activation.
pub fn threshold_lens(cfg: &ModelConfig) -> [usize; N_WITH_QUANT - N_NETWORK] {
    let m = cfg.spatial_maps();
    [cfg.temporal_filters, m, m, cfg.separable_filters, cfg.n_classes, 1, 1, 1]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params<F> {
    pub tensors: Vec<Vec<F>>,
}

impl<F: Real> Params<F> {
    pub fn zeros_like(other: &Self) -> Self {
        Self {
            tensors: other.tensors.iter().map(|t| vec![F::zero(); t.len()]).collect(),
        }
    }

    /// Glorot-uniform conv/dense weights, γ = 1, β = 0, zero bias.
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let shapes = network_shapes(cfg);
        let k1 = cfg.temporal_kernel;
        let k3 = cfg.separable_kernel;
        let m = cfg.spatial_maps();
        let fans = |i: usize| -> (usize, usize) {
            match i {
                TEMPORAL => (k1, cfg.temporal_filters * k1),
                SPATIAL => (cfg.n_channels, cfg.depth_multiplier * cfg.n_channels),
                SEP_DEPTHWISE => (k3, k3),
                SEP_POINTWISE => (m, cfg.separable_filters),
                DENSE_WEIGHT => (cfg.feature_len(), cfg.n_classes),
                _ => unreachable!(),
            }
        };
        let tensors = shapes
            .iter()
            .enumerate()
            .map(|(i, (r, c))| {
                let n = r * c;
                match INFO[i].kind {
                    TensorKind::Weight => {
                        let (fi, fo) = fans(i);
                        let limit = (6.0 / (fi + fo) as f64).sqrt();
                        (0..n).map(|_| F::of(rng.random_range(-limit..limit))).collect()
                    }
                    TensorKind::Norm if matches!(i, BN1_GAMMA | BN2_GAMMA | BN3_GAMMA) => vec![F::one(); n],
                    _ => vec![F::zero(); n],
                }
            })
            .collect();
        Self { tensors }
    }

    pub fn has_thresholds(&self) -> bool {
        self.tensors.len() == N_WITH_QUANT
    }

    /// Trainable network parameters, thresholds excluded.
    pub fn network_count(&self) -> usize {
        self.tensors[..N_NETWORK].iter().map(Vec::len).sum()
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    pub fn cast<G: Real>(&self) -> Params<G> {
        Params {
            tensors: self
                .tensors
                .iter()
                .map(|t| t.iter().map(|v| G::of(v.as_f64())).collect())
                .collect(),
        }
    }

    pub fn is_trainable(&self, index: usize, depth: AdaptationDepth) -> bool {
        depth.trains_group(INFO[index].group)
    }

    pub fn flat(&self) -> Vec<F> {
        self.tensors.iter().flatten().copied().collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }
}
