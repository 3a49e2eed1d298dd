use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Topology and regularization of the compact EEG CNN.
///
/// temporal conv (F1 filters, same padding) → batch norm → depthwise spatial
/// conv (depth multiplier D) → batch norm → ReLU → average pool → dropout →
/// separable conv (depthwise temporal + pointwise to F2) → batch norm → ReLU →
/// average pool → dropout → dense head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_channels: usize,
    pub n_samples: usize,
    pub n_classes: usize,
    pub temporal_filters: usize,
    pub temporal_kernel: usize,
    pub depth_multiplier: usize,
    pub pool1: usize,
    pub separable_kernel: usize,
    pub separable_filters: usize,
    pub pool2: usize,
    pub dropout: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl ModelConfig {
    /// The deployment topology: 8×1900 input, 32×29 pre-head feature map.
    pub fn standard(n_classes: usize) -> Self {
        Self {
            n_channels: 8,
            n_samples: 1900,
            n_classes,
            temporal_filters: 16,
            temporal_kernel: 64,
            depth_multiplier: 2,
            pool1: 8,
            separable_kernel: 104,
            separable_filters: 32,
            pool2: 8,
            dropout: 0.5,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    /// A miniature of the same topology for oracle tests.
    pub fn tiny(n_channels: usize, n_samples: usize, n_classes: usize) -> Self {
        Self {
            n_channels,
            n_samples,
            n_classes,
            temporal_filters: 2,
            temporal_kernel: 3,
            depth_multiplier: 2,
            pool1: 2,
            separable_kernel: 3,
            separable_filters: 3,
            pool2: 2,
            dropout: 0.0,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    pub fn spatial_maps(&self) -> usize {
        self.temporal_filters * self.depth_multiplier
    }

    pub fn len_after_pool1(&self) -> usize {
        self.n_samples / self.pool1
    }

    pub fn len_after_pool2(&self) -> usize {
        self.len_after_pool1() / self.pool2
    }

    pub fn feature_len(&self) -> usize {
        self.separable_filters * self.len_after_pool2()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_channels", self.n_channels),
            ("n_samples", self.n_samples),
            ("temporal_filters", self.temporal_filters),
            ("temporal_kernel", self.temporal_kernel),
            ("depth_multiplier", self.depth_multiplier),
            ("pool1", self.pool1),
            ("separable_kernel", self.separable_kernel),
            ("separable_filters", self.separable_filters),
            ("pool2", self.pool2),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.n_classes)));
        }
        if self.len_after_pool2() == 0 {
            return Err(Error::Config(format!(
                "{} samples vanish after pooling by {} and {}",
                self.n_samples, self.pool1, self.pool2
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) || !(self.bn_eps > 0.0) {
            return Err(Error::Config("batch-norm momentum must be in (0, 1] and eps positive".into()));
        }
        Ok(())
    }
}

/// How many trailing parameter groups are trainable. Group 1 is the dense
/// head, 2 the pointwise conv, 3 the separable depthwise conv, 4 the spatial
/// conv, 5 the temporal conv and 6 every batch-norm layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct AdaptationDepth(u8);

impl AdaptationDepth {
    pub const HEAD: Self = Self(1);
    pub const FULL: Self = Self(6);

    pub fn new(depth: u8) -> Result<Self> {
        if (1..=6).contains(&depth) {
            Ok(Self(depth))
        } else {
            Err(Error::Config(format!("adaptation depth must be 1..=6, got {depth}")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = Self> {
        (1..=6).map(Self)
    }

    pub fn trains_group(self, group: u8) -> bool {
        group <= self.0
    }

    pub fn trains_batch_norm(self) -> bool {
        self.0 >= 6
    }
}

impl Default for AdaptationDepth {
    fn default() -> Self {
        Self::FULL
    }
}

impl TryFrom<u8> for AdaptationDepth {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        Self::new(v)
    }
}

impl From<AdaptationDepth> for u8 {
    fn from(d: AdaptationDepth) -> u8 {
        d.0
    }
}

impl std::fmt::Display for AdaptationDepth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "θ{}", self.0)
    }
}
