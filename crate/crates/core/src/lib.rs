//! Wearable EEG brain–machine-interface learning stack: preprocessing, a
//! compact CNN trained from scratch, inter-session transfer and continual
//! learning (experience replay, learning without forgetting, elastic weight
//! consolidation), int8 quantization-aware training with learned clipping
//! thresholds, and a simulated on-device learning runtime.

pub mod cl;
pub mod data;
pub mod dsp;
pub mod error;
pub mod nn;
pub mod odl;
pub mod quant;
pub mod real;

pub use error::{Error, Result};
