//! Conversion of externally formatted recordings to the canonical trial
//! layout (f32, little-endian, channel-major).

use serde::{Deserialize, Serialize};

use crate::dsp::RawTrial;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleType {
    I16,
    I32,
    F32,
    F64,
}

impl SampleType {
    pub fn width(self) -> usize {
        match self {
            SampleType::I16 => 2,
            SampleType::I32 | SampleType::F32 => 4,
            SampleType::F64 => 8,
        }
    }
}

/// How an external file stores one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExternalLayout {
    pub sample_type: SampleType,
    pub little_endian: bool,
    /// Samples interleaved across channels (`[time][channel]`).
    pub time_major: bool,
    /// Multiplier applied to every decoded value (e.g. ADC counts to µV).
    pub scale: f64,
}

impl Default for ExternalLayout {
    fn default() -> Self {
        Self {
            sample_type: SampleType::F32,
            little_endian: true,
            time_major: false,
            scale: 1.0,
        }
    }
}

fn decode(chunk: &[u8], t: SampleType, le: bool) -> f64 {
    macro_rules! num {
        ($ty:ty) => {{
            let b = chunk.try_into().unwrap();
            (if le { <$ty>::from_le_bytes(b) } else { <$ty>::from_be_bytes(b) }) as f64
        }};
    }
    match t {
        SampleType::I16 => num!(i16),
        SampleType::I32 => num!(i32),
        SampleType::F32 => num!(f32),
        SampleType::F64 => num!(f64),
    }
}

/// Decode one externally formatted trial.
pub fn convert_trial(
    bytes: &[u8],
    layout: &ExternalLayout,
    n_channels: usize,
    fs: f64,
    label: usize,
) -> Result<RawTrial> {
    let w = layout.sample_type.width();
    if n_channels == 0 || bytes.len() % (w * n_channels) != 0 {
        return Err(Error::Data(format!(
            "{} bytes do not hold whole {}-channel frames of {w}-byte samples",
            bytes.len(),
            n_channels
        )));
    }
    let n = bytes.len() / (w * n_channels);
    let values: Vec<f64> = bytes
        .chunks_exact(w)
        .map(|c| decode(c, layout.sample_type, layout.little_endian) * layout.scale)
        .collect();
    let samples = if layout.time_major {
        let mut s = vec![0.0f32; values.len()];
        for t in 0..n {
            for c in 0..n_channels {
                s[c * n + t] = values[t * n_channels + c] as f32;
            }
        }
        s
    } else {
        values.iter().map(|v| *v as f32).collect()
    };
    RawTrial::new(samples, n_channels, fs, label)
}
