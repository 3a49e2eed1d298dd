//! Synthetic multi-session EEG-like recordings.
//!
//! A trial of class `k` carries one oscillatory burst (Gaussian envelope,
//! random onset and phase, frequency jittered around the class band centre)
//! projected onto the electrodes by the class topography. The topography has
//! a stable part and a drifting part; each session rotates the drifting part
//! by its own angle in the electrode planes (0,1), (2,3), (4,5), (6,7) and
//! scales the whole burst, which shifts the spatial covariance between
//! sessions.
//! Pink-like background noise, a DC offset and 50 Hz mains interference are
//! added to every electrode; the raw trials then go through the usual
//! preprocessing chain.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{SessionSequence, CLASS_NAMES};
use crate::dsp::{PreprocessConfig, Preprocessor, RawTrial, FS_HZ, N_CHANNELS, RAW_SAMPLES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTemplate {
    pub band_hz: f64,
    /// Session-invariant projection of the burst onto the electrodes.
    pub weights: Vec<f64>,
    /// Projection rotated by each session's drift angle.
    pub drift_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDrift {
    pub rotation_deg: f64,
    pub amplitude: f64,
    /// Standard deviation of the background noise per electrode.
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDriftConfig {
    pub trials_per_session: usize,
    pub classes: Vec<ClassTemplate>,
    /// One entry per session, in order.
    pub sessions: Vec<SessionDrift>,
    /// Uniform jitter of the burst frequency, ±Hz.
    pub freq_jitter_hz: f64,
    /// Standard deviation of the burst envelope, seconds.
    pub burst_width_s: f64,
    pub dc_offset: f64,
    pub line_noise: f64,
    pub seed: u64,
}

fn pattern(idx: &[usize]) -> Vec<f64> {
    let mut w = vec![0.0; N_CHANNELS];
    for i in idx {
        w[*i] = 1.0 / (idx.len() as f64).sqrt();
    }
    w
}

impl SyntheticDriftConfig {
    /// Two classes separated only by where the burst appears on the scalp.
    /// A weak stable component (electrode 4 vs 6) identifies the class in
    /// every session; a stronger drifting component starts on electrodes
    /// 0/2 vs 1/3 and rotates by `step_deg` per session. At 30° steps the
    /// fourth session has the drifting components of the two classes
    /// swapped relative to the first, so a model that relies on them fails
    /// on old sessions, while the stable part keeps all sessions jointly
    /// separable.
    pub fn binary_drift(trials_per_session: usize, n_sessions: usize, step_deg: f64, seed: u64) -> Self {
        let scaled = |idx: &[usize], k: f64| pattern(idx).iter().map(|v| v * k).collect::<Vec<_>>();
        Self {
            trials_per_session,
            classes: vec![
                ClassTemplate {
                    band_hz: 11.0,
                    weights: scaled(&[4], 0.3),
                    drift_weights: pattern(&[0, 2]),
                },
                ClassTemplate {
                    band_hz: 11.0,
                    weights: scaled(&[6], 0.3),
                    drift_weights: pattern(&[1, 3]),
                },
            ],
            sessions: (0..n_sessions)
                .map(|s| SessionDrift {
                    rotation_deg: step_deg * s as f64,
                    amplitude: 1.0,
                    noise: 0.5,
                })
                .collect(),
            freq_jitter_hz: 1.0,
            burst_width_s: 0.5,
            dc_offset: 2.0,
            line_noise: 0.5,
            seed,
        }
    }

    /// Four classes differing in topography and band, no drift and no noise.
    pub fn four_class_clean(trials_per_session: usize, n_sessions: usize, seed: u64) -> Self {
        Self {
            trials_per_session,
            classes: vec![
                ClassTemplate {
                    band_hz: 10.0,
                    weights: pattern(&[0, 4]),
                    drift_weights: vec![0.0; N_CHANNELS],
                },
                ClassTemplate {
                    band_hz: 10.0,
                    weights: pattern(&[2, 6]),
                    drift_weights: vec![0.0; N_CHANNELS],
                },
                ClassTemplate {
                    band_hz: 22.0,
                    weights: pattern(&[1, 5]),
                    drift_weights: vec![0.0; N_CHANNELS],
                },
                ClassTemplate {
                    band_hz: 22.0,
                    weights: pattern(&[3, 7]),
                    drift_weights: vec![0.0; N_CHANNELS],
                },
            ],
            sessions: (0..n_sessions)
                .map(|_| SessionDrift {
                    rotation_deg: 0.0,
                    amplitude: 1.0,
                    noise: 0.0,
                })
                .collect(),
            freq_jitter_hz: 1.0,
            burst_width_s: 0.5,
            dc_offset: 0.0,
            line_noise: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nc = self.classes.len();
        if nc < 2 || nc > CLASS_NAMES.len() {
            return Err(Error::Config(format!("{nc} classes, expected 2 to 4")));
        }
        if self.sessions.is_empty() {
            return Err(Error::Config("no sessions".into()));
        }
        if self.trials_per_session == 0 || self.trials_per_session % nc != 0 {
            return Err(Error::Config(format!(
                "{} trials per session cannot be split evenly over {nc} classes",
                self.trials_per_session
            )));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if c.weights.len() != N_CHANNELS || c.drift_weights.len() != N_CHANNELS || !c.band_hz.is_finite() || c.band_hz <= 0.0 {
                return Err(Error::Config(format!("class {i} template is malformed")));
            }
            if self.classes[..i].contains(c) {
                return Err(Error::Config(format!("class {i} duplicates an earlier template")));
            }
        }
        for (i, s) in self.sessions.iter().enumerate() {
            if !(s.rotation_deg.is_finite() && s.amplitude.is_finite() && s.noise.is_finite()) || s.noise < 0.0 {
                return Err(Error::Config(format!("session {} drift is not finite", i + 1)));
            }
        }
        let f = [self.freq_jitter_hz, self.burst_width_s, self.dc_offset, self.line_noise];
        if f.iter().any(|v| !v.is_finite() || *v < 0.0) || self.burst_width_s == 0.0 {
            return Err(Error::Config("burst and interference parameters must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        CLASS_NAMES[..self.classes.len()].iter().map(|s| s.to_string()).collect()
    }
}

/// Givens rotation by `deg` in each electrode pair (0,1), (2,3), ...
fn rotate(w: &[f64], deg: f64) -> Vec<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    let mut out = w.to_vec();
    for p in (0..w.len() - 1).step_by(2) {
        out[p] = c * w[p] - s * w[p + 1];
        out[p + 1] = s * w[p] + c * w[p + 1];
    }
    out
}

/// Unit-variance pink-like noise (sum of leaky integrators).
fn pink_noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut b = [0.0f64; 7];
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            let w: f64 = normal.sample(rng);
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let y = b.iter().sum::<f64>() + w * 0.5362;
            b[6] = w * 0.115926;
            y
        })
        .collect();
    let mean = out.iter().sum::<f64>() / n as f64;
    let std = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    for v in &mut out {
        *v = (*v - mean) / std.max(1e-12);
    }
    out
}

/// Raw 8×2000 trials at 500 Hz, per session in acquisition order. Every
/// session holds exactly `trials_per_session / n_classes` trials per class.
pub fn generate_synthetic_raw(cfg: &SyntheticDriftConfig) -> Result<Vec<Vec<RawTrial>>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let nc = cfg.classes.len();
    let n = RAW_SAMPLES;
    let mut out = Vec::with_capacity(cfg.sessions.len());
    for drift in &cfg.sessions {
        let mut labels: Vec<usize> = (0..cfg.trials_per_session).map(|i| i % nc).collect();
        labels.shuffle(&mut rng);
        let topo: Vec<Vec<f64>> = cfg
            .classes
            .iter()
            .map(|c| {
                let r = rotate(&c.drift_weights, drift.rotation_deg);
                c.weights.iter().zip(r).map(|(a, b)| a + b).collect()
            })
            .collect();
        let mut trials = Vec::with_capacity(labels.len());
        for label in labels {
            let class = &cfg.classes[label];
            let f = class.band_hz + rng.random_range(-1.0..=1.0) * cfg.freq_jitter_hz;
            let phase = rng.random_range(0.0..2.0 * PI);
            let onset = rng.random_range(1.5..2.5);
            let burst: Vec<f64> = (0..n)
                .map(|i| {
                    let t = i as f64 / FS_HZ;
                    let env = (-0.5 * ((t - onset) / cfg.burst_width_s).powi(2)).exp();
                    drift.amplitude * env * (2.0 * PI * f * t + phase).sin()
                })
                .collect();
            let line_phase = rng.random_range(0.0..2.0 * PI);
            let mut samples = Vec::with_capacity(N_CHANNELS * n);
            for ch in 0..N_CHANNELS {
                let dc = rng.random_range(-1.0..=1.0) * cfg.dc_offset;
                let noise = if drift.noise > 0.0 { pink_noise(n, &mut rng) } else { vec![0.0; n] };
                for i in 0..n {
                    let t = i as f64 / FS_HZ;
                    let mains = cfg.line_noise * (2.0 * PI * 50.0 * t + line_phase).sin();
                    let v = topo[label][ch] * burst[i] + drift.noise * noise[i] + dc + mains;
                    samples.push(v as f32);
                }
            }
            trials.push(RawTrial::new(samples, N_CHANNELS, FS_HZ, label)?);
        }
        out.push(trials);
    }
    Ok(out)
}

/// Generated and preprocessed sessions.
pub fn generate_synthetic(cfg: &SyntheticDriftConfig) -> Result<SessionSequence> {
    let raw = generate_synthetic_raw(cfg)?;
    let pre = Preprocessor::new(PreprocessConfig::default(), FS_HZ)?;
    let sessions = raw
        .iter()
        .map(|s| s.iter().map(|t| pre.run(t)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(SessionSequence {
        class_names: cfg.class_names(),
        sessions,
    })
}
