//! EEG preprocessing: Butterworth bandpass, mains notch, moving-average drift
//! removal and cropping of each trial to the network's input window.
//!
//! Filters are designed in `f64` and run per channel in transposed direct
//! form II. Trials are stored as `f32`, channel-major.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Acquisition constants of the recording format.
pub const FS_HZ: f64 = 500.0;
pub const N_CHANNELS: usize = 8;
pub const RAW_SAMPLES: usize = 2000;
pub const CROP_SAMPLES: usize = 1900;

/// One recorded trial, channel-major `n_channels × n_samples`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTrial {
    pub samples: Vec<f32>,
    pub n_channels: usize,
    pub n_samples: usize,
    pub fs: f64,
    pub label: usize,
}

impl RawTrial {
    pub fn new(samples: Vec<f32>, n_channels: usize, fs: f64, label: usize) -> Result<Self> {
        if n_channels == 0 || samples.len() % n_channels != 0 {
            return Err(Error::Data(format!(
                "{} samples cannot be split into {} channels",
                samples.len(),
                n_channels
            )));
        }
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::Parameter(format!("sampling rate {fs} must be positive")));
        }
        let n_samples = samples.len() / n_channels;
        Ok(Self {
            samples,
            n_channels,
            n_samples,
            fs,
            label,
        })
    }

    pub fn zeros(n_channels: usize, n_samples: usize, fs: f64, label: usize) -> Self {
        Self {
            samples: vec![0.0; n_channels * n_samples],
            n_channels,
            n_samples,
            fs,
            label,
        }
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.samples[c * self.n_samples..(c + 1) * self.n_samples]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        &mut self.samples[c * self.n_samples..(c + 1) * self.n_samples]
    }

    fn check_finite(&self) -> Result<()> {
        match self.samples.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::Data(format!(
                "non-finite sample at channel {}, index {}",
                i / self.n_samples,
                i % self.n_samples
            ))),
            None => Ok(()),
        }
    }
}

/// A preprocessed trial ready for the network, channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTensor {
    pub samples: Vec<f32>,
    pub n_channels: usize,
    pub n_samples: usize,
    pub label: usize,
}

impl TrialTensor {
    pub fn new(samples: Vec<f32>, n_channels: usize, n_samples: usize, label: usize) -> Result<Self> {
        if samples.len() != n_channels * n_samples {
            return Err(Error::Shape(format!(
                "expected {}×{} samples, got {}",
                n_channels,
                n_samples,
                samples.len()
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at flat index {i}")));
        }
        Ok(Self {
            samples,
            n_channels,
            n_samples,
            label,
        })
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.samples[c * self.n_samples..(c + 1) * self.n_samples]
    }
}

/// Second-order section `(b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Complex response at normalized angular frequency `w` (rad/sample).
    pub fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        let num = self.b0 + z1 * self.b1 + z2 * self.b2;
        let den = 1.0 + z1 * self.a1 + z2 * self.a2;
        num / den
    }

    pub fn poles(&self) -> [Complex64; 2] {
        // roots of z² + a1 z + a2
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        [(-self.a1 + disc) / 2.0, (-self.a1 - disc) / 2.0]
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }

    fn scaled(self, g: f64) -> Self {
        Self {
            b0: self.b0 * g,
            b1: self.b1 * g,
            b2: self.b2 * g,
            ..self
        }
    }
}

/// Ordered cascade of biquads, evaluated in one forward pass per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiquadCascade {
    pub sections: Vec<Biquad>,
}

impl BiquadCascade {
    pub fn response(&self, freq_hz: f64, fs: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / fs;
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(w))
    }

    pub fn magnitude(&self, freq_hz: f64, fs: f64) -> f64 {
        self.response(freq_hz, fs).norm()
    }

    pub fn gain_db(&self, freq_hz: f64, fs: f64) -> f64 {
        20.0 * self.magnitude(freq_hz, fs).log10()
    }

    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(Biquad::is_stable)
    }

    pub fn max_pole_modulus(&self) -> f64 {
        self.sections
            .iter()
            .flat_map(|s| s.poles())
            .map(|p| p.norm())
            .fold(0.0, f64::max)
    }

    /// Causal filtering of `x` in place, starting from rest.
    pub fn filter_in_place(&self, x: &mut [f64]) {
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in x.iter_mut() {
                let y = s.b0 * *v + z1;
                z1 = s.b1 * *v - s.a1 * y + z2;
                z2 = s.b2 * *v - s.a2 * y;
                *v = y;
            }
        }
    }

    pub fn impulse_response(&self, n: usize) -> Vec<f64> {
        let mut h = vec![0.0; n];
        if n > 0 {
            h[0] = 1.0;
        }
        self.filter_in_place(&mut h);
        h
    }
}

/// Butterworth bandpass from an analog prototype of order `order`
/// (giving `order` biquads), discretized by the bilinear transform with
/// pre-warped band edges. Each section is normalized to unit gain at the
/// band centre.
pub fn design_butterworth_bandpass(order: usize, lo_hz: f64, hi_hz: f64, fs: f64) -> Result<BiquadCascade> {
    if order == 0 || order % 2 != 0 {
        return Err(Error::Parameter(format!("bandpass prototype order {order} must be even and positive")));
    }
    if !(fs > 0.0) || !(lo_hz > 0.0 && lo_hz < hi_hz && hi_hz < fs / 2.0) {
        return Err(Error::Parameter(format!(
            "band edges must satisfy 0 < lo < hi < fs/2, got lo={lo_hz} hi={hi_hz} fs={fs}"
        )));
    }
    let k = 2.0 * fs;
    let w_lo = k * (PI * lo_hz / fs).tan();
    let w_hi = k * (PI * hi_hz / fs).tan();
    let bw = w_hi - w_lo;
    let w0 = (w_lo * w_hi).sqrt();
    // digital frequency that maps onto the analog centre
    let w_center = 2.0 * (w0 / k).atan();

    let mut sections = Vec::with_capacity(order);
    // upper-half-plane prototype poles; conjugates are implied
    for i in 0..order / 2 {
        let theta = PI * (2 * i + order + 1) as f64 / (2 * order) as f64;
        let p = Complex64::from_polar(1.0, theta);
        let half = p * bw / 2.0;
        let root = (half * half - w0 * w0).sqrt();
        for s in [half + root, half - root] {
            // one pole of each conjugate pair lands in the upper half plane
            let s = if s.im < 0.0 { s.conj() } else { s };
            let z = (k + s) / (k - s);
            let raw = Biquad {
                b0: 1.0,
                b1: 0.0,
                b2: -1.0,
                a1: -2.0 * z.re,
                a2: z.norm_sqr(),
            };
            let g = raw.response(w_center).norm();
            sections.push(raw.scaled(1.0 / g));
        }
    }
    Ok(BiquadCascade { sections })
}

/// Second-order notch with its zeros on the unit circle at `f0`.
pub fn design_notch(f0: f64, quality: f64, fs: f64) -> Result<BiquadCascade> {
    if !(fs > 0.0) || !(f0 > 0.0 && f0 < fs / 2.0) {
        return Err(Error::Parameter(format!("notch frequency {f0} must lie in (0, fs/2) for fs={fs}")));
    }
    if !(quality > 0.0 && quality.is_finite()) {
        return Err(Error::Parameter(format!("notch quality {quality} must be positive")));
    }
    let w0 = 2.0 * PI * f0 / fs;
    let alpha = w0.sin() / (2.0 * quality);
    let a0 = 1.0 + alpha;
    let c = -2.0 * w0.cos();
    Ok(BiquadCascade {
        sections: vec![Biquad {
            b0: 1.0 / a0,
            b1: c / a0,
            b2: 1.0 / a0,
            a1: c / a0,
            a2: (1.0 - alpha) / a0,
        }],
    })
}

/// Causal per-channel filtering from rest; output has the input's shape.
pub fn apply_filter(cascade: &BiquadCascade, x: &RawTrial) -> Result<RawTrial> {
    if !cascade.is_stable() {
        return Err(Error::Parameter("cascade has poles on or outside the unit circle".into()));
    }
    x.check_finite()?;
    let mut out = x.clone();
    let mut buf = vec![0.0f64; x.n_samples];
    for c in 0..x.n_channels {
        for (b, v) in buf.iter_mut().zip(x.channel(c)) {
            *b = *v as f64;
        }
        cascade.filter_in_place(&mut buf);
        for (o, b) in out.channel_mut(c).iter_mut().zip(&buf) {
            *o = *b as f32;
        }
    }
    Ok(out)
}

/// How filter state is established before the first sample of a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterInit {
    /// Start from rest.
    Zero,
    /// Run the trial through once before the pass that is kept, treating the
    /// trial as one period of a stationary signal. Mains interference at
    /// 50 Hz has exactly 10 samples per cycle at 500 Hz, so it continues
    /// seamlessly across the wrap and the notch reaches steady state.
    PeriodicPreroll,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterDirection {
    Causal,
    /// Forward then time-reversed pass (squared magnitude, zero phase).
    ZeroPhase,
}

/// Kernel of the centred moving average that is subtracted for drift removal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AverageKernel {
    Boxcar,
    /// Triangular weights over the same window; a boxcar's first sidelobe
    /// (≈0.21) would dent the alpha/beta band by up to 2 dB after subtraction.
    Triangular,
}

fn filter_channel(cascade: &BiquadCascade, x: &mut [f64], init: FilterInit, scratch: &mut Vec<f64>) {
    match init {
        FilterInit::Zero => cascade.filter_in_place(x),
        FilterInit::PeriodicPreroll => {
            scratch.clear();
            scratch.extend_from_slice(x);
            scratch.extend_from_slice(x);
            cascade.filter_in_place(scratch);
            x.copy_from_slice(&scratch[x.len()..]);
        }
    }
}

fn run_cascade(cascade: &BiquadCascade, x: &mut [f64], init: FilterInit, dir: FilterDirection, scratch: &mut Vec<f64>) {
    filter_channel(cascade, x, init, scratch);
    if dir == FilterDirection::ZeroPhase {
        x.reverse();
        filter_channel(cascade, x, init, scratch);
        x.reverse();
    }
}

/// Number of samples in a detrend window.
pub fn window_samples(window_s: f64, fs: f64) -> usize {
    (window_s * fs).round() as usize
}

/// Subtract a centred moving average of `window_s` seconds from every channel.
/// Windows shrink (and are renormalized) near the trial edges.
pub fn moving_average_detrend(x: &RawTrial, window_s: f64) -> Result<RawTrial> {
    moving_average_detrend_with(x, window_s, AverageKernel::Triangular)
}

pub fn moving_average_detrend_with(x: &RawTrial, window_s: f64, kernel: AverageKernel) -> Result<RawTrial> {
    x.check_finite()?;
    let n = window_samples(window_s, x.fs);
    if n < 1 {
        return Err(Error::Parameter(format!("window of {window_s} s is shorter than one sample")));
    }
    if n > x.n_samples {
        return Err(Error::Parameter(format!(
            "window of {n} samples exceeds trial length {}",
            x.n_samples
        )));
    }
    let mut out = x.clone();
    let mut buf = vec![0.0f64; x.n_samples];
    for c in 0..x.n_channels {
        for (b, v) in buf.iter_mut().zip(x.channel(c)) {
            *b = *v as f64;
        }
        let trend = centred_average(&buf, n, kernel);
        for ((o, b), t) in out.channel_mut(c).iter_mut().zip(&buf).zip(&trend) {
            *o = (b - t) as f32;
        }
    }
    Ok(out)
}

fn centred_average(x: &[f64], n: usize, kernel: AverageKernel) -> Vec<f64> {
    let len = x.len() as isize;
    match kernel {
        AverageKernel::Boxcar => {
            let mut prefix = vec![0.0; x.len() + 1];
            for (i, v) in x.iter().enumerate() {
                prefix[i + 1] = prefix[i] + v;
            }
            let left = (n / 2) as isize;
            (0..len)
                .map(|t| {
                    let lo = (t - left).max(0);
                    let hi = (t - left + n as isize).min(len);
                    (prefix[hi as usize] - prefix[lo as usize]) / (hi - lo) as f64
                })
                .collect()
        }
        AverageKernel::Triangular => {
            let h = ((n - 1) / 2) as isize;
            (0..len)
                .map(|t| {
                    let (mut acc, mut wsum) = (0.0, 0.0);
                    for j in (-h).max(-t)..=h.min(len - 1 - t) {
                        let w = (h + 1 - j.abs()) as f64;
                        acc += w * x[(t + j) as usize];
                        wsum += w;
                    }
                    acc / wsum
                })
                .collect()
        }
    }
}

/// Keep the central `CROP_SAMPLES` columns of a `RAW_SAMPLES` trial.
pub fn crop_trial(x: &RawTrial) -> Result<TrialTensor> {
    crop_to(x, RAW_SAMPLES, CROP_SAMPLES)
}

fn crop_to(x: &RawTrial, expected: usize, keep: usize) -> Result<TrialTensor> {
    if x.n_samples != expected {
        return Err(Error::Data(format!(
            "trial has {} samples, expected {expected}",
            x.n_samples
        )));
    }
    if keep > expected {
        return Err(Error::Parameter(format!("cannot keep {keep} of {expected} samples")));
    }
    let offset = (expected - keep) / 2;
    let mut samples = Vec::with_capacity(x.n_channels * keep);
    for c in 0..x.n_channels {
        samples.extend_from_slice(&x.channel(c)[offset..offset + keep]);
    }
    TrialTensor::new(samples, x.n_channels, keep, x.label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub bandpass_order: usize,
    pub bandpass_lo_hz: f64,
    pub bandpass_hi_hz: f64,
    pub notch_hz: f64,
    pub notch_q: f64,
    pub detrend_window_s: f64,
    pub detrend_kernel: AverageKernel,
    pub init: FilterInit,
    pub direction: FilterDirection,
    pub raw_samples: usize,
    pub crop_samples: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            bandpass_order: 4,
            bandpass_lo_hz: 0.5,
            bandpass_hi_hz: 100.0,
            notch_hz: 50.0,
            notch_q: 30.0,
            detrend_window_s: 0.25,
            detrend_kernel: AverageKernel::Triangular,
            init: FilterInit::PeriodicPreroll,
            direction: FilterDirection::Causal,
            raw_samples: RAW_SAMPLES,
            crop_samples: CROP_SAMPLES,
        }
    }
}

/// Designed filters for one sampling rate, reusable across trials.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub config: PreprocessConfig,
    pub fs: f64,
    pub bandpass: BiquadCascade,
    pub notch: BiquadCascade,
}

impl Preprocessor {
    pub fn new(config: PreprocessConfig, fs: f64) -> Result<Self> {
        let bandpass = design_butterworth_bandpass(config.bandpass_order, config.bandpass_lo_hz, config.bandpass_hi_hz, fs)?;
        let notch = design_notch(config.notch_hz, config.notch_q, fs)?;
        Ok(Self {
            config,
            fs,
            bandpass,
            notch,
        })
    }

    /// bandpass → notch → detrend → crop
    pub fn run(&self, x: &RawTrial) -> Result<TrialTensor> {
        if (x.fs - self.fs).abs() > 1e-9 {
            return Err(Error::Data(format!(
                "trial sampled at {} Hz, preprocessor designed for {} Hz",
                x.fs, self.fs
            )));
        }
        if x.n_samples != self.config.raw_samples {
            return Err(Error::Data(format!(
                "trial has {} samples, expected {}",
                x.n_samples, self.config.raw_samples
            )));
        }
        x.check_finite()?;
        let mut filtered = x.clone();
        let mut buf = vec![0.0f64; x.n_samples];
        let mut scratch = Vec::with_capacity(2 * x.n_samples);
        for c in 0..x.n_channels {
            for (b, v) in buf.iter_mut().zip(x.channel(c)) {
                *b = *v as f64;
            }
            run_cascade(&self.bandpass, &mut buf, self.config.init, self.config.direction, &mut scratch);
            run_cascade(&self.notch, &mut buf, self.config.init, self.config.direction, &mut scratch);
            let trend = centred_average(&buf, self.window(), self.config.detrend_kernel);
            for ((o, b), t) in filtered.channel_mut(c).iter_mut().zip(&buf).zip(&trend) {
                *o = (b - t) as f32;
            }
        }
        crop_to(&filtered, self.config.raw_samples, self.config.crop_samples)
    }

    fn window(&self) -> usize {
        window_samples(self.config.detrend_window_s, self.fs).clamp(1, self.config.raw_samples)
    }
}

/// Full chain with the default configuration.
pub fn preprocess(x: &RawTrial) -> Result<TrialTensor> {
    Preprocessor::new(PreprocessConfig::default(), x.fs)?.run(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freqs: &[(f64, f64)], n: usize, fs: f64) -> Vec<f32> {
        (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                freqs.iter().map(|(f, a)| a * (2.0 * PI * f * t).sin()).sum::<f64>() as f32
            })
            .collect()
    }

    #[test]
    fn bandpass_rejects_invalid_edges() {
        assert!(design_butterworth_bandpass(4, 0.0, 100.0, 500.0).is_err());
        assert!(design_butterworth_bandpass(4, 100.0, 50.0, 500.0).is_err());
        assert!(design_butterworth_bandpass(4, 0.5, 250.0, 500.0).is_err());
        assert!(design_butterworth_bandpass(3, 0.5, 100.0, 500.0).is_err());
    }

    #[test]
    fn bandpass_shape() {
        let bp = design_butterworth_bandpass(4, 0.5, 100.0, 500.0).unwrap();
        assert_eq!(bp.sections.len(), 4);
        assert!(bp.is_stable());
        assert!(bp.magnitude(0.0, 500.0) < 1e-3);
        assert!(bp.magnitude(250.0, 500.0) < 1e-3);
        assert!(bp.gain_db(10.0, 500.0).abs() < 1.0);
        // Butterworth edges sit at -3 dB
        assert!((bp.gain_db(0.5, 500.0) + 3.01).abs() < 0.05);
        assert!((bp.gain_db(100.0, 500.0) + 3.01).abs() < 0.05);
    }

    #[test]
    fn notch_shape() {
        assert!(design_notch(250.0, 30.0, 500.0).is_err());
        assert!(design_notch(50.0, 0.0, 500.0).is_err());
        let n = design_notch(50.0, 30.0, 500.0).unwrap();
        assert!(n.magnitude(50.0, 500.0) < 1e-6);
        assert!(n.gain_db(10.0, 500.0).abs() < 0.5);
        assert!(n.is_stable());
    }

    #[test]
    fn filter_is_linear_and_zero_preserving() {
        let bp = design_butterworth_bandpass(4, 0.5, 100.0, 500.0).unwrap();
        let zero = RawTrial::zeros(2, 300, 500.0, 1);
        let y = apply_filter(&bp, &zero).unwrap();
        assert!(y.samples.iter().all(|v| *v == 0.0));
        assert_eq!(y.label, 1);

        let x = RawTrial::new(tone(&[(7.0, 3.0), (31.0, 1.0)], 600, 500.0), 2, 500.0, 0).unwrap();
        let mut scaled = x.clone();
        scaled.samples.iter_mut().for_each(|v| *v *= 2.5);
        let y1 = apply_filter(&bp, &x).unwrap();
        let y2 = apply_filter(&bp, &scaled).unwrap();
        for (a, b) in y1.samples.iter().zip(&y2.samples) {
            assert!((2.5 * a - b).abs() <= 1e-5 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn filter_rejects_non_finite() {
        let bp = design_notch(50.0, 30.0, 500.0).unwrap();
        let mut x = RawTrial::zeros(1, 10, 500.0, 0);
        x.samples[3] = f32::NAN;
        assert!(matches!(apply_filter(&bp, &x), Err(Error::Data(_))));
    }

    #[test]
    fn detrend_window_and_constants() {
        assert_eq!(window_samples(0.25, 500.0), 125);
        let mut x = RawTrial::zeros(1, 400, 500.0, 0);
        x.samples.iter_mut().for_each(|v| *v = 7.25);
        for kernel in [AverageKernel::Boxcar, AverageKernel::Triangular] {
            let y = moving_average_detrend_with(&x, 0.25, kernel).unwrap();
            assert!(y.samples.iter().all(|v| v.abs() < 1e-6));
        }
        assert!(moving_average_detrend(&x, 1.0).is_err());
        assert!(moving_average_detrend(&x, 0.0001).is_err());
    }

    #[test]
    fn detrend_annihilates_ramps_in_the_interior() {
        let n = 600;
        let x = RawTrial::new((0..n).map(|i| 0.01 * i as f32).collect(), 1, 500.0, 0).unwrap();
        let scale = 0.01 * n as f32;
        for kernel in [AverageKernel::Boxcar, AverageKernel::Triangular] {
            let y = moving_average_detrend_with(&x, 0.25, kernel).unwrap();
            for v in &y.samples[63..n - 63] {
                assert!(v.abs() < 1e-6 * scale, "{v}");
            }
        }
    }

    #[test]
    fn crop_offsets() {
        let mut x = RawTrial::zeros(8, 2000, 500.0, 3);
        for c in 0..8 {
            for (t, v) in x.channel_mut(c).iter_mut().enumerate() {
                *v = (c * 10_000 + t) as f32;
            }
        }
        let y = crop_trial(&x).unwrap();
        assert_eq!(y.n_samples, 1900);
        assert_eq!(y.label, 3);
        for c in 0..8 {
            assert_eq!(y.channel(c)[0], x.channel(c)[50]);
            assert_eq!(y.channel(c)[1899], x.channel(c)[1949]);
        }
        assert!(crop_trial(&RawTrial::zeros(8, 1999, 500.0, 0)).is_err());
    }

    #[test]
    fn preprocess_zero_and_shape() {
        let y = preprocess(&RawTrial::zeros(8, 2000, 500.0, 2)).unwrap();
        assert_eq!((y.n_channels, y.n_samples, y.label), (8, 1900, 2));
        assert!(y.samples.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_phase_preserves_in_band_tone() {
        let cfg = PreprocessConfig {
            direction: FilterDirection::ZeroPhase,
            ..Default::default()
        };
        let p = Preprocessor::new(cfg, 500.0).unwrap();
        let x = RawTrial::new(tone(&[(10.0, 1.0)], 2000, 500.0).repeat(8), 8, 500.0, 0).unwrap();
        let y = p.run(&x).unwrap();
        // no phase shift: the output lines up with the cropped input
        let err: f32 = y.channel(0).iter().zip(&x.channel(0)[50..1950]).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(err < 0.1, "{err}");
    }
}
