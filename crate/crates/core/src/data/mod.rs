//! Session datasets: on-disk format, loading with preprocessing, and a
//! synthetic multi-session generator with controllable drift.
//!
//! Layout of one subject directory:
//!
//! ```text
//! <subject>/session_1/manifest.json
//! <subject>/session_1/trials/trial_0001.bin
//! <subject>/session_2/...
//! ```
//!
//! A trial file holds `n_channels × n_samples` little-endian f32 values,
//! channel-major, nothing else. The manifest lists trials in acquisition
//! order and says whether the stored values are raw or already preprocessed.

pub mod convert;
pub mod synthetic;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{PreprocessConfig, Preprocessor, RawTrial, TrialTensor};
use crate::error::{Error, Result};

pub use synthetic::{generate_synthetic, generate_synthetic_raw, ClassTemplate, SessionDrift, SyntheticDriftConfig};

pub const MANIFEST_VERSION: u32 = 1;
pub const CLASS_NAMES: [&str; 4] = ["left", "right", "tongue", "rest"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    /// Executed movement.
    Mm,
    /// Imagined movement.
    Mi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEntry {
    /// Path relative to the session directory.
    pub file: String,
    pub label: usize,
    pub run: u32,
    pub paradigm: Paradigm,
    #[serde(default)]
    pub outlier: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub schema_version: u32,
    pub subject: String,
    pub session: u32,
    pub fs: f64,
    pub n_channels: usize,
    pub n_samples: usize,
    /// Trial files already went through the preprocessing chain; loading
    /// must not filter them again.
    pub preprocessed: bool,
    pub classes: Vec<String>,
    pub trials: Vec<TrialEntry>,
}

impl SessionManifest {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "manifest schema {}, expected {MANIFEST_VERSION}",
                self.schema_version
            )));
        }
        if self.classes.is_empty() || self.classes.len() > CLASS_NAMES.len() {
            return Err(Error::Format(format!("{} classes listed", self.classes.len())));
        }
        if let Some(c) = self.classes.iter().find(|c| !CLASS_NAMES.contains(&c.as_str())) {
            return Err(Error::Format(format!("unknown class name {c:?}")));
        }
        if self.n_channels == 0 || self.n_samples == 0 || !(self.fs > 0.0) {
            return Err(Error::Format("channels, samples and fs must be positive".into()));
        }
        for t in &self.trials {
            if t.label >= self.classes.len() {
                return Err(Error::Data(format!(
                    "trial {}: label {} outside the {} listed classes",
                    t.file,
                    t.label,
                    self.classes.len()
                )));
            }
        }
        Ok(())
    }
}

/// Sessions in chronological order, each a chronological list of trials.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionSequence {
    pub class_names: Vec<String>,
    pub sessions: Vec<Vec<TrialTensor>>,
}

impl SessionSequence {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn n_sessions(&self) -> usize {
        self.sessions.len()
    }

    pub fn session(&self, s: usize) -> Vec<&TrialTensor> {
        self.sessions[s].iter().collect()
    }

    /// Copy with labels permuted within each session (a chance-level
    /// control).
    pub fn with_shuffled_labels(&self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sessions = self
            .sessions
            .iter()
            .map(|s| {
                let mut labels: Vec<usize> = s.iter().map(|t| t.label).collect();
                labels.shuffle(&mut rng);
                s.iter()
                    .zip(labels)
                    .map(|(t, l)| TrialTensor { label: l, ..t.clone() })
                    .collect()
            })
            .collect();
        Self {
            class_names: self.class_names.clone(),
            sessions,
        }
    }
}

pub fn encode_trial(samples: &[f32]) -> Vec<u8> {
    samples.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_trial(bytes: &[u8], n_values: usize) -> Result<Vec<f32>> {
    if bytes.len() != 4 * n_values {
        return Err(Error::Data(format!(
            "{} bytes, expected {} ({} values)",
            bytes.len(),
            4 * n_values,
            n_values
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Keep only trials of this paradigm; `None` keeps all.
    pub paradigm: Option<Paradigm>,
    pub include_outliers: bool,
    pub preprocess: PreprocessConfig,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            paradigm: Some(Paradigm::Mm),
            include_outliers: false,
            preprocess: PreprocessConfig::default(),
        }
    }
}

fn trial_name(i: usize) -> String {
    format!("trials/trial_{:04}.bin", i + 1)
}

fn session_dirs(dir: &Path) -> Result<Vec<(u32, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::load(dir, e.to_string()))?;
    let mut out = Vec::new();
    for e in entries {
        let e = e?;
        let name = e.file_name().to_string_lossy().into_owned();
        if let Some(n) = name.strip_prefix("session_").and_then(|n| n.parse::<u32>().ok()) {
            if e.path().join("manifest.json").is_file() {
                out.push((n, e.path()));
            }
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::load(dir, "no session_N/manifest.json found"));
    }
    Ok(out)
}

pub fn read_manifest(session_dir: &Path) -> Result<SessionManifest> {
    let path = session_dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::load(&path, e.to_string()))?;
    let m: SessionManifest = serde_json::from_str(&text).map_err(|e| Error::load(&path, e.to_string()))?;
    m.validate().map_err(|e| Error::load(&path, e.to_string()))?;
    Ok(m)
}

/// One session directory, preprocessed unless the manifest says the files
/// already are.
pub fn load_session(session_dir: &Path, opts: &LoadOptions) -> Result<(SessionManifest, Vec<TrialTensor>)> {
    let m = read_manifest(session_dir)?;
    let pre = if m.preprocessed {
        None
    } else {
        Some(Preprocessor::new(opts.preprocess.clone(), m.fs)?)
    };
    let mut trials = Vec::with_capacity(m.trials.len());
    for t in &m.trials {
        if (t.outlier && !opts.include_outliers) || opts.paradigm.is_some_and(|p| p != t.paradigm) {
            continue;
        }
        let path = session_dir.join(&t.file);
        let named = |e: Error| Error::load(&path, e.to_string());
        let bytes = std::fs::read(&path).map_err(|e| Error::load(&path, e.to_string()))?;
        let samples = decode_trial(&bytes, m.n_channels * m.n_samples).map_err(named)?;
        let tensor = match &pre {
            Some(p) => RawTrial::new(samples, m.n_channels, m.fs, t.label)
                .and_then(|raw| p.run(&raw))
                .map_err(named)?,
            None => TrialTensor::new(samples, m.n_channels, m.n_samples, t.label).map_err(named)?,
        };
        trials.push(tensor);
    }
    Ok((m, trials))
}

/// Every `session_N` under `dir`, in session order.
pub fn load_sessions(dir: &Path) -> Result<SessionSequence> {
    load_sessions_with(dir, &LoadOptions::default())
}

pub fn load_sessions_with(dir: &Path, opts: &LoadOptions) -> Result<SessionSequence> {
    let mut classes: Option<Vec<String>> = None;
    let mut sessions = Vec::new();
    for (_, path) in session_dirs(dir)? {
        let (m, trials) = load_session(&path, opts)?;
        match &classes {
            Some(c) if *c != m.classes => {
                return Err(Error::load(&path, "class table differs from the first session"));
            }
            _ => classes = Some(m.classes.clone()),
        }
        sessions.push(trials);
    }
    Ok(SessionSequence {
        class_names: classes.unwrap_or_default(),
        sessions,
    })
}

fn write_session(dir: &Path, manifest: &SessionManifest, data: &[&[f32]]) -> Result<()> {
    std::fs::create_dir_all(dir.join("trials"))?;
    for (entry, samples) in manifest.trials.iter().zip(data) {
        std::fs::write(dir.join(&entry.file), encode_trial(samples))?;
    }
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

fn entries(labels: impl Iterator<Item = usize>, per_run: usize) -> Vec<TrialEntry> {
    labels
        .enumerate()
        .map(|(i, label)| TrialEntry {
            file: trial_name(i),
            label,
            run: (i / per_run.max(1)) as u32 + 1,
            paradigm: Paradigm::Mm,
            outlier: false,
        })
        .collect()
}

/// Write preprocessed sessions; loading them back is bitwise exact.
pub fn save_sessions(seq: &SessionSequence, dir: &Path, subject: &str, fs: f64) -> Result<()> {
    for (s, trials) in seq.sessions.iter().enumerate() {
        let (nc, ns) = trials.first().map_or((0, 0), |t| (t.n_channels, t.n_samples));
        if trials.iter().any(|t| t.n_channels != nc || t.n_samples != ns) {
            return Err(Error::Shape(format!("session {} mixes trial shapes", s + 1)));
        }
        let manifest = SessionManifest {
            schema_version: MANIFEST_VERSION,
            subject: subject.to_string(),
            session: s as u32 + 1,
            fs,
            n_channels: nc.max(1),
            n_samples: ns.max(1),
            preprocessed: true,
            classes: seq.class_names.clone(),
            trials: entries(trials.iter().map(|t| t.label), 40),
        };
        let data: Vec<&[f32]> = trials.iter().map(|t| t.samples.as_slice()).collect();
        write_session(&dir.join(format!("session_{}", s + 1)), &manifest, &data)?;
    }
    Ok(())
}

/// Write raw recordings; loading runs the preprocessing chain.
pub fn save_raw_sessions(sessions: &[Vec<RawTrial>], class_names: &[String], dir: &Path, subject: &str) -> Result<()> {
    for (s, trials) in sessions.iter().enumerate() {
        let first = trials
            .first()
            .ok_or_else(|| Error::Data(format!("session {} is empty", s + 1)))?;
        let manifest = SessionManifest {
            schema_version: MANIFEST_VERSION,
            subject: subject.to_string(),
            session: s as u32 + 1,
            fs: first.fs,
            n_channels: first.n_channels,
            n_samples: first.n_samples,
            preprocessed: false,
            classes: class_names.to_vec(),
            trials: entries(trials.iter().map(|t| t.label), 40),
        };
        let data: Vec<&[f32]> = trials.iter().map(|t| t.samples.as_slice()).collect();
        write_session(&dir.join(format!("session_{}", s + 1)), &manifest, &data)?;
    }
    Ok(())
}
