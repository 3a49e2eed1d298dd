//! Experiment configuration: file format, defaults and flag overrides.

use std::path::{Path, PathBuf};

use bmicl::cl::WorkflowConfig;
use bmicl::data::{generate_synthetic, load_sessions, SessionSequence, SyntheticDriftConfig};
use bmicl::odl::OdlConfig;
use bmicl::quant::QatConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[value(name = "within_session_cv", alias = "cv")]
    WithinSessionCv,
    #[value(name = "tl_workflow", alias = "tl")]
    TlWorkflow,
    #[value(name = "cl_workflow", alias = "cl")]
    ClWorkflow,
    #[value(name = "qat")]
    Qat,
    #[value(name = "odl_sim", alias = "odl")]
    OdlSim,
    #[value(name = "depth_sweep")]
    DepthSweep,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::WithinSessionCv => "within_session_cv",
            Task::TlWorkflow => "tl_workflow",
            Task::ClWorkflow => "cl_workflow",
            Task::Qat => "qat",
            Task::OdlSim => "odl_sim",
            Task::DepthSweep => "depth_sweep",
        }
    }
}

fn default_trials() -> usize {
    40
}

fn default_sessions() -> usize {
    4
}

fn default_step() -> f64 {
    30.0
}

/// Generated data; every replication draws its own recordings from its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "snake_case", deny_unknown_fields)]
pub enum Synthetic {
    BinaryDrift {
        #[serde(default = "default_trials")]
        trials_per_session: usize,
        #[serde(default = "default_sessions")]
        sessions: usize,
        #[serde(default = "default_step")]
        rotation_step_deg: f64,
    },
    FourClassClean {
        #[serde(default = "default_trials")]
        trials_per_session: usize,
        #[serde(default = "default_sessions")]
        sessions: usize,
    },
    /// Full generator configuration; its `seed` is replaced per replication.
    Custom { config: SyntheticDriftConfig },
}

impl Default for Synthetic {
    fn default() -> Self {
        Synthetic::BinaryDrift {
            trials_per_session: default_trials(),
            sessions: default_sessions(),
            rotation_step_deg: default_step(),
        }
    }
}

impl Synthetic {
    pub fn generator(&self, seed: u64) -> SyntheticDriftConfig {
        match self {
            Synthetic::BinaryDrift {
                trials_per_session,
                sessions,
                rotation_step_deg,
            } => SyntheticDriftConfig::binary_drift(*trials_per_session, *sessions, *rotation_step_deg, seed),
            Synthetic::FourClassClean {
                trials_per_session,
                sessions,
            } => SyntheticDriftConfig::four_class_clean(*trials_per_session, *sessions, seed),
            Synthetic::Custom { config } => SyntheticDriftConfig { seed, ..config.clone() },
        }
    }
}

/// Exactly one of a subject directory or a synthetic scenario.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub synthetic: Option<Synthetic>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSettings {
    pub folds: usize,
    pub epochs: usize,
}

impl Default for CvSettings {
    fn default() -> Self {
        Self { folds: 5, epochs: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub data: DataConfig,
    /// Model, strategy, split and optimizer of the session workflows. Its
    /// `seed` is set per replication.
    pub workflow: WorkflowConfig,
    pub cv: CvSettings,
    pub qat: QatConfig,
    pub odl: OdlConfig,
    /// Adaptation depths of the depth sweep.
    pub depths: Vec<u8>,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::ClWorkflow,
            data: DataConfig::default(),
            workflow: WorkflowConfig::default(),
            cv: CvSettings::default(),
            qat: QatConfig::default(),
            odl: OdlConfig::default(),
            depths: (1..=6).collect(),
            seeds: vec![0],
            output: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Parse a TOML or JSON experiment file (chosen by extension; anything other
/// than `.json` is read as TOML).
pub fn read_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if json {
        serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        match (&self.data.path, &self.data.synthetic) {
            (Some(_), Some(_)) => return Err(ConfigError("data: give either a path or a synthetic scenario, not both".into())),
            (None, None) => return Err(ConfigError("data: no path and no synthetic scenario".into())),
            _ => {}
        }
        if self.seeds.is_empty() {
            return Err(ConfigError("seeds: at least one seed is required".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(ConfigError("seeds: duplicates".into()));
        }
        if self.depths.iter().any(|d| !(1..=6).contains(d)) {
            return Err(ConfigError("depths: each must be between 1 and 6".into()));
        }
        self.workflow
            .strategy
            .validate()
            .map_err(|e| ConfigError(format!("workflow.strategy: {e}")))?;
        self.workflow
            .model
            .validate()
            .map_err(|e| ConfigError(format!("workflow.model: {e}")))?;
        if self.task == Task::OdlSim && self.odl.strategy == bmicl::odl::OdlStrategy::Ewc {
            return Err(ConfigError("odl.strategy: EWC is not available on device".into()));
        }
        if self.cv.folds < 2 {
            return Err(ConfigError("cv.folds: need at least 2".into()));
        }
        Ok(())
    }

    /// Sessions of one replication.
    pub fn sessions(&self, seed: u64) -> bmicl::Result<SessionSequence> {
        match (&self.data.path, &self.data.synthetic) {
            (Some(p), _) => load_sessions(p),
            (None, Some(s)) => generate_synthetic(&s.generator(seed)),
            (None, None) => Err(bmicl::Error::Config("no data source".into())),
        }
    }
}
