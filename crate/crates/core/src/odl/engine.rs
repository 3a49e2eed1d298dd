//! Phase-by-phase head adaptation with an int8 replay memory.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{extract_all, extract_features_int8, head_train_step, FrozenBackbone, HeadObjective, TrainableHead};
use crate::cl::lwf::Distillation;
use crate::cl::replay::ReplayBuffer;
use crate::cl::workflow::derive_seed;
use crate::dsp::TrialTensor;
use crate::error::{Error, Result};
use crate::nn::train::argmax;
use crate::nn::{AdamConfig, ConfusionMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdlStrategy {
    Tl,
    Er,
    Lwf,
    /// Accepted by the parser so it can be refused with a clear error.
    Ewc,
}

impl std::str::FromStr for OdlStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tl" | "naive_tl" => Ok(Self::Tl),
            "er" => Ok(Self::Er),
            "lwf" => Ok(Self::Lwf),
            "ewc" => Ok(Self::Ewc),
            other => Err(Error::Config(format!("unknown on-device strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OdlConfig {
    pub strategy: OdlStrategy,
    pub er_capacity: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub lwf_lambda: f32,
    pub lwf_temperature: f32,
    pub distillation: Distillation,
    /// Keep replayed trials' features instead of recomputing them through the
    /// backbone every epoch.
    pub feature_cache: bool,
    pub seed: u64,
}

impl Default for OdlConfig {
    fn default() -> Self {
        Self {
            strategy: OdlStrategy::Tl,
            er_capacity: 20,
            epochs: 50,
            batch_size: 10,
            adam: AdamConfig::default(),
            lwf_lambda: 1.0,
            lwf_temperature: 2.0,
            distillation: Distillation::SoftCrossEntropy,
            feature_cache: false,
            seed: 0,
        }
    }
}

/// A replayed trial on the backbone's int8 input grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTrial {
    pub input: Vec<i8>,
    pub label: usize,
    pub features: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdlPhaseReport {
    pub phase: u64,
    pub train_size: usize,
    pub loss_curve: Vec<f64>,
    pub steps: u64,
    /// Backbone passes spent on replayed trials.
    pub replay_recomputes: u64,
}

pub struct OdlEngine {
    backbone: FrozenBackbone,
    head: TrainableHead,
    buffer: ReplayBuffer<StoredTrial>,
    cfg: OdlConfig,
    phase: u64,
}

const STREAM_BUFFER: u64 = 2;
const STREAM_PHASE: u64 = 10;

impl OdlEngine {
    pub fn new(backbone: FrozenBackbone, head: TrainableHead, cfg: OdlConfig) -> Result<Self> {
        if cfg.strategy == OdlStrategy::Ewc {
            return Err(Error::Unsupported("EWC is not available on device".into()));
        }
        if cfg.epochs == 0 || cfg.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if head.n_features() != backbone.feature_len() {
            return Err(Error::Shape(format!(
                "head takes {} features, backbone makes {}",
                head.n_features(),
                backbone.feature_len()
            )));
        }
        let buffer = ReplayBuffer::new(cfg.er_capacity, derive_seed(cfg.seed, STREAM_BUFFER));
        Ok(Self {
            backbone,
            head,
            buffer,
            cfg,
            phase: 0,
        })
    }

    pub fn backbone(&self) -> &FrozenBackbone {
        &self.backbone
    }

    pub fn head(&self) -> &TrainableHead {
        &self.head
    }

    pub fn config(&self) -> &OdlConfig {
        &self.cfg
    }

    pub fn buffer(&self) -> &ReplayBuffer<StoredTrial> {
        &self.buffer
    }

    fn store(&self, t: &TrialTensor) -> Result<StoredTrial> {
        let input = self.backbone.backbone().quantize_input(&t.samples)?;
        let features = if self.cfg.feature_cache {
            Some(extract_features_int8(&self.backbone, &input)?)
        } else {
            None
        };
        Ok(StoredTrial {
            input,
            label: t.label,
            features,
        })
    }

    /// Offer trials to the replay memory (ER only; a no-op otherwise).
    pub fn remember(&mut self, trials: &[&TrialTensor]) -> Result<()> {
        if self.cfg.strategy != OdlStrategy::Er {
            return Ok(());
        }
        for t in trials {
            let s = self.store(t)?;
            self.buffer.offer(s);
        }
        Ok(())
    }

    fn replay_features(&self) -> Result<Vec<Vec<f32>>> {
        self.buffer
            .items()
            .iter()
            .map(|s| match &s.features {
                Some(f) => Ok(f.clone()),
                None => extract_features_int8(&self.backbone, &s.input),
            })
            .collect()
    }

    /// Adapt the head to a new session's train split, then offer the split to
    /// the replay memory.
    pub fn run_phase(&mut self, trials: &[&TrialTensor]) -> Result<OdlPhaseReport> {
        if trials.is_empty() {
            return Err(Error::Data("empty on-device training set".into()));
        }
        self.phase += 1;
        let nf = self.head.n_features();
        let nc = self.head.n_classes();
        let new_features = extract_all(&self.backbone, trials)?;
        let replay_labels: Vec<usize> = self.buffer.items().iter().map(|s| s.label).collect();
        let n_replay = replay_labels.len();
        let labels: Vec<usize> = replay_labels.into_iter().chain(trials.iter().map(|t| t.label)).collect();
        let mut features: Vec<Vec<f32>> = self.replay_features()?;
        features.extend(new_features);
        let recompute = n_replay > 0 && !self.cfg.feature_cache;
        let old_logits: Vec<f32> = if self.cfg.strategy == OdlStrategy::Lwf {
            features.iter().flat_map(|x| self.head.logits(x)).collect()
        } else {
            Vec::new()
        };
        self.head.reset_optimizer();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, STREAM_PHASE + self.phase));
        let mut order: Vec<usize> = (0..features.len()).collect();
        let mut curve = Vec::with_capacity(self.cfg.epochs);
        let mut steps = 0;
        let mut recomputes = 0;
        for epoch in 0..self.cfg.epochs {
            if recompute && epoch > 0 {
                let fresh = self.replay_features()?;
                recomputes += fresh.len() as u64;
                features[..n_replay].clone_from_slice(&fresh);
            }
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(self.cfg.batch_size) {
                let x: Vec<f32> = chunk.iter().flat_map(|i| features[*i].iter().copied()).collect();
                let y: Vec<usize> = chunk.iter().map(|i| labels[*i]).collect();
                let old: Vec<f32> = if old_logits.is_empty() {
                    Vec::new()
                } else {
                    chunk.iter().flat_map(|i| old_logits[i * nc..(i + 1) * nc].iter().copied()).collect()
                };
                let objective = match self.cfg.strategy {
                    OdlStrategy::Lwf => HeadObjective::Distill {
                        old_logits: &old,
                        lambda: self.cfg.lwf_lambda,
                        temperature: self.cfg.lwf_temperature,
                        form: self.cfg.distillation,
                    },
                    _ => HeadObjective::CrossEntropy,
                };
                debug_assert_eq!(x.len(), chunk.len() * nf);
                total += head_train_step(&mut self.head, &x, &y, objective)? as f64 * chunk.len() as f64;
                steps += 1;
            }
            curve.push(total / features.len() as f64);
        }
        if recompute {
            recomputes += n_replay as u64;
        }
        self.remember(trials)?;
        Ok(OdlPhaseReport {
            phase: self.phase,
            train_size: features.len(),
            loss_curve: curve,
            steps,
            replay_recomputes: recomputes,
        })
    }

    pub fn predict(&self, t: &TrialTensor) -> Result<(usize, Vec<f32>)> {
        super::head_infer(&self.backbone, &self.head, t)
    }

    pub fn evaluate(&self, set: &[&TrialTensor]) -> Result<ConfusionMatrix> {
        let feats = extract_all(&self.backbone, set)?;
        let mut cm = ConfusionMatrix::new(self.head.n_classes());
        for (t, f) in set.iter().zip(&feats) {
            cm.add(t.label, argmax(&self.head.logits(f)));
        }
        Ok(cm)
    }
}
