//! Simulated on-device learning: a frozen int8 backbone feeding a float
//! dense head that is the only trainable part.

pub mod engine;
pub mod memory;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::cl::lwf::{lwf_loss, Distillation};
use crate::dsp::TrialTensor;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{Reader, Writer};
use crate::nn::loss::cross_entropy_with_grad;
use crate::nn::train::argmax;
use crate::nn::{AdamConfig, AdamState, ModelConfig, Params};
use crate::quant::{Head, QuantizedBackbone, QuantizedModel};

pub use engine::{OdlConfig, OdlEngine, OdlPhaseReport, OdlStrategy, StoredTrial};
pub use memory::{mac_report, memory_report, MacReport, MemoryBudget, MemoryItem, Tier};

/// The int8 layers before the head. Read-only once built; the SHA-256 of
/// its serialized form is taken at construction.
#[derive(Debug, Clone)]
pub struct FrozenBackbone {
    inner: QuantizedBackbone,
    hash: [u8; 32],
}

fn digest(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

impl FrozenBackbone {
    pub fn new(backbone: QuantizedBackbone) -> Self {
        let hash = digest(&backbone.to_bytes());
        Self { inner: backbone, hash }
    }

    /// Backbone of a full integer model blob (the head is ignored).
    pub fn from_blob(bytes: &[u8]) -> Result<Self> {
        Ok(Self::new(QuantizedModel::from_bytes(bytes)?.backbone))
    }

    pub fn backbone(&self) -> &QuantizedBackbone {
        &self.inner
    }

    pub fn config(&self) -> &ModelConfig {
        &self.inner.config
    }

    pub fn feature_len(&self) -> usize {
        self.inner.feature_len()
    }

    pub fn hash(&self) -> [u8; 32] {
        self.hash
    }

    pub fn hash_hex(&self) -> String {
        self.hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Recompute the hash of the current bytes and compare with the one taken
    /// at construction.
    pub fn verify(&self) -> bool {
        digest(&self.inner.to_bytes()) == self.hash
    }
}

/// int8 inference up to the head, dequantized and flattened filter-major.
pub fn extract_features(bb: &FrozenBackbone, t: &TrialTensor) -> Result<Vec<f32>> {
    let q = bb.inner.features(&t.samples)?;
    Ok(bb.inner.dequantize_features(&q))
}

/// Features of an input already stored on the int8 input grid.
pub fn extract_features_int8(bb: &FrozenBackbone, input: &[i8]) -> Result<Vec<f32>> {
    let q = bb.inner.features_from_input(input)?;
    Ok(bb.inner.dequantize_features(&q))
}

/// Features of every trial, in order (trials run in parallel).
pub fn extract_all(bb: &FrozenBackbone, set: &[&TrialTensor]) -> Result<Vec<Vec<f32>>> {
    set.par_iter().map(|t| extract_features(bb, t)).collect()
}

const HEAD_MAGIC: &[u8; 8] = b"BMICLHD\0";
const HEAD_VERSION: u32 = 1;

/// Dense layer `[feature][class]` plus bias, in f32, with its Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainableHead {
    params: Params<f32>,
    adam: AdamState<f32>,
    n_features: usize,
    n_classes: usize,
}

const W: usize = 0;
const B: usize = 1;

impl TrainableHead {
    pub fn new(weights: Vec<f32>, bias: Vec<f32>, adam: AdamConfig) -> Result<Self> {
        let nc = bias.len();
        if nc < 2 || weights.is_empty() || weights.len() % nc != 0 {
            return Err(Error::Shape(format!("{} head weights for {nc} classes", weights.len())));
        }
        let params = Params {
            tensors: vec![weights, bias],
        };
        Ok(Self {
            adam: AdamState::new(&params, adam),
            n_features: params.tensors[W].len() / nc,
            n_classes: nc,
            params,
        })
    }

    /// The deployed head in float form (dequantized if it was int8).
    pub fn from_head(head: &Head, adam: AdamConfig) -> Result<Self> {
        let (w, b) = head.to_float();
        Self::new(w, b, adam)
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn parameter_count(&self) -> usize {
        self.params.total_len()
    }

    pub fn weights(&self) -> &[f32] {
        &self.params.tensors[W]
    }

    pub fn bias(&self) -> &[f32] {
        &self.params.tensors[B]
    }

    /// Drop the optimizer moments (a new phase starts from a fresh Adam).
    pub fn reset_optimizer(&mut self) {
        self.adam = AdamState::new(&self.params, self.adam.config);
    }

    pub fn logits(&self, features: &[f32]) -> Vec<f32> {
        let nc = self.n_classes;
        let w = &self.params.tensors[W];
        let mut out = self.params.tensors[B].clone();
        for (i, x) in features.iter().enumerate() {
            for (o, wk) in out.iter_mut().zip(&w[i * nc..(i + 1) * nc]) {
                *o += x * wk;
            }
        }
        out
    }

    /// Gradients of a batch given `∂loss/∂logits`, batch-major.
    pub fn gradients(&self, features: &[f32], dlogits: &[f32]) -> Params<f32> {
        let (nf, nc) = (self.n_features, self.n_classes);
        let mut g = Params::zeros_like(&self.params);
        for (x, dl) in features.chunks(nf).zip(dlogits.chunks(nc)) {
            for (i, xi) in x.iter().enumerate() {
                for (gw, d) in g.tensors[W][i * nc..(i + 1) * nc].iter_mut().zip(dl) {
                    *gw += xi * d;
                }
            }
            for (gb, d) in g.tensors[B].iter_mut().zip(dl) {
                *gb += d;
            }
        }
        g
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(HEAD_MAGIC);
        w.u32(HEAD_VERSION);
        w.f32s(&self.params.tensors[W]);
        w.f32s(&self.params.tensors[B]);
        w.0
    }

    pub fn from_bytes(buf: &[u8], adam: AdamConfig) -> Result<Self> {
        let mut r = Reader::new(buf);
        if r.take(8)? != HEAD_MAGIC {
            return Err(Error::Format("not a head checkpoint".into()));
        }
        let v = r.u32()?;
        if v != HEAD_VERSION {
            return Err(Error::Format(format!("head checkpoint version {v}")));
        }
        let (w, b) = (r.f32s()?, r.f32s()?);
        r.finish()?;
        Self::new(w, b, adam)
    }
}

/// Loss of one on-device update.
#[derive(Debug, Clone, Copy)]
pub enum HeadObjective<'a> {
    CrossEntropy,
    /// Distillation against logits of the head snapshot taken before the
    /// phase, batch-major.
    Distill {
        old_logits: &'a [f32],
        lambda: f32,
        temperature: f32,
        form: Distillation,
    },
    /// Not available on device.
    Ewc,
}

/// One forward, backward and Adam update of the head on a batch of features
/// (`[batch][feature]`). Returns the loss before the update.
pub fn head_train_step(
    head: &mut TrainableHead,
    features: &[f32],
    labels: &[usize],
    objective: HeadObjective<'_>,
) -> Result<f32> {
    let (nf, nc) = (head.n_features, head.n_classes);
    if features.len() != labels.len() * nf || labels.is_empty() {
        return Err(Error::Shape(format!(
            "{} feature values for {} labels of {nf} features",
            features.len(),
            labels.len()
        )));
    }
    let logits: Vec<f32> = features.chunks(nf).flat_map(|x| head.logits(x)).collect();
    let mut dl = vec![0.0f32; logits.len()];
    let loss = match objective {
        HeadObjective::CrossEntropy => cross_entropy_with_grad(&logits, labels, nc, &mut dl)?,
        HeadObjective::Distill {
            old_logits,
            lambda,
            temperature,
            form,
        } => lwf_loss(&logits, old_logits, labels, nc, lambda, temperature, form, &mut dl)?,
        HeadObjective::Ewc => {
            return Err(Error::Unsupported(
                "the Fisher penalty is not deployed on device; use tl, er or lwf".into(),
            ))
        }
    };
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("head loss {loss}")));
    }
    let g = head.gradients(features, &dl);
    head.adam.step(&mut head.params, &g, |_| true);
    Ok(loss)
}

/// Predicted class and logits of one trial.
pub fn head_infer(bb: &FrozenBackbone, head: &TrainableHead, t: &TrialTensor) -> Result<(usize, Vec<f32>)> {
    if head.n_features != bb.feature_len() {
        return Err(Error::Shape(format!(
            "head takes {} features, backbone makes {}",
            head.n_features,
            bb.feature_len()
        )));
    }
    let logits = head.logits(&extract_features(bb, t)?);
    Ok((argmax(&logits), logits))
}
