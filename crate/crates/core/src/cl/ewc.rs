use serde::{Deserialize, Serialize};

use crate::dsp::TrialTensor;
use crate::error::{Error, Result};
use crate::nn::loss::{cross_entropy_with_grad, softmax};
use crate::nn::network::{backward, forward, Batch, Mode};
use crate::nn::params::N_NETWORK;
use crate::nn::train::argmax;
use crate::nn::{AdaptationDepth, Model, Objective, Params};

/// Diagonal Fisher information and the parameters it was measured at.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherDiag {
    pub fisher: Params<f32>,
    pub anchor: Params<f32>,
}

/// Empirical diagonal Fisher: mean over trials of the squared gradient of
/// `log p(ŷ|x)` for the model's own eval-mode prediction `ŷ`. Quantizer
/// thresholds are not included.
pub fn fisher_diag(model: &Model<f32>, data: &[&TrialTensor]) -> Result<FisherDiag> {
    if data.is_empty() {
        return Err(Error::Data("Fisher information needs at least one trial".into()));
    }
    let nc = model.config().n_classes;
    let network = |p: &Params<f32>| Params {
        tensors: p.tensors[..N_NETWORK].to_vec(),
    };
    let mut acc: Vec<Vec<f64>> = network(model.params())
        .tensors
        .iter()
        .map(|t| vec![0.0; t.len()])
        .collect();
    let mut p = vec![0.0f32; nc];
    for t in data {
        let cache = forward(model, &Batch::from_trials(&[*t]), Mode::EVAL, None)?;
        let logits = &cache.output.logits;
        softmax(logits, &mut p);
        let y = argmax(logits);
        let mut g = vec![0.0f32; nc];
        cross_entropy_with_grad(logits, &[y], nc, &mut g)?;
        let grads = backward(model, &cache, &g)?;
        for (a, gt) in acc.iter_mut().zip(&grads.tensors[..N_NETWORK]) {
            for (x, v) in a.iter_mut().zip(gt) {
                *x += (*v as f64) * (*v as f64);
            }
        }
    }
    let n = data.len() as f64;
    Ok(FisherDiag {
        fisher: Params {
            tensors: acc.iter().map(|t| t.iter().map(|v| (v / n) as f32).collect()).collect(),
        },
        anchor: network(model.params()),
    })
}

/// `Σ_i F_i·(θ_i − θ*_i)²` over the network tensors.
pub fn ewc_quadratic(params: &Params<f32>, f: &FisherDiag) -> f64 {
    let mut s = 0.0f64;
    for i in 0..N_NETWORK {
        for ((t, a), w) in params.tensors[i].iter().zip(&f.anchor.tensors[i]).zip(&f.fisher.tensors[i]) {
            let d = (*t - *a) as f64;
            s += *w as f64 * d * d;
        }
    }
    s
}

/// How Fisher terms from successive phases combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EwcMode {
    /// One penalty per completed phase, summed.
    #[default]
    Accumulate,
    /// A single running Fisher sum anchored at the latest parameters.
    Online,
}

/// Cross-entropy plus `(λ/2)·Σ_terms Σ_i F_i·(θ_i − θ*_i)²`.
#[derive(Debug, Clone)]
pub struct Ewc {
    pub terms: Vec<FisherDiag>,
    pub lambda: f32,
}

impl Ewc {
    pub fn new(lambda: f32) -> Self {
        Self {
            terms: Vec::new(),
            lambda,
        }
    }

    pub fn add(&mut self, f: FisherDiag, mode: EwcMode) {
        match (mode, self.terms.last_mut()) {
            (EwcMode::Online, Some(prev)) => {
                for (a, b) in prev.fisher.tensors.iter_mut().zip(&f.fisher.tensors) {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += *y;
                    }
                }
                prev.anchor = f.anchor;
            }
            _ => self.terms.push(f),
        }
    }
}

impl Objective<f32> for Ewc {
    fn batch_loss(
        &self,
        logits: &[f32],
        labels: &[usize],
        _ids: &[usize],
        n_classes: usize,
        dlogits: &mut [f32],
    ) -> Result<f32> {
        cross_entropy_with_grad(logits, labels, n_classes, dlogits)
    }

    fn penalty(&self, params: &Params<f32>, grads: &mut Params<f32>, depth: AdaptationDepth) -> f32 {
        let mut total = 0.0f64;
        for f in &self.terms {
            total += ewc_quadratic(params, f);
            for i in (0..N_NETWORK).filter(|i| params.is_trainable(*i, depth)) {
                let it = params.tensors[i].iter().zip(&f.anchor.tensors[i]).zip(&f.fisher.tensors[i]);
                for (g, ((t, a), w)) in grads.tensors[i].iter_mut().zip(it) {
                    *g += self.lambda * *w * (*t - *a);
                }
            }
        }
        (0.5 * self.lambda as f64 * total) as f32
    }
}
