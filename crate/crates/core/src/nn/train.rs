use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::config::{AdaptationDepth, ModelConfig};
use super::loss::Objective;
use super::model::{init_model, Model};
use super::network::{backward, forward_eval, forward_train, Batch};
use super::CrossEntropy;
use crate::dsp::TrialTensor;
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub depth: AdaptationDepth,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 10,
            adam: AdamConfig::default(),
            depth: AdaptationDepth::FULL,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss of each epoch (data term plus penalty).
    pub loss_curve: Vec<f64>,
    pub steps: u64,
}

/// Mini-batch training with a seeded shuffle per epoch. Only the tensors of
/// `cfg.depth` are updated; the optimizer state is fresh for every call.
pub fn train<F: Real, O: Objective<F> + ?Sized>(
    model: &mut Model<F>,
    set: &[&TrialTensor],
    cfg: &TrainConfig,
    objective: &O,
) -> Result<TrainReport> {
    if set.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);
    let mut adam = AdamState::new(model.params(), cfg.adam);
    let nc = model.config().n_classes;
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let trials: Vec<&TrialTensor> = chunk.iter().map(|i| set[*i]).collect();
            let batch = Batch::<F>::from_trials_with_ids(&trials, chunk.to_vec());
            let cache = forward_train(model, &batch, cfg.depth, &mut dropout_rng)?;
            let mut dlogits = vec![F::zero(); batch.len() * nc];
            let data = objective.batch_loss(&cache.output.logits, &batch.labels, &batch.ids, nc, &mut dlogits)?;
            let mut grads = backward(model, &cache, &dlogits)?;
            let pen = objective.penalty(model.params(), &mut grads, cfg.depth);
            let loss = (data + pen).as_f64();
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "loss {loss} at epoch {epoch}, step {}",
                    adam.step + 1
                )));
            }
            total += loss * chunk.len() as f64;
            let depth = cfg.depth;
            let params = model.params_mut();
            let trainable: Vec<bool> = (0..params.tensors.len()).map(|i| params.is_trainable(i, depth)).collect();
            adam.step(params, &grads, |i| trainable[i]);
        }
        curve.push(total / set.len() as f64);
    }
    Ok(TrainReport {
        loss_curve: curve,
        steps: adam.step,
    })
}

/// Counts indexed `[truth][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self {
            n_classes,
            counts: vec![vec![0; n_classes]; n_classes],
        }
    }

    pub fn from_rows(counts: Vec<Vec<u64>>) -> Self {
        Self {
            n_classes: counts.len(),
            counts,
        }
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.n_classes).map(|i| self.counts[i][i]).sum()
    }

    /// Accuracy in percent, `None` for an empty matrix.
    pub fn accuracy(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| 100.0 * self.correct() as f64 / n as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub predictions: Vec<usize>,
    pub logits: Vec<Vec<f32>>,
    pub confusion: ConfusionMatrix,
}

pub fn argmax<F: Real>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

const EVAL_CHUNK: usize = 16;

/// Eval-mode logits of every trial, in order. Trials are independent at
/// inference, so chunks run in parallel without changing any result.
pub fn predict_logits(model: &Model<f32>, set: &[&TrialTensor]) -> Result<Vec<Vec<f32>>> {
    let nc = model.config().n_classes;
    let chunks: Vec<Result<Vec<Vec<f32>>>> = set
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let out = forward_eval(model, &Batch::from_trials(chunk))?;
            Ok(out.logits.chunks(nc).map(<[f32]>::to_vec).collect())
        })
        .collect();
    let mut logits = Vec::with_capacity(set.len());
    for c in chunks {
        logits.extend(c?);
    }
    Ok(logits)
}

pub fn evaluate(model: &Model<f32>, set: &[&TrialTensor]) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let logits = predict_logits(model, set)?;
    let mut confusion = ConfusionMatrix::new(model.config().n_classes);
    let predictions: Vec<usize> = logits.iter().map(|l| argmax(l)).collect();
    for (t, p) in set.iter().zip(&predictions) {
        confusion.add(t.label, *p);
    }
    Ok(Evaluation {
        predictions,
        logits,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// Validation accuracy of each fold, percent.
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over folds.
    pub std: f64,
    pub stratified: bool,
}

/// Fold index of every trial. Stratified (classes dealt round-robin after a
/// seeded shuffle) unless some class has fewer members than folds, in which
/// case a plain shuffled split is used and `false` is returned.
pub fn fold_assignment(labels: &[usize], folds: usize, seed: u64) -> (Vec<usize>, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, l) in labels.iter().enumerate() {
        by_class[*l].push(i);
    }
    let mut assign = vec![0; labels.len()];
    let stratified = by_class.iter().all(|c| c.is_empty() || c.len() >= folds);
    if stratified {
        let mut next = 0;
        for members in &mut by_class {
            members.shuffle(&mut rng);
            for i in members.iter() {
                assign[*i] = next % folds;
                next += 1;
            }
        }
    } else {
        warn!("a class has fewer than {folds} trials; falling back to an unstratified split");
        let mut idx: Vec<usize> = (0..labels.len()).collect();
        idx.shuffle(&mut rng);
        for (k, i) in idx.iter().enumerate() {
            assign[*i] = k % folds;
        }
    }
    (assign, stratified)
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Stratified k-fold cross-validation with a fresh model per fold; folds run
/// in parallel, each one single-threaded and seeded.
pub fn five_fold_cv(set: &[&TrialTensor], cfg: &CvConfig) -> Result<CvResult> {
    let k = cfg.folds;
    if k < 2 {
        return Err(Error::Config("need at least 2 folds".into()));
    }
    if set.len() < k {
        return Err(Error::Data(format!("{} trials cannot fill {k} folds", set.len())));
    }
    let labels: Vec<usize> = set.iter().map(|t| t.label).collect();
    let (assign, stratified) = fold_assignment(&labels, k, cfg.train.seed);
    let accs: Vec<Result<f64>> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let train_set: Vec<&TrialTensor> = (0..set.len()).filter(|i| assign[*i] != fold).map(|i| set[i]).collect();
            let val: Vec<&TrialTensor> = (0..set.len()).filter(|i| assign[*i] == fold).map(|i| set[i]).collect();
            let seed = cfg.train.seed.wrapping_add(fold as u64);
            let mut model = init_model(&cfg.model, seed)?;
            let tc = TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            train(&mut model, &train_set, &tc, &CrossEntropy)?;
            Ok(evaluate(&model, &val)?.confusion.accuracy().unwrap_or(0.0))
        })
        .collect();
    let fold_accuracies = accs.into_iter().collect::<Result<Vec<f64>>>()?;
    let (mean, std) = mean_std(&fold_accuracies);
    Ok(CvResult {
        fold_accuracies,
        mean,
        std,
        stratified,
    })
}
