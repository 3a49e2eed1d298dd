use super::config::AdaptationDepth;
use super::params::Params;
use crate::error::{Error, Result};
use crate::real::Real;

/// Row softmax with max subtraction.
pub fn softmax<F: Real>(logits: &[F], out: &mut [F]) {
    let mx = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let mut z = F::zero();
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (*l - mx).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

pub fn log_softmax<F: Real>(logits: &[F], out: &mut [F]) {
    let mx = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let lse = logits.iter().map(|l| (*l - mx).exp()).sum::<F>().ln() + mx;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = *l - lse;
    }
}

/// Mean over the batch of `−log softmax(logits)[label]`.
pub fn cross_entropy<F: Real>(logits: &[F], labels: &[usize], n_classes: usize) -> Result<F> {
    let mut scratch = vec![F::zero(); logits.len()];
    cross_entropy_with_grad(logits, labels, n_classes, &mut scratch)
}

/// Cross-entropy and its gradient w.r.t. the logits (written to `dlogits`).
pub fn cross_entropy_with_grad<F: Real>(
    logits: &[F],
    labels: &[usize],
    n_classes: usize,
    dlogits: &mut [F],
) -> Result<F> {
    if logits.len() != labels.len() * n_classes || dlogits.len() != logits.len() {
        return Err(Error::Shape(format!(
            "{} logits for {} labels of {n_classes} classes",
            logits.len(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|l| **l >= n_classes) {
        return Err(Error::Shape(format!("label {l} outside 0..{n_classes}")));
    }
    let n = F::of(labels.len() as f64);
    let mut loss = F::zero();
    let mut lp = vec![F::zero(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits[i * n_classes..(i + 1) * n_classes];
        log_softmax(row, &mut lp);
        loss -= lp[y];
        let g = &mut dlogits[i * n_classes..(i + 1) * n_classes];
        for k in 0..n_classes {
            g[k] = lp[k].exp() / n;
        }
        g[y] -= F::one() / n;
    }
    Ok(loss / n)
}

/// A training loss: a per-batch data term on the logits plus an optional
/// penalty on the parameters.
pub trait Objective<F: Real>: Sync {
    /// Loss of one batch; writes `∂loss/∂logits` into `dlogits`. `ids` are the
    /// batch's positions in the training set.
    fn batch_loss(&self, logits: &[F], labels: &[usize], ids: &[usize], n_classes: usize, dlogits: &mut [F])
        -> Result<F>;

    /// Parameter penalty; adds its gradient into `grads` for trainable tensors.
    fn penalty(&self, _params: &Params<F>, _grads: &mut Params<F>, _depth: AdaptationDepth) -> F {
        F::zero()
    }
}

/// Plain categorical cross-entropy.
#[derive(Debug, Clone, Copy, Default)]
pub struct CrossEntropy;

impl<F: Real> Objective<F> for CrossEntropy {
    fn batch_loss(
        &self,
        logits: &[F],
        labels: &[usize],
        _ids: &[usize],
        n_classes: usize,
        dlogits: &mut [F],
    ) -> Result<F> {
        cross_entropy_with_grad(logits, labels, n_classes, dlogits)
    }
}
