use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::loss::{cross_entropy_with_grad, log_softmax, softmax};
use crate::nn::Objective;
use crate::real::Real;

/// Form of the distillation term between the old and new tempered outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distillation {
    /// `−Σ p_old·log p_new`
    #[default]
    SoftCrossEntropy,
    /// `Σ p_old·log(p_old / p_new)`; same gradient, zero at equality.
    Kl,
}

/// `CE(new, labels) + λ·D(softmax(old/T) ‖ softmax(new/T))`, averaged over
/// the batch, with its gradient w.r.t. the new logits in `dlogits`.
#[allow(clippy::too_many_arguments)]
pub fn lwf_loss<F: Real>(
    new_logits: &[F],
    old_logits: &[F],
    labels: &[usize],
    n_classes: usize,
    lambda: F,
    temperature: F,
    form: Distillation,
    dlogits: &mut [F],
) -> Result<F> {
    if old_logits.len() != new_logits.len() {
        return Err(Error::Shape("old and new logits differ in shape".into()));
    }
    let ce = cross_entropy_with_grad(new_logits, labels, n_classes, dlogits)?;
    let n = F::of(labels.len() as f64);
    let mut d = F::zero();
    let (mut po, mut lpn, mut lpo, mut scaled) = (
        vec![F::zero(); n_classes],
        vec![F::zero(); n_classes],
        vec![F::zero(); n_classes],
        vec![F::zero(); n_classes],
    );
    for i in 0..labels.len() {
        let r = i * n_classes..(i + 1) * n_classes;
        for (s, v) in scaled.iter_mut().zip(&old_logits[r.clone()]) {
            *s = *v / temperature;
        }
        softmax(&scaled, &mut po);
        log_softmax(&scaled, &mut lpo);
        for (s, v) in scaled.iter_mut().zip(&new_logits[r.clone()]) {
            *s = *v / temperature;
        }
        log_softmax(&scaled, &mut lpn);
        for k in 0..n_classes {
            d -= po[k] * lpn[k];
            if form == Distillation::Kl && po[k] > F::zero() {
                d += po[k] * lpo[k];
            }
            let g = (lpn[k].exp() - po[k]) / temperature;
            dlogits[r.start + k] += lambda * g / n;
        }
    }
    Ok(ce + lambda * d / n)
}

/// Learning-without-forgetting objective: the old model's logits for every
/// training trial are computed once and looked up by batch id.
#[derive(Debug, Clone)]
pub struct Lwf {
    pub old_logits: Vec<Vec<f32>>,
    pub lambda: f32,
    pub temperature: f32,
    pub form: Distillation,
}

impl Objective<f32> for Lwf {
    fn batch_loss(
        &self,
        logits: &[f32],
        labels: &[usize],
        ids: &[usize],
        n_classes: usize,
        dlogits: &mut [f32],
    ) -> Result<f32> {
        let mut old = Vec::with_capacity(logits.len());
        for id in ids {
            let row = self
                .old_logits
                .get(*id)
                .ok_or_else(|| Error::State(format!("no stored old logits for trial {id}")))?;
            old.extend_from_slice(row);
        }
        lwf_loss(
            logits,
            &old,
            labels,
            n_classes,
            self.lambda,
            self.temperature,
            self.form,
            dlogits,
        )
    }
}
