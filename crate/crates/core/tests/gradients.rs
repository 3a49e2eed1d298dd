//! Analytic gradients against central finite differences.

use bmicl::nn::loss::cross_entropy_with_grad;
use bmicl::nn::network::{backward, forward, Batch, Mode};
use bmicl::nn::params::{Params, INFO, N_NETWORK};
use bmicl::nn::{AdaptationDepth, Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_model(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Model<f64> {
    let base = bmicl::nn::init_model(cfg, rng.random()).unwrap().cast::<f64>();
    let mut tensors = base.params().tensors.clone();
    for t in &mut tensors {
        for v in t.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    let mut m = Model::from_params(cfg.clone(), Params { tensors }).unwrap();
    for s in m.running_mut().iter_mut() {
        for v in s.mean.iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        for v in s.var.iter_mut() {
            *v = rng.random_range(0.5..2.0);
        }
    }
    m
}

fn random_batch(cfg: &ModelConfig, n: usize, rng: &mut ChaCha8Rng) -> Batch<f64> {
    Batch {
        inputs: (0..n * cfg.n_channels * cfg.n_samples).map(|_| rng.random_range(-2.0..2.0)).collect(),
        labels: (0..n).map(|_| rng.random_range(0..cfg.n_classes)).collect(),
        ids: (0..n).collect(),
    }
}

fn loss_of(model: &Model<f64>, batch: &Batch<f64>, mode: Mode) -> f64 {
    let out = forward(model, batch, mode, None).unwrap().output;
    let mut g = vec![0.0; out.logits.len()];
    cross_entropy_with_grad(&out.logits, &batch.labels, model.config().n_classes, &mut g).unwrap()
}

fn analytic<F: bmicl::real::Real>(model: &Model<F>, batch: &Batch<F>, mode: Mode) -> Params<F> {
    let cache = forward(model, batch, mode, None).unwrap();
    let mut g = vec![F::zero(); cache.output.logits.len()];
    cross_entropy_with_grad(&cache.output.logits, &batch.labels, model.config().n_classes, &mut g).unwrap();
    backward(model, &cache, &g).unwrap()
}

fn numeric(model: &Model<f64>, batch: &Batch<f64>, mode: Mode, h: f64) -> Params<f64> {
    let mut grads = Params::zeros_like(model.params());
    let mut m = model.clone();
    for i in 0..N_NETWORK {
        for j in 0..model.params().tensors[i].len() {
            let v = model.params().tensors[i][j];
            m.params_mut().tensors[i][j] = v + h;
            let up = loss_of(&m, batch, mode);
            m.params_mut().tensors[i][j] = v - h;
            let down = loss_of(&m, batch, mode);
            m.params_mut().tensors[i][j] = v;
            grads.tensors[i][j] = (up - down) / (2.0 * h);
        }
    }
    grads
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Norm-wise relative error of one tensor. The first batch norm feeds a
/// depthwise conv and a second batch norm with batch statistics, which
/// cancels its scale and shift, so its true gradient is ~0; such tensors are
/// measured against 1% of the whole gradient's norm instead.
fn rel_err(a: &[f64], n: &[f64], global: f64) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    diff / norm(a).max(norm(n)).max(1e-2 * global)
}

fn configs() -> Vec<ModelConfig> {
    let mut out = Vec::new();
    for (ch, t, nc) in [(2, 10, 2), (3, 12, 3), (2, 16, 4), (4, 9, 2)] {
        let mut c = ModelConfig::tiny(ch, t, nc);
        if t == 16 {
            c.temporal_kernel = 4;
            c.separable_kernel = 2;
        }
        out.push(c);
    }
    out
}

#[test]
fn full_network_64_bit() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut instances = 0;
    for cfg in configs() {
        for _ in 0..5 {
            let model = random_model(&cfg, &mut rng);
            let batch = random_batch(&cfg, 3, &mut rng);
            for mode in [Mode::train(AdaptationDepth::FULL), Mode::EVAL] {
                let a = analytic(&model, &batch, mode);
                let n = numeric(&model, &batch, mode, 1e-5);
                for i in 0..N_NETWORK {
                    let e = rel_err(&a.tensors[i], &n.tensors[i], norm(&n.flat()));
                    assert!(e < 1e-6, "{} ({:?}): {e}", INFO[i].name, mode);
                }
            }
            instances += 1;
        }
    }
    assert!(instances >= 20);
}

#[test]
fn full_network_32_bit() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut instances = 0;
    for cfg in configs() {
        for _ in 0..5 {
            let model = random_model(&cfg, &mut rng);
            let batch = random_batch(&cfg, 3, &mut rng);
            // round the instance to f32 first so both paths see the same point
            let m32 = model.cast::<f32>();
            let model = m32.cast::<f64>();
            let b32 = Batch {
                inputs: batch.inputs.iter().map(|v| *v as f32).collect(),
                labels: batch.labels.clone(),
                ids: batch.ids.clone(),
            };
            let batch = Batch {
                inputs: b32.inputs.iter().map(|v| *v as f64).collect(),
                ..batch
            };
            let mode = Mode::train(AdaptationDepth::FULL);
            let a = analytic(&m32, &b32, mode).cast::<f64>();
            let n = numeric(&model, &batch, mode, 1e-5);
            for i in 0..N_NETWORK {
                let e = rel_err(&a.tensors[i], &n.tensors[i], norm(&n.flat()));
                assert!(e < 1e-3, "{}: {e}", INFO[i].name);
            }
            instances += 1;
        }
    }
    assert!(instances >= 20);
}

#[test]
fn depth_restriction_masks_and_stays_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cfg = ModelConfig::tiny(3, 12, 2);
    let model = random_model(&cfg, &mut rng);
    let batch = random_batch(&cfg, 4, &mut rng);
    for depth in AdaptationDepth::all() {
        let mode = Mode::train(depth);
        let a = analytic(&model, &batch, mode);
        let n = numeric(&model, &batch, mode, 1e-5);
        for i in 0..N_NETWORK {
            if depth.trains_group(INFO[i].group) {
                assert!(rel_err(&a.tensors[i], &n.tensors[i], norm(&n.flat())) < 1e-6, "{depth} {}", INFO[i].name);
            } else {
                assert!(a.tensors[i].iter().all(|v| *v == 0.0), "{depth} {}", INFO[i].name);
            }
        }
    }
    // head only: nonzero gradients on dense parameters alone
    let a = analytic(&model, &batch, Mode::train(AdaptationDepth::HEAD));
    for i in 0..N_NETWORK {
        let nonzero = a.tensors[i].iter().any(|v| *v != 0.0);
        assert_eq!(nonzero, INFO[i].group == 1, "{}", INFO[i].name);
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let cfg = ModelConfig::tiny(2, 10, 2);
    let model = random_model(&cfg, &mut rng);
    let batch = random_batch(&cfg, 2, &mut rng);
    let cache = forward(&model, &batch, Mode::train(AdaptationDepth::FULL), None).unwrap();
    let g = backward(&model, &cache, &[0.0; 4]).unwrap();
    assert!(g.tensors.iter().flatten().all(|v| *v == 0.0));
}
