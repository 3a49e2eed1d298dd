//! Integer inference against the fake-quantized float forward pass.

use bmicl::dsp::TrialTensor;
use bmicl::nn::params::*;
use bmicl::nn::network::{forward_eval, forward_train};
use bmicl::nn::{init_model, AdaptationDepth, Batch, Model, ModelConfig};
use bmicl::quant::qat::{attach_quantizers, calibrate_activations, init_clip_bounds};
use bmicl::quant::{int8_forward, integerize, QuantizedModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn noise_trials(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<TrialTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    (0..n)
        .map(|i| {
            let samples = (0..cfg.n_channels * cfg.n_samples).map(|_| normal.sample(&mut rng)).collect();
            TrialTensor::new(samples, cfg.n_channels, cfg.n_samples, i % cfg.n_classes).unwrap()
        })
        .collect()
}

/// A quantized model with perturbed batch-norm statistics and thresholds
/// calibrated on `calib`.
fn quantized_model(cfg: &ModelConfig, calib: &[&TrialTensor], seed: u64) -> Model<f32> {
    let mut m = init_model(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    {
        let p = m.params_mut();
        for i in [BN1_GAMMA, BN1_BETA, BN2_GAMMA, BN2_BETA, BN3_GAMMA, BN3_BETA] {
            for v in p.tensors[i].iter_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
        }
    }
    let bounds = init_clip_bounds(&m);
    attach_quantizers(&mut m, &bounds, calib, true).unwrap();
    // running statistics settled on the data
    let mut float = m.clone();
    float.detach_quantizers();
    let batch = Batch::from_trials(calib);
    for _ in 0..40 {
        forward_train(&mut float, &batch, AdaptationDepth::FULL, &mut rng).unwrap();
    }
    *m.running_mut() = float.running().clone();
    calibrate_activations(&mut m, calib).unwrap();
    m
}

fn compare(cfg: &ModelConfig, qm: &QuantizedModel, model: &Model<f32>, set: &[&TrialTensor]) -> (usize, usize, usize) {
    let s = qm.backbone.act_scales[2] as f32;
    let mut worst = 0usize;
    let mut off = 0;
    let mut agree = 0;
    let mut nonzero = 0;
    for t in set {
        let out = forward_eval(model, &Batch::from_trials(&[*t])).unwrap();
        let (q, deq) = int8_forward(qm, t).unwrap();
        assert_eq!(deq.len(), cfg.feature_len());
        for (a, b) in out.features.iter().zip(&q) {
            let d = ((a / s).round() as i64 - *b as i64).unsigned_abs() as usize;
            worst = worst.max(d);
            off += (d > 0) as usize;
            nonzero += (*b != 0) as usize;
        }
        let il = qm.logits(t).unwrap();
        let am = |v: &[f32]| bmicl::nn::train::argmax(v);
        agree += (am(&out.logits) == am(&il)) as usize;
    }
    eprintln!("nonzero features {nonzero} of {}", set.len() * cfg.feature_len());
    (worst, off, agree)
}

#[test]
fn standard_topology_features_within_one_step() {
    let cfg = ModelConfig::standard(2);
    let trials = noise_trials(&cfg, 40, 1);
    let set: Vec<&TrialTensor> = trials.iter().collect();
    let model = quantized_model(&cfg, &set[..16], 5);
    let qm = integerize(&model, &[]).unwrap();
    let (worst, off, agree) = compare(&cfg, &qm, &model, &set);
    eprintln!("worst {worst} off {off} agree {agree}/{}", set.len());
    assert!(worst <= 1);
}

#[test]
fn small_topologies_match_exactly_or_within_one_step() {
    for (i, (ch, t, nc)) in [(2, 40, 2), (3, 64, 3), (4, 33, 4)].into_iter().enumerate() {
        let cfg = ModelConfig::tiny(ch, t, nc);
        let trials = noise_trials(&cfg, 60, 10 + i as u64);
        let set: Vec<&TrialTensor> = trials.iter().collect();
        let model = quantized_model(&cfg, &set[..20], 20 + i as u64);
        let qm = integerize(&model, &[]).unwrap();
        let (worst, _, agree) = compare(&cfg, &qm, &model, &set);
        assert!(worst <= 1, "{ch}x{t}: {worst}");
        assert!(agree * 100 >= 99 * set.len(), "{ch}x{t}: {agree}");
    }
}

#[test]
fn stored_weights_and_blob() {
    let cfg = ModelConfig::standard(3);
    let trials = noise_trials(&cfg, 8, 2);
    let set: Vec<&TrialTensor> = trials.iter().collect();
    let model = quantized_model(&cfg, &set, 6);
    let qm = integerize(&model, &[]).unwrap();
    // dequantized weights equal the fake-quantized training weights
    let b = &qm.backbone;
    let p = &model.params().tensors;
    for (q, k, i) in [(&b.temporal, 64, TEMPORAL), (&b.spatial, 8, SPATIAL)] {
        for (j, w) in q.dequantize(|x| x / k).iter().enumerate() {
            let s = q.scales[j / k] as f32;
            assert!((w - p[i][j]).abs() <= s, "tensor {i}");
        }
    }
    let bytes = qm.to_bytes();
    let back = QuantizedModel::from_bytes(&bytes).unwrap();
    assert_eq!(back, qm);
    assert_eq!(back.logits(set[0]).unwrap(), qm.logits(set[0]).unwrap());
    assert!(bytes.starts_with(&qm.backbone_bytes()));
    assert!(QuantizedModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(QuantizedModel::from_bytes(&extra).is_err());
}

#[test]
fn zero_input_is_a_fixed_feature_map() {
    let cfg = ModelConfig::standard(2);
    let trials = noise_trials(&cfg, 8, 3);
    let set: Vec<&TrialTensor> = trials.iter().collect();
    let qm = integerize(&quantized_model(&cfg, &set, 7), &[]).unwrap();
    let zero = TrialTensor::new(vec![0.0; 8 * 1900], 8, 1900, 0).unwrap();
    let (a, fa) = int8_forward(&qm, &zero).unwrap();
    let (b, fb) = int8_forward(&qm, &zero).unwrap();
    assert_eq!(a, b);
    assert_eq!(fa, fb);
    assert_eq!(fa.len(), 928);
    // no input: every time step of a filter sees the same folded bias,
    // except near the edges where padding truncates the kernels
    assert!(a.chunks(29).all(|row| row[10..20].iter().all(|v| *v == row[10])));
}

#[test]
fn float_model_is_calibrated_before_integerizing() {
    let cfg = ModelConfig::tiny(3, 48, 2);
    let trials = noise_trials(&cfg, 30, 4);
    let set: Vec<&TrialTensor> = trials.iter().collect();
    let model = init_model(&cfg, 8).unwrap();
    assert!(integerize(&model, &[]).is_err());
    let qm = integerize(&model, &set).unwrap();
    for t in &set {
        assert_eq!(int8_forward(&qm, t).unwrap().1.len(), cfg.feature_len());
    }
}
