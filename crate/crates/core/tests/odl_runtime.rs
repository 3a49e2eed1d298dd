//! Frozen int8 backbone with a trainable float head.

use std::sync::OnceLock;

use bmicl::cl::{split_session, Distillation, SplitSpec};
use bmicl::data::{generate_synthetic, SessionSequence, SyntheticDriftConfig};
use bmicl::dsp::TrialTensor;
use bmicl::nn::loss::cross_entropy_with_grad;
use bmicl::nn::train::predict_logits;
use bmicl::nn::{init_model, train, AdamConfig, CrossEntropy, Model, ModelConfig, TrainConfig};
use bmicl::odl::*;
use bmicl::quant::qat::calibrate_activations;
use bmicl::quant::{attach_quantizers, init_clip_bounds, int8_forward, integerize, QuantizedModel};
use bmicl::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Fixture {
    seq: SessionSequence,
    float: Model<f32>,
    qm: QuantizedModel,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let seq = generate_synthetic(&SyntheticDriftConfig::binary_drift(40, 4, 30.0, 0)).unwrap();
        let mut float = init_model(&ModelConfig::standard(2), 1).unwrap();
        let s1 = seq.session(0);
        let (tr, _) = split_session(&s1, &SplitSpec::default()).unwrap();
        let tc = TrainConfig {
            epochs: 40,
            ..TrainConfig::default()
        };
        train(&mut float, &tr, &tc, &CrossEntropy).unwrap();
        let qm = integerize(&float, &tr).unwrap();
        Fixture { seq, float, qm }
    })
}

fn split(seq: &SessionSequence, s: usize) -> (Vec<&TrialTensor>, Vec<&TrialTensor>) {
    let all = seq.session(s);
    let (a, b) = split_session(&all, &SplitSpec::default()).unwrap();
    (a.to_vec(), b.to_vec())
}

fn deployed() -> (FrozenBackbone, TrainableHead) {
    let f = fixture();
    let bb = FrozenBackbone::new(f.qm.backbone.clone());
    let head = TrainableHead::from_head(&f.qm.head, AdamConfig::default()).unwrap();
    (bb, head)
}

#[test]
fn features_come_from_the_integer_path() {
    let f = fixture();
    let (bb, _) = deployed();
    for t in f.seq.session(1).iter().take(5) {
        let a = extract_features(&bb, t).unwrap();
        assert_eq!(a.len(), 928);
        assert_eq!(a, extract_features(&bb, t).unwrap());
        assert_eq!(a, int8_forward(&f.qm, t).unwrap().1);
    }
    let from_blob = FrozenBackbone::from_blob(&f.qm.to_bytes()).unwrap();
    assert_eq!(from_blob.hash(), bb.hash());
    assert_eq!(bb.hash_hex().len(), 64);
}

fn head_loss64(w: &[f64], b: &[f64], x: &[f32], labels: &[usize], old: Option<&[f64]>) -> f64 {
    let nc = b.len();
    let nf = w.len() / nc;
    let logits: Vec<f64> = x
        .chunks(nf)
        .flat_map(|xi| {
            (0..nc).map(move |k| b[k] + xi.iter().enumerate().map(|(i, v)| *v as f64 * w[i * nc + k]).sum::<f64>())
        })
        .collect();
    let mut s = vec![0.0; logits.len()];
    match old {
        None => cross_entropy_with_grad(&logits, labels, nc, &mut s).unwrap(),
        Some(o) => {
            bmicl::cl::lwf_loss(&logits, o, labels, nc, 1.0, 2.0, Distillation::SoftCrossEntropy, &mut s).unwrap()
        }
    }
}

#[test]
fn head_gradients_match_finite_differences() {
    let f = fixture();
    let (bb, head) = deployed();
    let (tr, _) = split(&f.seq, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..4 {
        let batch: Vec<&TrialTensor> = tr[trial * 5..trial * 5 + 5].to_vec();
        let x: Vec<f32> = extract_all(&bb, &batch).unwrap().concat();
        let labels: Vec<usize> = batch.iter().map(|t| t.label).collect();
        let old: Vec<f32> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
        let old64: Vec<f64> = old.iter().map(|v| *v as f64).collect();
        for distill in [false, true] {
            let logits: Vec<f32> = x.chunks(928).flat_map(|xi| head.logits(xi)).collect();
            let mut dl = vec![0.0f32; 10];
            if distill {
                bmicl::cl::lwf_loss(&logits, &old, &labels, 2, 1.0, 2.0, Distillation::SoftCrossEntropy, &mut dl).unwrap();
            } else {
                cross_entropy_with_grad(&logits, &labels, 2, &mut dl).unwrap();
            }
            let g = head.gradients(&x, &dl);
            let w: Vec<f64> = head.weights().iter().map(|v| *v as f64).collect();
            let b: Vec<f64> = head.bias().iter().map(|v| *v as f64).collect();
            let old_ref = distill.then_some(old64.as_slice());
            let h = 1e-6;
            let mut num_w = vec![0.0; w.len()];
            for i in 0..w.len() {
                let (mut up, mut dn) = (w.clone(), w.clone());
                up[i] += h;
                dn[i] -= h;
                num_w[i] = (head_loss64(&up, &b, &x, &labels, old_ref) - head_loss64(&dn, &b, &x, &labels, old_ref)) / (2.0 * h);
            }
            let mut num_b = vec![0.0; 2];
            for k in 0..2 {
                let (mut up, mut dn) = (b.clone(), b.clone());
                up[k] += h;
                dn[k] -= h;
                num_b[k] = (head_loss64(&w, &up, &x, &labels, old_ref) - head_loss64(&w, &dn, &x, &labels, old_ref)) / (2.0 * h);
            }
            for (ana, num) in [(&g.tensors[0], &num_w), (&g.tensors[1], &num_b)] {
                let d: f64 = ana.iter().zip(num.iter()).map(|(a, n)| (*a as f64 - n).powi(2)).sum::<f64>().sqrt();
                let n: f64 = num.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(d / n < 1e-4, "relative error {}", d / n);
            }
        }
    }
}

#[test]
fn repeated_steps_reduce_the_loss() {
    let f = fixture();
    let (bb, mut head) = deployed();
    let (tr, _) = split(&f.seq, 3);
    let batch = &tr[..10];
    let x: Vec<f32> = extract_all(&bb, batch).unwrap().concat();
    let y: Vec<usize> = batch.iter().map(|t| t.label).collect();
    let l0 = head_train_step(&mut head, &x, &y, HeadObjective::CrossEntropy).unwrap();
    let l1 = head_train_step(&mut head, &x, &y, HeadObjective::CrossEntropy).unwrap();
    let l2 = head_train_step(&mut head, &x, &y, HeadObjective::CrossEntropy).unwrap();
    assert!(l1 < l0 && l2 < l1, "{l0} {l1} {l2}");
}

#[test]
fn backbone_is_untouched_by_a_session() {
    let f = fixture();
    let (bb, head) = deployed();
    let before = bb.hash();
    let cfg = OdlConfig {
        strategy: OdlStrategy::Er,
        epochs: 3,
        ..OdlConfig::default()
    };
    let mut engine = OdlEngine::new(bb, head, cfg).unwrap();
    engine.remember(&split(&f.seq, 0).0).unwrap();
    for s in 1..4 {
        engine.run_phase(&split(&f.seq, s).0).unwrap();
        assert!(engine.backbone().verify());
        assert_eq!(engine.backbone().hash(), before);
    }
    assert_eq!(engine.backbone().backbone().to_bytes(), f.qm.backbone_bytes());
    assert_eq!(engine.buffer().len(), 20);
    assert!(engine.buffer().items().iter().all(|s| s.input.len() == 8 * 1900 && s.features.is_none()));
}

#[test]
fn replay_cache_does_not_change_the_result() {
    let f = fixture();
    let run = |cache: bool| {
        let (bb, head) = deployed();
        let cfg = OdlConfig {
            strategy: OdlStrategy::Er,
            epochs: 3,
            feature_cache: cache,
            ..OdlConfig::default()
        };
        let mut engine = OdlEngine::new(bb, head, cfg).unwrap();
        engine.remember(&split(&f.seq, 0).0).unwrap();
        let r = engine.run_phase(&split(&f.seq, 1).0).unwrap();
        (engine.head().clone(), r)
    };
    let (a, ra) = run(false);
    let (b, rb) = run(true);
    assert_eq!(a.weights(), b.weights());
    assert_eq!(ra.loss_curve, rb.loss_curve);
    assert_eq!(ra.replay_recomputes, 60);
    assert_eq!(rb.replay_recomputes, 0);
    assert_eq!(ra.train_size, 44);
}

#[test]
fn inference_agrees_with_the_fake_quant_model() {
    let f = fixture();
    let (bb, head) = deployed();
    let mut fq = f.float.clone();
    let (tr, _) = split(&f.seq, 0);
    let bounds = init_clip_bounds(&fq);
    attach_quantizers(&mut fq, &bounds, &tr, true).unwrap();
    calibrate_activations(&mut fq, &tr).unwrap();
    let set: Vec<&TrialTensor> = (0..4).flat_map(|s| f.seq.session(s)).collect();
    let reference = predict_logits(&fq, &set).unwrap();
    let step = bb.backbone().act_scales[2] as f32;
    // a one-step feature difference moves logit k by at most step·Σ_i |w_ik|
    let bound: Vec<f32> = (0..2)
        .map(|k| step * head.weights().iter().skip(k).step_by(2).map(|w| w.abs()).sum::<f32>() + 1e-4)
        .collect();
    for (t, r) in set.iter().zip(&reference) {
        let feats = bmicl::nn::forward_eval(&fq, &bmicl::nn::Batch::from_trials(&[*t])).unwrap().features;
        let odl = extract_features(&bb, t).unwrap();
        for (a, b) in odl.iter().zip(&feats) {
            assert!((a - b).abs() <= step * 1.0001, "{a} vs {b}");
        }
        let (class, logits) = head_infer(&bb, &head, t).unwrap();
        assert_eq!(logits.len(), 2);
        for k in 0..2 {
            assert!((logits[k] - r[k]).abs() <= bound[k], "{} vs {}", logits[k], r[k]);
        }
        if (r[0] - r[1]).abs() > bound[0] + bound[1] {
            assert_eq!(class, bmicl::nn::train::argmax(r));
        }
    }
}

#[test]
fn head_only_adaptation_recovers_the_newest_session() {
    let f = fixture();
    let (bb, head) = deployed();
    let (tr, te) = split(&f.seq, 3);
    let mut engine = OdlEngine::new(bb, head, OdlConfig::default()).unwrap();
    let before = engine.evaluate(&te).unwrap().accuracy().unwrap();
    engine.run_phase(&tr).unwrap();
    let after = engine.evaluate(&te).unwrap().accuracy().unwrap();
    assert!(after >= before + 5.0, "{before} -> {after}");
}

#[test]
fn lwf_on_device_runs_and_ewc_is_refused() {
    let f = fixture();
    let (bb, head) = deployed();
    let cfg = OdlConfig {
        strategy: OdlStrategy::Lwf,
        epochs: 2,
        ..OdlConfig::default()
    };
    let mut engine = OdlEngine::new(bb.clone(), head.clone(), cfg).unwrap();
    let r = engine.run_phase(&split(&f.seq, 1).0).unwrap();
    assert_eq!(r.steps, 6);
    assert!(r.loss_curve.iter().all(|l| l.is_finite()));
    let ewc = OdlConfig {
        strategy: OdlStrategy::Ewc,
        ..OdlConfig::default()
    };
    assert!(matches!(OdlEngine::new(bb, head, ewc), Err(Error::Unsupported(_))));
}
