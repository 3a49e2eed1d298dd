//! The network, loss and optimizer against direct scalar-loop oracles.

use bmicl::dsp::TrialTensor;
use bmicl::nn::loss::{cross_entropy, cross_entropy_with_grad};
use bmicl::nn::network::{forward, Batch, Mode};
use bmicl::nn::params::*;
use bmicl::nn::{evaluate, init_model, train, AdamConfig, AdamState, AdaptationDepth, CrossEntropy, Model, ModelConfig, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_model(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Model<f64> {
    let base = init_model(cfg, rng.random()).unwrap().cast::<f64>();
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

/// Same-padded correlation written out index by index.
fn same_corr(x: &[f64], w: &[f64]) -> Vec<f64> {
    let left = (w.len() - 1) / 2;
    (0..x.len())
        .map(|t| {
            let mut s = 0.0;
            for (k, wk) in w.iter().enumerate() {
                let j = t as isize + k as isize - left as isize;
                if j >= 0 && (j as usize) < x.len() {
                    s += wk * x[j as usize];
                }
            }
            s
        })
        .collect()
}

fn pool(x: &[f64], p: usize) -> Vec<f64> {
    (0..x.len() / p).map(|i| x[i * p..(i + 1) * p].iter().sum::<f64>() / p as f64).collect()
}

/// Per-channel (mean, variance) for `rows[sample][...]`, where `chan(i)`
/// names the channel of row `i` of each sample.
fn stats(rows: &[Vec<Vec<f64>>], n_chan: usize, chan: impl Fn(usize) -> usize) -> Vec<(f64, f64)> {
    (0..n_chan)
        .map(|c| {
            let vals: Vec<f64> = rows
                .iter()
                .flat_map(|s| s.iter().enumerate().filter(|(i, _)| chan(*i) == c).flat_map(|(_, r)| r.iter().copied()))
                .collect();
            let n = vals.len() as f64;
            let mu = vals.iter().sum::<f64>() / n;
            (mu, vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n)
        })
        .collect()
}

/// Logits and features of every trial, computed layer by layer.
fn oracle(model: &Model<f64>, inputs: &[Vec<f64>], batch_stats: bool) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let cfg = model.config();
    let p = &model.params().tensors;
    let run = model.running();
    let (c, t, f1, k1, d) = (cfg.n_channels, cfg.n_samples, cfg.temporal_filters, cfg.temporal_kernel, cfg.depth_multiplier);
    let (m, k3, f2, nc) = (cfg.spatial_maps(), cfg.separable_kernel, cfg.separable_filters, cfg.n_classes);
    let eps = cfg.bn_eps;
    let bn = |x: f64, (mu, var): (f64, f64), g: f64, b: f64| g * (x - mu) / (var + eps).sqrt() + b;
    let running = |i: usize, ch: usize| (run[i].mean[ch], run[i].var[ch]);

    // temporal conv: rows [c·f1 + f]
    let y: Vec<Vec<Vec<f64>>> = inputs
        .iter()
        .map(|x| {
            let mut rows = Vec::new();
            for ci in 0..c {
                for f in 0..f1 {
                    rows.push(same_corr(&x[ci * t..(ci + 1) * t], &p[TEMPORAL][f * k1..(f + 1) * k1]));
                }
            }
            rows
        })
        .collect();
    let s1 = batch_stats.then(|| stats(&y, f1, |i| i % f1));
    let st1 = |f: usize| s1.as_ref().map_or(running(0, f), |s| s[f]);
    let a2: Vec<Vec<Vec<f64>>> = y
        .iter()
        .map(|rows| {
            (0..m)
                .map(|mi| {
                    let f = mi / d;
                    (0..t)
                        .map(|ti| {
                            (0..c)
                                .map(|ci| p[SPATIAL][mi * c + ci] * bn(rows[ci * f1 + f][ti], st1(f), p[BN1_GAMMA][f], p[BN1_BETA][f]))
                                .sum()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let s2 = batch_stats.then(|| stats(&a2, m, |i| i));
    let st2 = |mi: usize| s2.as_ref().map_or(running(1, mi), |s| s[mi]);
    let a4: Vec<Vec<Vec<f64>>> = a2
        .iter()
        .map(|rows| {
            let sep: Vec<Vec<f64>> = (0..m)
                .map(|mi| {
                    let r: Vec<f64> = rows[mi]
                        .iter()
                        .map(|v| bn(*v, st2(mi), p[BN2_GAMMA][mi], p[BN2_BETA][mi]).max(0.0))
                        .collect();
                    same_corr(&pool(&r, cfg.pool1), &p[SEP_DEPTHWISE][mi * k3..(mi + 1) * k3])
                })
                .collect();
            (0..f2)
                .map(|g| {
                    (0..sep[0].len())
                        .map(|ti| (0..m).map(|mi| p[SEP_POINTWISE][g * m + mi] * sep[mi][ti]).sum())
                        .collect()
                })
                .collect()
        })
        .collect();
    let s3 = batch_stats.then(|| stats(&a4, f2, |i| i));
    let st3 = |g: usize| s3.as_ref().map_or(running(2, g), |s| s[g]);
    let mut logits = Vec::new();
    let mut features = Vec::new();
    for rows in &a4 {
        let feat: Vec<f64> = (0..f2)
            .flat_map(|g| {
                let r: Vec<f64> = rows[g]
                    .iter()
                    .map(|v| bn(*v, st3(g), p[BN3_GAMMA][g], p[BN3_BETA][g]).max(0.0))
                    .collect();
                pool(&r, cfg.pool2)
            })
            .collect();
        logits.push(
            (0..nc)
                .map(|k| p[DENSE_BIAS][k] + feat.iter().enumerate().map(|(i, v)| v * p[DENSE_WEIGHT][i * nc + k]).sum::<f64>())
                .collect(),
        );
        features.push(feat);
    }
    (logits, features)
}

fn configs() -> Vec<ModelConfig> {
    let mut odd = ModelConfig::tiny(3, 17, 3);
    odd.temporal_kernel = 4;
    odd.separable_kernel = 5;
    odd.pool1 = 3;
    let mut wide = ModelConfig::tiny(2, 24, 2);
    wide.depth_multiplier = 3;
    wide.separable_filters = 4;
    vec![ModelConfig::tiny(2, 12, 2), odd, wide]
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9 * (1.0 + y.abs()))
}

#[test]
fn forward_matches_scalar_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for cfg in configs() {
        for _ in 0..4 {
            let model = random_model(&cfg, &mut rng);
            let n = 3;
            let inputs: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..cfg.n_channels * cfg.n_samples).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let batch = Batch {
                inputs: inputs.concat(),
                labels: vec![0; n],
                ids: (0..n).collect(),
            };
            for (mode, batch_stats) in [(Mode::EVAL, false), (Mode::train(AdaptationDepth::FULL), true)] {
                let out = forward(&model, &batch, mode, None).unwrap().output;
                let (logits, features) = oracle(&model, &inputs, batch_stats);
                assert!(close(&out.logits, &logits.concat()), "{cfg:?} {mode:?}");
                assert!(close(&out.features, &features.concat()), "{cfg:?} {mode:?}");
            }
            // below full depth batch norm is frozen and uses running statistics
            let out = forward(&model, &batch, Mode::train(AdaptationDepth::new(5).unwrap()), None).unwrap().output;
            assert!(close(&out.logits, &oracle(&model, &inputs, false).0.concat()));
        }
    }
}

#[test]
fn cross_entropy_against_log_sum_exp() {
    let logits = [2.0f64, -1.0, 0.5, 1000.0, 999.0, -1000.0];
    let labels = [2, 1];
    let lse = |r: &[f64]| {
        let mx = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        mx + r.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
    };
    let expect = ((lse(&logits[..3]) - 0.5) + (lse(&logits[3..]) - 999.0)) / 2.0;
    let mut g = [0.0; 6];
    let got = cross_entropy_with_grad(&logits, &labels, 3, &mut g).unwrap();
    assert!((got - expect).abs() < 1e-12);
    // gradient of the batch mean: (softmax − onehot) / batch
    let sm: Vec<f64> = logits
        .chunks(3)
        .flat_map(|r| {
            let l = lse(r);
            r.iter().map(move |v| (v - l).exp())
        })
        .collect();
    for (i, gi) in g.iter().enumerate() {
        let onehot = if i == labels[i / 3] + 3 * (i / 3) { 1.0 } else { 0.0 };
        assert!((gi - (sm[i] - onehot) / 2.0).abs() < 1e-12);
    }
    let f32_logits: Vec<f32> = logits.iter().map(|v| *v as f32).collect();
    let got32 = cross_entropy(&f32_logits, &labels, 3).unwrap();
    // logits near 1000 carry an f32 rounding of about 6e-5 each
    assert!((got32 as f64 - expect).abs() < 5e-4);
    assert!(cross_entropy(&logits, &[3, 0], 3).is_err());
}

#[test]
fn adam_first_steps_by_hand() {
    let cfg = AdamConfig {
        lr: 0.1,
        ..AdamConfig::default()
    };
    let mut p = Params {
        tensors: vec![vec![1.0f64, -2.0, 0.0], vec![5.0]],
    };
    let g1 = Params {
        tensors: vec![vec![0.5, -3.0, 0.0], vec![1.0]],
    };
    let g2 = Params {
        tensors: vec![vec![-0.5, 1.0, 2.0], vec![1.0]],
    };
    let mut adam = AdamState::new(&p, cfg);
    adam.step(&mut p, &g1, |i| i == 0);
    // first step: m̂ = g, v̂ = g², so each coordinate moves by lr·g/(|g|+ε)
    let step1 = |g: f64| 0.1 * g / (g.abs() + 1e-8);
    let expect1 = [1.0 - step1(0.5), -2.0 - step1(-3.0), 0.0];
    for (a, b) in p.tensors[0].iter().zip(expect1) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(p.tensors[1], vec![5.0]);
    adam.step(&mut p, &g2, |i| i == 0);
    for j in 0..3 {
        let (a, b) = (g1.tensors[0][j], g2.tensors[0][j]);
        let m = (0.9 * 0.1 * a + 0.1 * b) / (1.0 - 0.81);
        let v = (0.999 * 0.001 * a * a + 0.001 * b * b) / (1.0 - 0.999f64 * 0.999);
        let want = expect1[j] - 0.1 * m / (v.sqrt() + 1e-8);
        assert!((p.tensors[0][j] - want).abs() < 1e-12, "{j}");
    }
}

fn toy_set(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<TrialTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % cfg.n_classes;
            let mut s = vec![0.0f32; cfg.n_channels * cfg.n_samples];
            let phase: f32 = rng.random_range(0.0..6.28);
            for (t, v) in s[label * cfg.n_samples..(label + 1) * cfg.n_samples].iter_mut().enumerate() {
                *v = (0.8 * t as f32 + phase).sin();
            }
            for v in &mut s {
                *v += rng.random_range(-0.3..0.3);
            }
            TrialTensor::new(s, cfg.n_channels, cfg.n_samples, label).unwrap()
        })
        .collect()
}

#[test]
fn toy_problem_is_learned() {
    let cfg = ModelConfig::tiny(3, 32, 3);
    let data = toy_set(&cfg, 90, 1);
    let set: Vec<&TrialTensor> = data.iter().collect();
    let test = toy_set(&cfg, 60, 2);
    let test: Vec<&TrialTensor> = test.iter().collect();
    let mut model = init_model(&cfg, 3).unwrap();
    let before = evaluate(&model, &test).unwrap().confusion.accuracy().unwrap();
    let tc = TrainConfig {
        epochs: 60,
        adam: AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    };
    let report = train(&mut model, &set, &tc, &CrossEntropy).unwrap();
    let after = evaluate(&model, &test).unwrap().confusion.accuracy().unwrap();
    assert!(report.loss_curve.last().unwrap() < &(0.5 * report.loss_curve[0]), "{:?}", report.loss_curve);
    assert!(after >= 95.0, "accuracy {before} -> {after}");
}
