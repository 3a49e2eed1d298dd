//! Session files on disk and the synthetic generator.

use std::path::Path;

use bmicl::data::convert::{convert_trial, ExternalLayout, SampleType};
use bmicl::data::*;
use bmicl::dsp::{RawTrial, TrialTensor};
use bmicl::nn::{evaluate, init_model, train, CrossEntropy, ModelConfig, TrainConfig};
use proptest::prelude::*;

fn edit_manifest(session_dir: &Path, f: impl FnOnce(&mut SessionManifest)) {
    let mut m = read_manifest(session_dir).unwrap();
    f(&mut m);
    std::fs::write(session_dir.join("manifest.json"), serde_json::to_string_pretty(&m).unwrap()).unwrap();
}

fn bits(seq: &SessionSequence) -> Vec<Vec<Vec<u32>>> {
    seq.sessions
        .iter()
        .map(|s| s.iter().map(|t| t.samples.iter().map(|v| v.to_bits()).collect()).collect())
        .collect()
}

#[test]
fn preprocessed_sessions_round_trip_bitwise() {
    let seq = generate_synthetic(&SyntheticDriftConfig::binary_drift(8, 3, 30.0, 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_sessions(&seq, dir.path(), "S01", 500.0).unwrap();
    let back = load_sessions(dir.path()).unwrap();
    assert_eq!(bits(&back), bits(&seq));
    assert_eq!(back, seq);
    let m = read_manifest(&dir.path().join("session_2")).unwrap();
    assert!(m.preprocessed);
    assert_eq!(m.session, 2);
    assert_eq!(m.trials[0].file, "trials/trial_0001.bin");
}

#[test]
fn raw_sessions_are_preprocessed_once_on_load() {
    let cfg = SyntheticDriftConfig::binary_drift(6, 2, 30.0, 4);
    let raw = generate_synthetic_raw(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_raw_sessions(&raw, &cfg.class_names(), dir.path(), "S02").unwrap();
    let loaded = load_sessions(dir.path()).unwrap();
    assert_eq!(bits(&loaded), bits(&generate_synthetic(&cfg).unwrap()));

    // re-saving the loaded tensors marks them preprocessed; a second load is
    // the identity rather than a second pass through the filters
    let again = tempfile::tempdir().unwrap();
    save_sessions(&loaded, again.path(), "S02", 500.0).unwrap();
    assert_eq!(bits(&load_sessions(again.path()).unwrap()), bits(&loaded));
}

#[test]
fn full_format_session_keeps_executed_movement_trials() {
    // 10 runs of 40: five runs of executed movement then five imagined
    let cfg = SyntheticDriftConfig::four_class_clean(400, 1, 0);
    let raw = generate_synthetic_raw(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_raw_sessions(&raw, &cfg.class_names(), dir.path(), "S03").unwrap();
    let s1 = dir.path().join("session_1");
    edit_manifest(&s1, |m| {
        for t in m.trials.iter_mut().filter(|t| t.run > 5) {
            t.paradigm = Paradigm::Mi;
        }
    });
    let m = read_manifest(&s1).unwrap();
    for run in 1..=10 {
        assert_eq!(m.trials.iter().filter(|t| t.run == run).count(), 40);
    }
    assert_eq!(m.classes, ["left", "right", "tongue", "rest"]);

    let seq = load_sessions(dir.path()).unwrap();
    assert_eq!(seq.n_classes(), 4);
    assert_eq!(seq.sessions[0].len(), 200);
    let all = LoadOptions {
        paradigm: None,
        ..LoadOptions::default()
    };
    assert_eq!(load_sessions_with(dir.path(), &all).unwrap().sessions[0].len(), 400);

    edit_manifest(&s1, |m| {
        for t in m.trials.iter_mut().step_by(20).take(10) {
            t.outlier = true;
        }
    });
    let kept = load_sessions(dir.path()).unwrap();
    assert_eq!(kept.sessions[0].len(), 190);
    // order is preserved: the surviving trials are a subsequence of the full set
    let mut it = seq.sessions[0].iter();
    assert!(kept.sessions[0].iter().all(|t| it.any(|u| u == t)));
}

#[test]
fn load_errors_name_the_problem() {
    let empty = tempfile::tempdir().unwrap();
    assert!(load_sessions(empty.path()).is_err());

    let seq = generate_synthetic(&SyntheticDriftConfig::binary_drift(4, 1, 0.0, 0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_sessions(&seq, dir.path(), "S04", 500.0).unwrap();
    let s1 = dir.path().join("session_1");

    let trial = s1.join("trials/trial_0003.bin");
    let bytes = std::fs::read(&trial).unwrap();
    std::fs::write(&trial, &bytes[..bytes.len() - 4]).unwrap();
    let msg = load_sessions(dir.path()).unwrap_err().to_string();
    assert!(msg.contains("trial_0003.bin"), "{msg}");

    std::fs::remove_file(&trial).unwrap();
    let msg = load_sessions(dir.path()).unwrap_err().to_string();
    assert!(msg.contains("trial_0003.bin"), "{msg}");

    std::fs::write(&trial, &bytes).unwrap();
    edit_manifest(&s1, |m| m.trials[1].label = 0);
    load_sessions(dir.path()).unwrap();
    let text = std::fs::read_to_string(s1.join("manifest.json")).unwrap();
    let broken = text.replacen("\"label\": 0", "\"label\": 7", 1);
    std::fs::write(s1.join("manifest.json"), broken).unwrap();
    let msg = load_sessions(dir.path()).unwrap_err().to_string();
    assert!(msg.contains("label 7"), "{msg}");
}

#[test]
fn trial_files_are_little_endian_on_every_host() {
    // 1.0f32 = 0x3F800000, -2.0f32 = 0xC0000000
    let le = [0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0xC0];
    assert_eq!(encode_trial(&[1.0, -2.0]), le);
    assert_eq!(decode_trial(&le, 2).unwrap(), vec![1.0, -2.0]);
    // the byte-swapped words are different numbers when read as the format
    let swapped: Vec<u8> = le.chunks(4).flat_map(|c| c.iter().rev().copied()).collect();
    assert_ne!(decode_trial(&swapped, 2).unwrap(), vec![1.0, -2.0]);
    // and the converter reads them back as big-endian input
    let layout = ExternalLayout {
        sample_type: SampleType::F32,
        little_endian: false,
        ..ExternalLayout::default()
    };
    let t = convert_trial(&swapped, &layout, 1, 500.0, 0).unwrap();
    assert_eq!(t.samples, vec![1.0, -2.0]);
    assert!(decode_trial(&le, 3).is_err());
}

proptest! {
    #[test]
    fn codec_round_trips_any_bits(words in prop::collection::vec(any::<u32>(), 0..64)) {
        let v: Vec<f32> = words.iter().map(|w| f32::from_bits(*w)).collect();
        let back = decode_trial(&encode_trial(&v), v.len()).unwrap();
        prop_assert_eq!(back.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), words);
    }
}

#[test]
fn generator_is_seeded_and_balanced() {
    let cfg = SyntheticDriftConfig::binary_drift(12, 2, 30.0, 9);
    let a = generate_synthetic(&cfg).unwrap();
    assert_eq!(bits(&a), bits(&generate_synthetic(&cfg).unwrap()));
    let other = SyntheticDriftConfig { seed: 10, ..cfg };
    assert_ne!(bits(&a), bits(&generate_synthetic(&other).unwrap()));
    for s in &a.sessions {
        assert_eq!(s.iter().filter(|t| t.label == 0).count(), 6);
    }
    let raw: Vec<Vec<RawTrial>> = generate_synthetic_raw(&SyntheticDriftConfig::four_class_clean(8, 1, 0)).unwrap();
    assert_eq!((raw[0][0].n_channels, raw[0][0].n_samples), (8, 2000));
}

#[test]
fn drift_defeats_a_model_fitted_to_the_first_session() {
    let seq = generate_synthetic(&SyntheticDriftConfig::binary_drift(40, 4, 30.0, 0)).unwrap();
    let mut model = init_model(&ModelConfig::standard(2), 1).unwrap();
    let tc = TrainConfig {
        epochs: 40,
        ..TrainConfig::default()
    };
    let first: Vec<&TrialTensor> = seq.session(0);
    train(&mut model, &first, &tc, &CrossEntropy).unwrap();
    let own = evaluate(&model, &first).unwrap().confusion.accuracy().unwrap();
    let last = evaluate(&model, &seq.session(3)).unwrap().confusion.accuracy().unwrap();
    assert!(own >= 95.0, "{own}");
    assert!(last <= 70.0, "session 4 accuracy {last}");
}
