//! The `bmicl` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bmicl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bmicl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = bmicl(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

const QUICK: [&str; 6] = ["--trials", "20", "--pretrain-epochs", "2", "--epochs", "1"];

#[test]
fn replicated_cl_run_writes_reports_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mut args = vec!["run", "--task", "cl_workflow", "--strategy", "er", "--er-capacity", "200", "--seeds", "3", "-o", out];
    args.extend(QUICK);
    let table = ok(&args);
    assert!(table.contains("strategy er over 3 seed(s)"), "{table}");
    let root = dir.path().join("cl_workflow");
    for s in 0..3 {
        let seed_dir = root.join(format!("seed_{s}"));
        let r = json(&seed_dir.join("report.json"));
        assert_eq!(r["seed"], s);
        assert_eq!(r["experiment"]["workflow"]["strategy"]["kind"], "er");
        assert_eq!(r["experiment"]["workflow"]["strategy"]["er_capacity"], 200);
        assert!(r["tool_version"].as_str().unwrap().starts_with("bmicl "));
        assert_eq!(r["result"]["phases"].as_array().unwrap().len(), 3);
        let csv = std::fs::read_to_string(seed_dir.join("report.csv")).unwrap();
        assert_eq!(csv.lines().count(), 5);
        assert!(seed_dir.join("model.bin").is_file());
    }
    let agg = json(&root.join("aggregate.json"));
    assert_eq!(agg["seeds"], serde_json::json!([0, 1, 2]));
    assert_eq!(agg["aggregate"]["phases"][3]["accuracy"]["n"], 3);
}

#[test]
fn identical_runs_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mut args = vec!["cl", "--strategy", "lwf", "--seed-list", "7", "-o", out];
    args.extend(QUICK);
    ok(&args);
    let path = dir.path().join("cl_workflow/seed_7/report.json");
    let first = std::fs::read(&path).unwrap();
    let model = std::fs::read(dir.path().join("cl_workflow/seed_7/model.bin")).unwrap();
    ok(&args);
    assert_eq!(std::fs::read(&path).unwrap(), first);
    assert_eq!(std::fs::read(dir.path().join("cl_workflow/seed_7/model.bin")).unwrap(), model);
}

#[test]
fn invalid_strategy_exits_with_code_2() {
    let out = bmicl(&["cl", "--strategy", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "task = \"cl_workflow\"\n\n[workflow.strategy]\nkind = \"bogus\"\n").unwrap();
    let out = bmicl(&["run", "-c", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("line 4"), "{msg}");

    std::fs::write(&cfg, "task = \"cl_workflow\"\nseeds = []\n").unwrap();
    assert_eq!(bmicl(&["run", "-c", cfg.to_str().unwrap()]).status.code(), Some(2));
    std::fs::write(&cfg, "task = \"cl_workflow\"\nunknown_field = 1\n").unwrap();
    assert_eq!(bmicl(&["run", "-c", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn config_files_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    let out = dir.path().join("out");
    std::fs::write(
        &cfg,
        r#"{"task": "tl_workflow", "seeds": [4],
            "data": {"synthetic": {"scenario": "binary_drift", "trials_per_session": 20, "sessions": 2}},
            "workflow": {"pretrain_epochs": 2, "strategy": {"epochs": 1, "batch_size": 5}}}"#,
    )
    .unwrap();
    ok(&["run", "-c", cfg.to_str().unwrap(), "--batch-size", "4", "-o", out.to_str().unwrap()]);
    let r = json(&out.join("tl_workflow/seed_4/report.json"));
    let st = &r["experiment"]["workflow"]["strategy"];
    assert_eq!(st["batch_size"], 4);
    assert_eq!(st["epochs"], 1);
    assert_eq!(st["kind"], "naive_tl");
    assert_eq!(r["result"]["config"]["seed"], 4);
}

#[test]
fn generated_data_feeds_cross_validation() {
    let dir = tempfile::tempdir().unwrap();
    let subj = dir.path().join("S01");
    ok(&["gen-data", "--scenario", "four_class_clean", "--trials", "20", "--sessions", "2", "--raw", "-o", subj.to_str().unwrap()]);
    assert!(subj.join("session_2/manifest.json").is_file());
    let out = dir.path().join("out");
    let table = ok(&["cv", "--data", subj.to_str().unwrap(), "--cv-epochs", "1", "-o", out.to_str().unwrap()]);
    assert!(table.contains("session 2:"), "{table}");
    let r = json(&out.join("within_session_cv/seed_0/report.json"));
    assert_eq!(r["result"][0]["cv"]["fold_accuracies"].as_array().unwrap().len(), 5);
    assert_eq!(r["experiment"]["workflow"]["model"]["n_classes"], 4);
}

#[test]
fn on_device_run_reports_memory_and_blobs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mut args = vec!["odl", "--strategy", "er", "--er-capacity", "20", "-o", out];
    args.extend(QUICK);
    ok(&args);
    let seed_dir = dir.path().join("odl_sim/seed_0");
    let mem = json(&seed_dir.join("memory.json"));
    let items = mem["items"].as_array().unwrap();
    let replay = items.iter().find(|i| i["name"] == "replay_buffer").unwrap();
    assert_eq!(replay["bytes"], 304_000);
    let sum: u64 = items.iter().map(|i| i["bytes"].as_u64().unwrap()).sum();
    assert_eq!(mem["total_bytes"], sum);
    assert!(seed_dir.join("quantized.bin").is_file() && seed_dir.join("head.bin").is_file());
    let r = json(&seed_dir.join("report.json"));
    assert_eq!(r["result"]["phases"].as_array().unwrap().len(), 4);

    let bad = bmicl(&["odl", "--strategy", "joint", "-o", out]);
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(bmicl(&["odl", "--strategy", "ewc", "-o", out]).status.code(), Some(2));
}

#[test]
fn diff_of_a_report_with_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mut args = vec!["tl", "-o", out];
    args.extend(QUICK);
    ok(&args);
    let r = dir.path().join("tl_workflow/seed_0/report.json");
    let d = dir.path().join("diff.json");
    let table = ok(&["diff", r.to_str().unwrap(), r.to_str().unwrap(), "-o", d.to_str().unwrap()]);
    assert!(table.contains("no accuracy difference"), "{table}");
    let v = json(&d);
    assert_eq!(v["max_abs_accuracy_delta"], 0.0);
    assert!(v["phases"].as_array().unwrap().iter().all(|p| p["accuracy"] == 0.0));

    // a report over fewer sessions cannot be compared
    let mut short = vec!["tl", "--sessions", "2", "-o"];
    let other = dir.path().join("short");
    short.push(other.to_str().unwrap());
    short.extend(QUICK);
    ok(&short);
    let s = other.join("tl_workflow/seed_0/report.json");
    assert_eq!(bmicl(&["diff", r.to_str().unwrap(), s.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn replay_beats_fine_tuning_under_drift() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(&["tl", "--epochs", "20", "-o", out]);
    ok(&["cl", "--strategy", "er", "--er-capacity", "200", "--epochs", "20", "-o", out]);
    let er = dir.path().join("cl_workflow/seed_0/report.json");
    let tl = dir.path().join("tl_workflow/seed_0/report.json");
    let d = dir.path().join("diff.json");
    let table = ok(&["diff", er.to_str().unwrap(), tl.to_str().unwrap(), "-o", d.to_str().unwrap()]);
    let v = json(&d);
    let at = v["max_at"].as_str().unwrap().to_string();
    let best = v["phases"].as_array().unwrap().iter().find(|p| p["phase"] == at.as_str()).unwrap()["accuracy"]
        .as_f64()
        .unwrap();
    assert!(best > 0.0, "{table}");
    assert!(table.contains(&format!("at {at}")));
}
