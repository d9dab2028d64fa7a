use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn aggclass(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aggclass"))
        .args(args)
        .env("AGGCLASS_OUT", dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = aggclass(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn metrics_without_hash(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("config_hash");
            v
        })
        .collect()
}

/// Synthesizes a k=3 mixture and groups it into pairs.
fn pipeline(dir: &Path, groups: &str) {
    ok(dir, &["synth", "-k", "3", "--n", "1500", "--seed", "4"]);
    ok(dir, &["aggregate", "-k", "3", "--n-groups", groups, "--seed", "4"]);
}

#[test]
fn synth_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        ok(d.path(), &["synth", "-k", "3", "--n", "400", "--seed", "11"]);
    }
    for name in ["train.csv", "val.csv", "test.csv", "data.meta.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn synth_k3_labels_are_one_to_three() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["synth", "-k", "3", "--n", "600"]);
    let mut seen = std::collections::BTreeSet::new();
    for name in ["train.csv", "val.csv", "test.csv"] {
        let mut reader = csv::Reader::from_path(d.path().join(name)).unwrap();
        let col = reader.headers().unwrap().iter().position(|h| h == "label").unwrap();
        for row in reader.records() {
            seen.insert(row.unwrap()[col].to_string());
        }
    }
    assert_eq!(seen.into_iter().collect::<Vec<_>>(), ["1", "2", "3"]);
}

#[test]
fn synth_zero_points_is_an_error() {
    let d = tempfile::tempdir().unwrap();
    let out = aggclass(d.path(), &["synth", "--n", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("empty dataset requested"));
}

#[test]
fn artifacts_carry_config_hash() {
    let d = tempfile::tempdir().unwrap();
    pipeline(d.path(), "200");
    ok(d.path(), &["train", "--epochs", "2"]);
    let out = ok(d.path(), &["eval"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["accuracy", "modified_accuracy", "permutation", "config_hash"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    assert!(report["modified_accuracy"].as_f64().unwrap() >= report["accuracy"].as_f64().unwrap());
    let hash = |v: &serde_json::Value| v["config_hash"].as_str().map(str::len);
    assert_eq!(hash(&json(&d.path().join("data.meta.json"))), Some(16));
    assert_eq!(hash(&json(&d.path().join("groups.meta.json"))), Some(16));
    assert_eq!(hash(&json(&d.path().join("model.json"))["metadata"]), Some(16));
    assert_eq!(hash(&json(&d.path().join("report.json"))), Some(16));
}

#[test]
fn loglik_matches_uum_with_full_warmup() {
    let d = tempfile::tempdir().unwrap();
    pipeline(d.path(), "200");
    let run = |sub: &str, extra: &[&str]| {
        let out = d.path().join(sub);
        let obs = d.path().join("train.groups.jsonl");
        let mut args = vec!["train", "--dir", out.to_str().unwrap(), "--observations", obs.to_str().unwrap()];
        args.extend_from_slice(&["--epochs", "4", "-k", "3"]);
        args.extend_from_slice(extra);
        ok(d.path(), &args);
        (metrics_without_hash(&out.join("metrics.jsonl")), json(&out.join("model.json"))["params"].clone())
    };
    let uum = run("uum", &["--method", "uum", "--warmup", "--warmup-epochs", "4"]);
    let loglik = run("loglik", &["--method", "loglik"]);
    assert_eq!(uum, loglik);
}

#[test]
fn missing_observation_file_names_path() {
    let d = tempfile::tempdir().unwrap();
    let missing = d.path().join("nowhere.groups.jsonl");
    let out = aggclass(d.path(), &["train", "--observations", missing.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains(missing.to_str().unwrap()));
}

#[test]
fn pairwise_smoke_run_is_fast() {
    let d = tempfile::tempdir().unwrap();
    let start = Instant::now();
    pipeline(d.path(), "300");
    ok(d.path(), &["train", "--epochs", "10"]);
    ok(d.path(), &["eval"]);
    assert!(start.elapsed() < Duration::from_secs(30));
    assert_eq!(fs::read_to_string(d.path().join("metrics.jsonl")).unwrap().lines().count(), 10);
}

#[test]
fn mil_eval_reports_group_accuracy() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["--task", "mil", "-m", "3", "synth", "--n", "1000"]);
    ok(d.path(), &["--task", "mil", "-m", "3", "aggregate", "--n-groups", "200"]);
    ok(d.path(), &["--task", "mil", "-m", "3", "train", "--epochs", "3"]);
    let out = ok(d.path(), &["--task", "mil", "eval"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let g = report["group_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&g));
}

#[test]
fn eval_rejects_unknown_checkpoint_schema() {
    let d = tempfile::tempdir().unwrap();
    pipeline(d.path(), "100");
    ok(d.path(), &["train", "--epochs", "1"]);
    let path = d.path().join("model.json");
    let mut ck = json(&path);
    ck["schema_version"] = 999.into();
    fs::write(&path, ck.to_string()).unwrap();
    let out = aggclass(d.path(), &["eval"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("schema"), "{}", stderr(&out));
}

#[test]
fn verify_unknown_suite_is_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let out = aggclass(d.path(), &["verify", "nonsense"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_oracle_passes() {
    let d = tempfile::tempdir().unwrap();
    let out = ok(d.path(), &["verify", "oracle"]);
    let reports: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let report = &reports[0];
    assert_eq!(report["passed"], true);
    for check in report["checks"].as_array().unwrap() {
        assert!(check["max_deviation"].as_f64().unwrap() < 1e-9);
    }
}

#[test]
fn bad_config_field_is_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("cfg.json");
    fs::write(&cfg, r#"{"tsak": "mil"}"#).unwrap();
    let out = aggclass(d.path(), &["--config", cfg.to_str().unwrap(), "synth"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn flags_override_config() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("cfg.json");
    fs::write(&cfg, r#"{"k": 4, "data": {"kind": "synthetic", "n": 50}}"#).unwrap();
    ok(d.path(), &["--config", cfg.to_str().unwrap(), "synth", "--n", "200"]);
    let meta = json(&d.path().join("data.meta.json"));
    assert_eq!(meta["class_names"].as_array().unwrap().len(), 4);
    let c = &meta["counts"];
    let total: u64 = ["train", "val", "test"].iter().map(|s| c[s].as_u64().unwrap()).sum();
    assert_eq!(total, 200);
}
