use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_cropnet");

fn cropnet(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr_json(o: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().expect("error line on stderr");
    serde_json::from_str(line).expect("machine-readable error")
}

/// Tiny, fast synthetic setup: 3 samples per class, narrow widths, 1 epoch.
fn write_config(dir: &Path, seeds: &[u64]) -> String {
    let path = dir.join("run.toml");
    let text = format!(
        r#"seeds = {seeds:?}
out = "{out}"

[experiment]
name = "tiny"
widths = [2, 2, 4, 4]
train = {{ lr = 0.003, batch_size = 8, epochs = 1 }}

[source.synth]
seed = 1
region = {{ name = "SRC", samples_per_class = [3, 3, 3, 3, 3, 3, 3] }}

[target.synth]
seed = 2
region = {{ name = "TGT", shift_days = 10.0, samples_per_class = [3, 3, 3, 3, 3, 3, 3] }}
"#,
        out = dir.join("out").display()
    );
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn params_default_budget() {
    let o = cropnet(&["params"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "4691655");
}

#[test]
fn params_follow_overrides() {
    let o = cropnet(&["params", "--set", "experiment.widths=[16, 32, 64, 128]"]);
    assert!(o.status.success());
    let n: usize = stdout(&o).trim().parse().unwrap();
    assert!(n < 4_691_655 / 10);
}

#[test]
fn usage_error_exits_two() {
    let o = cropnet(&["transfer", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "usage");
    let o = cropnet(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_errors_exit_three() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[experiment]\nepochz = 3\n").unwrap();
    let o = cropnet(&["params", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_json(&o)["error"], "config");

    let o = cropnet(&["params", "--set", "experiment.train.lr=-1.0"]);
    assert_eq!(o.status.code(), Some(3));
    let o = cropnet(&["params", "--set", "seeds=[]"]);
    assert_eq!(o.status.code(), Some(3));
    let o = cropnet(&["transfer", "--set", "experiment.feature=\"median3d\""]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn runtime_error_exits_one() {
    let dir = TempDir::new().unwrap();
    let o = cropnet(&[
        "validate",
        dir.path().join("missing.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["error"], "io");
}

#[test]
fn synth_then_validate() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &[1]);
    let o = cropnet(&["synth", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let source = dir.path().join("out/source.jsonl");
    let o = cropnet(&["validate", source.to_str().unwrap()]);
    assert!(o.status.success());
    let summary: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(summary["samples"], 21);
    assert_eq!(summary["classes"], 7);
    assert_eq!(summary["class_counts"]["rice"], 3);

    // A malformed line is reported with its number.
    let mut text = fs::read_to_string(&source).unwrap();
    text.push_str("{not json}\n");
    let broken = dir.path().join("broken.jsonl");
    fs::write(&broken, text).unwrap();
    let o = cropnet(&["validate", broken.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let summary: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(summary["invalid_lines"], serde_json::json!([22]));
}

#[test]
fn transfer_writes_one_row_per_seed() {
    let dir = TempDir::new().unwrap();
    let seeds: Vec<u64> = (1..=10).collect();
    let cfg = write_config(dir.path(), &seeds);
    let o = cropnet(&["transfer", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seeds"].as_array().unwrap().len(), 10);
    assert_eq!(report["seed_count"], 10);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 11);
    for s in seeds {
        assert!(out.join(format!("confusion_{s}.csv")).exists());
    }
    assert!(out.join("config.resolved").exists());
}

#[test]
fn resolved_snapshot_reproduces_bitwise() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &[3, 4]);
    let first = dir.path().join("first");
    let o = cropnet(&[
        "transfer",
        "--config",
        &cfg,
        "--out",
        first.to_str().unwrap(),
        "--set",
        "experiment.augmentation={}",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let snapshot = first.join("config.resolved");
    let second = dir.path().join("second");
    let o = cropnet(&[
        "transfer",
        "--config",
        snapshot.to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
        "--threads",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "report.json",
        "summary.csv",
        "confusion_3.csv",
        "confusion_4.csv",
    ] {
        assert_eq!(
            fs::read(first.join(f)).unwrap(),
            fs::read(second.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn inputs_are_not_modified() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &[1]);
    assert!(cropnet(&["synth", "--config", &cfg]).status.success());
    let src = dir.path().join("out/source.jsonl");
    let tgt = dir.path().join("out/target.jsonl");
    let before = (
        fs::read(&src).unwrap(),
        fs::read(&tgt).unwrap(),
        fs::read(&cfg).unwrap(),
    );
    let o = cropnet(&[
        "transfer",
        "--config",
        &cfg,
        "--source",
        src.to_str().unwrap(),
        "--target",
        tgt.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let after = (
        fs::read(&src).unwrap(),
        fs::read(&tgt).unwrap(),
        fs::read(&cfg).unwrap(),
    );
    assert!(before == after);
}

#[test]
fn train_eval_and_cam_from_checkpoint() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &[7]);
    let t = dir.path().join("train");
    let o = cropnet(&["train", "--config", &cfg, "--out", t.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = t.join("checkpoint_7.bin");
    assert!(ckpt.exists());
    assert_eq!(
        fs::read_to_string(t.join("history_7.csv"))
            .unwrap()
            .lines()
            .count(),
        2
    );

    let e = dir.path().join("eval");
    let o = cropnet(&[
        "eval",
        "--config",
        &cfg,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        e.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let scores: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(e.join("scores.json")).unwrap()).unwrap();
    let oa = scores["oa"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&oa));
    assert_eq!(
        fs::read_to_string(e.join("predictions.csv"))
            .unwrap()
            .lines()
            .count(),
        22
    );

    let c = dir.path().join("cam");
    let o = cropnet(&[
        "cam",
        "--config",
        &cfg,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
        "--set",
        "cam.classes=[]",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let line: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let files: Vec<String> = line["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f.as_str().unwrap().to_string())
        .collect();
    let cams: Vec<&String> = files.iter().filter(|f| f.starts_with("cam_")).collect();
    assert!(!cams.is_empty());
    let text = fs::read_to_string(c.join(cams[0])).unwrap();
    assert_eq!(text.lines().next(), Some("band,bin,value"));
    assert_eq!(text.lines().count(), 1 + 10 * 43);
}

#[test]
fn cam_rejects_non_2d_features() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &[1]);
    let o = cropnet(&["cam", "--config", &cfg, "--feature", "median1d"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn featurize_harmonic_has_35_columns() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &[1]);
    let o = cropnet(&["featurize", "--config", &cfg, "--feature", "harmonic"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let line: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(line["length"], 35);
    let csv = fs::read_to_string(dir.path().join("out/features.csv")).unwrap();
    let n = line["samples"].as_u64().unwrap() as usize;
    assert_eq!(csv.lines().count(), 1 + 35 * n);
}

#[test]
fn ablate_and_sensitivity_shapes() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &[1]);
    let o = cropnet(&["ablate", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let reports: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap())
            .unwrap();
    let names: Vec<&str> = reports
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["experiment"].as_str().unwrap())
        .collect();
    assert_eq!(
        names,
        [
            "tiny-none",
            "tiny-shift",
            "tiny-shift+scale",
            "tiny-shift+scale+warp"
        ]
    );

    let s = dir.path().join("sens");
    let o = cropnet(&[
        "sensitivity",
        "--config",
        &cfg,
        "--out",
        s.to_str().unwrap(),
        "--set",
        "sensitivity.windows=[5, 10, 30]",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(s.join("sensitivity.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn in_region_eval() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &[1, 2]);
    let o = cropnet(&["eval", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["source_region"], report["target_region"]);
    // 20% of 21 samples, per seed.
    for s in report["seeds"].as_array().unwrap() {
        assert_eq!(s["evaluated"], 4);
    }
}
