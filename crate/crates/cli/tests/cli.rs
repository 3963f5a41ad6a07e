use std::path::Path;
use std::process::{Command, Output};

use dggn_core::data::{Budget, ScheduleConfig, SplitMode};
use dggn_core::encoder::EncoderConfig;
use dggn_core::fusion::AttentionConfig;
use dggn_core::harness::RunConfig;

fn small_config() -> RunConfig {
    let mut c = RunConfig::desk();
    c.generator.n_channels = 4;
    c.generator.length = 32;
    c.generator.n_classes = 4;
    c.encoder = EncoderConfig {
        widths: vec![8, 16],
        blocks_per_stage: 1,
        moia_stages: vec![false, true],
        ..EncoderConfig::tiny(4, 32)
    };
    c.attention = AttentionConfig::new(16);
    c.schedule = ScheduleConfig::tep(4, vec![2, 2], SplitMode::Imbalanced);
    c.schedule.budget = Some(Budget {
        normal_train: 40,
        fault_train: 20,
        test_per_class: 20,
    });
    c.batch_size = 16;
    c.epochs = 3;
    c.training.checkpoints = 2;
    c.training.probe_per_class = 10;
    c.forest.n_trees = 9;
    c.memory.capacity = 20;
    c
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, small_config().to_json().unwrap()).unwrap();
    path
}

fn dggn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dggn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = dggn(&["train", "--config", arg(&missing), "--out", arg(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
}

#[test]
fn malformed_config_and_unknown_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(dggn(&["train", "--config", arg(&bad)]).status.code(), Some(2));
    assert_eq!(dggn(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(dggn(&["ablate", "--component", "nonsense"]).status.code(), Some(2));
    assert_eq!(dggn(&["ablate"]).status.code(), Some(2));
    let missing = dir.path().join("results.json");
    assert_eq!(dggn(&["report", "--results", arg(&missing)]).status.code(), Some(2));
}

#[test]
fn train_twice_gives_identical_results_and_report_rebuilds_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = dggn(&["train", "--config", arg(&cfg), "--seed", "3", "--out", arg(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("session 2"));
    }
    let ra = std::fs::read(a.join("results.json")).unwrap();
    assert_eq!(ra, std::fs::read(b.join("results.json")).unwrap());
    let table = std::fs::read_to_string(a.join("table.csv")).unwrap();

    let c = dir.path().join("c");
    let o = dggn(&["report", "--results", arg(&a.join("results.json")), "--out", arg(&c)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(c.join("table.csv")).unwrap(), table);

    let o = dggn(&["eval", "--checkpoint", arg(&a.join("checkpoints"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let e: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(e["accuracy"].as_f64().is_some_and(|v| (0.0..=1.0).contains(&v)));
}

#[test]
fn ablate_msca_writes_a_row_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("ab");
    let o = dggn(&["ablate", "--component", "msca", "--config", arg(&cfg), "--out", arg(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3, "{table}");
    assert!(lines[1].starts_with("DGGN,"));
    assert_eq!(lines[1].split(',').count(), lines[0].split(',').count());
}

#[test]
fn generate_writes_train_and_test_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let o = dggn(&["generate", "--config", arg(&cfg), "--out", arg(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let train = std::fs::read_to_string(dir.path().join("train.csv")).unwrap();
    assert!(train.starts_with("label,c0_t0,"));
    // 40 normal + 3 faults x 20
    assert_eq!(train.lines().count(), 1 + 100);
    assert!(dir.path().join("test.csv").is_file());
}
