use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rmixer(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rmixer"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write_config(dir: &Path) {
    fs::write(
        dir.join("rmixer.json"),
        r#"{
  "env": {"synthetic": {"rows": 2, "cols": 4, "feature_dim": 6}},
  "pair": {"label_1": "cat", "label_2": "owl"},
  "policy": {"hidden": [8]},
  "episode": {"steps": 3},
  "train": {"iterations": 2, "episodes_per_batch": 4, "minibatch_size": 8},
  "sample": {"n": 10},
  "output_dir": "run"
}
"#,
    )
    .unwrap();
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    let train = rmixer(dir.path(), &["train"]);
    assert_eq!(code(&train), 0, "{}", String::from_utf8_lossy(&train.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&train.stdout).unwrap();
    assert_eq!(summary["iterations"], 2);
    assert_eq!(
        fs::read(dir.path().join("run/config.json")).unwrap(),
        fs::read(dir.path().join("rmixer.json")).unwrap()
    );

    assert_eq!(code(&rmixer(dir.path(), &["sample"])), 0);
    let select = rmixer(dir.path(), &["select", "--tau-presence", "0.01", "--tau-balance", "2"]);
    assert_eq!(code(&select), 0, "{}", String::from_utf8_lossy(&select.stderr));
    assert_eq!(code(&rmixer(dir.path(), &["metrics", "--source", "selected"])), 0);
    assert_eq!(code(&rmixer(dir.path(), &["grid-oracle", "--resolution", "11"])), 0);
    for f in ["samples.jsonl", "selected.jsonl", "selection.json", "metrics.csv", "metrics.json", "oracle.json"] {
        assert!(dir.path().join("run").join(f).exists(), "{f}");
    }

    // outputs are write-once
    assert_eq!(code(&rmixer(dir.path(), &["sample"])), 1);
    assert_eq!(code(&rmixer(dir.path(), &["sample", "--force", "--n", "3"])), 0);
}

#[test]
fn empty_selection_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    assert_eq!(code(&rmixer(dir.path(), &["train"])), 0);
    assert_eq!(code(&rmixer(dir.path(), &["sample"])), 0);
    let out = rmixer(dir.path(), &["select", "--tau-presence", "0.999"]);
    assert_eq!(code(&out), 4);
    assert!(!out.stderr.is_empty());
    assert_eq!(fs::read_to_string(dir.path().join("run/selected.jsonl")).unwrap(), "");
}

#[test]
fn config_problems_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&rmixer(dir.path(), &["train"])), 2);

    fs::write(
        dir.path().join("bad.json"),
        r#"{"env": {"synthetic": {}}, "pair": {"label_1": "a", "label_2": "b"}, "train": {"lr": 1}}"#,
    )
    .unwrap();
    let out = rmixer(dir.path(), &["--config", "bad.json", "train"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.lr"));
}

#[test]
fn missing_artifacts_exit_with_five() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    assert_eq!(code(&rmixer(dir.path(), &["sample"])), 5);
    assert_eq!(code(&rmixer(dir.path(), &["select"])), 5);
    assert_eq!(code(&rmixer(dir.path(), &["metrics"])), 5);
}

#[test]
fn unreachable_bridge_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("rmixer.json"),
        r#"{"env": {"bridge": {"url": "http://127.0.0.1:9", "max_attempts": 1, "timeout_secs": 1}},
            "pair": {"label_1": "a", "label_2": "b"}, "output_dir": "run"}"#,
    )
    .unwrap();
    assert_eq!(code(&rmixer(dir.path(), &["train"])), 3);
}
