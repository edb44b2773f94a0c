use std::path::Path;
use std::process::{Command, Output};

fn rexzero(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rexzero"));
    cmd.args(args).env_remove("REXZERO_OUT");
    if let Some(dir) = env_out {
        cmd.env("REXZERO_OUT", dir);
    }
    cmd.output().unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    serde_json::from_slice(&out.stderr).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)))
}

const CONFIG: &str = r#"{
  "name": "cli",
  "data": {"synthetic": {"relations": 2, "n_train": 30, "n_val": 10, "n_test": 12}},
  "encoder": {"hidden_dim": 16, "heads": 2, "ffn_dim": 16, "layers": 1, "max_length": 32},
  "classifier": {"train": {"max_epochs": 2}},
  "extractor": {"name": "pointer", "train": {"max_epochs": 2}},
  "seed": 9,
  "output_dir": "run"
}"#;

#[test]
fn full_command_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    std::fs::write(&cfg, CONFIG).unwrap();
    let cfg = cfg.to_str().unwrap();
    for verb in ["prepare", "train-classifier", "train-extractor"] {
        let out = rexzero(&[verb, "--config", cfg], None);
        assert!(out.status.success(), "{verb}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(dir.path().join("run/checkpoints/pointer-nz/manifest.json").exists());
    for pipeline in ["end-to-end", "two-step", "classifier"] {
        let out = rexzero(&["evaluate", "--config", cfg, "--pipeline", pipeline], None);
        assert!(out.status.success(), "{pipeline}: {}", String::from_utf8_lossy(&out.stderr));
        let record: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert!(record["f1"].is_number());
    }
    let out = rexzero(&["report", dir.path().join("run").to_str().unwrap()], None);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("% point ↓") && text.contains("% ↑"));

    // the NZ-trained checkpoint refuses to act as a WZ-trained one
    let out = rexzero(&["evaluate", "--config", cfg, "--train-setting", "WZ", "--extractor-checkpoint",
        dir.path().join("run/checkpoints/pointer-nz").to_str().unwrap()], None);
    assert_eq!(error_json(&out)["error"], "setting_mismatch");
    let out = rexzero(&["evaluate", "--config", cfg, "--train-setting", "WZ", "--allow-setting-override",
        "--extractor-checkpoint", dir.path().join("run/checkpoints/pointer-nz").to_str().unwrap()], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    std::fs::write(&cfg, CONFIG).unwrap();
    let elsewhere = dir.path().join("elsewhere");
    let out = rexzero(&["prepare", "--config", cfg.to_str().unwrap()], Some(&elsewhere));
    assert!(out.status.success());
    assert!(elsewhere.join("data/train.wz.jsonl").exists());
    assert!(!dir.path().join("run").exists());
    // an explicit flag wins over the environment
    let flagged = dir.path().join("flagged");
    let out = rexzero(
        &["prepare", "--config", cfg.to_str().unwrap(), "--out", flagged.to_str().unwrap()],
        Some(&elsewhere),
    );
    assert!(out.status.success());
    assert!(flagged.join("data/schema.json").exists());
}

#[test]
fn errors_are_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let err = error_json(&rexzero(&["prepare", "--config", missing.to_str().unwrap()], None));
    assert_eq!(err["error"], "missing_artifact");
    assert!(err["message"].as_str().unwrap().contains("missing.json"));

    let err = error_json(&rexzero(&["report", dir.path().to_str().unwrap()], None));
    assert_eq!(err["error"], "missing_artifact");
    assert!(err["message"].as_str().unwrap().contains("evaluations"));

    let err = error_json(&rexzero(&["evaluate", "--pipeline", "sideways"], None));
    assert_eq!(err["error"], "usage");

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"train_setting": "XZ"}"#).unwrap();
    let err = error_json(&rexzero(&["prepare", "--config", bad.to_str().unwrap()], None));
    assert_eq!(err["error"], "config");
}

#[test]
fn validate_stats_fails_on_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    let mut config: serde_json::Value = serde_json::from_str(CONFIG).unwrap();
    config["expected_stats"] = serde_json::json!({
        "synthetic": {"test": {"positive": 6, "tuples": 6, "zeros": 7}}
    });
    std::fs::write(&cfg, config.to_string()).unwrap();
    let cfg = cfg.to_str().unwrap();
    assert!(rexzero(&["prepare", "--config", cfg], None).status.success());
    let err = error_json(&rexzero(&["validate-stats", "--config", cfg], None));
    assert_eq!(err["error"], "contract");
    assert!(dir.path().join("run/data/stats_validation.csv").exists());
}

#[test]
fn synth_writes_raw_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = rexzero(&["synth", "--out", dir.path().to_str().unwrap(), "--seed", "3"], None);
    assert!(out.status.success());
    let source: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(source["name"], "synthetic");
    assert!(dir.path().join("synth/test.zeros.jsonl").exists());
}
