//! End-to-end checks of the `curate` binary: artifact layout, exit
//! codes, dependency errors, and hash-mixing protection.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn curate(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curate"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, seed: u64) -> String {
    let path = dir.join("run.toml");
    let out_dir = dir.join("artifacts");
    fs::write(
        &path,
        format!(
            r#"
seed = {seed}
out_dir = "{}"

[synth]
num_base_motions = 8
num_unpaired_motions = 8
steps_per_trajectory = 50

[select]
budget = 6

[mixture]
budget_per_robot_task = 6
source_samples_per_epoch = 32
num_epochs = 2

[eval]
budget = 6
seeds = [1]
"#,
            out_dir.display()
        ),
    )
    .unwrap();
    path.display().to_string()
}

#[test]
fn pipeline_writes_all_seven_artifacts() {
    let dir = tempdir().unwrap();
    let config = write_config(dir.path(), 3);
    let out = curate(&["--config", &config, "pipeline"], dir.path());
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let artifacts = dir.path().join("artifacts");
    for rel in [
        "pools/target.jsonl",
        "pools/source_paired.jsonl",
        "pools/source_unpaired.jsonl",
        "pools/heldout.jsonl",
        "pools/gt_pairs.jsonl",
        "features/target.jsonl",
        "pairings.jsonl",
        "coverage.jsonl",
        "selection.jsonl",
        "manifest.jsonl",
        "schedule.jsonl",
        "eval.jsonl",
    ] {
        assert!(artifacts.join(rel).exists(), "missing {rel}");
    }
    // Every artifact opens with a header record carrying the config hash.
    let manifest = fs::read_to_string(artifacts.join("manifest.jsonl")).unwrap();
    let mut lines = manifest.lines();
    let header: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(header["schema"], "header.v1");
    assert_eq!(header["kind"], "manifest");
    assert!(header["config_hash"].is_string());
    assert_eq!(header["seed"], 3);

    // The meta record embeds the full mixture config and provenance.
    let meta: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(meta["schema"], "manifest_meta.v1");
    assert_eq!(meta["config"]["batch_size"], 32);
    assert!(meta["provenance"]["target"].is_string());
    assert!(meta["provenance"]["paired"].is_string());
    assert!(meta["provenance"]["unpaired"].is_string());
}

#[test]
fn pair_without_featurize_names_the_missing_cache() {
    let dir = tempdir().unwrap();
    let config = write_config(dir.path(), 3);
    assert!(curate(&["--config", &config, "gen"], dir.path())
        .status
        .success());
    let out = curate(&["--config", &config, "pair"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("features/target.jsonl"), "stderr: {stderr}");
    assert!(stderr.contains("featurize"), "stderr: {stderr}");
}

#[test]
fn compose_is_byte_identical_across_runs() {
    let dir = tempdir().unwrap();
    let config = write_config(dir.path(), 5);
    for cmd in ["gen", "featurize", "pair"] {
        assert!(curate(&["--config", &config, cmd], dir.path()).status.success());
    }
    let artifacts = dir.path().join("artifacts");
    assert!(curate(&["--config", &config, "compose"], dir.path())
        .status
        .success());
    let manifest1 = fs::read(artifacts.join("manifest.jsonl")).unwrap();
    let schedule1 = fs::read(artifacts.join("schedule.jsonl")).unwrap();

    assert!(curate(&["--config", &config, "compose"], dir.path())
        .status
        .success());
    assert_eq!(manifest1, fs::read(artifacts.join("manifest.jsonl")).unwrap());
    assert_eq!(schedule1, fs::read(artifacts.join("schedule.jsonl")).unwrap());
}

#[test]
fn invalid_config_exits_one_naming_the_key() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[synth]\nnum_base_motions = 0\n").unwrap();
    let out = curate(&["--config", path.to_str().unwrap(), "gen"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("num_base_motions"), "stderr: {stderr}");

    fs::write(&path, "[pairing]\nmystery = true\n").unwrap();
    let out = curate(&["--config", path.to_str().unwrap(), "gen"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mystery"));
}

#[test]
fn unknown_strategy_is_a_usage_error() {
    let dir = tempdir().unwrap();
    let config = write_config(dir.path(), 3);
    let out = curate(
        &["--config", &config, "select", "--strategy", "psychic"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("psychic"));
}

#[test]
fn mixing_config_hashes_is_refused_unless_forced() {
    let dir = tempdir().unwrap();
    let config = write_config(dir.path(), 3);
    for cmd in ["gen", "featurize"] {
        assert!(curate(&["--config", &config, cmd], dir.path()).status.success());
    }
    // Same artifacts, different seed: downstream must refuse.
    let out = curate(&["--config", &config, "--seed", "99", "pair"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("config"), "stderr: {stderr}");

    let out = curate(
        &["--config", &config, "--seed", "99", "--force", "pair"],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn gen_summarizes_counts_on_stdout() {
    let dir = tempdir().unwrap();
    let config = write_config(dir.path(), 3);
    let out = curate(&["--config", &config, "gen"], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("pools/target.jsonl"));
    assert!(stdout.contains("ground-truth pairs"));
}
