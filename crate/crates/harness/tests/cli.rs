//! The binary's argument handling and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn synthphys(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_synthphys"))
        .args(args)
        .current_dir(dir)
        .env_remove("SYNTHPHYS_WORKERS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.json");
    fs::write(
        &path,
        r#"{
  "dataset": { "count": 2, "seed": 5, "render": { "height": 16, "width": 16, "frames": 90 } },
  "train": { "epochs": 1, "window": 30, "batch_size": 2 },
  "output_dir": "out"
}"#,
    )
    .unwrap();
    path.display().to_string()
}

#[test]
fn missing_config_flag_is_a_config_error() {
    let t = TempDir::new().unwrap();
    let o = synthphys(&["gen"], t.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--config"));
}

#[test]
fn unreadable_or_invalid_configs_exit_2() {
    let t = TempDir::new().unwrap();
    assert_eq!(code(&synthphys(&["gen", "--config", "nope.json"], t.path())), 2);
    fs::write(t.path().join("bad.json"), "{ not json").unwrap();
    assert_eq!(code(&synthphys(&["gen", "--config", "bad.json"], t.path())), 2);
    fs::write(t.path().join("unknown.json"), r#"{"datasett": {}}"#).unwrap();
    assert_eq!(code(&synthphys(&["gen", "--config", "unknown.json"], t.path())), 2);
    fs::write(t.path().join("range.json"), r#"{"dataset": {"tone_range": [0.8, 0.2]}}"#).unwrap();
    assert_eq!(code(&synthphys(&["gen", "--config", "range.json"], t.path())), 2);
}

#[test]
fn unknown_subcommand_or_algorithm_exit_2() {
    let t = TempDir::new().unwrap();
    let cfg = tiny_config(t.path());
    assert_eq!(code(&synthphys(&["frobnicate", "--config", &cfg], t.path())), 2);
    let o = synthphys(&["baseline", "--algorithm", "ica", "--config", &cfg], t.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn zero_workers_is_rejected() {
    let t = TempDir::new().unwrap();
    let cfg = tiny_config(t.path());
    assert_eq!(code(&synthphys(&["gen", "--config", &cfg, "--workers", "0"], t.path())), 2);
}

#[test]
fn commands_needing_missing_inputs_exit_3() {
    let t = TempDir::new().unwrap();
    let cfg = tiny_config(t.path());
    assert_eq!(code(&synthphys(&["train", "--config", &cfg], t.path())), 3);
    assert_eq!(code(&synthphys(&["eval", "--config", &cfg], t.path())), 3);
    assert_eq!(code(&synthphys(&["baseline", "--algorithm", "pos", "--config", &cfg], t.path())), 3);
    assert_eq!(code(&synthphys(&["report", "--config", &cfg], t.path())), 3);
}

#[test]
fn gen_refuses_a_directory_with_foreign_files() {
    let t = TempDir::new().unwrap();
    let cfg = tiny_config(t.path());
    fs::create_dir_all(t.path().join("out/dataset")).unwrap();
    fs::write(t.path().join("out/dataset/notes.txt"), "mine").unwrap();
    assert_eq!(code(&synthphys(&["gen", "--config", &cfg], t.path())), 2);
    assert_eq!(fs::read_to_string(t.path().join("out/dataset/notes.txt")).unwrap(), "mine");
}

#[test]
fn full_pipeline_succeeds_and_env_sets_workers() {
    let t = TempDir::new().unwrap();
    let cfg = tiny_config(t.path());
    let run = |args: &[&str]| {
        let o = Command::new(env!("CARGO_BIN_EXE_synthphys"))
            .args(args)
            .args(["--config", &cfg])
            .current_dir(t.path())
            .env("SYNTHPHYS_WORKERS", "2")
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8_lossy(&o.stdout).into_owned()
    };
    assert!(run(&["gen"]).contains("2 clips"));
    assert!(run(&["train"]).contains("1 epochs"));
    assert!(run(&["eval"]).contains("pulse: MAE"));
    assert!(run(&["baseline", "--algorithm", "motion"]).contains("breathing: MAE"));
    assert!(run(&["report"]).contains("summary.md"));
    let md = fs::read_to_string(t.path().join("out/report/summary.md")).unwrap();
    assert!(md.contains("| neural |") && md.contains("| motion |"));

    // a bad env value is an argument error
    let o = Command::new(env!("CARGO_BIN_EXE_synthphys"))
        .args(["gen", "--config", &cfg])
        .current_dir(t.path())
        .env("SYNTHPHYS_WORKERS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn seed_and_out_flags_override_the_config() {
    let t = TempDir::new().unwrap();
    let cfg = tiny_config(t.path());
    for (out, seed) in [("a", "1"), ("b", "2")] {
        let o = synthphys(&["gen", "--config", &cfg, "--out", out, "--seed", seed], t.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = fs::read_to_string(t.path().join("a/dataset/manifest.json")).unwrap();
    let b = fs::read_to_string(t.path().join("b/dataset/manifest.json")).unwrap();
    assert_ne!(a, b);
    assert!(!t.path().join("out").exists());
}

#[test]
fn training_on_a_dataset_from_other_settings_exits_3() {
    let t = TempDir::new().unwrap();
    let cfg = tiny_config(t.path());
    assert_eq!(code(&synthphys(&["gen", "--config", &cfg, "--seed", "9"], t.path())), 0);
    assert_eq!(code(&synthphys(&["train", "--config", &cfg], t.path())), 3);
}
