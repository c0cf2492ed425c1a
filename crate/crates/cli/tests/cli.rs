use std::path::Path;
use std::process::{Command, Output};

fn atl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atl"))
        .args(args)
        .current_dir(cwd)
        .env_remove("ATL_DATASET_ROOT")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const SMOKE: &str = r#"
output = "out"
seed = 1

[dataset]
kind = "synthetic"
synthetic = { n_clips = 20, n_classes = 2 }

[model]
architecture = "tiny"
init_mode = "random"

[train]
regime = "custom"
epochs = 1
"#;

#[test]
fn unknown_config_key_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMOKE}\n[model.extra]\nlearning = 1\n"));
    let out = atl(&["prep", "-c", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("extra"));
}

#[test]
fn bad_flag_value_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = atl(&["train", "--architecture", "vgg99"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn training_without_a_store_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let out = atl(&["train", "-c", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("atl prep"));
}

#[test]
fn prep_train_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    for cmd in [vec!["prep", "-c", &cfg], vec!["train", "-c", &cfg, "--fold", "2"]] {
        let out = atl(&cmd, dir.path());
        assert!(out.status.success(), "{cmd:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let echoed = std::fs::read_to_string(dir.path().join("out/resolved_config.toml")).unwrap();
    assert!(echoed.contains("fold = 2"), "{echoed}");
    assert!(dir.path().join("out/features/synthetic/store.json").is_file());
    let runs: Vec<_> = std::fs::read_dir(dir.path().join("out/runs")).unwrap().collect();
    assert_eq!(runs.len(), 1);

    let out = atl(&["report", "-o", "out", "--out", "tables"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let t1 = std::fs::read_to_string(dir.path().join("tables/table1_pretrained_vs_random.csv")).unwrap();
    assert!(t1.lines().any(|l| l.starts_with("Tiny,")), "{t1}");
    assert!(!dir.path().join("out/.atl.lock").exists());
}

#[test]
fn held_lock_blocks_a_second_writer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    std::fs::create_dir_all(dir.path().join("out")).unwrap();
    std::fs::write(dir.path().join("out/.atl.lock"), "12345").unwrap();
    let out = atl(&["prep", "-c", &cfg], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("12345"));
}
