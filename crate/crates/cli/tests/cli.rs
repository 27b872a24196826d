use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
algorithm = "boot_dqn"
total_steps = 300

[env]
name = "chain"
length = 5

[ensemble]
members = 2

[network]
hidden = [8]

[replay]
batch_size = 8

[eval]
period = 100
episodes = 1
final_window = 2
"#;

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ensemble-rl")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = run(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn train_report_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.toml"), CONFIG).unwrap();
    ok(&["train", "--config", "run.toml", "--seed", "0", "--seed", "1", "--out", "runs/boot", "--checkpoint-dir", "ckpt"], d);
    assert!(d.join("runs/boot/meta.json").exists());
    assert!(d.join("runs/boot/seed_1.csv").exists());
    assert!(d.join("ckpt/seed_0.ckpt").exists());

    let csv = ok(&["report", "runs", "--out", "summary.csv"], d);
    assert!(csv.starts_with("task,method,mode,seeds,"));
    assert_eq!(csv.lines().count(), 3);
    assert_eq!(std::fs::read_to_string(d.join("summary.csv")).unwrap(), csv);

    let ckpt_before = std::fs::read(d.join("ckpt/seed_0.ckpt")).unwrap();
    let a = ok(&["eval", "--checkpoint", "ckpt/seed_0.ckpt", "--episodes", "2"], d);
    let b = ok(&["eval", "--checkpoint", "ckpt/seed_0.ckpt", "--episodes", "2", "--mode", "indiv"], d);
    assert!(a.contains("mean return") && a.contains("vote entropy"));
    assert!(b.contains("mean return"));
    assert_eq!(std::fs::read(d.join("ckpt/seed_0.ckpt")).unwrap(), ckpt_before);
}

#[test]
fn resume_from_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.toml"), CONFIG).unwrap();
    ok(&["train", "--config", "run.toml", "--out", "full", "--checkpoint-dir", "ck"], d);
    // Resuming a finished run reproduces its log exactly.
    ok(&["train", "--config", "run.toml", "--out", "again", "--checkpoint-dir", "ck", "--resume"], d);
    assert_eq!(
        std::fs::read(d.join("full/seed_0.csv")).unwrap(),
        std::fs::read(d.join("again/seed_0.csv")).unwrap()
    );
    // A checkpoint from a different config is refused.
    std::fs::write(d.join("other.toml"), CONFIG.replace("total_steps = 300", "total_steps = 400")).unwrap();
    let out = run(&["train", "--config", "other.toml", "--out", "x", "--checkpoint-dir", "ck", "--resume"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("different config"));
}

#[test]
fn tandem_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.toml"), CONFIG).unwrap();
    ok(&["tandem", "--config", "run.toml", "--passive-pct", "25", "--out", "tandem"], d);
    let log = std::fs::read_to_string(d.join("tandem/seed_0.csv")).unwrap();
    assert!(log.contains(",active,") && log.contains(",passive,"));

    ok(&["sweep", "--config", "run.toml", "--grid", "ensemble.keep_prob=0.5,1.0", "--grid", "replay.batch_size=4", "--out", "sweep"], d);
    assert!(d.join("sweep/ensemble.keep_prob=0.5,replay.batch_size=4/seed_0.csv").exists());
    assert!(d.join("sweep/ensemble.keep_prob=1.0,replay.batch_size=4/seed_0.csv").exists());
}

#[test]
fn bad_config_fails_with_key_path() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.toml"), CONFIG.replace("members = 2", "members = 2\nbogus = 1")).unwrap();
    let out = run(&["train", "--config", "bad.toml"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
    let out = run(&["report", "nowhere"], d);
    assert!(!out.status.success());
}
