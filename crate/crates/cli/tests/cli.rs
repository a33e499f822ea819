use std::path::Path;
use std::process::{Command, Output};

fn srm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("SRM_DATA_DIR")
        .output()
        .expect("spawn srm")
}

fn stdout(o: &Output) -> String {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

const BLOBS: &str = "dataset = blobs\ntasks = 2\nper_task = 100\ntest_per_task = 50\nc = 8\nl = 4\nfilters = 4\nbatch = 5\nsteps = 1\ncapacity = 20\n";

fn write_config(dir: &Path) -> String {
    let path = dir.join("run.cfg");
    std::fs::write(&path, BLOBS).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn optimize_code_picks_the_known_shape() {
    let out = stdout(&srm(&["optimize-code", "--budget-bits", "417", "--n", "1"]));
    assert_eq!(out, "c,l,code_bits,capacity\n139,8,417,417.000000\n");
}

#[test]
fn optimize_code_total_mode_is_tighter() {
    let out = stdout(&srm(&[
        "optimize-code",
        "--budget-bits",
        "1000",
        "--n",
        "1",
        "--total",
        "--param-scale",
        "0.01",
    ]));
    let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
    let (c, l): (f64, f64) = (row[0].parse().unwrap(), row[1].parse().unwrap());
    let k: f64 = row[2].parse().unwrap();
    assert!(k + 0.01 * (c * l).powi(2) <= 1000.0);
}

#[test]
fn training_requires_a_seed() {
    let o = srm(&["train-replay"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--seed"));
}

#[test]
fn train_replay_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("run");
    let out = stdout(&srm(&[
        "train-replay",
        "--seed",
        "3",
        "--config",
        &cfg,
        "--set",
        "svg=true",
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    assert!(out.starts_with("mean retention "));
    for name in [
        "config.txt",
        "retention.csv",
        "curve.csv",
        "storage.csv",
        "curve.svg",
        "checkpoint/buffer.srmb",
    ] {
        assert!(out_dir.join(name).exists(), "{name}");
    }
    let config = std::fs::read_to_string(out_dir.join("config.txt")).unwrap();
    assert!(config.contains("seed = 3"));
    assert!(config.contains("algorithm = replay"));
}

#[test]
fn train_gem_refuses_other_algorithms() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let o = srm(&[
        "train-gem",
        "--seed",
        "1",
        "--config",
        &cfg,
        "--set",
        "algorithm=replay",
    ]);
    assert!(!o.status.success());
    let o = srm(&[
        "train-replay",
        "--seed",
        "1",
        "--config",
        &cfg,
        "--set",
        "algorithm=gem",
    ]);
    assert!(!o.status.success());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let o = srm(&[
        "train-replay",
        "--seed",
        "1",
        "--config",
        &cfg,
        "--set",
        "colour=red",
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
}

#[test]
fn missing_dataset_names_the_directory() {
    let o = srm(&[
        "train-replay",
        "--seed",
        "1",
        "--data-dir",
        "/nonexistent/mnist",
        "--out",
        "/tmp/unused-srm-run",
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/mnist"));
}

#[test]
fn make_tasks_writes_idx_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("tasks");
    stdout(&srm(&[
        "make-tasks",
        "--seed",
        "2",
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    let index = std::fs::read_to_string(out_dir.join("tasks.csv")).unwrap();
    let lines: Vec<&str> = index.lines().collect();
    assert_eq!(lines[0], "task,angle,classes,train,test");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,,0 1,"));
    let images = std::fs::read(out_dir.join("task1-train-images-idx3-ubyte")).unwrap();
    assert_eq!(&images[..4], &[0, 0, 8, 3]);
    let labels = std::fs::read(out_dir.join("task1-test-labels-idx1-ubyte")).unwrap();
    assert_eq!(&labels[..4], &[0, 0, 8, 1]);
}

#[test]
fn version_mentions_the_revision() {
    let out = stdout(&srm(&["--version"]));
    assert!(out.starts_with("srm 0.1.0 ("));
}
