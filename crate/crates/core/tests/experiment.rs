use srm_core::experiment::{
    resolved_capacity, run_experiment, AlgorithmKind, DatasetKind, ExperimentConfig, MemoryKind,
};
use srm_core::Error;

fn blobs(algorithm: &str, extra: &str) -> ExperimentConfig {
    let text = format!(
        "algorithm = {algorithm}\nseed = 4\ndataset = blobs\ntasks = 2\nper_task = 200\ntest_per_task = 100\n\
         heads = shared\nc = 8\nl = 4\nfilters = 4\nbatch = 5\nsteps = 1\n{extra}"
    );
    ExperimentConfig::parse(&text).unwrap()
}

#[test]
fn online_run_emits_no_buffer_files() {
    let dir = tempfile::tempdir().unwrap();
    let (report, art) = run_experiment(&blobs("online", ""), dir.path()).unwrap();
    assert!(report.storage.is_none());
    assert!(art.storage_csv.is_none());
    assert!(!art.checkpoint.join("buffer.srmb").exists());
    assert!(!art.checkpoint.join("vae.srmv").exists());
    assert!(art.checkpoint.join("model.srmf").exists());
    let config = std::fs::read_to_string(&art.config).unwrap();
    assert!(config.starts_with("# srm "));
    assert!(config.contains("algorithm = online"));
    assert!(config.contains("memory = none"));
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = blobs("replay", "svg = true\ncapacity = 20\n");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (_, art_a) = run_experiment(&cfg, a.path()).unwrap();
    let (_, art_b) = run_experiment(&cfg, b.path()).unwrap();
    for name in [
        "retention.csv",
        "curve.csv",
        "storage.csv",
        "curve.svg",
        "config.txt",
    ] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
    for name in ["model.srmf", "vae.srmv", "buffer.srmb", "learner.state"] {
        assert!(art_a.checkpoint.join(name).exists(), "{name}");
        assert_eq!(
            std::fs::read(art_a.checkpoint.join(name)).unwrap(),
            std::fs::read(art_b.checkpoint.join(name)).unwrap()
        );
    }
    let csv = std::fs::read_to_string(&art_a.retention_csv).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "task,accuracy");
    assert_eq!(lines.len(), 1 + 2 + 1);
    assert!(lines[3].starts_with("mean,"));
    let storage = std::fs::read_to_string(art_a.storage_csv.unwrap()).unwrap();
    assert!(storage.starts_with("metric,value\n"));
    assert!(storage.contains("capacity,20\n"));
    assert!(storage.contains("code_bits,16\n"));
}

#[test]
fn replay_beats_online_on_the_toy_stream() {
    let dir = tempfile::tempdir().unwrap();
    let (online, _) = run_experiment(&blobs("online", ""), dir.path().join("online")).unwrap();
    let (replay, _) = run_experiment(
        &blobs("replay", "memory = raw\ncapacity = 20\n"),
        dir.path().join("replay"),
    )
    .unwrap();
    assert!(
        replay.retention.mean > online.retention.mean,
        "replay {} online {}",
        replay.retention.mean,
        online.retention.mean
    );
}

#[test]
fn gem_run_reports_projections() {
    let dir = tempfile::tempdir().unwrap();
    let (report, _) =
        run_experiment(&blobs("gem", "memory = raw\ncapacity = 40\n"), dir.path()).unwrap();
    assert!(report.projections > 0);
    assert_eq!(report.capacity, 40);
}

#[test]
fn capacity_follows_the_budget() {
    let mut cfg = ExperimentConfig::new(AlgorithmKind::Replay, 0);
    cfg.budget = 100.0;
    assert_eq!(resolved_capacity(&cfg, 6272).unwrap(), 1504);
    cfg.memory = Some(MemoryKind::Raw);
    assert_eq!(resolved_capacity(&cfg, 6272).unwrap(), 100);
    cfg.capacity = Some(7);
    assert_eq!(resolved_capacity(&cfg, 6272).unwrap(), 7);
}

#[test]
fn missing_dataset_is_a_config_error() {
    let mut cfg = ExperimentConfig::new(AlgorithmKind::Online, 0);
    cfg.dataset = DatasetKind::Rotations;
    cfg.data_dir = Some("/nonexistent/mnist".into());
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        run_experiment(&cfg, dir.path()),
        Err(Error::Config(_))
    ));
}
