//! Orchestration: builds task streams and learners from an
//! [`ExperimentConfig`], runs them, and writes CSV, storage and plot
//! artifacts. Also hosts the compression, sampling and distillation
//! benchmarks shared by the command line and the acceptance suite.

mod bench;
mod config;
mod svg;

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use bench::{
    bench_compression, prepare_distillation, run_distillation, sample_compare, CompressionBench,
    CompressionRow, DistillArm, DistillExperiment, DistillSetup, SampleRow,
};
pub use config::{AlgorithmKind, DatasetKind, ExperimentConfig, Heads, MemoryKind};
pub use svg::learning_curve_svg;

use crate::buffer::{EvictionPolicy, StorageReport};
use crate::classifier::{Classifier, Conditioning};
use crate::data::{
    data_dir, load_mnist, make_class_incremental, make_rotations, synth_blobs, BlobConfig,
    RotationConfig, TaskStream,
};
use crate::error::{Error, Result};
use crate::replay::{Algorithm, Learner, Memory, RetentionReport};
use crate::vae::{DiscreteVae, VaeConfig};

/// Crate version followed by the source revision it was built from.
pub const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (",
    env!("SRM_GIT_DESCRIBE"),
    ")"
);

/// Fallback location of the IDX files when neither the config nor the
/// environment names one.
pub const DEFAULT_DATA_DIR: &str = "data/mnist";

/// Loads or synthesizes the task stream a config describes.
pub fn build_stream(cfg: &ExperimentConfig) -> Result<TaskStream> {
    match cfg.dataset {
        DatasetKind::Blobs => {
            let per_class_tasks = cfg.blob_classes.div_ceil(cfg.tasks);
            let per_class = cfg.per_task.div_ceil(per_class_tasks);
            let test_per_class = cfg.test_per_task.div_ceil(per_class_tasks);
            let train = synth_blobs(&BlobConfig::new(
                cfg.blob_classes,
                cfg.blob_side,
                per_class,
                cfg.seed,
            ))?;
            let test = synth_blobs(&BlobConfig::new(
                cfg.blob_classes,
                cfg.blob_side,
                test_per_class,
                cfg.seed ^ 0x5eed,
            ))?;
            make_class_incremental(&train, &test, cfg.tasks)
        }
        DatasetKind::Rotations | DatasetKind::ClassIncremental => {
            let dir = cfg
                .data_dir
                .clone()
                .unwrap_or_else(|| data_dir(DEFAULT_DATA_DIR));
            let (train, test) = load_mnist(&dir).map_err(|e| match e {
                Error::Io(io) => {
                    Error::Config(format!("cannot read MNIST from {}: {io}", dir.display()))
                }
                other => other,
            })?;
            if cfg.dataset == DatasetKind::Rotations {
                make_rotations(
                    &train,
                    &test,
                    &RotationConfig {
                        tasks: cfg.tasks,
                        per_task: cfg.per_task,
                        test_per_task: cfg.test_per_task,
                        seed: cfg.seed,
                        angles: cfg.angles,
                    },
                )
            } else {
                let mut stream = make_class_incremental(&train, &test, cfg.tasks)?;
                for task in &mut stream.tasks {
                    task.train = task.train.take(cfg.per_task);
                    task.test = task.test.take(cfg.test_per_task);
                }
                Ok(stream)
            }
        }
    }
}

/// Buffer capacity: explicit, or the number of codes that fit in the
/// budget of `budget` uncompressed examples.
pub fn resolved_capacity(cfg: &ExperimentConfig, input_bits: usize) -> Result<usize> {
    if let Some(c) = cfg.capacity {
        return Ok(c);
    }
    let code_bits = match cfg.memory_kind() {
        MemoryKind::None => return Ok(0),
        MemoryKind::Raw => input_bits,
        MemoryKind::Recollection => crate::budget::code_bits(cfg.c, cfg.l)?,
    };
    Ok((cfg.budget * input_bits as f64 / code_bits as f64).floor() as usize)
}

/// Bits of one uncompressed example at 8 bits per value.
pub fn input_bits(shape: [usize; 3]) -> usize {
    shape.iter().product::<usize>() * 8
}

/// Builds the learner a config describes for `stream`.
pub fn build_learner(cfg: &ExperimentConfig, stream: &TaskStream) -> Result<Learner> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(3);
    let mut model = Classifier::mlp(stream.shape, stream.classes, &mut rng)?;
    if cfg.heads() == Heads::Task {
        model = model.with_conditioning(Conditioning::TaskHeads(
            stream.tasks.iter().map(|t| t.classes.clone()).collect(),
        ))?;
    }
    let capacity = resolved_capacity(cfg, input_bits(stream.shape))?;
    let policy = match cfg.algorithm {
        AlgorithmKind::Gem => EvictionPolicy::PerTaskRecent {
            tasks: stream.tasks.len(),
        },
        _ => EvictionPolicy::Reservoir,
    };
    let memory = match cfg.memory_kind() {
        MemoryKind::None => Memory::None,
        MemoryKind::Raw => Memory::raw(stream.shape, capacity, policy)?,
        MemoryKind::Recollection => {
            let mut vc =
                VaeConfig::new(cfg.c, cfg.l, stream.shape).with_optimizer(cfg.vae_optimizer);
            vc.filters = cfg.filters;
            vc.temperature = cfg.temperature;
            vc.deterministic_encoding = cfg.deterministic_encoding;
            Memory::recollection(DiscreteVae::new(vc, &mut rng)?, capacity, policy)?
        }
    };
    let algorithm = match cfg.algorithm {
        AlgorithmKind::Online => Algorithm::Online,
        AlgorithmKind::Replay => Algorithm::Replay,
        AlgorithmKind::Gem => Algorithm::Gem { margin: cfg.margin },
    };
    Learner::new(model, memory, cfg.replay_config(), algorithm)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub retention: RetentionReport,
    pub after_task: Vec<Vec<f64>>,
    pub storage: Option<StorageReport>,
    pub capacity: usize,
    pub projections: usize,
    pub fallbacks: usize,
}

/// Trains the configured learner on its stream and returns the report
/// without touching the file system.
pub fn run(cfg: &ExperimentConfig) -> Result<(ExperimentReport, Learner)> {
    cfg.validate()?;
    let stream = build_stream(cfg)?;
    run_on(cfg, &stream)
}

/// Like [`run`] with an already-built stream.
pub fn run_on(cfg: &ExperimentConfig, stream: &TaskStream) -> Result<(ExperimentReport, Learner)> {
    let mut learner = build_learner(cfg, stream)?;
    let outcome = learner.train_stream(stream)?;
    let storage = match learner.memory.buffer() {
        Some(b) => Some(b.storage_report(input_bits(stream.shape) as u64)?),
        None => None,
    };
    let report = ExperimentReport {
        retention: outcome.retention,
        after_task: outcome.after_task,
        storage,
        capacity: learner.memory.buffer().map_or(0, |b| b.capacity()),
        projections: outcome.projections,
        fallbacks: outcome.fallbacks,
    };
    Ok((report, learner))
}

/// Files written by [`run_experiment`].
#[derive(Clone, Debug, PartialEq)]
pub struct Artifacts {
    pub config: PathBuf,
    pub retention_csv: PathBuf,
    pub curve_csv: PathBuf,
    pub storage_csv: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub svg: Option<PathBuf>,
}

/// Runs `cfg` and writes its artifacts under `out`:
/// `config.txt`, `retention.csv`, `curve.csv`, `storage.csv` (when a
/// memory is kept), `checkpoint/` and optionally `curve.svg`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out: impl AsRef<Path>,
) -> Result<(ExperimentReport, Artifacts)> {
    let out = out.as_ref();
    let (report, learner) = run(cfg)?;
    fs::create_dir_all(out)?;
    let config = out.join("config.txt");
    fs::write(&config, format!("# srm {VERSION}\n{}", cfg.to_text()))?;

    let retention_csv = out.join("retention.csv");
    let mut csv = String::from("task,accuracy\n");
    for (t, a) in report.retention.per_task.iter().enumerate() {
        csv.push_str(&format!("{t},{a:.6}\n"));
    }
    csv.push_str(&format!("mean,{:.6}\n", report.retention.mean));
    fs::write(&retention_csv, csv)?;

    let curve_csv = out.join("curve.csv");
    let mut csv = String::from("after_task,task,accuracy\n");
    for (i, row) in report.after_task.iter().enumerate() {
        for (t, a) in row.iter().enumerate() {
            csv.push_str(&format!("{i},{t},{a:.6}\n"));
        }
    }
    fs::write(&curve_csv, csv)?;

    let storage_csv = match (&report.storage, learner.memory.buffer()) {
        (Some(s), Some(b)) => {
            let path = out.join("storage.csv");
            let g = b.geometry();
            let csv = format!(
                "metric,value\nversion,{VERSION}\nc,{}\nl,{}\ncode_bits,{}\ncapacity,{}\nitems,{}\nseen,{}\nbits_used,{}\neffective_examples,{:.6}\n",
                g.latents,
                g.categories,
                g.code_bits(),
                b.capacity(),
                s.items,
                b.seen(),
                s.bits_used,
                s.effective_examples
            );
            fs::write(&path, csv)?;
            Some(path)
        }
        _ => None,
    };

    let checkpoint = out.join("checkpoint");
    learner.save_checkpoint(&checkpoint)?;

    let svg = if cfg.svg {
        let path = out.join("curve.svg");
        fs::write(&path, learning_curve_svg(&report.after_task))?;
        Some(path)
    } else {
        None
    };
    Ok((
        report,
        Artifacts {
            config,
            retention_csv,
            curve_csv,
            storage_csv,
            checkpoint,
            svg,
        },
    ))
}
