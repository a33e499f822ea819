use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use srm_core::budget::{optimize_incremental, optimize_total, BudgetSpec, Grid, ParamModel};
use srm_core::data::{load_mnist, write_idx_images, write_idx_labels, Dataset};
use srm_core::experiment::{
    bench_compression, build_stream, prepare_distillation, run_distillation, run_experiment,
    sample_compare, AlgorithmKind, CompressionBench, CompressionRow, DistillArm, DistillExperiment,
    ExperimentConfig, SampleRow, DEFAULT_DATA_DIR, VERSION,
};
use srm_core::params::OptimizerKind;

#[derive(Parser)]
#[command(name = "srm", version = VERSION, about = "Continual learning with compressed episodic memories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train online or with experience replay over a task stream.
    TrainReplay(RunArgs),
    /// Train with gradient episodic memory over a task stream.
    TrainGem(RunArgs),
    /// Distill a trained teacher into a student from various sources.
    Distill(DistillArgs),
    /// Pick the code shape (c, l) that maximizes capacity under a bit budget.
    OptimizeCode(OptimizeArgs),
    /// Sweep discrete and continuous autoencoders; emit compression vs distortion.
    BenchCompression(BenchArgs),
    /// Compare buffer sampling with code sampling for one trained model.
    SampleCompare(SampleArgs),
    /// Write the task stream of a config as IDX files.
    MakeTasks(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    seed: u64,
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Directory holding the MNIST IDX files.
    #[arg(long, env = "SRM_DATA_DIR")]
    data_dir: Option<PathBuf>,
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long, env = "SRM_DATA_DIR", default_value = DEFAULT_DATA_DIR)]
    data_dir: PathBuf,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DistillArgs {
    #[arg(long)]
    seed: u64,
    /// Student seeds `seed..seed+seeds`.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Comma separated: real, real-x-teacher-y, subset:F, buffer, code, active:K, active-diverse:N.
    #[arg(long, default_value = "real,buffer", value_delimiter = ',')]
    sources: Vec<DistillArm>,
    #[arg(long, default_value = "10,100,1000,10000", value_delimiter = ',')]
    checkpoints: Vec<u64>,
    #[arg(long, default_value_t = 5000)]
    train_size: usize,
    #[arg(long, default_value_t = 1000)]
    test_size: usize,
    #[arg(long, default_value_t = 168)]
    c: usize,
    #[arg(long, default_value_t = 2)]
    l: usize,
    #[arg(long, default_value_t = 32)]
    filters: usize,
    #[arg(long, default_value_t = 10)]
    vae_epochs: usize,
    #[arg(long, default_value_t = 5)]
    teacher_epochs: usize,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct OptimizeArgs {
    /// Total storage budget in bits.
    #[arg(long)]
    budget_bits: f64,
    /// Number of examples the budget must cover.
    #[arg(long)]
    n: f64,
    /// Bits charged per code bit.
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    /// Also charge the autoencoder's parameters against the budget.
    #[arg(long)]
    total: bool,
    /// With --total, charge `scale·(c·l)²` bits instead of the exact weight count.
    #[arg(long)]
    param_scale: Option<f64>,
    #[arg(long, default_value_t = 200)]
    c_max: usize,
    #[arg(long, default_value_t = 64)]
    l_max: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    seed: u64,
    /// Comma separated `CxL` codes.
    #[arg(long, default_value = "10x20", value_delimiter = ',', value_parser = parse_code)]
    discrete: Vec<(usize, usize)>,
    /// Comma separated continuous bottleneck widths.
    #[arg(long, default_value = "2", value_delimiter = ',')]
    continuous: Vec<usize>,
    #[arg(long, default_value_t = 10_000)]
    images: usize,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "10x20", value_parser = parse_code)]
    code: (usize, usize),
    #[arg(long, default_value_t = 10_000)]
    images: usize,
    /// Samples drawn per strategy.
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 12)]
    epochs: usize,
    #[arg(long, default_value_t = 20)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value = "adam")]
    optimizer: OptimizerKind,
    #[arg(long, default_value_t = 32)]
    filters: usize,
}

fn parse_code(s: &str) -> Result<(usize, usize), String> {
    let (c, l) = s
        .split_once('x')
        .ok_or_else(|| format!("expected CxL, got {s:?}"))?;
    let c = c
        .trim()
        .parse()
        .map_err(|e| format!("bad c in {s:?}: {e}"))?;
    let l = l
        .trim()
        .parse()
        .map_err(|e| format!("bad l in {s:?}: {e}"))?;
    Ok((c, l))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::TrainReplay(args) => train(args, false),
        Command::TrainGem(args) => train(args, true),
        Command::Distill(args) => distill(args),
        Command::OptimizeCode(args) => optimize(args),
        Command::BenchCompression(args) => bench(args),
        Command::SampleCompare(args) => samples(args),
        Command::MakeTasks(args) => make_tasks(args),
    }
}

fn resolve_config(args: &RunArgs, algorithm: AlgorithmKind) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::new(algorithm, args.seed);
    if let Some(path) = &args.config {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_text(&text)
            .with_context(|| format!("in {}", path.display()))?;
    }
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.seed = args.seed;
    if cfg.data_dir.is_none() {
        cfg.data_dir.clone_from(&args.data_dir);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(args: RunArgs, gem: bool) -> Result<()> {
    let cfg = resolve_config(
        &args,
        if gem {
            AlgorithmKind::Gem
        } else {
            AlgorithmKind::Replay
        },
    )?;
    match (gem, cfg.algorithm) {
        (true, AlgorithmKind::Gem) | (false, AlgorithmKind::Online | AlgorithmKind::Replay) => {}
        (true, other) => bail!("train-gem cannot run algorithm {:?}", other.name()),
        (false, _) => bail!("use train-gem for the gem algorithm"),
    }
    info!(
        "{} with memory {} on {} ({} tasks), seed {}",
        cfg.algorithm.name(),
        cfg.memory_kind().name(),
        cfg.dataset.name(),
        cfg.tasks,
        cfg.seed
    );
    let (report, art) = run_experiment(&cfg, &args.out)?;
    for (t, a) in report.retention.per_task.iter().enumerate() {
        info!("task {t}: {a:.4}");
    }
    if cfg.algorithm == AlgorithmKind::Gem {
        info!(
            "projections {}, fallbacks {}",
            report.projections, report.fallbacks
        );
    }
    println!("mean retention {:.4}", report.retention.mean);
    println!(
        "artifacts in {}",
        art.checkpoint.parent().unwrap_or(&args.out).display()
    );
    Ok(())
}

fn load(dir: &Path) -> Result<(Dataset, Dataset)> {
    load_mnist(dir).with_context(|| {
        format!(
            "loading MNIST from {} (set SRM_DATA_DIR or --data-dir)",
            dir.display()
        )
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
            info!("wrote {}", path.display());
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn distill(args: DistillArgs) -> Result<()> {
    if args.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let (train, test) = load(&args.data.data_dir)?;
    if args.train_size > train.len() || args.test_size > test.len() {
        bail!(
            "asked for {} train / {} test images, have {} / {}",
            args.train_size,
            args.test_size,
            train.len(),
            test.len()
        );
    }
    let (train, test) = (train.take(args.train_size), test.take(args.test_size));
    let exp = DistillExperiment {
        teacher_epochs: args.teacher_epochs,
        c: args.c,
        l: args.l,
        filters: Some(args.filters),
        vae_epochs: args.vae_epochs,
        checkpoints: args.checkpoints,
        arms: args.sources,
        seeds: (args.seed..args.seed + args.seeds).collect(),
        ..DistillExperiment::default()
    };
    let setup = prepare_distillation(&exp, &train, &test, args.seed)?;
    info!("teacher accuracy {:.4}", setup.teacher_accuracy);
    if let Some(d) = setup.vae_distortion {
        info!("autoencoder distortion {d:.4}");
    }
    let mut csv = String::from("source,seed,episodes,accuracy\n");
    for (seed, curve) in run_distillation(&exp, &setup, &train, &test)? {
        for (episodes, acc) in &curve.points {
            csv.push_str(&format!("{},{seed},{episodes},{acc:.6}\n", curve.source));
        }
    }
    emit(args.data.out.as_deref(), &csv)
}

fn optimize(args: OptimizeArgs) -> Result<()> {
    let mut spec = BudgetSpec::new(args.budget_bits, args.n, args.rho)?;
    if let Some(scale) = args.param_scale {
        if !args.total {
            bail!("--param-scale only applies with --total");
        }
        spec = spec.with_param_model(ParamModel::Quadratic { scale });
    }
    let grid = Grid::new(args.c_max, args.l_max);
    let choice = if args.total {
        optimize_total(&spec, &grid)?
    } else {
        optimize_incremental(&spec, &grid)?
    };
    println!("c,l,code_bits,capacity");
    println!(
        "{},{},{},{:.6}",
        choice.c, choice.l, choice.k, choice.capacity
    );
    Ok(())
}

fn images(dir: &Path, n: usize) -> Result<Dataset> {
    let (train, test) = load(dir)?;
    let all = train.concat(&test)?;
    if n == 0 || n > all.len() {
        bail!("asked for {n} images, have {}", all.len());
    }
    Ok(all.take(n))
}

fn bench(args: BenchArgs) -> Result<()> {
    let data = images(&args.data.data_dir, args.images)?;
    let cfg = CompressionBench {
        discrete: args.discrete,
        continuous: args.continuous,
        filters: Some(args.train.filters),
        epochs: args.train.epochs,
        batch: args.train.batch,
        lr: args.train.lr,
        optimizer: args.train.optimizer,
        seed: args.seed,
    };
    let rows = bench_compression(&cfg, &data.images(), data.shape())?;
    let mut csv = format!("{}\n", CompressionRow::CSV_HEADER);
    for row in rows {
        csv.push_str(&row.csv());
        csv.push('\n');
    }
    emit(args.data.out.as_deref(), &csv)
}

fn samples(args: SampleArgs) -> Result<()> {
    let data = images(&args.data.data_dir, args.images)?;
    let (c, l) = args.code;
    let cfg = CompressionBench {
        filters: Some(args.train.filters),
        epochs: args.train.epochs,
        batch: args.train.batch,
        lr: args.train.lr,
        optimizer: args.train.optimizer,
        seed: args.seed,
        ..CompressionBench::default()
    };
    let (vae, distortion) = cfg.train_discrete(c, l, &data.images(), data.shape())?;
    info!("({c}, {l}) trained, distortion {distortion:.4}");
    let mut csv = format!("{}\n", SampleRow::CSV_HEADER);
    for row in sample_compare(&vae, &data, args.count, args.seed)? {
        csv.push_str(&row.csv(&format!("{c}x{l}")));
        csv.push('\n');
    }
    emit(args.data.out.as_deref(), &csv)
}

fn make_tasks(args: RunArgs) -> Result<()> {
    let cfg = resolve_config(&args, AlgorithmKind::Online)?;
    let stream = build_stream(&cfg)?;
    fs::create_dir_all(&args.out)?;
    let mut index = String::from("task,angle,classes,train,test\n");
    for task in &stream.tasks {
        let t = task.id;
        for (split, data) in [("train", &task.train), ("test", &task.test)] {
            fs::write(
                args.out.join(format!("task{t}-{split}-images-idx3-ubyte")),
                write_idx_images(data)?,
            )?;
            fs::write(
                args.out.join(format!("task{t}-{split}-labels-idx1-ubyte")),
                write_idx_labels(data.labels())?,
            )?;
        }
        let classes: Vec<String> = task.classes.iter().map(u16::to_string).collect();
        let angle = task.angle.map_or(String::new(), |a| format!("{a:.6}"));
        index.push_str(&format!(
            "{t},{angle},{},{},{}\n",
            classes.join(" "),
            task.train.len(),
            task.test.len()
        ));
    }
    fs::write(args.out.join("tasks.csv"), index)?;
    println!(
        "{} tasks written to {}",
        stream.tasks.len(),
        args.out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn code_shapes_parse() {
        assert_eq!(parse_code("10x20"), Ok((10, 20)));
        assert!(parse_code("10").is_err());
        assert!(parse_code("ax2").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
