use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::data::AngleMode;
use crate::error::{Error, Result};
use crate::params::OptimizerKind;
use crate::replay::ReplayConfig;
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlgorithmKind {
    Online,
    Replay,
    Gem,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MemoryKind {
    None,
    /// Real examples at 8 bits per pixel.
    Raw,
    Recollection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    /// Rotated MNIST digits, one angle per task.
    Rotations,
    /// MNIST classes split contiguously across tasks.
    ClassIncremental,
    /// Synthetic Gaussian blobs split by class; needs no files.
    Blobs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Heads {
    Shared,
    /// One output group per task.
    Task,
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, { $($name:literal => $variant:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    _ => Err(Error::Config(format!(
                        concat!("unknown ", $what, " {:?}; expected one of: {}"),
                        s,
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }

        impl $ty {
            pub fn name(self) -> &'static str {
                $(if self == $variant { return $name; })+
                unreachable!()
            }
        }
    };
}

keyword_enum!(AlgorithmKind, "algorithm", {
    "online" => AlgorithmKind::Online,
    "replay" => AlgorithmKind::Replay,
    "gem" => AlgorithmKind::Gem,
});
keyword_enum!(MemoryKind, "memory", {
    "none" => MemoryKind::None,
    "raw" => MemoryKind::Raw,
    "recollection" => MemoryKind::Recollection,
});
keyword_enum!(DatasetKind, "dataset", {
    "rotations" => DatasetKind::Rotations,
    "class-incremental" => DatasetKind::ClassIncremental,
    "blobs" => DatasetKind::Blobs,
});
keyword_enum!(Heads, "heads", {
    "shared" => Heads::Shared,
    "task" => Heads::Task,
});

/// A continual-learning run described by flat `key = value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub algorithm: AlgorithmKind,
    /// Defaults to recollections for replay and GEM and to none for online.
    pub memory: Option<MemoryKind>,
    pub dataset: DatasetKind,
    /// Directory holding the IDX files; the environment fallback applies when unset.
    pub data_dir: Option<PathBuf>,
    pub tasks: usize,
    /// Training examples per task; blobs round up to a whole number per class.
    pub per_task: usize,
    pub test_per_task: usize,
    pub angles: AngleMode,
    /// Class count for the blob dataset.
    pub blob_classes: usize,
    pub blob_side: usize,
    pub heads: Option<Heads>,
    pub c: usize,
    pub l: usize,
    /// Buffer capacity `L`; derived from `budget` when unset.
    pub capacity: Option<usize>,
    /// Storage budget in effective (uncompressed) examples.
    pub budget: f64,
    pub filters: Option<usize>,
    pub temperature: Real,
    pub vae_optimizer: OptimizerKind,
    pub deterministic_encoding: bool,
    pub alpha: Real,
    pub beta: Real,
    pub steps: usize,
    pub batch: usize,
    pub margin: Real,
    pub seed: u64,
    pub svg: bool,
}

const REQUIRED: [&str; 2] = ["algorithm", "seed"];

impl ExperimentConfig {
    /// Defaults for everything but the required keys.
    pub fn new(algorithm: AlgorithmKind, seed: u64) -> Self {
        let replay = ReplayConfig::default();
        ExperimentConfig {
            algorithm,
            memory: None,
            dataset: DatasetKind::Rotations,
            data_dir: None,
            tasks: 5,
            per_task: 500,
            test_per_task: 500,
            angles: AngleMode::Random,
            blob_classes: 4,
            blob_side: 8,
            heads: None,
            c: 139,
            l: 8,
            capacity: None,
            budget: 100.0,
            filters: None,
            temperature: 1.0,
            vae_optimizer: OptimizerKind::Sgd,
            deterministic_encoding: false,
            alpha: replay.alpha,
            beta: replay.beta,
            steps: replay.steps,
            batch: replay.batch,
            margin: 0.0,
            seed,
            svg: false,
        }
    }

    /// Parses `key = value` lines; `#` starts a comment. Unknown, duplicate
    /// or missing required keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let get = |key: &str| {
            pairs
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Config(format!("missing required key {key:?}")))
        };
        let algorithm = get(REQUIRED[0])?.parse()?;
        let seed = parse_value("seed", get(REQUIRED[1])?)?;
        let mut cfg = ExperimentConfig::new(algorithm, seed);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies the keys of a config text on top of `self`; nothing is required.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_pairs(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "algorithm" => self.algorithm = v.parse()?,
            "memory" => self.memory = Some(v.parse()?),
            "dataset" => self.dataset = v.parse()?,
            "data_dir" => self.data_dir = Some(PathBuf::from(v)),
            "tasks" => self.tasks = parse_value(key, v)?,
            "per_task" => self.per_task = parse_value(key, v)?,
            "test_per_task" => self.test_per_task = parse_value(key, v)?,
            "angles" => {
                self.angles = match v {
                    "random" => AngleMode::Random,
                    "even" => AngleMode::Even,
                    _ => {
                        return Err(Error::Config(format!(
                            "unknown angles {v:?}; expected random or even"
                        )))
                    }
                }
            }
            "blob_classes" => self.blob_classes = parse_value(key, v)?,
            "blob_side" => self.blob_side = parse_value(key, v)?,
            "heads" => self.heads = Some(v.parse()?),
            "c" => self.c = parse_value(key, v)?,
            "l" => self.l = parse_value(key, v)?,
            "capacity" => self.capacity = Some(parse_value(key, v)?),
            "budget" => self.budget = parse_value(key, v)?,
            "filters" => self.filters = Some(parse_value(key, v)?),
            "temperature" => self.temperature = parse_value(key, v)?,
            "vae_optimizer" => self.vae_optimizer = v.parse()?,
            "deterministic_encoding" => self.deterministic_encoding = parse_value(key, v)?,
            "alpha" => self.alpha = parse_value(key, v)?,
            "beta" => self.beta = parse_value(key, v)?,
            "steps" => self.steps = parse_value(key, v)?,
            "batch" => self.batch = parse_value(key, v)?,
            "margin" => self.margin = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "svg" => self.svg = parse_value(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks == 0 || self.per_task == 0 || self.test_per_task == 0 {
            return Err(Error::Config(
                "tasks, per_task and test_per_task must be >= 1".into(),
            ));
        }
        if self.algorithm == AlgorithmKind::Online
            && !matches!(self.memory, None | Some(MemoryKind::None))
        {
            return Err(Error::Config("online learning keeps no memory".into()));
        }
        if self.algorithm != AlgorithmKind::Online && self.memory_kind() == MemoryKind::None {
            return Err(Error::Config(format!(
                "{} needs a memory",
                self.algorithm.name()
            )));
        }
        if !(self.budget >= 0.0) || !self.budget.is_finite() {
            return Err(Error::Config(format!(
                "budget must be a finite value >= 0, got {}",
                self.budget
            )));
        }
        if self.margin < 0.0 || !self.margin.is_finite() {
            return Err(Error::Config(format!(
                "margin must be >= 0, got {}",
                self.margin
            )));
        }
        if self.dataset == DatasetKind::Blobs
            && (self.blob_classes < self.tasks || self.blob_side < 2)
        {
            return Err(Error::Config(
                "blobs need blob_classes >= tasks and blob_side >= 2".into(),
            ));
        }
        self.replay_config().validate()
    }

    pub fn memory_kind(&self) -> MemoryKind {
        self.memory.unwrap_or(match self.algorithm {
            AlgorithmKind::Online => MemoryKind::None,
            _ => MemoryKind::Recollection,
        })
    }

    pub fn heads(&self) -> Heads {
        self.heads.unwrap_or(match self.dataset {
            DatasetKind::Rotations => Heads::Shared,
            _ => Heads::Task,
        })
    }

    pub fn replay_config(&self) -> ReplayConfig {
        ReplayConfig {
            alpha: self.alpha,
            beta: self.beta,
            steps: self.steps,
            batch: self.batch,
            seed: self.seed,
        }
    }

    /// Every key with its resolved value, one per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<String>| v.unwrap_or_else(|| "auto".into());
        let angles = match self.angles {
            AngleMode::Random => "random",
            AngleMode::Even => "even",
        };
        let rows: Vec<(&str, String)> = vec![
            ("algorithm", self.algorithm.name().into()),
            ("memory", self.memory_kind().name().into()),
            ("dataset", self.dataset.name().into()),
            (
                "data_dir",
                opt(self.data_dir.as_ref().map(|p| p.display().to_string())),
            ),
            ("tasks", self.tasks.to_string()),
            ("per_task", self.per_task.to_string()),
            ("test_per_task", self.test_per_task.to_string()),
            ("angles", angles.into()),
            ("blob_classes", self.blob_classes.to_string()),
            ("blob_side", self.blob_side.to_string()),
            ("heads", self.heads().name().into()),
            ("c", self.c.to_string()),
            ("l", self.l.to_string()),
            ("capacity", opt(self.capacity.map(|v| v.to_string()))),
            ("budget", self.budget.to_string()),
            ("filters", opt(self.filters.map(|v| v.to_string()))),
            ("temperature", self.temperature.to_string()),
            ("vae_optimizer", self.vae_optimizer.name().into()),
            (
                "deterministic_encoding",
                self.deterministic_encoding.to_string(),
            ),
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("steps", self.steps.to_string()),
            ("batch", self.batch.to_string()),
            ("margin", self.margin.to_string()),
            ("seed", self.seed.to_string()),
            ("svg", self.svg.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    let mut seen = BTreeSet::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {}: expected key = value, got {line:?}",
                no + 1
            ))
        })?;
        let (k, v) = (k.trim(), v.trim());
        if !seen.insert(k.to_string()) {
            return Err(Error::Config(format!(
                "line {}: duplicate key {k:?}",
                no + 1
            )));
        }
        pairs.push((k.to_string(), v.to_string()));
    }
    Ok(pairs)
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| Error::Config(format!("bad value {v:?} for {key}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_blank_lines_ignored() {
        let cfg =
            ExperimentConfig::parse("# run\nalgorithm = replay\n\nseed=3 # trailing\nc = 10\n")
                .unwrap();
        assert_eq!(cfg.algorithm, AlgorithmKind::Replay);
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.c, 10);
        assert_eq!(cfg.memory_kind(), MemoryKind::Recollection);
    }

    #[test]
    fn unknown_duplicate_and_missing_keys_rejected() {
        assert!(ExperimentConfig::parse("algorithm = replay\nseed = 1\ncolour = red\n").is_err());
        assert!(ExperimentConfig::parse("algorithm = replay\nseed = 1\nseed = 2\n").is_err());
        assert!(ExperimentConfig::parse("algorithm = replay\n").is_err());
        assert!(ExperimentConfig::parse("seed = 1\n").is_err());
        assert!(ExperimentConfig::parse("algorithm = replay\nseed = x\n").is_err());
    }

    #[test]
    fn resolved_text_parses_back() {
        let mut cfg = ExperimentConfig::new(AlgorithmKind::Gem, 9);
        cfg.capacity = Some(40);
        cfg.margin = 0.5;
        let text = cfg.to_text().replace("= auto", "= __auto__");
        let text: String = text
            .lines()
            .filter(|l| !l.contains("__auto__"))
            .map(|l| format!("{l}\n"))
            .collect();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back.to_text(), cfg.to_text());
    }

    #[test]
    fn online_with_memory_rejected() {
        assert!(ExperimentConfig::parse("algorithm = online\nseed = 1\nmemory = raw\n").is_err());
        assert!(ExperimentConfig::parse("algorithm = replay\nseed = 1\nmemory = none\n").is_err());
    }
}
