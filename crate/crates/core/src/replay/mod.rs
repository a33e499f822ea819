//! Experience replay with a recollection module: self-stabilization of the
//! autoencoder on decoded recollections, a replay step for the predictive
//! model, then a buffer write.

mod memory;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use memory::{raw_geometry, Memory};

use crate::classifier::Classifier;
use crate::data::{StreamItem, TaskStream};
use crate::error::{Error, Result};
use crate::gem::ProjectionStatus;
use crate::tensor::{Real, Tensor};
use crate::vae::Autoencoder;

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayConfig {
    /// `α`, predictive-model learning rate.
    pub alpha: Real,
    /// `β`, recollection-module learning rate.
    pub beta: Real,
    /// `N`, stabilization steps per incoming example.
    pub steps: usize,
    /// Replay batch drawn from the buffer for each recollection set.
    pub batch: usize,
    pub seed: u64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            alpha: 0.1,
            beta: 0.1,
            steps: 3,
            batch: 25,
            seed: 0,
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.beta > 0.0) {
            return Err(Error::Config(format!(
                "learning rates must be > 0 (alpha={}, beta={})",
                self.alpha, self.beta
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("replay batch must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Algorithm {
    /// Plain SGD on the incoming example.
    Online,
    Replay,
    /// Gradient episodic memory with the given margin.
    Gem {
        margin: Real,
    },
}

/// One batch built for a stabilization step: decoded recollections followed
/// by the incoming example.
#[derive(Clone, Debug)]
pub struct ReplaySet {
    pub x: Tensor,
    pub labels: Vec<u16>,
    pub tasks: Vec<u16>,
    /// Decoder fingerprint at decode time, when a decoder was involved.
    pub decoder_fingerprint: Option<u64>,
}

/// Builds `max(N, 1)` recollection sets with the current decoder, then
/// runs `N` autoencoder steps, one per set, in order.
#[allow(clippy::too_many_arguments)]
pub fn srm_stabilize(
    x: &Tensor,
    label: u16,
    task: u16,
    memory: &mut Memory,
    steps: usize,
    beta: Real,
    batch: usize,
    sample_rng: &mut ChaCha8Rng,
    vae_rng: &mut ChaCha8Rng,
) -> Result<(Vec<ReplaySet>, Option<Real>)> {
    let shape = item_shape(x)?;
    let mut sets = Vec::with_capacity(steps.max(1));
    for _ in 0..steps.max(1) {
        let sample = match memory.buffer() {
            Some(buf) => buf.sample(batch, sample_rng).items,
            None => Vec::new(),
        };
        let recalled = memory.recall(&sample, shape)?;
        let mut data = recalled.into_data();
        data.extend_from_slice(x.data());
        let n = sample.len() + 1;
        let mut labels: Vec<u16> = sample.iter().map(|it| it.label).collect();
        let mut tasks: Vec<u16> = sample.iter().map(|it| it.task).collect();
        labels.push(label);
        tasks.push(task);
        sets.push(ReplaySet {
            x: Tensor::new(vec![n, shape[0], shape[1], shape[2]], data)?,
            labels,
            tasks,
            decoder_fingerprint: memory.vae().map(|v| v.decoder_fingerprint()),
        });
    }
    let mut last = None;
    if let Memory::Recollection { vae, .. } = memory {
        for set in sets.iter().take(steps) {
            last = Some(vae.train_batch(&set.x, beta, vae_rng)?);
        }
    }
    Ok((sets, last))
}

fn item_shape(x: &Tensor) -> Result<[usize; 3]> {
    match *x.shape() {
        [1, c, h, w] => Ok([c, h, w]),
        _ => Err(Error::shape("incoming example", x.shape(), &[1, 0, 0, 0])),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub model_loss: Real,
    pub vae_loss: Option<Real>,
    pub projection: Option<ProjectionStatus>,
}

/// Predictive model, memory and the random streams driving them.
#[derive(Clone, Debug)]
pub struct Learner {
    pub model: Classifier,
    pub memory: Memory,
    pub cfg: ReplayConfig,
    pub algorithm: Algorithm,
    pub(crate) sample_rng: ChaCha8Rng,
    pub(crate) vae_rng: ChaCha8Rng,
    observed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetentionReport {
    pub per_task: Vec<f64>,
    pub mean: f64,
}

impl RetentionReport {
    pub fn from_accuracies(per_task: Vec<f64>) -> Self {
        let mean = per_task.iter().sum::<f64>() / per_task.len().max(1) as f64;
        RetentionReport { per_task, mean }
    }
}

/// Test accuracy on every task of the stream, each presented with its own
/// task id.
pub fn retention(model: &Classifier, stream: &TaskStream) -> Result<RetentionReport> {
    let acc = stream
        .tasks
        .iter()
        .map(|t| model.accuracy(&t.test, t.id))
        .collect::<Result<Vec<_>>>()?;
    Ok(RetentionReport::from_accuracies(acc))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub retention: RetentionReport,
    /// Row `i`: accuracy on every task after finishing task `i`.
    pub after_task: Vec<Vec<f64>>,
    pub projections: usize,
    pub fallbacks: usize,
}

impl Learner {
    pub fn new(
        model: Classifier,
        memory: Memory,
        cfg: ReplayConfig,
        algorithm: Algorithm,
    ) -> Result<Self> {
        cfg.validate()?;
        if matches!(algorithm, Algorithm::Gem { margin } if !(margin >= 0.0)) {
            return Err(Error::Config("GEM margin must be >= 0".into()));
        }
        let mut sample_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        sample_rng.set_stream(1);
        let mut vae_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        vae_rng.set_stream(2);
        Ok(Learner {
            model,
            memory,
            cfg,
            algorithm,
            sample_rng,
            vae_rng,
            observed: 0,
        })
    }

    /// Examples consumed so far.
    pub fn observed(&self) -> u64 {
        self.observed
    }

    pub fn observe(&mut self, item: StreamItem<'_>, shape: [usize; 3]) -> Result<StepStats> {
        let x = Tensor::new(vec![1, shape[0], shape[1], shape[2]], item.x.to_vec())?;
        let stats = match self.algorithm {
            Algorithm::Online => {
                let loss =
                    self.model
                        .train_step(&x, &[item.task], &[item.label], self.cfg.alpha)?;
                StepStats {
                    model_loss: loss,
                    ..StepStats::default()
                }
            }
            Algorithm::Replay => self.observe_replay(&x, item)?,
            Algorithm::Gem { margin } => crate::gem::observe_gem(self, &x, item, margin)?,
        };
        self.observed += 1;
        Ok(stats)
    }

    fn observe_replay(&mut self, x: &Tensor, item: StreamItem<'_>) -> Result<StepStats> {
        let steps = match self.memory {
            Memory::Recollection { .. } => self.cfg.steps,
            _ => 0,
        };
        let (sets, vae_loss) = srm_stabilize(
            x,
            item.label,
            item.task,
            &mut self.memory,
            steps,
            self.cfg.beta,
            self.cfg.batch,
            &mut self.sample_rng,
            &mut self.vae_rng,
        )?;
        let first = &sets[0];
        let model_loss =
            self.model
                .train_step(&first.x, &first.tasks, &first.labels, self.cfg.alpha)?;
        self.memory
            .store(x, item.label, item.task, &mut self.sample_rng)?;
        Ok(StepStats {
            model_loss,
            vae_loss,
            projection: None,
        })
    }

    /// Consumes `stream` from the current position to the end.
    pub fn train_stream(&mut self, stream: &TaskStream) -> Result<TrainOutcome> {
        self.train_stream_until(stream, u64::MAX)
    }

    /// Like [`train_stream`](Self::train_stream) but stops once `limit`
    /// examples have been observed in total.
    pub fn train_stream_until(&mut self, stream: &TaskStream, limit: u64) -> Result<TrainOutcome> {
        if stream.total_examples() == 0 {
            return Err(Error::invalid("empty task stream"));
        }
        let mut after_task = Vec::new();
        let (mut projections, mut fallbacks) = (0, 0);
        let mut start = 0u64;
        for task in &stream.tasks {
            let end = start + task.train.len() as u64;
            for i in 0..task.train.len() {
                let pos = start + i as u64;
                if pos < self.observed {
                    continue;
                }
                if self.observed >= limit {
                    return Ok(TrainOutcome {
                        retention: retention(&self.model, stream)?,
                        after_task,
                        projections,
                        fallbacks,
                    });
                }
                let item = StreamItem {
                    x: task.train.image(i),
                    task: task.id,
                    label: task.train.label(i),
                };
                let stats = self.observe(item, stream.shape)?;
                match stats.projection {
                    Some(ProjectionStatus::Projected) => projections += 1,
                    Some(ProjectionStatus::Fallback) => fallbacks += 1,
                    _ => {}
                }
            }
            if self.observed >= end && self.observed > start {
                after_task.push(retention(&self.model, stream)?.per_task);
            }
            start = end;
        }
        Ok(TrainOutcome {
            retention: retention(&self.model, stream)?,
            after_task,
            projections,
            fallbacks,
        })
    }
}

const STATE_FILE: &str = "learner.state";

impl Learner {
    /// Writes model, autoencoder, buffer and stream position under `dir`.
    pub fn save_checkpoint(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.model.save_params(dir.join("model.srmf"))?;
        if let Memory::Recollection { vae, .. } = &self.memory {
            vae.save(dir.join("vae.srmv"))?;
        }
        if let Some(buf) = self.memory.buffer() {
            buf.save(dir.join("buffer.srmb"))?;
        }
        let state = format!(
            "observed={}\nsample_word_pos={}\nvae_word_pos={}\n",
            self.observed,
            self.sample_rng.get_word_pos(),
            self.vae_rng.get_word_pos()
        );
        std::fs::write(dir.join(STATE_FILE), state)?;
        Ok(())
    }

    /// Restores a checkpoint written by [`save_checkpoint`](Self::save_checkpoint)
    /// into a learner built with the same configuration.
    pub fn load_checkpoint(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.model.load_params(dir.join("model.srmf"))?;
        match &mut self.memory {
            Memory::Recollection { vae, buffer } => {
                *vae = crate::vae::DiscreteVae::load(dir.join("vae.srmv"))?;
                *buffer = crate::buffer::IndexBuffer::load(dir.join("buffer.srmb"))?;
            }
            Memory::Raw { buffer, .. } => {
                *buffer = crate::buffer::IndexBuffer::load(dir.join("buffer.srmb"))?
            }
            Memory::None => {}
        }
        let text = std::fs::read_to_string(dir.join(STATE_FILE))?;
        let mut fields = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad state line {line:?}")))?;
            fields.insert(k.trim(), v.trim());
        }
        let get = |k: &str| -> Result<u128> {
            fields
                .get(k)
                .ok_or_else(|| Error::Format(format!("state file lacks {k}")))?
                .parse()
                .map_err(|e| Error::Format(format!("{k}: {e}")))
        };
        self.observed = get("observed")? as u64;
        self.sample_rng.set_word_pos(get("sample_word_pos")?);
        self.vae_rng.set_word_pos(get("vae_word_pos")?);
        Ok(())
    }
}
