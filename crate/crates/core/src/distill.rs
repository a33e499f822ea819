//! Teacher to student transfer through real data, teacher-labelled data or
//! decoded recollections, one example per episode.

use rand::seq::{index::sample, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::buffer::{BufferItem, IndexBuffer};
use crate::classifier::Classifier;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::sampling::{active_diverse_select, active_select, code_sample, recollect};
use crate::tensor::{Real, Tensor};
use crate::vae::DiscreteVae;

/// Episode counts at which the student is evaluated.
pub const DEFAULT_CHECKPOINTS: [u64; 4] = [10, 100, 1_000, 10_000];

/// How a recollection is drawn for each episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RecollectionStrategy {
    /// Decode a uniformly drawn buffer entry.
    Buffer,
    /// Decode a code with every variable uniform over its categories.
    Code,
    /// Decode `k` buffer entries and keep the hardest for the student.
    Active { k: usize },
    /// Decode `n` buffer entries, keep a diverse subset, then the hardest.
    ActiveDiverse { n: usize },
}

impl RecollectionStrategy {
    pub fn name(&self) -> String {
        match self {
            RecollectionStrategy::Buffer => "buffer".into(),
            RecollectionStrategy::Code => "code".into(),
            RecollectionStrategy::Active { k } => format!("active{k}"),
            RecollectionStrategy::ActiveDiverse { n } => format!("active-diverse{n}"),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum DistillSource<'a> {
    /// Training inputs with their ground-truth labels.
    RealData,
    /// Training inputs labelled by the teacher.
    RealXTeacherY,
    /// A fixed random `fraction` of the training inputs, labelled by the teacher.
    Subset { fraction: f64 },
    /// Decoded recollections labelled by the teacher.
    Recollections {
        vae: &'a DiscreteVae,
        buffer: &'a IndexBuffer,
        strategy: RecollectionStrategy,
    },
}

impl DistillSource<'_> {
    pub fn name(&self) -> String {
        match self {
            DistillSource::RealData => "real".into(),
            DistillSource::RealXTeacherY => "real-x-teacher-y".into(),
            DistillSource::Subset { fraction } => format!("subset{fraction}"),
            DistillSource::Recollections { strategy, .. } => {
                format!("recollections-{}", strategy.name())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistillConfig {
    /// Ascending episode counts at which test accuracy is recorded.
    pub checkpoints: Vec<u64>,
    pub lr: Real,
    /// Fraction of the training-set pool examined per diverse selection step.
    pub msss_fraction: f64,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            checkpoints: DEFAULT_CHECKPOINTS.to_vec(),
            lr: 0.01,
            msss_fraction: 1.0,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.checkpoints.is_empty() {
            return Err(Error::Config("need at least one checkpoint".into()));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) || self.checkpoints[0] == 0 {
            return Err(Error::Config(format!(
                "checkpoints must be positive and strictly ascending: {:?}",
                self.checkpoints
            )));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Test accuracy of the student at each checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct DistillCurve {
    pub source: String,
    pub points: Vec<(u64, f64)>,
}

impl DistillCurve {
    pub fn final_accuracy(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.1)
    }
}

/// Shuffled minibatch training; returns the mean loss of the last epoch.
pub fn teacher_train<R: Rng + ?Sized>(
    teacher: &mut Classifier,
    train: &Dataset,
    epochs: usize,
    batch: usize,
    lr: Real,
    rng: &mut R,
) -> Result<Real> {
    if train.is_empty() {
        return Err(Error::invalid("teacher_train needs a nonempty dataset"));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut last = Real::NAN;
    for _ in 0..epochs {
        order.shuffle(rng);
        let (mut sum, mut n) = (0.0, 0);
        for chunk in order.chunks(batch.max(1)) {
            let labels: Vec<u16> = chunk.iter().map(|&i| train.label(i)).collect();
            sum += teacher.train_step(&train.batch(chunk), &vec![0; chunk.len()], &labels, lr)?;
            n += 1;
        }
        last = sum / n as Real;
    }
    Ok(last)
}

/// Encodes every example of `data` into a buffer large enough to hold them all.
pub fn fill_buffer<R: Rng + ?Sized>(
    vae: &DiscreteVae,
    data: &Dataset,
    rng: &mut R,
) -> Result<IndexBuffer> {
    let mut buffer = IndexBuffer::reservoir(vae.geometry(), data.len())?;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(100) {
        let codes = vae.compress(&data.batch(chunk), rng)?;
        for (code, &i) in codes.into_iter().zip(chunk) {
            buffer.insert(
                BufferItem {
                    code,
                    label: data.label(i),
                    task: 0,
                },
                rng,
            )?;
        }
    }
    Ok(buffer)
}

/// Trains `student` one example per episode from `source` and records test
/// accuracy at each checkpoint.
pub fn distill(
    teacher: &Classifier,
    student: &mut Classifier,
    source: DistillSource<'_>,
    train: &Dataset,
    test: &Dataset,
    cfg: &DistillConfig,
) -> Result<DistillCurve> {
    cfg.validate()?;
    if test.is_empty() {
        return Err(Error::invalid("distill needs a nonempty test set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pool: Vec<usize> = match source {
        DistillSource::RealData | DistillSource::RealXTeacherY => (0..train.len()).collect(),
        DistillSource::Subset { fraction } => {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::Config(format!(
                    "subset fraction must lie in (0, 1], got {fraction}"
                )));
            }
            let mut pick = ChaCha8Rng::seed_from_u64(cfg.seed);
            pick.set_stream(1);
            let size =
                ((fraction * train.len() as f64).round() as usize).clamp(1, train.len().max(1));
            if train.is_empty() {
                Vec::new()
            } else {
                sample(&mut pick, train.len(), size).into_vec()
            }
        }
        DistillSource::Recollections { vae, buffer, .. } => {
            if buffer.is_empty() {
                return Err(Error::invalid("distill from an empty buffer"));
            }
            if vae.geometry() != buffer.geometry() {
                return Err(Error::invalid(
                    "buffer and autoencoder code geometries differ",
                ));
            }
            Vec::new()
        }
    };
    if pool.is_empty() && !matches!(source, DistillSource::Recollections { .. }) {
        return Err(Error::invalid("distill needs a nonempty training source"));
    }
    let teacher_targets =
        |x: &Tensor, _: &[BufferItem]| teacher.probabilities(x, &vec![0; x.shape()[0]]);
    let last = *cfg.checkpoints.last().expect("validated");
    let mut points = Vec::with_capacity(cfg.checkpoints.len());
    let mut next = 0;
    for episode in 1..=last {
        match source {
            DistillSource::RealData => {
                let i = pool[rng.random_range(0..pool.len())];
                student.train_step(&train.batch(&[i]), &[0], &[train.label(i)], cfg.lr)?;
            }
            DistillSource::RealXTeacherY | DistillSource::Subset { .. } => {
                let i = pool[rng.random_range(0..pool.len())];
                let x = train.batch(&[i]);
                let y = teacher.probabilities(&x, &[0])?;
                student.train_soft(&x, &[0], &y, cfg.lr)?;
            }
            DistillSource::Recollections {
                vae,
                buffer,
                strategy,
            } => {
                let x = match strategy {
                    RecollectionStrategy::Buffer => recollect(buffer, vae, 1, &mut rng)?.0,
                    RecollectionStrategy::Code => code_sample(vae, 1, &mut rng)?,
                    RecollectionStrategy::Active { k } => {
                        let (cands, _) = recollect(buffer, vae, k.max(1), &mut rng)?;
                        let targets = teacher_targets(&cands, &[])?;
                        let best =
                            active_select(student, &cands, &vec![0; cands.shape()[0]], &targets)?;
                        row(&cands, best)
                    }
                    RecollectionStrategy::ActiveDiverse { n } => {
                        active_diverse_select(
                            buffer,
                            vae,
                            student,
                            &teacher_targets,
                            1,
                            n,
                            cfg.msss_fraction,
                            &mut rng,
                        )?
                        .0
                    }
                };
                let y = teacher.probabilities(&x, &[0])?;
                student.train_soft(&x, &[0], &y, cfg.lr)?;
            }
        }
        if episode == cfg.checkpoints[next] {
            points.push((episode, student.accuracy(test, 0)?));
            next += 1;
        }
    }
    Ok(DistillCurve {
        source: source.name(),
        points,
    })
}

fn row(x: &Tensor, i: usize) -> Tensor {
    let width = x.len() / x.shape()[0];
    let mut shape = x.shape().to_vec();
    shape[0] = 1;
    Tensor::new(shape, x.data()[i * width..(i + 1) * width].to_vec()).expect("one row")
}
