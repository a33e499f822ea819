use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::buffer::IndexBuffer;
use crate::classifier::{small_convnet, Classifier};
use crate::data::Dataset;
use crate::distill::{
    distill, fill_buffer, teacher_train, DistillConfig, DistillCurve, DistillSource,
    RecollectionStrategy,
};
use crate::error::{Error, Result};
use crate::params::OptimizerKind;
use crate::sampling::{code_sample, nn_distortion, recollect};
use crate::tensor::Real;
use crate::vae::{
    compression_ratio, train_epochs, Autoencoder, ContinuousAe, ContinuousAeConfig, DiscreteVae,
    VaeConfig,
};

/// Compression sweep over discrete `(c, l)` codes and continuous widths.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressionBench {
    pub discrete: Vec<(usize, usize)>,
    pub continuous: Vec<usize>,
    /// Filters per convolution; the autoencoder default when unset.
    pub filters: Option<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: Real,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for CompressionBench {
    fn default() -> Self {
        CompressionBench {
            discrete: vec![(10, 20)],
            continuous: vec![2],
            filters: Some(32),
            epochs: 12,
            batch: 20,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressionRow {
    pub model: &'static str,
    pub c: usize,
    pub l: usize,
    pub h: usize,
    pub code_bits: usize,
    pub compression: f64,
    pub distortion: Real,
}

impl CompressionRow {
    pub const CSV_HEADER: &'static str = "model,c,l,h,code_bits,compression,distortion";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3},{:.6}",
            self.model, self.c, self.l, self.h, self.code_bits, self.compression, self.distortion
        )
    }
}

fn check_images(images: &[&[Real]], shape: [usize; 3]) -> Result<()> {
    if images.is_empty() {
        return Err(Error::invalid("benchmark needs at least one image"));
    }
    let width: usize = shape.iter().product();
    if images.iter().any(|im| im.len() != width) {
        return Err(Error::invalid(format!("images must hold {width} values")));
    }
    Ok(())
}

impl CompressionBench {
    /// Trains one discrete model and returns it with its training distortion.
    pub fn train_discrete(
        &self,
        c: usize,
        l: usize,
        images: &[&[Real]],
        shape: [usize; 3],
    ) -> Result<(DiscreteVae, Real)> {
        check_images(images, shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut cfg = VaeConfig::new(c, l, shape).with_optimizer(self.optimizer);
        cfg.filters = self.filters;
        let mut vae = DiscreteVae::new(cfg, &mut rng)?;
        train_epochs(&mut vae, images, self.epochs, self.batch, self.lr, &mut rng)?;
        let d = vae.distortion(images, 100, &mut rng)?;
        Ok((vae, d))
    }

    pub fn train_continuous(
        &self,
        h: usize,
        images: &[&[Real]],
        shape: [usize; 3],
    ) -> Result<(ContinuousAe, Real)> {
        check_images(images, shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let cfg = ContinuousAeConfig {
            hidden: h,
            input_shape: shape,
            filters: self.filters.unwrap_or_else(|| (2 * h).div_ceil(4).max(8)),
            optimizer: self.optimizer,
        };
        let mut ae = ContinuousAe::new(cfg, &mut rng)?;
        train_epochs(&mut ae, images, self.epochs, self.batch, self.lr, &mut rng)?;
        let d = ae.distortion(images, 100, &mut rng)?;
        Ok((ae, d))
    }
}

/// Trains every configured model on `images` and reports its training
/// distortion next to its compression.
pub fn bench_compression(
    bench: &CompressionBench,
    images: &[&[Real]],
    shape: [usize; 3],
) -> Result<Vec<CompressionRow>> {
    let input_bits = super::input_bits(shape);
    let mut rows = Vec::new();
    for &(c, l) in &bench.discrete {
        let (vae, distortion) = bench.train_discrete(c, l, images, shape)?;
        let k = vae.geometry().code_bits();
        rows.push(CompressionRow {
            model: "discrete",
            c,
            l,
            h: 0,
            code_bits: k,
            compression: compression_ratio(input_bits, k),
            distortion,
        });
    }
    for &h in &bench.continuous {
        let (ae, distortion) = bench.train_continuous(h, images, shape)?;
        rows.push(CompressionRow {
            model: "continuous",
            c: 0,
            l: 0,
            h,
            code_bits: ae.config().code_bits(),
            compression: ae.config().reported_compression(),
            distortion,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRow {
    pub strategy: &'static str,
    pub reconstruction_distortion: Real,
    pub nn_distortion: Real,
}

impl SampleRow {
    pub const CSV_HEADER: &'static str =
        "architecture,strategy,reconstruction_distortion,nn_distortion";

    pub fn csv(&self, architecture: &str) -> String {
        format!(
            "{architecture},{},{:.6},{:.6}",
            self.strategy, self.reconstruction_distortion, self.nn_distortion
        )
    }
}

/// Buffer sampling against code sampling: `count` draws of each, scored by
/// L1 distance to the nearest image of `data`, which also fills the buffer.
pub fn sample_compare(
    vae: &DiscreteVae,
    data: &Dataset,
    count: usize,
    seed: u64,
) -> Result<Vec<SampleRow>> {
    if data.is_empty() || count == 0 {
        return Err(Error::invalid("sample_compare needs data and count >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = data.images();
    let recon = vae.distortion(&images, 100, &mut rng)?;
    let buffer = fill_buffer(vae, data, &mut rng)?;
    let (from_buffer, _) = recollect(&buffer, vae, count, &mut rng)?;
    let from_codes = code_sample(vae, count, &mut rng)?;
    let width = data.width();
    let score = |x: &crate::tensor::Tensor| {
        let rows: Vec<&[Real]> = x.data().chunks(width).collect();
        nn_distortion(&rows, &images)
    };
    Ok(vec![
        SampleRow {
            strategy: "buffer",
            reconstruction_distortion: recon,
            nn_distortion: score(&from_buffer)?,
        },
        SampleRow {
            strategy: "code",
            reconstruction_distortion: recon,
            nn_distortion: score(&from_codes)?,
        },
    ])
}

/// One student arm of a distillation run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DistillArm {
    Real,
    RealXTeacherY,
    Subset(f64),
    Recollections(RecollectionStrategy),
}

impl std::str::FromStr for DistillArm {
    type Err = Error;

    /// `real`, `real-x-teacher-y`, `subset:<fraction>`, `buffer`, `code`,
    /// `active:<k>` or `active-diverse:<n>`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = s.split_once(':').map_or((s, None), |(a, b)| (a, Some(b)));
        let num = |default: &str| -> Result<f64> {
            arg.unwrap_or(default)
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad argument in {s:?}: {e}")))
        };
        Ok(match name {
            "real" => DistillArm::Real,
            "real-x-teacher-y" => DistillArm::RealXTeacherY,
            "subset" => DistillArm::Subset(num("0.1")?),
            "buffer" => DistillArm::Recollections(RecollectionStrategy::Buffer),
            "code" => DistillArm::Recollections(RecollectionStrategy::Code),
            "active" => DistillArm::Recollections(RecollectionStrategy::Active {
                k: num("10")? as usize,
            }),
            "active-diverse" => DistillArm::Recollections(RecollectionStrategy::ActiveDiverse {
                n: num("10")? as usize,
            }),
            _ => return Err(Error::Config(format!("unknown distillation source {s:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistillExperiment {
    pub teacher_filters: usize,
    pub teacher_epochs: usize,
    pub teacher_lr: Real,
    pub batch: usize,
    pub c: usize,
    pub l: usize,
    pub filters: Option<usize>,
    pub vae_epochs: usize,
    pub vae_lr: Real,
    pub vae_optimizer: OptimizerKind,
    pub student_lr: Real,
    pub checkpoints: Vec<u64>,
    pub arms: Vec<DistillArm>,
    pub seeds: Vec<u64>,
}

impl Default for DistillExperiment {
    fn default() -> Self {
        DistillExperiment {
            teacher_filters: 8,
            teacher_epochs: 5,
            teacher_lr: 0.05,
            batch: 20,
            c: 168,
            l: 2,
            filters: Some(32),
            vae_epochs: 10,
            vae_lr: 3e-3,
            vae_optimizer: OptimizerKind::Adam,
            student_lr: 0.01,
            checkpoints: crate::distill::DEFAULT_CHECKPOINTS.to_vec(),
            arms: vec![
                DistillArm::Real,
                DistillArm::Recollections(RecollectionStrategy::Buffer),
            ],
            seeds: vec![0],
        }
    }
}

/// A trained teacher and, when an arm needs one, a trained autoencoder with
/// a buffer holding a code for every training example.
#[derive(Clone, Debug)]
pub struct DistillSetup {
    pub teacher: Classifier,
    pub teacher_accuracy: f64,
    pub memory: Option<(DiscreteVae, IndexBuffer)>,
    pub vae_distortion: Option<Real>,
}

impl DistillExperiment {
    fn student(&self, shape: [usize; 3], classes: usize, seed: u64) -> Result<Classifier> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(4);
        Classifier::new(
            shape,
            small_convnet(shape, classes, self.teacher_filters),
            classes,
            &mut rng,
        )
    }
}

pub fn prepare_distillation(
    exp: &DistillExperiment,
    train: &Dataset,
    test: &Dataset,
    seed: u64,
) -> Result<DistillSetup> {
    let shape = train.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut teacher = Classifier::new(
        shape,
        small_convnet(shape, train.classes(), exp.teacher_filters),
        train.classes(),
        &mut rng,
    )?;
    teacher_train(
        &mut teacher,
        train,
        exp.teacher_epochs,
        exp.batch,
        exp.teacher_lr,
        &mut rng,
    )?;
    let teacher_accuracy = teacher.accuracy(test, 0)?;
    let needs_memory = exp
        .arms
        .iter()
        .any(|a| matches!(a, DistillArm::Recollections(_)));
    let (memory, vae_distortion) = if needs_memory {
        let mut cfg = VaeConfig::new(exp.c, exp.l, shape).with_optimizer(exp.vae_optimizer);
        cfg.filters = exp.filters;
        let mut vae = DiscreteVae::new(cfg, &mut rng)?;
        let images = train.images();
        train_epochs(
            &mut vae,
            &images,
            exp.vae_epochs,
            exp.batch,
            exp.vae_lr,
            &mut rng,
        )?;
        let d = vae.distortion(&images, 100, &mut rng)?;
        let buffer = fill_buffer(&vae, train, &mut rng)?;
        (Some((vae, buffer)), Some(d))
    } else {
        (None, None)
    };
    Ok(DistillSetup {
        teacher,
        teacher_accuracy,
        memory,
        vae_distortion,
    })
}

/// Every arm for every seed, in that order.
pub fn run_distillation(
    exp: &DistillExperiment,
    setup: &DistillSetup,
    train: &Dataset,
    test: &Dataset,
) -> Result<Vec<(u64, DistillCurve)>> {
    let mut out = Vec::new();
    for &arm in &exp.arms {
        for &seed in &exp.seeds {
            let source = match arm {
                DistillArm::Real => DistillSource::RealData,
                DistillArm::RealXTeacherY => DistillSource::RealXTeacherY,
                DistillArm::Subset(fraction) => DistillSource::Subset { fraction },
                DistillArm::Recollections(strategy) => {
                    let (vae, buffer) = setup.memory.as_ref().ok_or_else(|| {
                        Error::invalid("recollection arm without a trained autoencoder")
                    })?;
                    DistillSource::Recollections {
                        vae,
                        buffer,
                        strategy,
                    }
                }
            };
            let cfg = DistillConfig {
                checkpoints: exp.checkpoints.clone(),
                lr: exp.student_lr,
                seed,
                ..DistillConfig::default()
            };
            let mut student = exp.student(train.shape(), train.classes(), seed)?;
            out.push((
                seed,
                distill(&setup.teacher, &mut student, source, train, test, &cfg)?,
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arm_names_parse() {
        assert_eq!("real".parse::<DistillArm>().unwrap(), DistillArm::Real);
        assert_eq!(
            "subset:0.25".parse::<DistillArm>().unwrap(),
            DistillArm::Subset(0.25)
        );
        assert_eq!(
            "active:4".parse::<DistillArm>().unwrap(),
            DistillArm::Recollections(RecollectionStrategy::Active { k: 4 })
        );
        assert!("teacher".parse::<DistillArm>().is_err());
        assert!("subset:x".parse::<DistillArm>().is_err());
    }
}
