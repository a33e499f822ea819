use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct BlobConfig {
    pub classes: usize,
    /// Side of the square single-channel image.
    pub side: usize,
    pub per_class: usize,
    /// Jitter of the blob center, in pixels.
    pub sigma: f64,
    pub seed: u64,
}

impl BlobConfig {
    pub fn new(classes: usize, side: usize, per_class: usize, seed: u64) -> Self {
        BlobConfig {
            classes,
            side,
            per_class,
            sigma: 0.4,
            seed,
        }
    }
}

/// Class `k` is a Gaussian bump centered on the `k`-th point of a circle
/// around the image center; examples jitter the center and brightness.
/// Examples are interleaved by class.
pub fn synth_blobs(cfg: &BlobConfig) -> Result<Dataset> {
    if cfg.classes == 0 || cfg.side < 2 || cfg.classes > u16::MAX as usize {
        return Err(Error::invalid("synth_blobs needs >= 1 class and side >= 2"));
    }
    if !(cfg.sigma >= 0.0) {
        return Err(Error::invalid("sigma must be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let jitter = Normal::new(0.0, cfg.sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let s = cfg.side as f64;
    let center = (s - 1.0) / 2.0;
    let radius = s * 0.3;
    let width = (s * 0.12).max(0.6);
    let mut data = Dataset::empty([1, cfg.side, cfg.side], cfg.classes);
    for _ in 0..cfg.per_class {
        for k in 0..cfg.classes {
            let phase = std::f64::consts::TAU * k as f64 / cfg.classes as f64;
            let cy = center + radius * phase.sin() + jitter.sample(&mut rng);
            let cx = center + radius * phase.cos() + jitter.sample(&mut rng);
            let peak: f64 = rng.random_range(0.7..1.0);
            let img: Vec<Real> = (0..cfg.side * cfg.side)
                .map(|p| {
                    let (y, x) = ((p / cfg.side) as f64, (p % cfg.side) as f64);
                    let d2 = (y - cy).powi(2) + (x - cx).powi(2);
                    (peak * (-d2 / (2.0 * width * width)).exp()) as Real
                })
                .collect();
            data.push(&img, k as u16)?;
        }
    }
    Ok(data)
}
