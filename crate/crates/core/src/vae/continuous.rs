//! Continuous-bottleneck autoencoder used as the compression baseline.

use rand::Rng;

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::layers::Network;
use crate::params::{Optimizer, OptimizerKind, ParameterSet};
use crate::tensor::{Real, Tensor};

use super::{conv_autoencoder_specs, Autoencoder};

#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousAeConfig {
    /// `h`, bottleneck width.
    pub hidden: usize,
    pub input_shape: [usize; 3],
    pub filters: usize,
    pub optimizer: OptimizerKind,
}

impl ContinuousAeConfig {
    /// Storage per code at 32 bits per unit.
    pub fn code_bits(&self) -> usize {
        32 * self.hidden
    }

    /// Compression as conventionally tabulated for this baseline on MNIST:
    /// `49 / h`, four times less than `6272 / (32·h)`.
    pub fn reported_compression(&self) -> f64 {
        49.0 / self.hidden as f64
    }
}

#[derive(Clone, Debug)]
pub struct ContinuousAe {
    config: ContinuousAeConfig,
    params: ParameterSet,
    encoder: Network,
    decoder: Network,
    optimizer: Optimizer,
}

impl ContinuousAe {
    pub fn new<R: Rng + ?Sized>(config: ContinuousAeConfig, rng: &mut R) -> Result<Self> {
        if config.hidden == 0 || config.filters == 0 {
            return Err(Error::invalid(
                "continuous autoencoder needs h >= 1 and filters >= 1",
            ));
        }
        let (enc, dec) = conv_autoencoder_specs(config.input_shape, config.filters, config.hidden);
        let mut params = ParameterSet::new();
        let encoder = Network::build(&config.input_shape, &enc, &mut params, "encoder", rng)?;
        let decoder = Network::build(&[config.hidden], &dec, &mut params, "decoder", rng)?;
        Ok(ContinuousAe {
            optimizer: Optimizer::new(config.optimizer),
            config,
            params,
            encoder,
            decoder,
        })
    }

    pub fn config(&self) -> &ContinuousAeConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    /// Bottleneck activations `[B, h]`.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder.infer(&self.params, x.clone())
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.decoder.infer(&self.params, z.clone())
    }
}

impl Autoencoder for ContinuousAe {
    fn input_shape(&self) -> [usize; 3] {
        self.config.input_shape
    }

    fn train_batch<R: Rng + ?Sized>(&mut self, x: &Tensor, lr: Real, _rng: &mut R) -> Result<Real> {
        if x.shape().first().copied().unwrap_or(0) == 0 {
            return Err(Error::invalid("train_batch needs a nonempty batch"));
        }
        let mut g = Graph::new();
        let xv = g.input(x.clone())?;
        let z = self.encoder.forward(&mut g, &self.params, xv)?;
        let recon = self.decoder.forward(&mut g, &self.params, z)?;
        let loss = g.bce_loss(recon, x)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "reconstruction loss {value} (h={})",
                self.config.hidden
            )));
        }
        g.backward(loss, &mut self.params)?;
        self.optimizer.step(&mut self.params, lr)?;
        Ok(value)
    }

    fn reconstruct<R: Rng + ?Sized>(&self, x: &Tensor, _rng: &mut R) -> Result<Tensor> {
        let z = self.encode(x)?;
        self.decode(&z)
    }
}
