//! The recollection module's encoder and decoder: an autoencoder with `c`
//! categorical latent variables of `l` categories each, trained with the
//! straight-through Gumbel-softmax estimator.

mod continuous;
mod gumbel;
mod packing;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

pub use continuous::{ContinuousAe, ContinuousAeConfig};
pub use gumbel::{
    gumbel, gumbel_max_sample, gumbel_max_with_noise, gumbel_noise, gumbel_softmax_relax,
    EncoderOutput,
};
pub use packing::{pack, unpack, CodeGeometry, LatentCode, PackedCode};

use crate::autodiff::{Graph, Var};
use crate::codec;
use crate::error::{Error, Result};
use crate::layers::{Activation, LayerSpec, Network};
use crate::params::{Optimizer, OptimizerKind, ParamId, ParameterSet};
use crate::tensor::{mean_abs_diff, Real, Tensor};

/// Bits of one 8-bit 28×28 grayscale image.
pub const MNIST_IMAGE_BITS: usize = 28 * 28 * 8;

#[derive(Clone, Debug, PartialEq)]
pub struct VaeConfig {
    /// `c`, number of categorical latent variables.
    pub latents: usize,
    /// `l`, categories per variable.
    pub categories: usize,
    /// Gumbel-softmax temperature used in training.
    pub temperature: Real,
    /// `[channels, height, width]`
    pub input_shape: [usize; 3],
    /// Filters per convolution; `⌈c·l/4⌉` when unset.
    pub filters: Option<usize>,
    /// Weight of an optional KL(q ‖ uniform) term; 0 disables it.
    pub kl_weight: Real,
    /// Store argmax codes instead of a Gumbel-max draw.
    pub deterministic_encoding: bool,
    pub optimizer: OptimizerKind,
}

impl VaeConfig {
    pub fn new(latents: usize, categories: usize, input_shape: [usize; 3]) -> Self {
        VaeConfig {
            latents,
            categories,
            temperature: 1.0,
            input_shape,
            filters: None,
            kl_weight: 0.0,
            deterministic_encoding: false,
            optimizer: OptimizerKind::Sgd,
        }
    }

    pub fn with_optimizer(mut self, optimizer: OptimizerKind) -> Self {
        self.optimizer = optimizer;
        self
    }

    pub fn with_filters(mut self, filters: usize) -> Self {
        self.filters = Some(filters);
        self
    }

    pub fn validate(&self) -> Result<()> {
        CodeGeometry::new(self.latents, self.categories)?;
        if !(self.temperature > 0.0) {
            return Err(Error::invalid(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if self.input_shape.contains(&0) {
            return Err(Error::invalid(format!(
                "empty input shape {:?}",
                self.input_shape
            )));
        }
        if self.filters == Some(0) {
            return Err(Error::invalid("filters must be >= 1"));
        }
        if !(self.kl_weight >= 0.0) {
            return Err(Error::invalid("kl_weight must be >= 0"));
        }
        Ok(())
    }

    pub fn geometry(&self) -> CodeGeometry {
        CodeGeometry {
            latents: self.latents,
            categories: self.categories,
        }
    }

    pub fn hidden_filters(&self) -> usize {
        self.filters
            .unwrap_or_else(|| (self.latents * self.categories).div_ceil(4))
    }

    /// Encoder ending in `c·l` logits and decoder ending in a sigmoid.
    pub fn architecture(&self) -> (Vec<LayerSpec>, Vec<LayerSpec>) {
        conv_autoencoder_specs(
            self.input_shape,
            self.hidden_filters(),
            self.latents * self.categories,
        )
    }
}

/// Three stride-2 5×5 convolutions down to a dense bottleneck of
/// `bottleneck` units, mirrored by three transposed convolutions.
pub fn conv_autoencoder_specs(
    input: [usize; 3],
    filters: usize,
    bottleneck: usize,
) -> (Vec<LayerSpec>, Vec<LayerSpec>) {
    let [channels, h, w] = input;
    let down = |n: usize| (n - 1) / 2 + 1;
    let sizes = [
        (h, w),
        (down(h), down(w)),
        (down(down(h)), down(down(w))),
        (down(down(down(h))), down(down(down(w)))),
    ];
    let flat = filters * sizes[3].0 * sizes[3].1;
    let encoder = vec![
        LayerSpec::conv(channels, filters, 2, 2),
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::conv(filters, filters, 2, 2),
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::conv(filters, filters, 2, 2),
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::Flatten,
        LayerSpec::Dense {
            inputs: flat,
            outputs: bottleneck,
        },
    ];
    let decoder = vec![
        LayerSpec::Dense {
            inputs: bottleneck,
            outputs: flat,
        },
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::Reshape(vec![filters, sizes[3].0, sizes[3].1]),
        LayerSpec::deconv(filters, filters, 2, 2, sizes[2]),
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::deconv(filters, filters, 2, 2, sizes[1]),
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::deconv(filters, channels, 2, 2, sizes[0]),
        LayerSpec::Activation(Activation::Sigmoid),
    ];
    (encoder, decoder)
}

/// Common surface of the discrete and continuous autoencoders.
pub trait Autoencoder {
    fn input_shape(&self) -> [usize; 3];

    /// One SGD step on the reconstruction loss; returns the loss before the step.
    fn train_batch<R: Rng + ?Sized>(&mut self, x: &Tensor, lr: Real, rng: &mut R) -> Result<Real>;

    /// Encode then decode a batch `[B, C, H, W]`.
    fn reconstruct<R: Rng + ?Sized>(&self, x: &Tensor, rng: &mut R) -> Result<Tensor>;

    /// Mean L1 reconstruction distortion over `images` (each a flat row in [0, 1]).
    fn distortion<R: Rng + ?Sized>(
        &self,
        images: &[&[Real]],
        batch: usize,
        rng: &mut R,
    ) -> Result<Real> {
        let shape = self.input_shape();
        let mut total = 0.0;
        for chunk in images.chunks(batch.max(1)) {
            let x = Tensor::stack_rows(chunk, &shape)?;
            let r = self.reconstruct(&x, rng)?;
            let width = x.len() / chunk.len();
            for (a, b) in x.data().chunks(width).zip(r.data().chunks(width)) {
                total += mean_abs_diff(a, b);
            }
        }
        Ok(total / images.len().max(1) as Real)
    }
}

/// Trains `ae` for `epochs` passes over `images` in shuffled minibatches and
/// returns the mean loss of the last epoch.
pub fn train_epochs<A: Autoencoder, R: Rng + ?Sized>(
    ae: &mut A,
    images: &[&[Real]],
    epochs: usize,
    batch: usize,
    lr: Real,
    rng: &mut R,
) -> Result<Real> {
    use rand::seq::SliceRandom;
    let shape = ae.input_shape();
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut last = Real::NAN;
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        let mut count = 0;
        for chunk in order.chunks(batch.max(1)) {
            let rows: Vec<&[Real]> = chunk.iter().map(|&i| images[i]).collect();
            let x = Tensor::stack_rows(&rows, &shape)?;
            sum += ae.train_batch(&x, lr, rng)?;
            count += 1;
        }
        last = sum / count.max(1) as Real;
    }
    Ok(last)
}

#[derive(Clone, Debug)]
pub struct DiscreteVae {
    config: VaeConfig,
    params: ParameterSet,
    encoder: Network,
    decoder: Network,
    optimizer: Optimizer,
}

impl DiscreteVae {
    pub fn new<R: Rng + ?Sized>(config: VaeConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (enc, dec) = config.architecture();
        let mut params = ParameterSet::new();
        let encoder = Network::build(&config.input_shape, &enc, &mut params, "encoder", rng)?;
        let decoder = Network::build(
            &[config.latents * config.categories],
            &dec,
            &mut params,
            "decoder",
            rng,
        )?;
        let optimizer = Optimizer::new(config.optimizer);
        Ok(DiscreteVae {
            config,
            params,
            encoder,
            decoder,
            optimizer,
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    pub fn geometry(&self) -> CodeGeometry {
        self.config.geometry()
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn encoder_param_ids(&self) -> Vec<ParamId> {
        self.encoder.param_ids()
    }

    pub fn decoder_param_ids(&self) -> Vec<ParamId> {
        self.decoder.param_ids()
    }

    /// Hash of the decoder weights; changes whenever ψ changes.
    pub fn decoder_fingerprint(&self) -> u64 {
        self.params.fingerprint(self.decoder.param_ids())
    }

    fn batched(&self, x: &Tensor) -> Result<Tensor> {
        let s = self.config.input_shape;
        match x.shape() {
            [c, h, w] if [*c, *h, *w] == s => x.clone().reshape(vec![1, s[0], s[1], s[2]]),
            [_, c, h, w] if [*c, *h, *w] == s => Ok(x.clone()),
            other => Err(Error::shape("vae input", other, &s)),
        }
    }

    /// Encoder logits `[B, c·l]` for a batch.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let x = self.batched(x)?;
        self.encoder.infer(&self.params, x)
    }

    /// Category probabilities for a single input `[C, H, W]`.
    pub fn encode(&self, x: &Tensor) -> Result<EncoderOutput> {
        let out = self.encode_batch(x)?;
        if out.len() != 1 {
            return Err(Error::invalid(format!(
                "encode expects one input, got {}",
                out.len()
            )));
        }
        Ok(out.into_iter().next().expect("one row"))
    }

    pub fn encode_batch(&self, x: &Tensor) -> Result<Vec<EncoderOutput>> {
        let logits = self.logits(x)?;
        let (c, l) = (self.config.latents, self.config.categories);
        Ok(logits
            .data()
            .chunks(c * l)
            .map(|row| EncoderOutput::from_logits(row, c, l))
            .collect())
    }

    /// Storage encoding: one Gumbel-max draw per variable (argmax when
    /// the config asks for deterministic codes).
    pub fn sample_codes<R: Rng + ?Sized>(
        &self,
        x: &Tensor,
        rng: &mut R,
    ) -> Result<Vec<LatentCode>> {
        Ok(self
            .encode_batch(x)?
            .iter()
            .map(|p| {
                if self.config.deterministic_encoding {
                    p.argmax()
                } else {
                    gumbel_max_sample(p, rng)
                }
            })
            .collect())
    }

    pub fn compress<R: Rng + ?Sized>(&self, x: &Tensor, rng: &mut R) -> Result<Vec<PackedCode>> {
        let geo = self.geometry();
        self.sample_codes(x, rng)?
            .iter()
            .map(|c| pack(c, geo))
            .collect()
    }

    /// One-hot rows `[B, c·l]` for hard codes.
    pub fn one_hot(&self, codes: &[LatentCode]) -> Result<Tensor> {
        let geo = self.geometry();
        let (c, l) = (geo.latents, geo.categories);
        let mut z = Tensor::zeros([codes.len(), c * l]);
        for (b, code) in codes.iter().enumerate() {
            if code.len() != c {
                return Err(Error::Geometry {
                    expected_c: c,
                    expected_l: l,
                    c: code.len(),
                    l,
                });
            }
            for (i, &idx) in code.indices().iter().enumerate() {
                if idx as usize >= l {
                    return Err(Error::invalid(format!("index {idx} >= l={l}")));
                }
                z.data_mut()[b * c * l + i * l + idx as usize] = 1.0;
            }
        }
        Ok(z)
    }

    /// Reconstructions `[B, C, H, W]` of hard codes.
    pub fn decode(&self, codes: &[LatentCode]) -> Result<Tensor> {
        let z = self.one_hot(codes)?;
        self.decode_relaxed(&z)
    }

    pub fn decode_packed(&self, codes: &[PackedCode]) -> Result<Tensor> {
        let geo = self.geometry();
        let codes = codes
            .iter()
            .map(|p| unpack(p, geo))
            .collect::<Result<Vec<_>>>()?;
        self.decode(&codes)
    }

    /// Decode relaxed (or one-hot) latent rows `[B, c·l]`.
    pub fn decode_relaxed(&self, z: &Tensor) -> Result<Tensor> {
        let width = self.config.latents * self.config.categories;
        let z = match z.shape() {
            [_, w] if *w == width => z.clone(),
            [c, l] if c * l == width => z.clone().reshape(vec![1, width])?,
            other => return Err(Error::shape("decode", other, &[width])),
        };
        self.decoder.infer(&self.params, z)
    }

    /// Builds the reconstruction loss for `x` with the given Gumbel noise.
    /// `hard` selects the straight-through forward (one-hot samples);
    /// otherwise the relaxed sample itself is decoded.
    pub fn loss_graph(
        &self,
        g: &mut Graph,
        params: &ParameterSet,
        x: &Tensor,
        noise: &Tensor,
        hard: bool,
    ) -> Result<Var> {
        let x = self.batched(x)?;
        let l = self.config.categories;
        let xv = g.input(x.clone())?;
        let logits = self.encoder.forward(g, params, xv)?;
        let z = g.gumbel_softmax(logits, noise, self.config.temperature, l, hard)?;
        let recon = self.decoder.forward(g, params, z)?;
        let mut loss = g.bce_loss(recon, &x)?;
        if self.config.kl_weight > 0.0 {
            let kl = g.kl_to_uniform(logits, l)?;
            let kl = g.scale(kl, self.config.kl_weight)?;
            loss = g.add(loss, kl)?;
        }
        Ok(loss)
    }

    pub fn noise_for<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Tensor {
        gumbel_noise(&[batch, self.config.latents * self.config.categories], rng)
    }
}

impl Autoencoder for DiscreteVae {
    fn input_shape(&self) -> [usize; 3] {
        self.config.input_shape
    }

    fn train_batch<R: Rng + ?Sized>(&mut self, x: &Tensor, lr: Real, rng: &mut R) -> Result<Real> {
        let x = self.batched(x)?;
        let batch = x.shape()[0];
        if batch == 0 {
            return Err(Error::invalid("train_batch needs a nonempty batch"));
        }
        let noise = self.noise_for(batch, rng);
        let mut g = Graph::new();
        let loss = self.loss_graph(&mut g, &self.params, &x, &noise, true)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "reconstruction loss {value} (batch {batch}, c={}, l={})",
                self.config.latents, self.config.categories
            )));
        }
        g.backward(loss, &mut self.params)?;
        self.optimizer.step(&mut self.params, lr)?;
        Ok(value)
    }

    fn reconstruct<R: Rng + ?Sized>(&self, x: &Tensor, rng: &mut R) -> Result<Tensor> {
        let codes = self.sample_codes(x, rng)?;
        self.decode(&codes)
    }
}

const VAE_MAGIC: &[u8; 4] = b"SRMV";
const VAE_VERSION: u16 = 2;

impl DiscreteVae {
    /// Checkpoint: magic, version, config, every parameter as a
    /// little-endian f64 in declaration order, then the optimizer state.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let c = &self.config;
        w.write_all(VAE_MAGIC)?;
        codec::write_u16(w, VAE_VERSION)?;
        codec::write_u32(w, c.latents as u32)?;
        codec::write_u32(w, c.categories as u32)?;
        codec::write_f64(w, c.temperature as f64)?;
        for d in c.input_shape {
            codec::write_u32(w, d as u32)?;
        }
        codec::write_u32(w, c.hidden_filters() as u32)?;
        codec::write_f64(w, c.kl_weight as f64)?;
        codec::write_u8(w, c.deterministic_encoding as u8)?;
        codec::write_u64(w, self.params.count() as u64)?;
        codec::write_reals(w, &self.params.flatten_values())?;
        let (t, m, v) = self.optimizer.state();
        codec::write_u8(w, c.optimizer as u8)?;
        codec::write_u64(w, t)?;
        codec::write_u64(w, m.len() as u64)?;
        codec::write_reals(w, m)?;
        codec::write_reals(w, v)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        codec::expect_magic(r, VAE_MAGIC)?;
        codec::expect_version(r, VAE_VERSION)?;
        let latents = codec::read_u32(r, "c")? as usize;
        let categories = codec::read_u32(r, "l")? as usize;
        let temperature = codec::read_f64(r, "temperature")? as Real;
        let mut input_shape = [0usize; 3];
        for d in &mut input_shape {
            *d = codec::read_u32(r, "input shape")? as usize;
        }
        let filters = codec::read_u32(r, "filters")? as usize;
        let kl_weight = codec::read_f64(r, "kl weight")? as Real;
        let deterministic_encoding = codec::read_u8(r, "flags")? != 0;
        let mut config = VaeConfig {
            latents,
            categories,
            temperature,
            input_shape,
            filters: Some(filters),
            kl_weight,
            deterministic_encoding,
            optimizer: OptimizerKind::Sgd,
        };
        config.validate()?;
        let count = codec::read_u64(r, "parameter count")? as usize;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let probe = DiscreteVae::new(config.clone(), &mut rng)?;
        if count != probe.params.count() {
            return Err(Error::Format(format!(
                "checkpoint holds {count} parameters, architecture needs {}",
                probe.params.count()
            )));
        }
        let values = codec::read_reals(r, count, "parameters")?;
        config.optimizer = match codec::read_u8(r, "optimizer")? {
            0 => OptimizerKind::Sgd,
            1 => OptimizerKind::Adam,
            k => return Err(Error::Format(format!("unknown optimizer tag {k}"))),
        };
        let t = codec::read_u64(r, "optimizer steps")?;
        let moments = codec::read_u64(r, "optimizer state length")? as usize;
        if moments != 0 && moments != count {
            return Err(Error::Format(format!(
                "optimizer state of {moments} for {count} parameters"
            )));
        }
        let m = codec::read_reals(r, moments, "first moments")?;
        let v = codec::read_reals(r, moments, "second moments")?;
        codec::expect_eof(r)?;
        let mut vae = DiscreteVae {
            optimizer: Optimizer::new(config.optimizer),
            config,
            ..probe
        };
        vae.params.set_flat_values(&values)?;
        vae.optimizer.restore(t, m, v)?;
        Ok(vae)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

/// Per-sample compression of an `input_bits` example stored in `code_bits`.
pub fn compression_ratio(input_bits: usize, code_bits: usize) -> f64 {
    input_bits as f64 / code_bits as f64
}
