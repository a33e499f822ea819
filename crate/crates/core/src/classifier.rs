//! The predictive model `F_θ`: a network mapping inputs (and a task id) to
//! class scores.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::codec;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::{mlp_specs, Activation, LayerSpec, Network};
use crate::params::ParameterSet;
use crate::tensor::{Real, Tensor};

/// Logit offset that removes a class from a task's softmax.
const MASKED: Real = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ClassLoss {
    /// Softmax cross-entropy against one-hot or soft targets.
    #[default]
    CrossEntropy,
    /// Per-class sigmoid with binary cross-entropy.
    Binary,
}

/// Which outputs a task may use.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum Conditioning {
    /// Every task shares the full output layer.
    #[default]
    SharedHead,
    /// Task `t` only scores the classes in entry `t`.
    TaskHeads(Vec<Vec<u16>>),
}

#[derive(Clone, Debug)]
pub struct Classifier {
    network: Network,
    params: ParameterSet,
    input_shape: [usize; 3],
    classes: usize,
    conditioning: Conditioning,
    loss: ClassLoss,
    specs: Vec<LayerSpec>,
}

/// Two ReLU hidden layers of 100 units.
pub fn default_mlp(input_shape: [usize; 3], classes: usize) -> Vec<LayerSpec> {
    mlp_specs(input_shape.iter().product(), &[100, 100], classes)
}

/// Two 5×5 conv layers with stride 2 and a dense head.
pub fn small_convnet(input_shape: [usize; 3], classes: usize, filters: usize) -> Vec<LayerSpec> {
    let [c, h, w] = input_shape;
    let down = |n: usize| (n - 1) / 2 + 1;
    let flat = 2 * filters * down(down(h)) * down(down(w));
    vec![
        LayerSpec::conv(c, filters, 2, 2),
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::conv(filters, 2 * filters, 2, 2),
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::Flatten,
        LayerSpec::Dense {
            inputs: flat,
            outputs: 100,
        },
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::Dense {
            inputs: 100,
            outputs: classes,
        },
    ]
}

impl Classifier {
    pub fn new<R: Rng + ?Sized>(
        input_shape: [usize; 3],
        specs: Vec<LayerSpec>,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut params = ParameterSet::new();
        let network = Network::build(&input_shape, &specs, &mut params, "model", rng)?;
        if network.output_shape() != [classes] {
            return Err(Error::shape(
                "classifier output",
                network.output_shape(),
                &[classes],
            ));
        }
        Ok(Classifier {
            network,
            params,
            input_shape,
            classes,
            conditioning: Conditioning::SharedHead,
            loss: ClassLoss::CrossEntropy,
            specs,
        })
    }

    pub fn mlp<R: Rng + ?Sized>(
        input_shape: [usize; 3],
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new(input_shape, default_mlp(input_shape, classes), classes, rng)
    }

    pub fn with_conditioning(mut self, conditioning: Conditioning) -> Result<Self> {
        if let Conditioning::TaskHeads(heads) = &conditioning {
            if heads.iter().flatten().any(|&c| c as usize >= self.classes) {
                return Err(Error::invalid(
                    "task head names a class outside the output layer",
                ));
            }
        }
        self.conditioning = conditioning;
        Ok(self)
    }

    pub fn with_loss(mut self, loss: ClassLoss) -> Self {
        self.loss = loss;
        self
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    fn mask(&self, tasks: &[u16]) -> Result<Option<Tensor>> {
        let Conditioning::TaskHeads(heads) = &self.conditioning else {
            return Ok(None);
        };
        let mut m = Tensor::full([tasks.len(), self.classes], MASKED);
        for (row, &t) in tasks.iter().enumerate() {
            let head = heads
                .get(t as usize)
                .ok_or_else(|| Error::invalid(format!("no output head for task {t}")))?;
            for &c in head {
                m.data_mut()[row * self.classes + c as usize] = 0.0;
            }
        }
        Ok(Some(m))
    }

    /// Logits `[B, classes]` with the task mask applied.
    pub fn logits_graph(
        &self,
        g: &mut Graph,
        params: &ParameterSet,
        x: &Tensor,
        tasks: &[u16],
    ) -> Result<Var> {
        if x.shape().first() != Some(&tasks.len()) {
            return Err(Error::shape("classifier batch", x.shape(), &[tasks.len()]));
        }
        let xv = g.input(x.clone())?;
        let mut out = self.network.forward(g, params, xv)?;
        if let Some(mask) = self.mask(tasks)? {
            let m = g.input(mask)?;
            out = g.add(out, m)?;
        }
        Ok(out)
    }

    /// Loss against target distributions `[B, classes]`.
    pub fn loss_graph(
        &self,
        g: &mut Graph,
        params: &ParameterSet,
        x: &Tensor,
        tasks: &[u16],
        targets: &Tensor,
    ) -> Result<Var> {
        let logits = self.logits_graph(g, params, x, tasks)?;
        match self.loss {
            ClassLoss::CrossEntropy => g.softmax_cross_entropy(logits, targets),
            ClassLoss::Binary => {
                let p = g.sigmoid(logits)?;
                g.bce_loss(p, targets)
            }
        }
    }

    pub fn one_hot(&self, labels: &[u16]) -> Result<Tensor> {
        let mut t = Tensor::zeros([labels.len(), self.classes]);
        for (i, &y) in labels.iter().enumerate() {
            if y as usize >= self.classes {
                return Err(Error::invalid(format!(
                    "label {y} outside 0..{}",
                    self.classes
                )));
            }
            t.data_mut()[i * self.classes + y as usize] = 1.0;
        }
        Ok(t)
    }

    /// Populates gradients for the batch and returns the loss.
    pub fn accumulate(&mut self, x: &Tensor, tasks: &[u16], targets: &Tensor) -> Result<Real> {
        let mut g = Graph::new();
        let loss = self.loss_graph(&mut g, &self.params, x, tasks, targets)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("classifier loss {value}")));
        }
        g.backward(loss, &mut self.params)?;
        Ok(value)
    }

    /// Flattened gradient of the loss on a labelled batch; parameters and
    /// stored gradients are left untouched.
    pub fn gradient(&mut self, x: &Tensor, tasks: &[u16], labels: &[u16]) -> Result<Vec<Real>> {
        Ok(self.loss_and_gradient(x, tasks, labels)?.1)
    }

    pub fn loss_and_gradient(
        &mut self,
        x: &Tensor,
        tasks: &[u16],
        labels: &[u16],
    ) -> Result<(Real, Vec<Real>)> {
        let targets = self.one_hot(labels)?;
        self.params.zero_grad();
        let loss = self.accumulate(x, tasks, &targets)?;
        let flat = self.params.flatten_grads();
        self.params.zero_grad();
        Ok((loss, flat))
    }

    pub fn train_step(
        &mut self,
        x: &Tensor,
        tasks: &[u16],
        labels: &[u16],
        lr: Real,
    ) -> Result<Real> {
        let targets = self.one_hot(labels)?;
        self.train_soft(x, tasks, &targets, lr)
    }

    pub fn train_soft(
        &mut self,
        x: &Tensor,
        tasks: &[u16],
        targets: &Tensor,
        lr: Real,
    ) -> Result<Real> {
        let loss = self.accumulate(x, tasks, targets)?;
        self.params.sgd_step(lr)?;
        Ok(loss)
    }

    pub fn logits(&self, x: &Tensor, tasks: &[u16]) -> Result<Tensor> {
        let mut g = Graph::new();
        let out = self.logits_graph(&mut g, &self.params, x, tasks)?;
        Ok(g.value(out).clone())
    }

    /// Softmax class probabilities `[B, classes]`.
    pub fn probabilities(&self, x: &Tensor, tasks: &[u16]) -> Result<Tensor> {
        let logits = self.logits(x, tasks)?;
        let p = crate::autodiff::group_softmax(logits.data(), self.classes);
        Tensor::new(logits.shape().to_vec(), p)
    }

    pub fn predict(&self, x: &Tensor, tasks: &[u16]) -> Result<Vec<u16>> {
        let logits = self.logits(x, tasks)?;
        Ok(crate::autodiff::group_argmax(logits.data(), self.classes)
            .into_iter()
            .map(|c| c as u16)
            .collect())
    }

    /// Fraction of `data` classified correctly when presented as `task`.
    pub fn accuracy(&self, data: &Dataset, task: u16) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::invalid("accuracy on an empty dataset"));
        }
        let mut correct = 0usize;
        let idx: Vec<usize> = (0..data.len()).collect();
        for chunk in idx.chunks(500) {
            let x = data.batch(chunk);
            let pred = self.predict(&x, &vec![task; chunk.len()])?;
            correct += chunk
                .iter()
                .zip(pred)
                .filter(|(&i, p)| data.label(i) == *p)
                .count();
        }
        Ok(correct as f64 / data.len() as f64)
    }
}

const MODEL_MAGIC: &[u8; 4] = b"SRMF";
const MODEL_VERSION: u16 = 1;

impl Classifier {
    /// Parameters only; the architecture must be rebuilt by the caller.
    pub fn write_params(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        codec::write_u16(w, MODEL_VERSION)?;
        codec::write_u64(w, self.params.count() as u64)?;
        codec::write_reals(w, &self.params.flatten_values())?;
        Ok(())
    }

    pub fn read_params(&mut self, r: &mut impl Read) -> Result<()> {
        codec::expect_magic(r, MODEL_MAGIC)?;
        codec::expect_version(r, MODEL_VERSION)?;
        let n = codec::read_u64(r, "parameter count")? as usize;
        if n != self.params.count() {
            return Err(Error::Format(format!(
                "file holds {n} parameters, model has {}",
                self.params.count()
            )));
        }
        let values = codec::read_reals(r, n, "parameters")?;
        codec::expect_eof(r)?;
        self.params.set_flat_values(&values)
    }

    pub fn save_params(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_params(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_params(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.read_params(&mut BufReader::new(File::open(path)?))
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn task_heads_restrict_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = Classifier::mlp([1, 4, 4], 4, &mut rng)
            .unwrap()
            .with_conditioning(Conditioning::TaskHeads(vec![vec![0, 1], vec![2, 3]]))
            .unwrap();
        let x = Tensor::from_fn(vec![6, 1, 4, 4], |i| (i as Real * 0.13).sin());
        let p0 = f.predict(&x, &[0; 6]).unwrap();
        let p1 = f.predict(&x, &[1; 6]).unwrap();
        assert!(p0.iter().all(|&c| c < 2));
        assert!(p1.iter().all(|&c| c >= 2));
        let probs = f.probabilities(&x, &[1; 6]).unwrap();
        assert!(probs.data().chunks(4).all(|r| r[0] == 0.0 && r[1] == 0.0));
    }

    #[test]
    fn gradient_leaves_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut f = Classifier::mlp([1, 3, 3], 3, &mut rng).unwrap();
        let x = Tensor::from_fn(vec![2, 1, 3, 3], |i| i as Real / 18.0);
        let before = f.params().flatten_values();
        let g = f.gradient(&x, &[0, 0], &[1, 2]).unwrap();
        assert_eq!(g.len(), before.len());
        assert_eq!(f.params().flatten_values(), before);
        assert!(f.params().flatten_grads().iter().all(|&v| v == 0.0));
    }
}
