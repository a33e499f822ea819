//! Trainable parameters with paired gradients, plain SGD, and an optional
//! Adam update.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Tensor,
}

/// Named parameter tensors in declaration order. Every gradient has the
/// shape of its parameter.
#[derive(Clone, Debug, Default)]
pub struct ParameterSet {
    entries: Vec<Entry>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape().to_vec());
        self.entries.push(Entry {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Glorot-uniform initialised tensor: U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
    pub fn add_glorot<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let value = Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-a..a) as Real);
        self.add(name, value)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape.to_vec()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].grad
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().fill(0.0);
        }
    }

    /// `θ ← θ − lr·g`, then clear gradients. A zero rate only clears.
    pub fn sgd_step(&mut self, lr: Real) -> Result<()> {
        self.apply_gradients(lr)?;
        self.zero_grad();
        Ok(())
    }

    /// `θ ← θ − lr·g` leaving gradients in place.
    pub fn apply_gradients(&mut self, lr: Real) -> Result<()> {
        if !lr.is_finite() || lr < 0.0 {
            return Err(Error::invalid(format!(
                "learning rate must be >= 0, got {lr}"
            )));
        }
        if lr == 0.0 {
            return Ok(());
        }
        for e in &mut self.entries {
            e.value.axpy(-lr, &e.grad)?;
        }
        Ok(())
    }

    /// All parameter values concatenated in declaration order.
    pub fn flatten_values(&self) -> Vec<Real> {
        self.entries
            .iter()
            .flat_map(|e| e.value.data().iter().copied())
            .collect()
    }

    /// All gradients concatenated in declaration order.
    pub fn flatten_grads(&self) -> Vec<Real> {
        self.entries
            .iter()
            .flat_map(|e| e.grad.data().iter().copied())
            .collect()
    }

    pub fn set_flat_values(&mut self, flat: &[Real]) -> Result<()> {
        if flat.len() != self.count() {
            return Err(Error::shape(
                "set_flat_values",
                &[self.count()],
                &[flat.len()],
            ));
        }
        let mut off = 0;
        for e in &mut self.entries {
            let n = e.value.len();
            e.value.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Subtract `lr · direction` where `direction` is laid out like [`flatten_grads`](Self::flatten_grads).
    pub fn step_along(&mut self, direction: &[Real], lr: Real) -> Result<()> {
        if direction.len() != self.count() {
            return Err(Error::shape(
                "step_along",
                &[self.count()],
                &[direction.len()],
            ));
        }
        let mut off = 0;
        for e in &mut self.entries {
            let n = e.value.len();
            for (v, d) in e.value.data_mut().iter_mut().zip(&direction[off..off + n]) {
                *v -= lr * d;
            }
            off += n;
        }
        self.zero_grad();
        Ok(())
    }

    /// FNV-1a over the bit patterns of the given parameters.
    pub fn fingerprint(&self, ids: impl IntoIterator<Item = ParamId>) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for id in ids {
            for v in self.entries[id.0].value.data() {
                for b in (*v as f64).to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }
}

/// Update rule applied by [`Optimizer::step`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OptimizerKind {
    #[default]
    Sgd,
    /// Adam with `β1 = 0.9`, `β2 = 0.999`, `ε = 1e-8`.
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::Config(format!("unknown optimizer {s:?} (sgd|adam)"))),
        }
    }
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Optimizer with its moment estimates, laid out like
/// [`ParameterSet::flatten_grads`].
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    t: u64,
    m: Vec<Real>,
    v: Vec<Real>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Updates taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies the accumulated gradients, then clears them.
    pub fn step(&mut self, params: &mut ParameterSet, lr: Real) -> Result<()> {
        if self.kind == OptimizerKind::Sgd {
            self.t += 1;
            return params.sgd_step(lr);
        }
        if !lr.is_finite() || lr < 0.0 {
            return Err(Error::invalid(format!(
                "learning rate must be >= 0, got {lr}"
            )));
        }
        let n = params.count();
        if self.m.is_empty() {
            self.m = vec![0.0; n];
            self.v = vec![0.0; n];
        } else if self.m.len() != n {
            return Err(Error::shape("optimizer state", &[self.m.len()], &[n]));
        }
        self.t += 1;
        let t = self.t.min(i32::MAX as u64) as i32;
        let c1 = 1.0 - ADAM_B1.powi(t);
        let c2 = 1.0 - ADAM_B2.powi(t);
        let mut off = 0;
        for e in &mut params.entries {
            let len = e.value.len();
            let (m, v) = (&mut self.m[off..off + len], &mut self.v[off..off + len]);
            for (((w, &g), m), v) in e
                .value
                .data_mut()
                .iter_mut()
                .zip(e.grad.data())
                .zip(m)
                .zip(v)
            {
                let g = g as f64;
                let mf = ADAM_B1 * *m as f64 + (1.0 - ADAM_B1) * g;
                let vf = ADAM_B2 * *v as f64 + (1.0 - ADAM_B2) * g * g;
                *m = mf as Real;
                *v = vf as Real;
                *w -= (lr as f64 * (mf / c1) / ((vf / c2).sqrt() + ADAM_EPS)) as Real;
            }
            off += len;
        }
        params.zero_grad();
        Ok(())
    }

    pub(crate) fn state(&self) -> (u64, &[Real], &[Real]) {
        (self.t, &self.m, &self.v)
    }

    pub(crate) fn restore(&mut self, t: u64, m: Vec<Real>, v: Vec<Real>) -> Result<()> {
        if m.len() != v.len() {
            return Err(Error::Format("optimizer moments differ in length".into()));
        }
        self.t = t;
        self.m = m;
        self.v = v;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: Real, g: Real) -> (ParameterSet, ParamId) {
        let mut p = ParameterSet::new();
        let id = p.add("theta", Tensor::scalar(v));
        p.grad_mut(id).data_mut()[0] = g;
        (p, id)
    }

    #[test]
    fn sgd_formula() {
        let (mut p, id) = one_param(1.0, 2.0);
        p.sgd_step(0.1).unwrap();
        assert!((p.value(id).item() - 0.8).abs() < 1e-15);
        assert_eq!(p.grad(id).item(), 0.0);
    }

    #[test]
    fn zero_rate_leaves_parameters() {
        let (mut p, id) = one_param(1.0, 2.0);
        p.sgd_step(0.0).unwrap();
        assert_eq!(p.value(id).item(), 1.0);
    }

    #[test]
    fn negative_rate_rejected() {
        let (mut p, _) = one_param(1.0, 2.0);
        assert!(p.sgd_step(-0.1).is_err());
        assert!(p.sgd_step(Real::NAN).is_err());
    }

    #[test]
    fn two_steps_equal_one_double_step() {
        let (mut a, id) = one_param(0.3, -1.7);
        let (mut b, _) = one_param(0.3, -1.7);
        a.apply_gradients(0.05).unwrap();
        a.apply_gradients(0.05).unwrap();
        b.apply_gradients(0.1).unwrap();
        assert!((a.value(id).item() - b.value(id).item()).abs() < 1e-15);
    }

    #[test]
    fn count_is_sum_of_elements() {
        let mut p = ParameterSet::new();
        p.add_zeros("w", &[3, 4]);
        p.add_zeros("b", &[4]);
        assert_eq!(p.count(), 16);
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let (mut p, id) = one_param(1.0, 2.0);
        let mut opt = Optimizer::new(OptimizerKind::Adam);
        opt.step(&mut p, 0.01).unwrap();
        assert!((p.value(id).item() - (1.0 - 0.01 * 2.0 / (2.0 + 1e-8))).abs() < 1e-12);
        assert_eq!(p.grad(id).item(), 0.0);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn sgd_optimizer_matches_sgd_step() {
        let (mut a, id) = one_param(0.5, 1.5);
        let (mut b, _) = one_param(0.5, 1.5);
        Optimizer::new(OptimizerKind::Sgd)
            .step(&mut a, 0.2)
            .unwrap();
        b.sgd_step(0.2).unwrap();
        assert_eq!(a.value(id).item(), b.value(id).item());
    }

    #[test]
    fn optimizer_names_roundtrip() {
        for k in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            assert_eq!(k.name().parse::<OptimizerKind>().unwrap(), k);
        }
        assert!("rmsprop".parse::<OptimizerKind>().is_err());
    }
}
