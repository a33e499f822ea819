//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! copied in from a [`ParameterSet`] and [`Graph::backward`] accumulates their
//! gradients back into it. A graph can be differentiated once; a new forward
//! pass needs a new graph.

use crate::error::{Error, Result};
use crate::linalg::{self, ConvGeometry};
use crate::params::{ParamId, ParameterSet};
use crate::tensor::{as_matrix, Real, Tensor};

/// Smallest probability fed to a logarithm by the loss functions.
pub const PROB_CLAMP: Real = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    AddChannelBias(Var, Var),
    Conv2d {
        input: Var,
        kernels: Var,
        geo: ConvGeometry,
    },
    Deconv2d {
        input: Var,
        kernels: Var,
        geo: ConvGeometry,
    },
    Reshape(Var),
    Relu(Var),
    Sigmoid(Var),
    GroupSoftmax {
        input: Var,
        group: usize,
    },
    GumbelSoftmax {
        logits: Var,
        relaxed: Tensor,
        tau: Real,
        group: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, Real),
    Sum(Var),
    Mean(Var),
    Bce {
        pred: Var,
        target: Tensor,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Tensor,
        target: Tensor,
    },
    KlToUniform {
        logits: Var,
        probs: Tensor,
        group: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    differentiated: bool,
}

/// Gradients of every node reached by a backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn softmax_rows(data: &[Real], group: usize, out: &mut [Real]) {
    for (src, dst) in data.chunks(group).zip(out.chunks_mut(group)) {
        let max = src.iter().copied().fold(Real::NEG_INFINITY, Real::max);
        let mut total = 0.0;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            total += *d;
        }
        for d in dst.iter_mut() {
            *d /= total;
        }
    }
}

/// Row-wise softmax over consecutive groups of `group` values.
pub fn group_softmax(data: &[Real], group: usize) -> Vec<Real> {
    let mut out = vec![0.0; data.len()];
    softmax_rows(data, group, &mut out);
    out
}

/// `grad_in = y ⊙ (grad_out − Σ_group grad_out·y)`
fn softmax_backward(
    y: &[Real],
    grad_out: &[Real],
    group: usize,
    scale: Real,
    grad_in: &mut [Real],
) {
    for ((yy, go), gi) in y
        .chunks(group)
        .zip(grad_out.chunks(group))
        .zip(grad_in.chunks_mut(group))
    {
        let dot: Real = yy.iter().zip(go).map(|(a, b)| a * b).sum();
        for ((g, &y), &o) in gi.iter_mut().zip(yy).zip(go) {
            *g += scale * y * (o - dot);
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn input(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Input, "input")
    }

    pub fn param(&mut self, params: &ParameterSet, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: params.value(id).clone(),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    /// `x [m×n] + bias [n]`, broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = as_matrix(self.value(x), "add_row_bias")?;
        if self.shape(bias) != [n] {
            return Err(Error::shape(
                "add_row_bias",
                self.shape(x),
                self.shape(bias),
            ));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n) {
            for (v, bb) in row.iter_mut().zip(&b) {
                *v += bb;
            }
        }
        self.push(out, Op::AddRowBias(x, bias), "add_row_bias")
    }

    /// `x [B, C, H, W] + bias [C]`.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 || self.shape(bias) != [shape[1]] {
            return Err(Error::shape("add_channel_bias", &shape, self.shape(bias)));
        }
        let plane = shape[2] * shape[3];
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let bb = b[i % shape[1]];
            chunk.iter_mut().for_each(|v| *v += bb);
        }
        self.push(out, Op::AddChannelBias(x, bias), "add_channel_bias")
    }

    /// Cross-correlation of `input [B, C, H, W]` with `kernels [F, C, k, k]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernels: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (geo, batch, filters) =
            conv_geometry(self.shape(input), self.shape(kernels), stride, padding)?;
        let mut out = Tensor::zeros([batch, filters, geo.out_height(), geo.out_width()]);
        linalg::conv_forward(
            &geo,
            batch,
            filters,
            self.value(input).data(),
            self.value(kernels).data(),
            out.data_mut(),
        );
        self.push(
            out,
            Op::Conv2d {
                input,
                kernels,
                geo,
            },
            "conv2d",
        )
    }

    /// Transposed convolution, the adjoint of [`conv2d`](Self::conv2d) with the
    /// same kernel tensor. `input [B, F, H', W']`, `kernels [F, C, k, k]`,
    /// output `[B, C, out_hw.0, out_hw.1]`. With `out_hw = None` the output
    /// size is `(H' − 1)·stride − 2·padding + k`.
    pub fn deconv2d(
        &mut self,
        input: Var,
        kernels: Var,
        stride: usize,
        padding: usize,
        out_hw: Option<(usize, usize)>,
    ) -> Result<Var> {
        let (geo, batch, filters) = deconv_geometry(
            self.shape(input),
            self.shape(kernels),
            stride,
            padding,
            out_hw,
        )?;
        let mut out = Tensor::zeros([batch, geo.channels, geo.height, geo.width]);
        linalg::deconv_forward(
            &geo,
            batch,
            filters,
            self.value(input).data(),
            self.value(kernels).data(),
            out.data_mut(),
        );
        self.push(
            out,
            Op::Deconv2d {
                input,
                kernels,
                geo,
            },
            "deconv2d",
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        self.push(out, Op::Reshape(x), "reshape")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x), "relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x), "sigmoid")
    }

    /// Softmax over consecutive groups of `group` elements.
    pub fn group_softmax(&mut self, x: Var, group: usize) -> Result<Var> {
        check_group(self.value(x), group, "group_softmax")?;
        let data = group_softmax(self.value(x).data(), group);
        let out = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(out, Op::GroupSoftmax { input: x, group }, "group_softmax")
    }

    /// Gumbel-softmax relaxation of grouped logits with injected noise:
    /// `y = softmax((g + log p)/τ)` where `p = softmax(logits)`.
    ///
    /// With `hard`, the forward value is `one_hot(argmax y)` (the Gumbel-max
    /// sample under the same noise) while the backward pass uses the
    /// Jacobian of the relaxed `y` (straight-through).
    pub fn gumbel_softmax(
        &mut self,
        logits: Var,
        noise: &Tensor,
        tau: Real,
        group: usize,
        hard: bool,
    ) -> Result<Var> {
        if !(tau > 0.0) {
            return Err(Error::invalid(format!(
                "temperature must be > 0, got {tau}"
            )));
        }
        check_group(self.value(logits), group, "gumbel_softmax")?;
        if noise.shape() != self.shape(logits) {
            return Err(Error::shape(
                "gumbel_softmax",
                self.shape(logits),
                noise.shape(),
            ));
        }
        let scaled: Vec<Real> = self
            .value(logits)
            .data()
            .iter()
            .zip(noise.data())
            .map(|(a, g)| (a + g) / tau)
            .collect();
        let relaxed = Tensor::new(self.shape(logits).to_vec(), group_softmax(&scaled, group))?;
        let value = if hard {
            one_hot_argmax(&relaxed, group)
        } else {
            relaxed.clone()
        };
        self.push(
            value,
            Op::GumbelSoftmax {
                logits,
                relaxed,
                tau,
                group,
            },
            "gumbel_softmax",
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", self.shape(a), self.shape(b)));
        }
        let mut out = self.value(a).clone();
        out.axpy(1.0, self.value(b))?;
        self.push(out, Op::Add(a, b), "add")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mul", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, x: Var, s: Real) -> Result<Var> {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s), "scale")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::scalar(t.sum() / t.len().max(1) as Real);
        self.push(out, Op::Mean(x), "mean")
    }

    /// Mean binary cross-entropy; predictions are clamped to
    /// `[PROB_CLAMP, 1 − PROB_CLAMP]` before the logarithm.
    pub fn bce_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        if self.value(pred).len() != target.len() {
            return Err(Error::shape("bce_loss", self.shape(pred), target.shape()));
        }
        let loss = bce(self.value(pred).data(), target.data());
        self.push(
            Tensor::scalar(loss),
            Op::Bce {
                pred,
                target: target.clone(),
            },
            "bce_loss",
        )
    }

    /// Softmax cross-entropy of `logits [B, K]` against target
    /// distributions `[B, K]`, averaged over the batch.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: &Tensor) -> Result<Var> {
        let (_, k) = as_matrix(self.value(logits), "softmax_cross_entropy")?;
        if self.shape(logits) != target.shape() {
            return Err(Error::shape(
                "softmax_cross_entropy",
                self.shape(logits),
                target.shape(),
            ));
        }
        let probs = Tensor::new(
            self.shape(logits).to_vec(),
            group_softmax(self.value(logits).data(), k),
        )?;
        let rows = probs.shape()[0].max(1) as Real;
        let loss: Real = probs
            .data()
            .iter()
            .zip(target.data())
            .filter(|(_, &t)| t != 0.0)
            .map(|(&p, &t)| -t * p.max(Real::MIN_POSITIVE).ln())
            .sum::<Real>()
            / rows;
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                target: target.clone(),
            },
            "softmax_cross_entropy",
        )
    }

    /// Mean over rows of `KL(softmax(logits_group) ‖ uniform)` summed over groups.
    pub fn kl_to_uniform(&mut self, logits: Var, group: usize) -> Result<Var> {
        check_group(self.value(logits), group, "kl_to_uniform")?;
        let rows = self.shape(logits)[0].max(1) as Real;
        let probs = Tensor::new(
            self.shape(logits).to_vec(),
            group_softmax(self.value(logits).data(), group),
        )?;
        let log_l = (group as Real).ln();
        let kl: Real = probs
            .data()
            .chunks(group)
            .map(|p| {
                p.iter()
                    .map(|&q| if q > 0.0 { q * q.ln() } else { 0.0 })
                    .sum::<Real>()
                    + log_l
            })
            .sum::<Real>()
            / rows;
        self.push(
            Tensor::scalar(kl),
            Op::KlToUniform {
                logits,
                probs,
                group,
            },
            "kl_to_uniform",
        )
    }

    /// Reverse pass from a scalar `loss`; parameter gradients are
    /// accumulated into `params`.
    pub fn backward(&mut self, loss: Var, params: &mut ParameterSet) -> Result<()> {
        let grads = self.backward_full(loss)?;
        for (node, grad) in self.nodes.iter().zip(&grads.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, grad) {
                params.grad_mut(*id).axpy(1.0, g)?;
            }
        }
        Ok(())
    }

    /// Reverse pass returning the gradient of every node.
    pub fn backward_full(&mut self, loss: Var) -> Result<Gradients> {
        if self.differentiated {
            return Err(Error::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.differentiated = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let gd = g.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [Real])| {
            let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.shape(v).to_vec()));
            f(slot.data_mut());
        };
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = as_matrix(self.value(*a), "matmul")?;
                let (_, n) = as_matrix(self.value(*b), "matmul")?;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| {
                    linalg::gemm(m, n, k, gd, false, bv, true, ga, 1.0)
                });
                acc(*b, &mut |gb| {
                    linalg::gemm(k, m, n, av, true, gd, false, gb, 1.0)
                });
            }
            Op::AddRowBias(x, b) => {
                let n = self.shape(*b)[0];
                acc(*x, &mut |gx| {
                    gx.iter_mut().zip(gd).for_each(|(a, b)| *a += b)
                });
                acc(*b, &mut |gb| {
                    for row in gd.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::AddChannelBias(x, b) => {
                let s = self.shape(*x);
                let (c, plane) = (s[1], s[2] * s[3]);
                acc(*x, &mut |gx| {
                    gx.iter_mut().zip(gd).for_each(|(a, b)| *a += b)
                });
                acc(*b, &mut |gb| {
                    for (i, chunk) in gd.chunks(plane).enumerate() {
                        gb[i % c] += chunk.iter().sum::<Real>();
                    }
                });
            }
            Op::Conv2d {
                input,
                kernels,
                geo,
            } => {
                let batch = self.shape(*input)[0];
                let filters = self.shape(*kernels)[0];
                let (iv, kv) = (self.value(*input).data(), self.value(*kernels).data());
                acc(*input, &mut |gi| {
                    linalg::conv_backward(geo, batch, filters, iv, kv, gd, Some(gi), None)
                });
                acc(*kernels, &mut |gk| {
                    linalg::conv_backward(geo, batch, filters, iv, kv, gd, None, Some(gk))
                });
            }
            Op::Deconv2d {
                input,
                kernels,
                geo,
            } => {
                let batch = self.shape(*input)[0];
                let filters = self.shape(*kernels)[0];
                let (iv, kv) = (self.value(*input).data(), self.value(*kernels).data());
                acc(*input, &mut |gi| {
                    linalg::deconv_backward(geo, batch, filters, iv, kv, gd, Some(gi), None)
                });
                acc(*kernels, &mut |gk| {
                    linalg::deconv_backward(geo, batch, filters, iv, kv, gd, None, Some(gk))
                });
            }
            Op::Reshape(x) => acc(*x, &mut |gx| {
                gx.iter_mut().zip(gd).for_each(|(a, b)| *a += b)
            }),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &mut |gx| {
                    for ((a, &b), &v) in gx.iter_mut().zip(gd).zip(xv) {
                        if v > 0.0 {
                            *a += b;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(*x, &mut |gx| {
                    for ((a, &b), &s) in gx.iter_mut().zip(gd).zip(y) {
                        *a += b * s * (1.0 - s);
                    }
                });
            }
            Op::GroupSoftmax { input, group } => {
                let y = node.value.data();
                acc(*input, &mut |gx| softmax_backward(y, gd, *group, 1.0, gx));
            }
            Op::GumbelSoftmax {
                logits,
                relaxed,
                tau,
                group,
            } => {
                let y = relaxed.data();
                acc(*logits, &mut |gx| {
                    softmax_backward(y, gd, *group, 1.0 / *tau, gx)
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| {
                    ga.iter_mut().zip(gd).for_each(|(x, y)| *x += y)
                });
                acc(*b, &mut |gb| {
                    gb.iter_mut().zip(gd).for_each(|(x, y)| *x += y)
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| {
                    ga.iter_mut()
                        .zip(gd)
                        .zip(bv)
                        .for_each(|((x, g), y)| *x += g * y)
                });
                acc(*b, &mut |gb| {
                    gb.iter_mut()
                        .zip(gd)
                        .zip(av)
                        .for_each(|((x, g), y)| *x += g * y)
                });
            }
            Op::Scale(x, s) => acc(*x, &mut |gx| {
                gx.iter_mut().zip(gd).for_each(|(a, b)| *a += s * b)
            }),
            Op::Sum(x) => acc(*x, &mut |gx| gx.iter_mut().for_each(|a| *a += gd[0])),
            Op::Mean(x) => {
                let n = self.value(*x).len().max(1) as Real;
                acc(*x, &mut |gx| gx.iter_mut().for_each(|a| *a += gd[0] / n));
            }
            Op::Bce { pred, target } => {
                let pv = self.value(*pred).data();
                let n = pv.len().max(1) as Real;
                acc(*pred, &mut |gp| {
                    for ((a, &p), &t) in gp.iter_mut().zip(pv).zip(target.data()) {
                        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                        *a += gd[0] * (-t / p + (1.0 - t) / (1.0 - p)) / n;
                    }
                });
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                target,
            } => {
                let k = probs.shape()[1];
                let rows = probs.shape()[0].max(1) as Real;
                acc(*logits, &mut |gl| {
                    for ((gr, pr), tr) in gl
                        .chunks_mut(k)
                        .zip(probs.data().chunks(k))
                        .zip(target.data().chunks(k))
                    {
                        let mass: Real = tr.iter().sum();
                        for ((a, &p), &t) in gr.iter_mut().zip(pr).zip(tr) {
                            *a += gd[0] * (p * mass - t) / rows;
                        }
                    }
                });
            }
            Op::KlToUniform {
                logits,
                probs,
                group,
            } => {
                let rows = probs.shape()[0].max(1) as Real;
                acc(*logits, &mut |gl| {
                    for (gr, pr) in gl.chunks_mut(*group).zip(probs.data().chunks(*group)) {
                        let ent: Real = pr
                            .iter()
                            .map(|&q| if q > 0.0 { q * q.ln() } else { 0.0 })
                            .sum();
                        for (a, &q) in gr.iter_mut().zip(pr) {
                            let lq = if q > 0.0 { q.ln() } else { 0.0 };
                            *a += gd[0] * q * (lq - ent) / rows;
                        }
                    }
                });
            }
        }
        Ok(())
    }
}

pub fn sigmoid(v: Real) -> Real {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy with clamped predictions.
pub fn bce(pred: &[Real], target: &[Real]) -> Real {
    let n = pred.len().max(1) as Real;
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum::<Real>()
        / n
}

/// Argmax per group, lowest index on ties.
pub fn group_argmax(data: &[Real], group: usize) -> Vec<usize> {
    data.chunks(group)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn one_hot_argmax(t: &Tensor, group: usize) -> Tensor {
    let mut out = Tensor::zeros(t.shape().to_vec());
    for (row, idx) in group_argmax(t.data(), group).into_iter().enumerate() {
        out.data_mut()[row * group + idx] = 1.0;
    }
    out
}

fn check_group(t: &Tensor, group: usize, op: &'static str) -> Result<()> {
    if group == 0
        || !t.len().is_multiple_of(group)
        || t.shape().last().is_none_or(|&d| !d.is_multiple_of(group))
    {
        return Err(Error::shape(op, t.shape(), &[group]));
    }
    Ok(())
}

pub(crate) fn conv_geometry(
    input: &[usize],
    kernels: &[usize],
    stride: usize,
    padding: usize,
) -> Result<(ConvGeometry, usize, usize)> {
    let [b, c, h, w] = dims4(input, "conv2d")?;
    let [f, kc, kh, kw] = dims4(kernels, "conv2d")?;
    if kc != c || kh != kw {
        return Err(Error::shape("conv2d", input, kernels));
    }
    let geo = ConvGeometry {
        channels: c,
        height: h,
        width: w,
        kernel: kh,
        stride,
        padding,
    };
    if !geo.valid() {
        return Err(Error::invalid(format!(
            "conv2d: kernel {kh} stride {stride} padding {padding} does not fit input {h}x{w}"
        )));
    }
    Ok((geo, b, f))
}

pub(crate) fn deconv_geometry(
    input: &[usize],
    kernels: &[usize],
    stride: usize,
    padding: usize,
    out_hw: Option<(usize, usize)>,
) -> Result<(ConvGeometry, usize, usize)> {
    let [b, f, h, w] = dims4(input, "deconv2d")?;
    let [kf, c, kh, kw] = dims4(kernels, "deconv2d")?;
    if kf != f || kh != kw || stride == 0 {
        return Err(Error::shape("deconv2d", input, kernels));
    }
    let (oh, ow) = match out_hw {
        Some(hw) => hw,
        None => {
            let full = |n: usize| ((n - 1) * stride + kh).checked_sub(2 * padding);
            match (full(h), full(w)) {
                (Some(oh), Some(ow)) => (oh, ow),
                _ => return Err(Error::invalid("deconv2d: padding larger than output")),
            }
        }
    };
    let geo = ConvGeometry {
        channels: c,
        height: oh,
        width: ow,
        kernel: kh,
        stride,
        padding,
    };
    if !geo.valid() || geo.out_height() != h || geo.out_width() != w {
        return Err(Error::invalid(format!(
            "deconv2d: output {oh}x{ow} is not consistent with input {h}x{w} (kernel {kh}, stride {stride}, padding {padding})"
        )));
    }
    Ok((geo, b, f))
}

fn dims4(s: &[usize], op: &'static str) -> Result<[usize; 4]> {
    s.try_into().map_err(|_| Error::shape(op, s, &[0, 0, 0, 0]))
}

/// Convolution of a single `[C, H, W]` image (or a `[B, C, H, W]` batch).
pub fn conv2d(input: &Tensor, kernels: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let mut g = Graph::new();
    let (x, squeeze) = lift_batch(&mut g, input)?;
    let k = g.input(kernels.clone())?;
    let y = g.conv2d(x, k, stride, padding)?;
    squeeze_batch(g.value(y).clone(), squeeze)
}

/// Transposed convolution of a single `[F, H', W']` image (or a batch).
pub fn deconv2d(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    padding: usize,
    out_hw: Option<(usize, usize)>,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let (x, squeeze) = lift_batch(&mut g, input)?;
    let k = g.input(kernels.clone())?;
    let y = g.deconv2d(x, k, stride, padding, out_hw)?;
    squeeze_batch(g.value(y).clone(), squeeze)
}

fn lift_batch(g: &mut Graph, input: &Tensor) -> Result<(Var, bool)> {
    match input.shape().len() {
        3 => {
            let mut s = vec![1];
            s.extend_from_slice(input.shape());
            Ok((g.input(input.clone().reshape(s)?)?, true))
        }
        4 => Ok((g.input(input.clone())?, false)),
        _ => Err(Error::shape("conv", input.shape(), &[0, 0, 0])),
    }
}

fn squeeze_batch(t: Tensor, squeeze: bool) -> Result<Tensor> {
    if squeeze {
        let s = t.shape()[1..].to_vec();
        t.reshape(s)
    } else {
        Ok(t)
    }
}

/// Free-standing mean binary cross-entropy on tensors.
pub fn bce_loss(pred: &Tensor, target: &Tensor) -> Result<Real> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("bce_loss", pred.shape(), target.shape()));
    }
    Ok(bce(pred.data(), target.data()))
}
