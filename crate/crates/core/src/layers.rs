//! Layer specifications and sequential networks built from them.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParameterSet};
use crate::tensor::Tensor;

/// Kernel size used by every convolution unless overridden.
pub const DEFAULT_KERNEL: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    /// Softmax over consecutive groups of this many units.
    SoftmaxPerGroup(usize),
    Identity,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Transposed convolution producing an `output` sized image.
    Deconv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output: (usize, usize),
    },
    Activation(Activation),
    /// `[B, ...] -> [B, prod(...)]`
    Flatten,
    /// `[B, n] -> [B, shape...]`
    Reshape(Vec<usize>),
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel: DEFAULT_KERNEL,
            stride,
            padding,
        }
    }

    pub fn deconv(
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        padding: usize,
        output: (usize, usize),
    ) -> Self {
        LayerSpec::Deconv2d {
            in_channels,
            out_channels,
            kernel: DEFAULT_KERNEL,
            stride,
            padding,
            output,
        }
    }

    /// Shape of one example after this layer, given the shape before it.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = || Error::shape("layer", input, &[]);
        match self {
            LayerSpec::Dense { inputs, outputs } => {
                if input != [*inputs] {
                    return Err(Error::invalid(format!(
                        "dense layer expects [{inputs}], previous layer gives {input:?}"
                    )));
                }
                Ok(vec![*outputs])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = input.try_into().map_err(|_| bad())?;
                if c != *in_channels
                    || *stride == 0
                    || h + 2 * padding < *kernel
                    || w + 2 * padding < *kernel
                {
                    return Err(Error::invalid(format!(
                        "conv layer {self:?} cannot take input {input:?}"
                    )));
                }
                Ok(vec![
                    *out_channels,
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                ])
            }
            LayerSpec::Deconv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                output,
            } => {
                let [c, h, w] = input.try_into().map_err(|_| bad())?;
                let fits = |o: usize, i: usize| {
                    o + 2 * padding >= *kernel && (o + 2 * padding - kernel) / stride + 1 == i
                };
                if c != *in_channels || *stride == 0 || !fits(output.0, h) || !fits(output.1, w) {
                    return Err(Error::invalid(format!(
                        "deconv layer {self:?} cannot take input {input:?}"
                    )));
                }
                Ok(vec![*out_channels, output.0, output.1])
            }
            LayerSpec::Activation(Activation::SoftmaxPerGroup(g)) => {
                let n: usize = input.iter().product();
                if *g == 0
                    || input.last().is_none_or(|d| !d.is_multiple_of(*g))
                    || !n.is_multiple_of(*g)
                {
                    return Err(Error::invalid(format!(
                        "softmax group {g} does not divide {input:?}"
                    )));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Activation(_) => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Reshape(shape) => {
                if shape.iter().product::<usize>() != input.iter().product::<usize>() {
                    return Err(Error::shape("reshape layer", input, shape));
                }
                Ok(shape.clone())
            }
        }
    }
}

#[derive(Clone, Debug)]
struct Layer {
    spec: LayerSpec,
    weight: Option<ParamId>,
    bias: Option<ParamId>,
}

/// A chain of layers whose parameters live in a shared [`ParameterSet`].
#[derive(Clone, Debug)]
pub struct Network {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl Network {
    /// Validates that adjacent layers fit together and registers
    /// Glorot-uniform weights and zero biases under `prefix`.
    pub fn build<R: Rng + ?Sized>(
        input_shape: &[usize],
        specs: &[LayerSpec],
        params: &mut ParameterSet,
        prefix: &str,
        rng: &mut R,
    ) -> Result<Network> {
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let next = spec.output_shape(&shape)?;
            let (weight, bias) = match spec {
                LayerSpec::Dense { inputs, outputs } => (
                    Some(params.add_glorot(
                        format!("{prefix}.{i}.weight"),
                        &[*inputs, *outputs],
                        *inputs,
                        *outputs,
                        rng,
                    )),
                    Some(params.add_zeros(format!("{prefix}.{i}.bias"), &[*outputs])),
                ),
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    let area = kernel * kernel;
                    (
                        Some(params.add_glorot(
                            format!("{prefix}.{i}.kernel"),
                            &[*out_channels, *in_channels, *kernel, *kernel],
                            in_channels * area,
                            out_channels * area,
                            rng,
                        )),
                        Some(params.add_zeros(format!("{prefix}.{i}.bias"), &[*out_channels])),
                    )
                }
                LayerSpec::Deconv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    let area = kernel * kernel;
                    (
                        Some(params.add_glorot(
                            format!("{prefix}.{i}.kernel"),
                            &[*in_channels, *out_channels, *kernel, *kernel],
                            in_channels * area,
                            out_channels * area,
                            rng,
                        )),
                        Some(params.add_zeros(format!("{prefix}.{i}.bias"), &[*out_channels])),
                    )
                }
                _ => (None, None),
            };
            layers.push(Layer {
                spec: spec.clone(),
                weight,
                bias,
            });
            shape = next;
        }
        Ok(Network {
            input_shape: input_shape.to_vec(),
            output_shape: shape,
            layers,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn specs(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().map(|l| &l.spec)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.into_iter().chain(l.bias))
            .collect()
    }

    /// Forward a batch `[B, input_shape...]` through every layer.
    pub fn forward(&self, g: &mut Graph, params: &ParameterSet, x: Var) -> Result<Var> {
        let batch = g.shape(x)[0];
        if g.shape(x)[1..] != self.input_shape[..] {
            let mut want = vec![batch];
            want.extend_from_slice(&self.input_shape);
            return Err(Error::shape("network input", g.shape(x), &want));
        }
        let mut h = x;
        for layer in &self.layers {
            h = match &layer.spec {
                LayerSpec::Dense { .. } => {
                    let w = g.param(params, layer.weight.expect("dense weight"));
                    let b = g.param(params, layer.bias.expect("dense bias"));
                    let y = g.matmul(h, w)?;
                    g.add_row_bias(y, b)?
                }
                LayerSpec::Conv2d {
                    stride, padding, ..
                } => {
                    let k = g.param(params, layer.weight.expect("conv kernel"));
                    let b = g.param(params, layer.bias.expect("conv bias"));
                    let y = g.conv2d(h, k, *stride, *padding)?;
                    g.add_channel_bias(y, b)?
                }
                LayerSpec::Deconv2d {
                    stride,
                    padding,
                    output,
                    ..
                } => {
                    let k = g.param(params, layer.weight.expect("deconv kernel"));
                    let b = g.param(params, layer.bias.expect("deconv bias"));
                    let y = g.deconv2d(h, k, *stride, *padding, Some(*output))?;
                    g.add_channel_bias(y, b)?
                }
                LayerSpec::Activation(Activation::Relu) => g.relu(h)?,
                LayerSpec::Activation(Activation::Sigmoid) => g.sigmoid(h)?,
                LayerSpec::Activation(Activation::SoftmaxPerGroup(group)) => {
                    g.group_softmax(h, *group)?
                }
                LayerSpec::Activation(Activation::Identity) => h,
                LayerSpec::Flatten => {
                    let n = g.shape(h)[1..].iter().product();
                    g.reshape(h, &[batch, n])?
                }
                LayerSpec::Reshape(shape) => {
                    let mut s = vec![batch];
                    s.extend_from_slice(shape);
                    g.reshape(h, &s)?
                }
            };
        }
        Ok(h)
    }

    /// Forward without keeping the graph.
    pub fn infer(&self, params: &ParameterSet, x: Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let v = g.input(x)?;
        let y = self.forward(&mut g, params, v)?;
        Ok(g.value(y).clone())
    }
}

/// Multi-layer perceptron with ReLU hidden layers and linear outputs.
pub fn mlp_specs(inputs: usize, hidden: &[usize], outputs: usize) -> Vec<LayerSpec> {
    let mut specs = vec![LayerSpec::Flatten];
    let mut prev = inputs;
    for &h in hidden {
        specs.push(LayerSpec::Dense {
            inputs: prev,
            outputs: h,
        });
        specs.push(LayerSpec::Activation(Activation::Relu));
        prev = h;
    }
    specs.push(LayerSpec::Dense {
        inputs: prev,
        outputs,
    });
    specs
}
