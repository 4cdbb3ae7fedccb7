//! Stateful layers: parameters, gradients and the activations retained for
//! the backward pass.

use rand::Rng;

use super::conv::{conv2d_backward, conv2d_forward, Padding};
use super::ops::{
    concat_channels, dense_backward, dense_forward, relu_backward, relu_forward, split_channels,
};
use super::pool::{
    avgpool_backward, avgpool_forward, maxpool_backward, maxpool_forward, MaxPoolCache,
};
use super::tensor::{Scalar, Tensor};
use super::NnError;

/// A named trainable tensor and its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<T = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    /// Kaiming-uniform initialization: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
    pub fn kaiming_uniform(
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        let value = Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..bound)));
        Self::new(name, value)
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, Tensor::zeros(shape))
    }

    fn cast<U: Scalar>(&self) -> Param<U> {
        Param {
            name: self.name.clone(),
            value: self.value.cast(),
            grad: self.grad.cast(),
        }
    }

    fn accumulate(&mut self, grad: &[T]) {
        for (g, &d) in self.grad.data_mut().iter_mut().zip(grad) {
            *g += d;
        }
    }
}

fn missing(layer: &'static str) -> NnError {
    NnError::MissingCache(layer)
}

#[derive(Clone, Debug)]
pub struct Conv2d<T = f32> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub padding: Padding,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self {
            weight: Param::kaiming_uniform(
                format!("{name}.weight"),
                &[filters, in_channels, kernel, kernel],
                fan_in,
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), &[filters]),
            stride,
            padding,
            input: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dense<T = f32> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(name: &str, inputs: usize, units: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::kaiming_uniform(format!("{name}.weight"), &[inputs, units], inputs, rng),
            bias: Param::zeros(format!("{name}.bias"), &[units]),
            input: None,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Layer<T = f32> {
    Conv2d(Conv2d<T>),
    Relu {
        input: Option<Tensor<T>>,
    },
    MaxPool {
        window: usize,
        stride: usize,
        padding: Padding,
        cache: Option<MaxPoolCache>,
    },
    AvgPool {
        window: usize,
        stride: usize,
        input_shape: Option<Vec<usize>>,
    },
    Flatten {
        input_shape: Option<Vec<usize>>,
    },
    Dense(Dense<T>),
    /// Parallel branches over one input, concatenated along channels.
    Branches {
        branches: Vec<Sequential<T>>,
        sizes: Option<Vec<usize>>,
    },
}

impl<T: Scalar> Layer<T> {
    pub fn relu() -> Self {
        Layer::Relu { input: None }
    }

    pub fn max_pool(window: usize, stride: usize, padding: Padding) -> Self {
        Layer::MaxPool {
            window,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn avg_pool(window: usize, stride: usize) -> Self {
        Layer::AvgPool {
            window,
            stride,
            input_shape: None,
        }
    }

    pub fn flatten() -> Self {
        Layer::Flatten { input_shape: None }
    }

    pub fn branches(branches: Vec<Sequential<T>>) -> Self {
        Layer::Branches {
            branches,
            sizes: None,
        }
    }

    /// Inference forward pass; retains nothing.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        match self {
            Layer::Conv2d(c) => {
                conv2d_forward(x, &c.weight.value, c.bias.value.data(), c.stride, c.padding)
            }
            Layer::Relu { .. } => Ok(relu_forward(x)),
            Layer::MaxPool {
                window,
                stride,
                padding,
                ..
            } => Ok(maxpool_forward(x, *window, *stride, *padding)?.0),
            Layer::AvgPool { window, stride, .. } => avgpool_forward(x, *window, *stride),
            Layer::Flatten { .. } => flatten(x),
            Layer::Dense(d) => dense_forward(x, &d.weight.value, d.bias.value.data()),
            Layer::Branches { branches, .. } => {
                let outs = branches
                    .iter()
                    .map(|b| b.forward(x))
                    .collect::<Result<Vec<_>, _>>()?;
                concat_channels(&outs)
            }
        }
    }

    /// Inference forward pass that also records the piecewise-linear
    /// activation pattern (ReLU signs, max-pool winners). Two inputs with
    /// equal patterns lie on the same smooth piece of the network.
    pub fn forward_pattern(
        &self,
        x: &Tensor<T>,
        pattern: &mut Vec<u64>,
    ) -> Result<Tensor<T>, NnError> {
        match self {
            Layer::Relu { .. } => {
                for chunk in x.data().chunks(64) {
                    let bits = chunk
                        .iter()
                        .enumerate()
                        .fold(0u64, |acc, (i, &v)| acc | (u64::from(v > T::zero()) << i));
                    pattern.push(bits);
                }
                Ok(relu_forward(x))
            }
            Layer::MaxPool {
                window,
                stride,
                padding,
                ..
            } => {
                let (y, cache) = maxpool_forward(x, *window, *stride, *padding)?;
                pattern.extend(cache.argmax().iter().map(|&i| i as u64));
                Ok(y)
            }
            Layer::Branches { branches, .. } => {
                let outs = branches
                    .iter()
                    .map(|b| b.forward_from_pattern(0, x, pattern))
                    .collect::<Result<Vec<_>, _>>()?;
                concat_channels(&outs)
            }
            _ => self.forward(x),
        }
    }

    /// Training forward pass; keeps what [`Layer::backward`] needs.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        match self {
            Layer::Conv2d(c) => {
                let y =
                    conv2d_forward(x, &c.weight.value, c.bias.value.data(), c.stride, c.padding)?;
                c.input = Some(x.clone());
                Ok(y)
            }
            Layer::Relu { input } => {
                *input = Some(x.clone());
                Ok(relu_forward(x))
            }
            Layer::MaxPool {
                window,
                stride,
                padding,
                cache,
            } => {
                let (y, c) = maxpool_forward(x, *window, *stride, *padding)?;
                *cache = Some(c);
                Ok(y)
            }
            Layer::AvgPool {
                window,
                stride,
                input_shape,
            } => {
                let y = avgpool_forward(x, *window, *stride)?;
                *input_shape = Some(x.shape().to_vec());
                Ok(y)
            }
            Layer::Flatten { input_shape } => {
                *input_shape = Some(x.shape().to_vec());
                flatten(x)
            }
            Layer::Dense(d) => {
                let y = dense_forward(x, &d.weight.value, d.bias.value.data())?;
                d.input = Some(x.clone());
                Ok(y)
            }
            Layer::Branches { branches, sizes } => {
                let outs = branches
                    .iter_mut()
                    .map(|b| b.forward_train(x))
                    .collect::<Result<Vec<_>, _>>()?;
                *sizes = Some(outs.iter().map(|t| t.shape()[1]).collect());
                concat_channels(&outs)
            }
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        match self {
            Layer::Conv2d(c) => {
                let input = c.input.take().ok_or_else(|| missing("conv2d"))?;
                let g = conv2d_backward(grad, &input, &c.weight.value, c.stride, c.padding)?;
                c.weight.accumulate(g.kernel.data());
                c.bias.accumulate(&g.bias);
                Ok(g.input)
            }
            Layer::Relu { input } => {
                let input = input.take().ok_or_else(|| missing("relu"))?;
                relu_backward(grad, &input)
            }
            Layer::MaxPool { cache, .. } => {
                let cache = cache.take().ok_or_else(|| missing("maxpool"))?;
                maxpool_backward(grad, &cache)
            }
            Layer::AvgPool {
                window,
                stride,
                input_shape,
            } => {
                let shape = input_shape.take().ok_or_else(|| missing("avgpool"))?;
                avgpool_backward(grad, &shape, *window, *stride)
            }
            Layer::Flatten { input_shape } => {
                let shape = input_shape.take().ok_or_else(|| missing("flatten"))?;
                grad.clone().reshape(shape)
            }
            Layer::Dense(d) => {
                let input = d.input.take().ok_or_else(|| missing("dense"))?;
                let g = dense_backward(grad, &input, &d.weight.value)?;
                d.weight.accumulate(g.weight.data());
                d.bias.accumulate(&g.bias);
                Ok(g.input)
            }
            Layer::Branches { branches, sizes } => {
                let sizes = sizes.take().ok_or_else(|| missing("branches"))?;
                let parts = split_channels(grad, &sizes)?;
                let mut total: Option<Tensor<T>> = None;
                for (branch, part) in branches.iter_mut().zip(&parts) {
                    let g = branch.backward(part)?;
                    match total.as_mut() {
                        None => total = Some(g),
                        Some(t) => {
                            for (a, &b) in t.data_mut().iter_mut().zip(g.data()) {
                                *a += b;
                            }
                        }
                    }
                }
                total
                    .ok_or_else(|| NnError::InvalidArgument("branch layer without branches".into()))
            }
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Branches { branches, .. } => branches.iter().flat_map(|b| b.params()).collect(),
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Branches { branches, .. } => {
                branches.iter_mut().flat_map(|b| b.params_mut()).collect()
            }
            _ => Vec::new(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        match self {
            Layer::Conv2d(c) => Layer::Conv2d(Conv2d {
                weight: c.weight.cast(),
                bias: c.bias.cast(),
                stride: c.stride,
                padding: c.padding,
                input: None,
            }),
            Layer::Relu { .. } => Layer::relu(),
            Layer::MaxPool {
                window,
                stride,
                padding,
                ..
            } => Layer::max_pool(*window, *stride, *padding),
            Layer::AvgPool { window, stride, .. } => Layer::avg_pool(*window, *stride),
            Layer::Flatten { .. } => Layer::flatten(),
            Layer::Dense(d) => Layer::Dense(Dense {
                weight: d.weight.cast(),
                bias: d.bias.cast(),
                input: None,
            }),
            Layer::Branches { branches, .. } => {
                Layer::branches(branches.iter().map(|b| b.cast()).collect())
            }
        }
    }
}

fn flatten<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let n = x.shape()[0];
    let rest = x.len() / n;
    x.clone().reshape(vec![n, rest])
}

/// Layers applied in order.
#[derive(Clone, Debug, Default)]
pub struct Sequential<T = f32> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.forward_from(0, x)
    }

    /// Runs layers `start..` on `x`, the input of layer `start`.
    pub fn forward_from(&self, start: usize, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut cur = x.clone();
        for layer in &self.layers[start..] {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    pub fn forward_from_pattern(
        &self,
        start: usize,
        x: &Tensor<T>,
        pattern: &mut Vec<u64>,
    ) -> Result<Tensor<T>, NnError> {
        let mut cur = x.clone();
        for layer in &self.layers[start..] {
            cur = layer.forward_pattern(&cur, pattern)?;
        }
        Ok(cur)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut cur = x.clone();
        for layer in &mut self.layers {
            cur = layer.forward_train(&cur)?;
        }
        Ok(cur)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut cur = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            cur = layer.backward(&cur)?;
            cur.debug_check_finite("backward");
        }
        Ok(cur)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(T::zero());
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Sequential<U> {
        Sequential {
            layers: self.layers.iter().map(|l| l.cast()).collect(),
        }
    }
}
