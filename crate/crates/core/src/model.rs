//! The inception-style classifier: a serializable stage list, its shape
//! chain, and the trainable network built from it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{
    plan_axis, softmax, softmax_cross_entropy, Conv2d, Dense, Layer, NnError, OptimizerState,
    Padding, Param, Scalar, Sequential, Tensor,
};

/// Smallest accepted input side. The four stride-2 stages leave a 2×2 map.
pub const MIN_INPUT_SIDE: usize = 32;
pub const DEFAULT_INPUT_SIDE: usize = 224;
/// Largest average-pooling window; smaller maps pool over their full extent.
pub const MAX_AVGPOOL_WINDOW: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSize {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputSize {
    pub fn gray(height: usize, width: usize) -> Self {
        Self {
            channels: 1,
            height,
            width,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reduce {
    pub reduce: usize,
    pub filters: usize,
}

/// Four parallel branches: 1×1; 1×1 then 3×3; 1×1 then 5×5; 3×3 max-pool
/// then 1×1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InceptionSpec {
    pub b1: usize,
    pub b2: Reduce,
    pub b3: Reduce,
    pub b4: usize,
}

impl InceptionSpec {
    pub fn out_channels(&self) -> usize {
        self.b1 + self.b2.filters + self.b3.filters + self.b4
    }

    fn scaled(&self, d: usize) -> Self {
        let s = |f: usize| (f / d).max(1);
        Self {
            b1: s(self.b1),
            b2: Reduce {
                reduce: s(self.b2.reduce),
                filters: s(self.b2.filters),
            },
            b3: Reduce {
                reduce: s(self.b3.reduce),
                filters: s(self.b3.filters),
            },
            b4: s(self.b4),
        }
    }
}

/// One stage of the network. Every convolution is followed by a ReLU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    MaxPool {
        window: usize,
        stride: usize,
        padding: Padding,
    },
    AvgPool {
        window: usize,
        stride: usize,
    },
    Inception(InceptionSpec),
    Flatten,
    Dense {
        units: usize,
    },
    Softmax,
}

impl LayerSpec {
    fn conv(filters: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec::Conv {
            filters,
            kernel,
            stride,
            padding: Padding::Same,
        }
    }

    fn max_pool(window: usize, stride: usize) -> Self {
        LayerSpec::MaxPool {
            window,
            stride,
            padding: Padding::Same,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("input {height}x{width} is too small; both sides must be at least {min}")]
    InputTooSmall {
        height: usize,
        width: usize,
        min: usize,
    },
    #[error("the network takes a single gray channel, got {0}")]
    Channels(usize),
    #[error("need at least 2 classes, got {0}")]
    Classes(usize),
    #[error("width divisor must be at least 1")]
    WidthDivisor,
    #[error("stage {index} ({kind}): {message}")]
    Stage {
        index: usize,
        kind: &'static str,
        message: String,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Stage list plus input geometry; serialized into checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_size: InputSize,
    pub num_classes: usize,
    pub stages: Vec<LayerSpec>,
}

fn kind_name(stage: &LayerSpec) -> &'static str {
    match stage {
        LayerSpec::Conv { .. } => "conv",
        LayerSpec::MaxPool { .. } => "max_pool",
        LayerSpec::AvgPool { .. } => "avg_pool",
        LayerSpec::Inception(_) => "inception",
        LayerSpec::Flatten => "flatten",
        LayerSpec::Dense { .. } => "dense",
        LayerSpec::Softmax => "softmax",
    }
}

/// The full-width network for `input_size` and `num_classes`.
pub fn build_proposed_cnn(
    input_size: InputSize,
    num_classes: usize,
) -> Result<NetworkSpec, ModelError> {
    build_proposed_cnn_scaled(input_size, num_classes, 1)
}

/// As [`build_proposed_cnn`] with every filter count divided by
/// `width_divisor` (at least one filter each).
pub fn build_proposed_cnn_scaled(
    input_size: InputSize,
    num_classes: usize,
    width_divisor: usize,
) -> Result<NetworkSpec, ModelError> {
    if width_divisor == 0 {
        return Err(ModelError::WidthDivisor);
    }
    if input_size.height < MIN_INPUT_SIDE || input_size.width < MIN_INPUT_SIDE {
        return Err(ModelError::InputTooSmall {
            height: input_size.height,
            width: input_size.width,
            min: MIN_INPUT_SIDE,
        });
    }
    let f = |n: usize| (n / width_divisor).max(1);
    let inception = |b1, r2, f2, r3, f3, b4| {
        LayerSpec::Inception(
            InceptionSpec {
                b1,
                b2: Reduce {
                    reduce: r2,
                    filters: f2,
                },
                b3: Reduce {
                    reduce: r3,
                    filters: f3,
                },
                b4,
            }
            .scaled(width_divisor),
        )
    };
    // Every strided stage uses "same" padding, so each halves the side
    // rounding up.
    let side = |s: usize| (0..4).fold(s, |v, _| v.div_ceil(2));
    let window = MAX_AVGPOOL_WINDOW
        .min(side(input_size.height))
        .min(side(input_size.width));
    let spec = NetworkSpec {
        input_size,
        num_classes,
        stages: vec![
            LayerSpec::conv(f(64), 7, 2),
            LayerSpec::max_pool(3, 2),
            LayerSpec::conv(f(64), 1, 1),
            LayerSpec::conv(f(192), 3, 1),
            LayerSpec::max_pool(3, 2),
            inception(64, 96, 128, 16, 32, 32),
            inception(128, 128, 192, 32, 96, 64),
            LayerSpec::max_pool(3, 2),
            LayerSpec::conv(f(256), 3, 1),
            LayerSpec::conv(f(512), 3, 1),
            LayerSpec::AvgPool {
                window,
                stride: window,
            },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: num_classes },
            LayerSpec::Softmax,
        ],
    };
    spec.stage_shapes()?;
    Ok(spec)
}

impl NetworkSpec {
    /// Declared per-item output shape of every stage, checking that the
    /// stages chain and that the network ends in `dense(K)` + softmax.
    pub fn stage_shapes(&self) -> Result<Vec<Vec<usize>>, ModelError> {
        let InputSize {
            channels,
            height,
            width,
        } = self.input_size;
        if channels != 1 {
            return Err(ModelError::Channels(channels));
        }
        if self.num_classes < 2 {
            return Err(ModelError::Classes(self.num_classes));
        }
        let mut shape = vec![channels, height, width];
        let mut out = Vec::with_capacity(self.stages.len());
        for (index, stage) in self.stages.iter().enumerate() {
            let err = |message: String| ModelError::Stage {
                index,
                kind: kind_name(stage),
                message,
            };
            let spatial = |shape: &[usize]| -> Result<(usize, usize, usize), ModelError> {
                match *shape {
                    [c, h, w] => Ok((c, h, w)),
                    _ => Err(err(format!("needs a feature map, got shape {shape:?}"))),
                }
            };
            let axis = |extent, window, stride, padding| {
                plan_axis(extent, window, stride, padding)
                    .map(|p| p.out)
                    .map_err(|e| err(e.to_string()))
            };
            shape = match *stage {
                LayerSpec::Conv {
                    filters,
                    kernel,
                    stride,
                    padding,
                } => {
                    let (_, h, w) = spatial(&shape)?;
                    if filters == 0 || kernel == 0 || stride == 0 {
                        return Err(err("filters, kernel and stride must be positive".into()));
                    }
                    vec![
                        filters,
                        axis(h, kernel, stride, padding)?,
                        axis(w, kernel, stride, padding)?,
                    ]
                }
                LayerSpec::MaxPool {
                    window,
                    stride,
                    padding,
                } => {
                    let (c, h, w) = spatial(&shape)?;
                    if window == 0 || stride == 0 {
                        return Err(err("window and stride must be positive".into()));
                    }
                    vec![
                        c,
                        axis(h, window, stride, padding)?,
                        axis(w, window, stride, padding)?,
                    ]
                }
                LayerSpec::AvgPool { window, stride } => {
                    let (c, h, w) = spatial(&shape)?;
                    if window == 0 || stride == 0 {
                        return Err(err("window and stride must be positive".into()));
                    }
                    vec![
                        c,
                        axis(h, window, stride, Padding::Valid)?,
                        axis(w, window, stride, Padding::Valid)?,
                    ]
                }
                LayerSpec::Inception(inc) => {
                    let (_, h, w) = spatial(&shape)?;
                    let all = [
                        inc.b1,
                        inc.b2.reduce,
                        inc.b2.filters,
                        inc.b3.reduce,
                        inc.b3.filters,
                        inc.b4,
                    ];
                    if all.contains(&0) {
                        return Err(err("branch filter counts must be positive".into()));
                    }
                    vec![inc.out_channels(), h, w]
                }
                LayerSpec::Flatten => vec![shape.iter().product()],
                LayerSpec::Dense { units } => {
                    if shape.len() != 1 {
                        return Err(err(format!("needs a flat input, got shape {shape:?}")));
                    }
                    if units == 0 {
                        return Err(err("units must be positive".into()));
                    }
                    vec![units]
                }
                LayerSpec::Softmax => {
                    if index + 1 != self.stages.len() {
                        return Err(err("softmax must be the final stage".into()));
                    }
                    shape.clone()
                }
            };
            out.push(shape.clone());
        }
        let n = self.stages.len();
        let tail_ok = n >= 2
            && self.stages[n - 1] == LayerSpec::Softmax
            && self.stages[n - 2]
                == LayerSpec::Dense {
                    units: self.num_classes,
                };
        if !tail_ok {
            return Err(ModelError::Stage {
                index: n.saturating_sub(1),
                kind: self.stages.last().map_or("none", kind_name),
                message: format!(
                    "network must end with dense({}) followed by softmax",
                    self.num_classes
                ),
            });
        }
        Ok(out)
    }

    /// Parameter count without building the network.
    pub fn num_params(&self) -> Result<usize, ModelError> {
        let shapes = self.stage_shapes()?;
        let mut prev = self.input_size.channels;
        let mut total = 0;
        for (stage, shape) in self.stages.iter().zip(&shapes) {
            total += match *stage {
                LayerSpec::Conv {
                    filters, kernel, ..
                } => filters * (prev * kernel * kernel + 1),
                LayerSpec::Inception(inc) => {
                    let conv = |i: usize, o: usize, k: usize| o * (i * k * k + 1);
                    conv(prev, inc.b1, 1)
                        + conv(prev, inc.b2.reduce, 1)
                        + conv(inc.b2.reduce, inc.b2.filters, 3)
                        + conv(prev, inc.b3.reduce, 1)
                        + conv(inc.b3.reduce, inc.b3.filters, 5)
                        + conv(prev, inc.b4, 1)
                }
                LayerSpec::Dense { units } => units * (prev + 1),
                _ => 0,
            };
            prev = shape[0];
        }
        Ok(total)
    }
}

/// A trainable network built from a [`NetworkSpec`]. The final softmax is
/// applied outside the layer stack so training can use the fused
/// cross-entropy gradient.
#[derive(Clone, Debug)]
pub struct Network<T = f32> {
    spec: NetworkSpec,
    stage_shapes: Vec<Vec<usize>>,
    /// Exclusive end index in `layers` of each stage except the softmax.
    stage_ends: Vec<usize>,
    layers: Sequential<T>,
}

fn conv_relu<T: Scalar>(
    name: &str,
    in_channels: usize,
    filters: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
    rng: &mut ChaCha8Rng,
) -> [Layer<T>; 2] {
    [
        Layer::Conv2d(Conv2d::new(
            name,
            in_channels,
            filters,
            kernel,
            stride,
            padding,
            rng,
        )),
        Layer::relu(),
    ]
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    /// Correct predictions made during the epoch's forward passes.
    pub correct: usize,
    pub seen: usize,
}

impl EpochStats {
    pub fn accuracy(&self) -> f64 {
        if self.seen == 0 {
            0.0
        } else {
            self.correct as f64 / self.seen as f64
        }
    }
}

impl<T: Scalar> Network<T> {
    /// Builds the layers with Kaiming-uniform weights drawn from `seed`.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self, ModelError> {
        let stage_shapes = spec.stage_shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut stage_ends = Vec::new();
        let mut prev = spec.input_size.channels;
        for (i, (stage, shape)) in spec.stages.iter().zip(&stage_shapes).enumerate() {
            match *stage {
                LayerSpec::Conv {
                    filters,
                    kernel,
                    stride,
                    padding,
                } => layers.extend(conv_relu(
                    &format!("s{i}.conv"),
                    prev,
                    filters,
                    kernel,
                    stride,
                    padding,
                    &mut rng,
                )),
                LayerSpec::MaxPool {
                    window,
                    stride,
                    padding,
                } => layers.push(Layer::max_pool(window, stride, padding)),
                LayerSpec::AvgPool { window, stride } => {
                    layers.push(Layer::avg_pool(window, stride))
                }
                LayerSpec::Inception(inc) => {
                    let same = Padding::Same;
                    let p = format!("s{i}");
                    let branch = |v: Vec<Layer<T>>| Sequential::new(v);
                    let b1 = branch(
                        conv_relu(&format!("{p}.b1"), prev, inc.b1, 1, 1, same, &mut rng).into(),
                    );
                    let mut b2 = conv_relu(
                        &format!("{p}.b2r"),
                        prev,
                        inc.b2.reduce,
                        1,
                        1,
                        same,
                        &mut rng,
                    )
                    .to_vec();
                    b2.extend(conv_relu(
                        &format!("{p}.b2"),
                        inc.b2.reduce,
                        inc.b2.filters,
                        3,
                        1,
                        same,
                        &mut rng,
                    ));
                    let mut b3 = conv_relu(
                        &format!("{p}.b3r"),
                        prev,
                        inc.b3.reduce,
                        1,
                        1,
                        same,
                        &mut rng,
                    )
                    .to_vec();
                    b3.extend(conv_relu(
                        &format!("{p}.b3"),
                        inc.b3.reduce,
                        inc.b3.filters,
                        5,
                        1,
                        same,
                        &mut rng,
                    ));
                    let mut b4 = vec![Layer::max_pool(3, 1, same)];
                    b4.extend(conv_relu(
                        &format!("{p}.b4"),
                        prev,
                        inc.b4,
                        1,
                        1,
                        same,
                        &mut rng,
                    ));
                    layers.push(Layer::branches(vec![
                        b1,
                        branch(b2),
                        branch(b3),
                        branch(b4),
                    ]));
                }
                LayerSpec::Flatten => layers.push(Layer::flatten()),
                LayerSpec::Dense { units } => layers.push(Layer::Dense(Dense::new(
                    &format!("s{i}.dense"),
                    prev,
                    units,
                    &mut rng,
                ))),
                LayerSpec::Softmax => break,
            }
            stage_ends.push(layers.len());
            prev = shape[0];
        }
        Ok(Self {
            spec,
            stage_shapes,
            stage_ends,
            layers: Sequential::new(layers),
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    /// Layer stack producing logits (no softmax).
    pub fn layers(&self) -> &Sequential<T> {
        &self.layers
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.params_mut()
    }

    pub fn num_params(&self) -> usize {
        self.layers.num_params()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            stage_shapes: self.stage_shapes.clone(),
            stage_ends: self.stage_ends.clone(),
            layers: self.layers.cast(),
        }
    }

    fn check_input(&self, batch: &Tensor<T>) -> Result<usize, NnError> {
        let InputSize {
            channels,
            height,
            width,
        } = self.spec.input_size;
        let n = batch.shape().first().copied().unwrap_or(0);
        batch.expect_shape(&[n, channels, height, width], "network input")?;
        Ok(n)
    }

    fn check_stage(&self, stage: usize, n: usize, out: &Tensor<T>) -> Result<(), NnError> {
        let mut want = vec![n];
        want.extend_from_slice(&self.stage_shapes[stage]);
        out.expect_shape(&want, "stage output")
    }

    /// Per-stage runtime shapes of a forward pass over `batch`, with the
    /// batch axis dropped.
    pub fn forward_shapes(&self, batch: &Tensor<T>) -> Result<Vec<Vec<usize>>, NnError> {
        let n = self.check_input(batch)?;
        let mut shapes = Vec::new();
        let mut cur = batch.clone();
        let mut start = 0;
        for (stage, &end) in self.stage_ends.iter().enumerate() {
            for layer in &self.layers.layers[start..end] {
                cur = layer.forward(&cur)?;
            }
            self.check_stage(stage, n, &cur)?;
            shapes.push(cur.shape()[1..].to_vec());
            start = end;
        }
        Ok(shapes)
    }

    /// Raw class scores, N×K.
    pub fn logits(&self, batch: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let n = self.check_input(batch)?;
        let mut cur = batch.clone();
        let mut start = 0;
        for (stage, &end) in self.stage_ends.iter().enumerate() {
            for layer in &self.layers.layers[start..end] {
                cur = layer.forward(&cur)?;
            }
            self.check_stage(stage, n, &cur)?;
            start = end;
        }
        Ok(cur)
    }

    /// Class probabilities, N×K; each row sums to one.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        softmax(&self.logits(batch)?)
    }

    pub fn predict(&self, batch: &Tensor<T>) -> Result<Vec<usize>, NnError> {
        Ok(argmax_rows(&self.forward(batch)?))
    }

    fn forward_train(&mut self, batch: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let n = self.check_input(batch)?;
        let mut cur = batch.clone();
        let mut start = 0;
        for stage in 0..self.stage_ends.len() {
            let end = self.stage_ends[stage];
            for layer in &mut self.layers.layers[start..end] {
                cur = layer.forward_train(&cur)?;
            }
            self.check_stage(stage, n, &cur)?;
            start = end;
        }
        Ok(cur)
    }

    /// One optimizer step on one batch. Returns the batch loss and the
    /// number of rows the pre-update network classified correctly.
    pub fn train_step(
        &mut self,
        batch: &Tensor<T>,
        labels: &[usize],
        optimizer: &mut OptimizerState<T>,
    ) -> Result<(f64, usize), NnError> {
        self.layers.zero_grad();
        let logits = self.forward_train(batch)?;
        let out = softmax_cross_entropy(&logits, labels)?;
        let correct = argmax_rows(&out.probs)
            .iter()
            .zip(labels)
            .filter(|(p, l)| p == l)
            .count();
        self.layers.backward(&out.grad_logits)?;
        optimizer.step(&mut self.layers.params_mut())?;
        Ok((out.loss.to_f64().unwrap_or(f64::NAN), correct))
    }

    /// Trains on every batch once, in order.
    pub fn train_epoch<I>(
        &mut self,
        batches: I,
        optimizer: &mut OptimizerState<T>,
    ) -> Result<EpochStats, NnError>
    where
        I: IntoIterator<Item = (Tensor<T>, Vec<usize>)>,
    {
        let mut stats = EpochStats::default();
        let mut total = 0.0;
        let mut count = 0usize;
        for (batch, labels) in batches {
            let (loss, correct) = self.train_step(&batch, &labels, optimizer)?;
            total += loss;
            count += 1;
            stats.correct += correct;
            stats.seen += labels.len();
        }
        stats.mean_loss = if count == 0 {
            0.0
        } else {
            total / count as f64
        };
        Ok(stats)
    }
}

/// Index of each row's maximum; ties go to the lowest index.
pub fn argmax_rows<T: Scalar>(probs: &Tensor<T>) -> Vec<usize> {
    let k = probs.shape().last().copied().unwrap_or(1).max(1);
    probs
        .data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::AdamConfig;

    fn small_spec(side: usize) -> NetworkSpec {
        build_proposed_cnn_scaled(InputSize::gray(side, side), 3, 16).unwrap()
    }

    #[test]
    fn full_width_shape_chain_at_224() {
        let spec = build_proposed_cnn(InputSize::gray(224, 224), 4).unwrap();
        let shapes = spec.stage_shapes().unwrap();
        assert_eq!(shapes[0], vec![64, 112, 112]);
        assert_eq!(shapes[4], vec![192, 28, 28]);
        assert_eq!(shapes[5], vec![256, 28, 28]);
        assert_eq!(shapes[6], vec![480, 28, 28]);
        assert_eq!(shapes[9], vec![512, 14, 14]);
        assert_eq!(shapes[10], vec![512, 2, 2]);
        assert_eq!(shapes[11], vec![2048]);
        assert_eq!(shapes[12], vec![4]);
        assert_eq!(
            spec.stages[10],
            LayerSpec::AvgPool {
                window: 7,
                stride: 7
            }
        );
    }

    #[test]
    fn avgpool_window_clamps_on_small_inputs() {
        let spec = build_proposed_cnn(InputSize::gray(64, 64), 4).unwrap();
        assert_eq!(
            spec.stages[10],
            LayerSpec::AvgPool {
                window: 4,
                stride: 4
            }
        );
        assert_eq!(spec.stage_shapes().unwrap()[11], vec![512]);
        let spec = build_proposed_cnn(InputSize::gray(32, 32), 4).unwrap();
        assert_eq!(
            spec.stages[10],
            LayerSpec::AvgPool {
                window: 2,
                stride: 2
            }
        );
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(matches!(
            build_proposed_cnn(InputSize::gray(31, 64), 4),
            Err(ModelError::InputTooSmall { .. })
        ));
        assert!(matches!(
            build_proposed_cnn(InputSize::gray(64, 64), 1),
            Err(ModelError::Classes(1))
        ));
        let mut rgb = InputSize::gray(64, 64);
        rgb.channels = 3;
        assert!(matches!(
            build_proposed_cnn(rgb, 4),
            Err(ModelError::Channels(3))
        ));
        assert!(matches!(
            build_proposed_cnn_scaled(InputSize::gray(64, 64), 4, 0),
            Err(ModelError::WidthDivisor)
        ));
    }

    #[test]
    fn spec_requires_dense_softmax_tail() {
        let mut spec = small_spec(32);
        spec.stages.pop();
        assert!(spec.stage_shapes().is_err());
        let mut spec = small_spec(32);
        spec.stages.insert(3, LayerSpec::Softmax);
        assert!(spec.stage_shapes().is_err());
        let mut spec = small_spec(32);
        spec.stages.swap(11, 12);
        assert!(spec.stage_shapes().is_err());
    }

    #[test]
    fn spec_roundtrips_through_json() {
        let spec = build_proposed_cnn(InputSize::gray(224, 224), 4).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains(r#""kind":"inception""#));
        let back: NetworkSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn param_count_matches_built_network() {
        for d in [8, 16] {
            let spec = build_proposed_cnn_scaled(InputSize::gray(64, 64), 4, d).unwrap();
            let net = Network::<f32>::new(spec.clone(), 0).unwrap();
            assert_eq!(spec.num_params().unwrap(), net.num_params());
        }
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let net = Network::<f32>::new(small_spec(32), 1).unwrap();
        let x = Tensor::<f32>::zeros(&[1, 1, 33, 32]);
        assert!(matches!(
            net.forward(&x),
            Err(NnError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn predict_ties_go_low() {
        let p = Tensor::new(vec![3, 2], vec![0.5f32, 0.5, 0.2, 0.8, 0.9, 0.1]).unwrap();
        assert_eq!(argmax_rows(&p), vec![0, 1, 0]);
        let p = Tensor::new(vec![1, 4], vec![0.1f32, 0.7, 0.1, 0.1]).unwrap();
        assert_eq!(argmax_rows(&p), vec![1]);
    }

    #[test]
    fn batch_independence() {
        let net = Network::<f32>::new(small_spec(32), 2).unwrap();
        let x = crate::nn::Tensor::from_fn(&[4, 1, 32, 32], |i| ((i * 37) % 101) as f32 / 101.0);
        let all = net.forward(&x).unwrap();
        for n in 0..4 {
            let one = Tensor::new(vec![1, 1, 32, 32], x.item(n).to_vec()).unwrap();
            let row = net.forward(&one).unwrap();
            for (a, b) in row.data().iter().zip(all.item(n)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_untouched() {
        let mut net = Network::<f32>::new(small_spec(32), 3).unwrap();
        let before: Vec<Vec<f32>> = net
            .params()
            .iter()
            .map(|p| p.value.data().to_vec())
            .collect();
        let mut opt = OptimizerState::new(AdamConfig::with_learning_rate(0.0)).unwrap();
        let x = Tensor::from_fn(&[2, 1, 32, 32], |i| (i % 7) as f32 / 7.0);
        net.train_epoch(vec![(x, vec![0, 2])], &mut opt).unwrap();
        let after: Vec<Vec<f32>> = net
            .params()
            .iter()
            .map(|p| p.value.data().to_vec())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn out_of_range_label_propagates() {
        let mut net = Network::<f32>::new(small_spec(32), 3).unwrap();
        let mut opt = OptimizerState::new(AdamConfig::default()).unwrap();
        let x = Tensor::zeros(&[1, 1, 32, 32]);
        assert!(matches!(
            net.train_epoch(vec![(x, vec![3])], &mut opt),
            Err(NnError::LabelOutOfRange { .. })
        ));
    }
}
