//! Tensor and layer toolkit with explicit forward and backward passes.

pub mod conv;
pub mod gradcheck;
pub mod layer;
pub mod loss;
pub mod ops;
pub mod optim;
pub mod pool;
pub mod tensor;

use thiserror::Error;

pub use conv::{conv2d_backward, conv2d_forward, plan_axis, Conv2dGrads, Padding};
pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use layer::{Conv2d, Dense, Layer, Param, Sequential};
pub use loss::{softmax, softmax_cross_entropy, SoftmaxCrossEntropy};
pub use ops::{
    concat_channels, dense_backward, dense_forward, relu_backward, relu_forward, split_channels,
};
pub use optim::{AdamConfig, OptimizerState};
pub use pool::{
    avgpool_backward, avgpool_forward, maxpool_backward, maxpool_forward, MaxPoolCache,
};
pub use tensor::{Scalar, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid tensor shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("expected a rank-{expected} tensor, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },
    #[error("{context}: expected shape {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("kernel expects {expected} input channels, input has {actual}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("window {kernel} with stride {stride} does not fit an extent of {input}")]
    OutputExtent {
        input: usize,
        kernel: usize,
        stride: usize,
    },
    #[error("concat inputs disagree on batch/spatial extents: {expected:?} vs {actual:?}")]
    SpatialMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{0} backward called without a preceding training forward pass")]
    MissingCache(&'static str),
    #[error("{0}")]
    InvalidArgument(String),
}
