//! The scoring network, its layers, and SGD training.

use alloc::vec::Vec;
use core::fmt;

pub mod gradcheck;
pub mod layers;
mod model;
mod tensor;
mod train;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use model::{
    ForwardCache, ForwardOutput, Params, SpnetConfig, SpnetModel, CONV_CHANNELS, DEFAULT_DROPOUT, DEFAULT_HIDDEN,
    PARAM_NAMES,
};
pub use tensor::{Scalar, Tensor};
pub use train::{
    argmax, epoch_order, evaluate, fit, reduce_batch, sample_rng, sgd_step, train_epoch, Accumulate, EpochStats,
    LabeledImage, SampleGrad, TrainConfig,
};

use crate::render::DepthImage;

#[derive(Clone, Debug, PartialEq)]
pub enum NnError {
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    OddSpatialDim { height: usize, width: usize },
    LabelOutOfRange { label: usize, classes: usize },
    InvalidConfig(&'static str),
    EmptyBatch,
    NonFinite,
}

impl fmt::Display for NnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NnError::ShapeMismatch { expected, got } => write!(f, "shape mismatch: expected {expected:?}, got {got:?}"),
            NnError::OddSpatialDim { height, width } => {
                write!(f, "cannot pool a {height}x{width} feature map; sides must be even")
            }
            NnError::LabelOutOfRange { label, classes } => write!(f, "label {label} out of range for {classes} classes"),
            NnError::InvalidConfig(msg) => write!(f, "invalid training config: {msg}"),
            NnError::EmptyBatch => f.write_str("no samples"),
            NnError::NonFinite => f.write_str("non-finite value in network"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for NnError {}

/// `1 x rows x cols` network input from a depth image.
pub fn image_tensor<T: Scalar>(image: &DepthImage) -> Tensor<T> {
    let data = image.pixels.iter().map(|&p| T::from_f64(p as f64)).collect();
    Tensor::from_vec(&[1, image.rows, image.cols], data).expect("depth image pixel count matches its size")
}
