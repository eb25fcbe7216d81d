//! Pyramid segmentation network with exact gradients and AdaDelta training.
//!
//! Two independent two-class models are trained: bean vs. tray, and split
//! vs. seed coat (tray pixels ignored). Everything runs in f64 on the CPU and
//! is bit-reproducible for a given seed.

mod layers;
mod loss;
mod network;
mod optim;
mod tensor;
mod train;
mod weights_io;

use thiserror::Error;

pub use layers::{
    conv3x3, conv3x3_backward, kernel_len, maxpool2, maxpool2_backward, relu, relu_backward,
    upsample_nn2, upsample_nn2_backward, ConvGrads, PoolArgmax,
};
pub use loss::{cross_entropy_with_targets, masked_cross_entropy, targets_from_mask};
pub use network::{
    backward, forward, predict_probabilities, pyramid_forward, receptive_field, ClassMapping,
    ConvsPerStage, ForwardCache, ModelKind, NetworkConfig, NetworkWeights,
};
pub use optim::{adadelta_step, OptimizerState};
pub use tensor::{ScoreMap, Tensor};
pub use train::{
    train_model, train_model_with_progress, validation_scores, EpochRecord, TrainConfig,
    TrainingHistory,
};
pub use weights_io::{deserialize_weights, serialize_weights, weights_id, FORMAT_VERSION, MAGIC};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("kernel of {kernel_len} values and {bias_len} biases does not fit {input_channels} input channels")]
    ChannelMismatch {
        input_channels: usize,
        kernel_len: usize,
        bias_len: usize,
    },
    #[error("max-pooling needs even dimensions, got {height}x{width}")]
    OddDimensions { height: usize, width: usize },
    #[error("input {height}x{width} is not divisible by {multiple}")]
    DimensionNotDivisible {
        height: usize,
        width: usize,
        multiple: usize,
    },
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("shape mismatch: expected {expected} values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("every pixel is ignored; loss is undefined")]
    EmptyLoss,
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("not a BSWT weight file")]
    BadMagic,
    #[error("unsupported weight file version {0}")]
    UnsupportedVersion(u32),
    #[error("weight file length mismatch: expected {expected} bytes, found {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("bad weight file header: {0}")]
    BadHeader(String),
    #[error("no {0} available for training")]
    EmptyPartition(&'static str),
    #[error("training diverged: non-finite loss in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
}
