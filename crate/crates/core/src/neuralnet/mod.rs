//! Convolutional activity detector built from scratch: layers, analytic
//! backpropagation, binary cross-entropy, Glorot initialization, Adam and
//! the training loop.

mod adam;
mod init;
mod layers;
mod loss;
mod network;
mod real;
mod train;

pub use adam::AdamState;
pub use init::glorot_init;
pub use layers::{
    batchnorm_forward, conv2d_forward, conv_output_len, linear_forward, relu, sigmoid, sigmoid_scalar,
    Activations, BatchNorm, Conv2d, Linear, Padding, Phase,
};
pub use loss::{bce_loss, PROB_CLAMP};
pub use network::{ArchSpec, Layer, Network, ParamSlot};
pub use real::Real;
pub use train::{
    evaluate_loss, input_rms, predict_set, train, EpochLoss, LabeledSet, LossTrace, ThresholdPolicy, TrainConfig,
};
