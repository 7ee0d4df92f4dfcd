//! Desk-scale semantic segmentation built from first principles.
//!
//! The crate provides a reverse-mode tensor library ([`tensor`]), the
//! image/patch-sequence operators ([`patch`]), squeeze-and-excitation gated
//! ConvLSTM / Conv3D residual blocks ([`blocks`]), a small encoder-decoder
//! segmentation network ([`network`]), a synthetic context-dependent
//! segmentation benchmark ([`data`]), evaluation metrics ([`metrics`]) and the
//! training, evaluation and ablation drivers ([`train`]).
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the two concrete instantiations.

pub mod blocks;
pub mod data;
pub mod error;
pub mod kv;
pub mod metrics;
pub mod network;
pub mod patch;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::{Precision, Scalar};
pub use tensor::{Tape, Tensor, TensorError, Var};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type Model32 = network::Model<f32>;
pub type Model64 = network::Model<f64>;

/// Label value excluded from losses and metrics.
pub const IGNORE_INDEX: u8 = 255;
