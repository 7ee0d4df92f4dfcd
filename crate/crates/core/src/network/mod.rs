//! The encoder-decoder segmentation network: separable-convolution encoder
//! stages, each optionally followed by a residual SE-gated block, and a
//! two-scale decoder that upsamples logits back to the input resolution.

mod config;
mod model;
mod norm;

pub use config::{RethNetConfig, StageConfig};
pub use model::{argmax_classes, BoundParams, ForwardOutput, Mode, Model, StatUpdate};
pub use norm::{normalization_layer, NormStats, NORM_EPS, NORM_MOMENTUM};
