use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, TensorResult, Var};

pub const NORM_EPS: f64 = 1e-5;
/// Weight of the old value in the running-statistics update.
pub const NORM_MOMENTUM: f64 = 0.99;

/// Which statistics a normalization layer uses.
#[derive(Clone, Copy, Debug)]
pub enum NormStats<'a, T> {
    /// Statistics of the current feature map (batch of one).
    Batch,
    /// Tracked running mean and variance.
    Running { mean: &'a Tensor<T>, var: &'a Tensor<T> },
}

/// Per-channel normalisation over spatial positions followed by a
/// `gamma * x + beta` affine map.
///
/// In batch mode the observed mean and biased variance are returned so the
/// caller can fold them into its running statistics.
pub fn normalization_layer<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    stats: NormStats<'_, T>,
) -> TensorResult<(Var, Option<(Tensor<T>, Tensor<T>)>)> {
    let eps = T::from_f64_lossy(NORM_EPS);
    let (normed, observed) = match stats {
        NormStats::Batch => {
            let (y, mean, var) = tape.channel_normalize(x, eps)?;
            (y, Some((mean, var)))
        }
        NormStats::Running { mean, var } => {
            let shift = tape.constant(mean.map(|m| -m));
            let inv_std = tape.constant(var.map(|v| T::one() / (v + eps).sqrt()));
            let centred = tape.add_bias(x, shift)?;
            (tape.mul_channels(centred, inv_std)?, None)
        }
    };
    let scaled = tape.mul_channels(normed, gamma)?;
    Ok((tape.add_bias(scaled, beta)?, observed))
}
