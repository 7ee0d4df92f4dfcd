use rand::Rng;

use super::{fan_in_uniform, param_struct};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, TensorError, TensorResult, Var};

param_struct! {
    /// Squeeze-and-excitation weights: `w1 (D, D/r)`, `b1 (D/r)`, `w2 (D/r, D)`, `b2 (D)`.
    SEParams { w1, b1, w2, b2 }
}

impl<T: Scalar> SEParams<Tensor<T>> {
    pub fn init(depth: usize, ratio: usize, rng: &mut impl Rng) -> TensorResult<Self> {
        if ratio == 0 || depth % ratio != 0 {
            return Err(TensorError::invalid(
                "se_gate",
                format!("depth {depth} not divisible by reduction ratio {ratio}"),
            ));
        }
        let hidden = depth / ratio;
        Ok(SEParams {
            w1: fan_in_uniform(&[depth, hidden], depth, rng),
            b1: Tensor::zeros([hidden]),
            w2: fan_in_uniform(&[hidden, depth], hidden, rng),
            b2: Tensor::zeros([depth]),
        })
    }

    pub fn zeros(depth: usize, ratio: usize) -> TensorResult<Self> {
        if ratio == 0 || depth % ratio != 0 {
            return Err(TensorError::invalid(
                "se_gate",
                format!("depth {depth} not divisible by reduction ratio {ratio}"),
            ));
        }
        let hidden = depth / ratio;
        Ok(SEParams {
            w1: Tensor::zeros([depth, hidden]),
            b1: Tensor::zeros([hidden]),
            w2: Tensor::zeros([hidden, depth]),
            b2: Tensor::zeros([depth]),
        })
    }
}

/// `sigmoid(fc2(relu(fc1(global_avg_pool(u)))))`, one gate per channel.
pub fn se_gate<T: Scalar>(tape: &mut Tape<T>, u: Var, p: &SEParams<Var>) -> TensorResult<Var> {
    let depth = *tape.shape(u).last().unwrap_or(&0);
    let w1 = tape.shape(p.w1).to_vec();
    if w1.len() != 2 || w1[0] != depth || w1[1] == 0 || depth % w1[1] != 0 {
        return Err(TensorError::invalid(
            "se_gate",
            format!("squeeze weight {w1:?} incompatible with depth {depth}"),
        ));
    }
    let pooled = tape.global_avg_pool(u)?;
    let z = tape.fully_connected(pooled, p.w1, p.b1)?;
    let z = tape.relu(z);
    let s = tape.fully_connected(z, p.w2, p.b2)?;
    Ok(tape.sigmoid(s))
}

/// Channel-wise rescaling of `u (H,W,D)` by `gate (D)`.
pub fn se_apply<T: Scalar>(tape: &mut Tape<T>, u: Var, gate: Var) -> TensorResult<Var> {
    tape.mul_channels(u, gate)
}
