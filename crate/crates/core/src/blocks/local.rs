use super::convlstm::{convlstm_step, ConvLSTMParams, ConvLSTMState, StepOutput};
use crate::scalar::Scalar;
use crate::tensor::{Tape, TensorError, TensorResult, Var};

/// Runs the ConvLSTM over the `n²` raster-ordered patches of `u (H,W,D)` from
/// a zero state and reassembles the hidden states into an `(H,W,D)` map.
pub fn local_convlstm<T: Scalar>(tape: &mut Tape<T>, u: Var, n: usize, p: &ConvLSTMParams<Var>) -> TensorResult<Var> {
    local_convlstm_traced(tape, u, n, p).map(|(out, _)| out)
}

/// [`local_convlstm`] that also returns every step's gates and state.
pub fn local_convlstm_traced<T: Scalar>(
    tape: &mut Tape<T>,
    u: Var,
    n: usize,
    p: &ConvLSTMParams<Var>,
) -> TensorResult<(Var, Vec<StepOutput>)> {
    let patches = tape.image2patches(u, n)?;
    let s = tape.shape(patches).to_vec();
    let mut state = ConvLSTMState::zeros(tape, s[1], s[2], s[3]);
    let mut steps = Vec::with_capacity(s[0]);
    for t in 0..s[0] {
        let v = tape.select(patches, t)?;
        let out = convlstm_step(tape, v, state, p)?;
        state = out.state;
        steps.push(out);
    }
    let hs: Vec<Var> = steps.iter().map(|o| o.state.h).collect();
    let stacked = tape.stack(&hs)?;
    Ok((tape.patches2image(stacked, n)?, steps))
}

/// Treats the `n²` patches of `u (H,W,D)` as a time axis and applies a
/// same-padded `(kt,kh,kw,D,D)` 3-D convolution before reassembling.
pub fn local_conv3d<T: Scalar>(tape: &mut Tape<T>, u: Var, n: usize, kernel: Var) -> TensorResult<Var> {
    let d = *tape.shape(u).last().unwrap_or(&0);
    let ks = tape.shape(kernel);
    if ks.len() != 5 || ks[3] != d || ks[4] != d {
        return Err(TensorError::invalid(
            "local_conv3d",
            format!("kernel {ks:?} must map depth {d} to itself"),
        ));
    }
    let patches = tape.image2patches(u, n)?;
    let mixed = tape.conv3d(patches, kernel)?;
    tape.patches2image(mixed, n)
}
