use rand::Rng;

use super::{fan_in_uniform, param_struct};
use crate::scalar::Scalar;
use crate::tensor::{Padding, Tape, Tensor, TensorError, TensorResult, Var};

param_struct! {
    /// Peephole ConvLSTM weights.
    ///
    /// `w_v*` act on the input patch and `w_h*` on the previous hidden state;
    /// both are `(k,k,D,D)` same-padded convolutions. `w_c*` are `(H',W',D)`
    /// Hadamard peepholes on the cell state and `b_*` are `(D)` biases.
    ConvLSTMParams {
        w_vi, w_hi, w_vf, w_hf, w_vc, w_hc, w_vo, w_ho,
        w_ci, w_cf, w_co,
        b_i, b_f, b_c, b_o,
    }
}

impl<T: Scalar> ConvLSTMParams<Tensor<T>> {
    /// Fan-in uniform kernels, zero peepholes, forget bias 1.
    pub fn init(depth: usize, kernel: usize, patch_h: usize, patch_w: usize, rng: &mut impl Rng) -> Self {
        let fan_in = kernel * kernel * depth;
        let mut k = || fan_in_uniform(&[kernel, kernel, depth, depth], fan_in, rng);
        let (w_vi, w_hi, w_vf, w_hf) = (k(), k(), k(), k());
        let (w_vc, w_hc, w_vo, w_ho) = (k(), k(), k(), k());
        ConvLSTMParams {
            w_vi,
            w_hi,
            w_vf,
            w_hf,
            w_vc,
            w_hc,
            w_vo,
            w_ho,
            w_ci: Tensor::zeros([patch_h, patch_w, depth]),
            w_cf: Tensor::zeros([patch_h, patch_w, depth]),
            w_co: Tensor::zeros([patch_h, patch_w, depth]),
            b_i: Tensor::zeros([depth]),
            b_f: Tensor::ones([depth]),
            b_c: Tensor::zeros([depth]),
            b_o: Tensor::zeros([depth]),
        }
    }

    pub fn zeros(depth: usize, kernel: usize, patch_h: usize, patch_w: usize) -> Self {
        let k = || Tensor::zeros([kernel, kernel, depth, depth]);
        let peep = || Tensor::zeros([patch_h, patch_w, depth]);
        let b = || Tensor::zeros([depth]);
        ConvLSTMParams {
            w_vi: k(),
            w_hi: k(),
            w_vf: k(),
            w_hf: k(),
            w_vc: k(),
            w_hc: k(),
            w_vo: k(),
            w_ho: k(),
            w_ci: peep(),
            w_cf: peep(),
            w_co: peep(),
            b_i: b(),
            b_f: b(),
            b_c: b(),
            b_o: b(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvLSTMState {
    pub h: Var,
    pub c: Var,
}

impl ConvLSTMState {
    pub fn zeros<T: Scalar>(tape: &mut Tape<T>, h: usize, w: usize, depth: usize) -> Self {
        ConvLSTMState {
            h: tape.constant(Tensor::zeros([h, w, depth])),
            c: tape.constant(Tensor::zeros([h, w, depth])),
        }
    }
}

/// New state plus the three sigmoid gates, exposed for inspection.
#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    pub state: ConvLSTMState,
    pub input_gate: Var,
    pub forget_gate: Var,
    pub output_gate: Var,
}

fn check_shapes<T: Scalar>(tape: &Tape<T>, v: Var, state: &ConvLSTMState, p: &ConvLSTMParams<Var>) -> TensorResult<()> {
    let vs = tape.shape(v);
    let mismatch = |name: &str, got: &[usize]| {
        Err(TensorError::invalid(
            "convlstm_step",
            format!("{name} has shape {got:?}, incompatible with input {vs:?}"),
        ))
    };
    if vs.len() != 3 {
        return mismatch("input", vs);
    }
    let d = vs[2];
    for (name, var) in [("h", state.h), ("c", state.c)] {
        if tape.shape(var) != vs {
            return mismatch(name, tape.shape(var));
        }
    }
    for (name, var) in p.fields() {
        let s = tape.shape(*var);
        let ok = match name.as_bytes()[0] {
            b'b' => s == [d],
            _ if name.starts_with("w_c") => s == vs,
            _ => s.len() == 4 && s[2] == d && s[3] == d && s[0] == s[1],
        };
        if !ok {
            return mismatch(name, s);
        }
    }
    Ok(())
}

/// One peephole ConvLSTM update. Input and forget gates read the previous
/// cell state through their peepholes; the output gate reads the new one.
pub fn convlstm_step<T: Scalar>(
    tape: &mut Tape<T>,
    v: Var,
    state: ConvLSTMState,
    p: &ConvLSTMParams<Var>,
) -> TensorResult<StepOutput> {
    check_shapes(tape, v, &state, p)?;
    let ConvLSTMState { h, c } = state;
    let pre = |tape: &mut Tape<T>, wv: Var, wh: Var| -> TensorResult<Var> {
        let a = tape.conv2d(v, wv, 1, Padding::Same, 1)?;
        let b = tape.conv2d(h, wh, 1, Padding::Same, 1)?;
        tape.add(a, b)
    };

    let zi = pre(tape, p.w_vi, p.w_hi)?;
    let peep_i = tape.mul(p.w_ci, c)?;
    let zi = tape.add(zi, peep_i)?;
    let zi = tape.add_bias(zi, p.b_i)?;
    let i = tape.sigmoid(zi);

    let zf = pre(tape, p.w_vf, p.w_hf)?;
    let peep_f = tape.mul(p.w_cf, c)?;
    let zf = tape.add(zf, peep_f)?;
    let zf = tape.add_bias(zf, p.b_f)?;
    let f = tape.sigmoid(zf);

    let zc = pre(tape, p.w_vc, p.w_hc)?;
    let zc = tape.add_bias(zc, p.b_c)?;
    let g = tape.tanh(zc);

    let kept = tape.mul(f, c)?;
    let written = tape.mul(i, g)?;
    let c_new = tape.add(kept, written)?;

    let zo = pre(tape, p.w_vo, p.w_ho)?;
    let peep_o = tape.mul(p.w_co, c_new)?;
    let zo = tape.add(zo, peep_o)?;
    let zo = tape.add_bias(zo, p.b_o)?;
    let o = tape.sigmoid(zo);

    let squashed = tape.tanh(c_new);
    let h_new = tape.mul(o, squashed)?;
    Ok(StepOutput {
        state: ConvLSTMState { h: h_new, c: c_new },
        input_gate: i,
        forget_gate: f,
        output_gate: o,
    })
}
