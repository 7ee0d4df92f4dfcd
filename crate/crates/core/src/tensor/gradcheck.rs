use super::{Tape, Tensor, TensorError, TensorResult, Var};

/// Largest relative disagreement between the tape gradient of a scalar
/// function and its central difference, over every coordinate of `x`.
///
/// Relative error is `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> TensorResult<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> TensorResult<Var>,
{
    grad_check_multi(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), eps)
}

/// [`grad_check`] over several inputs at once; the maximum is taken over all
/// coordinates of all inputs.
pub fn grad_check_multi<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> TensorResult<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> TensorResult<Var>,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(TensorError::Usage(format!(
            "grad_check: eps {eps} outside [1e-7, 1e-4]"
        )));
    }
    let eval = |values: &[Tensor<f64>]| -> TensorResult<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    scalar_of(&tape, out)?;
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + eps;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = orig - eps;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads.get(*var).map_or(0.0, |g| g.data()[j]);
            let denom = 1f64.max(analytic.abs()).max(numeric.abs());
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

fn scalar_of(tape: &Tape<f64>, v: Var) -> TensorResult<f64> {
    let t = tape.value(v);
    if t.len() != 1 {
        return Err(TensorError::Usage(format!(
            "grad_check: function must be scalar-valued, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t.item())
}
