use std::collections::BTreeMap;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Step schedule: `base_lr / drop_factor^(epoch / drop_every)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let drops = (epoch / cfg.lr_drop_every) as i32;
    cfg.base_lr / cfg.lr_drop_factor.powi(drops)
}

/// Classical momentum: `v <- mu * v + g; p <- p - lr * v`.
///
/// Every gradient needs a velocity of the same name and shape, and every
/// gradient names a parameter. Parameters without a gradient are untouched.
pub fn momentum_step<T: Scalar>(
    params: &mut BTreeMap<String, Tensor<T>>,
    grads: &BTreeMap<String, Tensor<T>>,
    velocities: &mut BTreeMap<String, Tensor<T>>,
    lr: f64,
    mu: f64,
) -> Result<()> {
    for (name, g) in grads {
        let p = params.get(name).ok_or_else(|| Error::Data(format!("gradient for unknown parameter {name}")))?;
        let v = velocities
            .get(name)
            .ok_or_else(|| Error::Data(format!("missing velocity for parameter {name}")))?;
        if p.shape() != g.shape() || v.shape() != g.shape() {
            return Err(Error::Data(format!(
                "{name}: parameter {:?}, gradient {:?}, velocity {:?}",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
    }
    let (lr, mu) = (T::from_f64_lossy(lr), T::from_f64_lossy(mu));
    for (name, g) in grads {
        let v = velocities.get_mut(name).expect("checked above");
        let p = params.get_mut(name).expect("checked above");
        for ((v, p), &g) in v.data_mut().iter_mut().zip(p.data_mut()).zip(g.data()) {
            *v = mu * *v + g;
            *p -= lr * *v;
        }
    }
    Ok(())
}

/// Zero velocity for every parameter.
pub fn zero_velocities<T: Scalar>(params: &BTreeMap<String, Tensor<T>>) -> BTreeMap<String, Tensor<T>> {
    params.iter().map(|(k, p)| (k.clone(), Tensor::zeros(p.shape().to_vec()))).collect()
}
