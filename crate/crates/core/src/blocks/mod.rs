//! Squeeze-and-excitation gating, the peephole ConvLSTM cell, the patch-local
//! ConvLSTM / Conv3D operators and the residual block variants built from them.

mod convlstm;
mod local;
mod rethinker;
mod se;

pub use convlstm::{convlstm_step, ConvLSTMParams, ConvLSTMState, StepOutput};
pub use local::{local_conv3d, local_convlstm, local_convlstm_traced};
pub use rethinker::{rethinker_block, BlockParams, BlockVariant, CoreParams};
pub use se::{se_apply, se_gate, SEParams};

use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Declares a struct of named parameter slots, generic over the slot type
/// (owned tensors for storage, tape handles for a forward pass).
macro_rules! param_struct {
    ($(#[$meta:meta])* $name:ident { $($field:ident),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<P> {
            $(pub $field: P,)*
        }

        impl<P> $name<P> {
            pub const FIELDS: &'static [&'static str] = &[$(stringify!($field)),*];

            pub fn fields(&self) -> Vec<(&'static str, &P)> {
                vec![$((stringify!($field), &self.$field)),*]
            }

            pub fn map<Q>(&self, mut f: impl FnMut(&str, &P) -> Q) -> $name<Q> {
                $name { $($field: f(stringify!($field), &self.$field),)* }
            }

            pub fn from_lookup<E>(mut get: impl FnMut(&str) -> Result<P, E>) -> Result<Self, E> {
                Ok($name { $($field: get(stringify!($field))?,)* })
            }
        }
    };
}
pub(crate) use param_struct;

/// Uniform initialisation in `±sqrt(3 / fan_in)` (unit-variance preserving).
pub fn fan_in_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (3.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
}
