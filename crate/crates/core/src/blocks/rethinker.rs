use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::convlstm::ConvLSTMParams;
use super::local::{local_conv3d, local_convlstm};
use super::se::{se_apply, se_gate, SEParams};
use super::fan_in_uniform;
use crate::scalar::Scalar;
use crate::tensor::{Padding, Tape, Tensor, TensorError, TensorResult, Var};

/// Spatial kernel size of every block core.
pub const CORE_KERNEL: usize = 3;
/// Temporal kernel extent of the Conv3D core.
pub const CONV3D_TIME_KERNEL: usize = 3;

/// Which operator sits inside the residual, SE-gated block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockVariant {
    /// Plain 3x3 convolution, no patching.
    BaselineC,
    /// Conv3D over the patch sequence.
    RethinkerD,
    /// ConvLSTM over the patch sequence.
    RethinkerE,
}

impl BlockVariant {
    pub const ALL: [BlockVariant; 3] = [BlockVariant::BaselineC, BlockVariant::RethinkerD, BlockVariant::RethinkerE];

    pub fn name(self) -> &'static str {
        match self {
            BlockVariant::BaselineC => "baseline_c",
            BlockVariant::RethinkerD => "rethinker_d",
            BlockVariant::RethinkerE => "rethinker_e",
        }
    }

    /// Whether the core operates on the patch sequence (and so needs `n`).
    pub fn uses_patches(self) -> bool {
        !matches!(self, BlockVariant::BaselineC)
    }
}

impl fmt::Display for BlockVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BlockVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "baseline_c" | "c" => Ok(BlockVariant::BaselineC),
            "rethinker_d" | "rethinker_d_conv3d" | "d" => Ok(BlockVariant::RethinkerD),
            "rethinker_e" | "rethinker_e_convlstm" | "e" => Ok(BlockVariant::RethinkerE),
            other => Err(format!("unknown block variant {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CoreParams<P> {
    Conv2d { kernel: P },
    Conv3d { kernel: P },
    ConvLstm(ConvLSTMParams<P>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<P> {
    pub se: SEParams<P>,
    pub core: CoreParams<P>,
}

impl<P> BlockParams<P> {
    pub fn variant(&self) -> BlockVariant {
        match self.core {
            CoreParams::Conv2d { .. } => BlockVariant::BaselineC,
            CoreParams::Conv3d { .. } => BlockVariant::RethinkerD,
            CoreParams::ConvLstm(_) => BlockVariant::RethinkerE,
        }
    }

    /// Parameter names relative to the block, e.g. `se.w1`, `lstm.w_vi`.
    pub fn named(&self) -> Vec<(String, &P)> {
        let mut out: Vec<(String, &P)> = self.se.fields().into_iter().map(|(n, p)| (format!("se.{n}"), p)).collect();
        match &self.core {
            CoreParams::Conv2d { kernel } => out.push(("conv.kernel".into(), kernel)),
            CoreParams::Conv3d { kernel } => out.push(("conv3d.kernel".into(), kernel)),
            CoreParams::ConvLstm(p) => out.extend(p.fields().into_iter().map(|(n, p)| (format!("lstm.{n}"), p))),
        }
        out
    }

    pub fn from_lookup<E>(variant: BlockVariant, mut get: impl FnMut(&str) -> Result<P, E>) -> Result<Self, E> {
        let se = SEParams::from_lookup(|n| get(&format!("se.{n}")))?;
        let core = match variant {
            BlockVariant::BaselineC => CoreParams::Conv2d {
                kernel: get("conv.kernel")?,
            },
            BlockVariant::RethinkerD => CoreParams::Conv3d {
                kernel: get("conv3d.kernel")?,
            },
            BlockVariant::RethinkerE => CoreParams::ConvLstm(ConvLSTMParams::from_lookup(|n| get(&format!("lstm.{n}")))?),
        };
        Ok(BlockParams { se, core })
    }
}

impl<T: Scalar> BlockParams<Tensor<T>> {
    /// Randomly initialised block of the given variant. `patch` is the
    /// `(H', W')` patch extent (only used by the ConvLSTM peepholes).
    pub fn init(
        variant: BlockVariant,
        depth: usize,
        se_ratio: usize,
        patch: (usize, usize),
        rng: &mut impl Rng,
    ) -> TensorResult<Self> {
        let se = SEParams::init(depth, se_ratio, rng)?;
        let k = CORE_KERNEL;
        let core = match variant {
            BlockVariant::BaselineC => CoreParams::Conv2d {
                kernel: fan_in_uniform(&[k, k, depth, depth], k * k * depth, rng),
            },
            BlockVariant::RethinkerD => {
                let kt = CONV3D_TIME_KERNEL;
                CoreParams::Conv3d {
                    kernel: fan_in_uniform(&[kt, k, k, depth, depth], kt * k * k * depth, rng),
                }
            }
            BlockVariant::RethinkerE => CoreParams::ConvLstm(ConvLSTMParams::init(depth, k, patch.0, patch.1, rng)),
        };
        Ok(BlockParams { se, core })
    }

    /// Every core parameter zero; SE weights as given.
    pub fn with_zero_core(variant: BlockVariant, se: SEParams<Tensor<T>>, depth: usize, patch: (usize, usize)) -> Self {
        let k = CORE_KERNEL;
        let core = match variant {
            BlockVariant::BaselineC => CoreParams::Conv2d {
                kernel: Tensor::zeros([k, k, depth, depth]),
            },
            BlockVariant::RethinkerD => CoreParams::Conv3d {
                kernel: Tensor::zeros([CONV3D_TIME_KERNEL, k, k, depth, depth]),
            },
            BlockVariant::RethinkerE => CoreParams::ConvLstm(ConvLSTMParams::zeros(depth, k, patch.0, patch.1)),
        };
        BlockParams { se, core }
    }

    /// Records every tensor as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> BlockParams<Var> {
        let se = self.se.map(|_, t| tape.param(t.clone()));
        let core = match &self.core {
            CoreParams::Conv2d { kernel } => CoreParams::Conv2d {
                kernel: tape.param(kernel.clone()),
            },
            CoreParams::Conv3d { kernel } => CoreParams::Conv3d {
                kernel: tape.param(kernel.clone()),
            },
            CoreParams::ConvLstm(p) => CoreParams::ConvLstm(p.map(|_, t| tape.param(t.clone()))),
        };
        BlockParams { se, core }
    }
}

/// `u + se_apply(core(u), se_gate(u))`, shape preserving.
///
/// `n` is the slicing coefficient of the patch-sequence cores and is ignored
/// by the baseline variant.
pub fn rethinker_block<T: Scalar>(tape: &mut Tape<T>, u: Var, n: usize, params: &BlockParams<Var>) -> TensorResult<Var> {
    let shape = tape.shape(u).to_vec();
    if shape.len() != 3 {
        return Err(TensorError::Rank {
            op: "rethinker_block",
            expected: 3,
            got: shape,
        });
    }
    let gate = se_gate(tape, u, &params.se)?;
    let core = match &params.core {
        CoreParams::Conv2d { kernel } => tape.conv2d(u, *kernel, 1, Padding::Same, 1)?,
        CoreParams::Conv3d { kernel } => local_conv3d(tape, u, n, *kernel)?,
        CoreParams::ConvLstm(p) => local_convlstm(tape, u, n, p)?,
    };
    let gated = se_apply(tape, core, gate)?;
    tape.add(u, gated)
}
