use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RethNetConfig;
use super::norm::{normalization_layer, NormStats, NORM_MOMENTUM};
use crate::blocks::{fan_in_uniform, rethinker_block, BlockParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Padding, Tape, Tensor, TensorError, Var};

/// Buffer counting how many times running statistics were updated.
const UPDATES_BUFFER: &str = "norm_updates";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Normalisation uses per-image statistics and reports them.
    Train,
    /// Normalisation uses the tracked running statistics.
    Eval,
}

/// Statistics observed by one normalisation layer during a training forward.
#[derive(Clone, Debug)]
pub struct StatUpdate<T> {
    pub layer: String,
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

pub struct ForwardOutput<T> {
    pub logits: Var,
    pub stat_updates: Vec<StatUpdate<T>>,
}

/// Model parameters recorded on a tape, by name.
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    /// Wraps variables the caller already recorded, e.g. for finite-difference
    /// checks that own the leaves.
    pub fn from_vars(vars: BTreeMap<String, Var>) -> Self {
        BoundParams { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("model has no parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Mini encoder-decoder segmentation network.
///
/// Parameters are named `stage{i}.sep{j}.{dw,pw,...}`, `stage{i}.block.*` and
/// `decoder.*`. Running normalisation statistics live in a separate buffer map.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    config: RethNetConfig,
    params: BTreeMap<String, Tensor<T>>,
    buffers: BTreeMap<String, Tensor<T>>,
}

/// Stable 64-bit FNV-1a, used to give every parameter group its own RNG stream.
fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

fn group_rng(seed: u64, group: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(group));
    rng
}

struct Builder<T> {
    seed: u64,
    params: BTreeMap<String, Tensor<T>>,
    buffers: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Builder<T> {
    fn norm(&mut self, prefix: &str, c: usize) {
        self.params.insert(format!("{prefix}.gamma"), Tensor::ones([c]));
        self.params.insert(format!("{prefix}.beta"), Tensor::zeros([c]));
        self.buffers.insert(format!("{prefix}.running_mean"), Tensor::zeros([c]));
        self.buffers.insert(format!("{prefix}.running_var"), Tensor::ones([c]));
    }

    fn pointwise(&mut self, name: &str, cin: usize, cout: usize) {
        let mut rng = group_rng(self.seed, name);
        self.params
            .insert(name.to_string(), fan_in_uniform(&[1, 1, cin, cout], cin, &mut rng));
    }

    fn sepconv(&mut self, prefix: &str, cin: usize, cout: usize) {
        let mut rng = group_rng(self.seed, &format!("{prefix}.dw"));
        self.params
            .insert(format!("{prefix}.dw"), fan_in_uniform(&[3, 3, cin], 9, &mut rng));
        self.norm(&format!("{prefix}.dw_norm"), cin);
        self.pointwise(&format!("{prefix}.pw"), cin, cout);
        self.norm(&format!("{prefix}.pw_norm"), cout);
    }
}

impl<T: Scalar> Model<T> {
    /// Deterministically initialised model. Parameter groups draw from
    /// independent streams keyed by name, so swapping a block variant leaves
    /// every other parameter unchanged.
    pub fn build(config: RethNetConfig) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            seed: config.seed,
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
        };
        let patches = config.patch_sizes();
        let mut cin = config.input_c;
        for (i, stage) in config.stages.iter().enumerate() {
            let c = stage.out_channels;
            b.sepconv(&format!("stage{i}.sep0"), cin, c);
            b.sepconv(&format!("stage{i}.sep1"), c, c);
            b.sepconv(&format!("stage{i}.sep2"), c, c);
            if let Some(variant) = stage.variant {
                let prefix = format!("stage{i}.block");
                let mut rng = group_rng(config.seed, &format!("{prefix}.{variant}"));
                let block = BlockParams::<Tensor<T>>::init(variant, c, config.se_ratio, patches[i], &mut rng)?;
                for (name, t) in block.named() {
                    b.params.insert(format!("{prefix}.{name}"), t.clone());
                }
            }
            cin = c;
        }
        let dc = config.decoder_channels;
        let deep_c = config.stages.last().map_or(0, |s| s.out_channels);
        let low_c = config.stages[config.decoder_low_level_stage].out_channels;
        b.pointwise("decoder.deep_reduce", deep_c, dc);
        b.norm("decoder.deep_norm", dc);
        b.pointwise("decoder.low_reduce", low_c, dc);
        b.norm("decoder.low_norm", dc);
        b.sepconv("decoder.sep0", 2 * dc, dc);
        b.sepconv("decoder.sep1", dc, dc);
        b.pointwise("decoder.classifier", dc, config.num_classes);
        b.params
            .insert("decoder.classifier_bias".into(), Tensor::zeros([config.num_classes]));
        b.buffers.insert(UPDATES_BUFFER.into(), Tensor::zeros([1]));
        Ok(Model {
            config,
            params: b.params,
            buffers: b.buffers,
        })
    }

    /// Reassembles a model from stored tensors; names and shapes must match
    /// what [`Model::build`] produces for `config`.
    pub fn from_parts(
        config: RethNetConfig,
        params: BTreeMap<String, Tensor<T>>,
        buffers: BTreeMap<String, Tensor<T>>,
    ) -> Result<Self> {
        let template = Model::<T>::build(config.clone())?;
        check_same_layout("parameter", &template.params, &params)?;
        check_same_layout("buffer", &template.buffers, &buffers)?;
        Ok(Model {
            config,
            params,
            buffers,
        })
    }

    pub fn config(&self) -> &RethNetConfig {
        &self.config
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor<T>> {
        &mut self.params
    }

    pub fn buffers(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.buffers
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Records every parameter on `tape`, trainable or constant.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundParams {
        BoundParams {
            vars: self
                .params
                .iter()
                .map(|(k, t)| (k.clone(), tape.leaf(t.clone(), trainable)))
                .collect(),
        }
    }

    /// Folds per-image statistics into the running statistics. The first
    /// update copies the observed values.
    pub fn apply_stat_updates(&mut self, updates: &[StatUpdate<T>]) {
        let count = self.buffers[UPDATES_BUFFER].item();
        let m = T::from_f64_lossy(NORM_MOMENTUM);
        for u in updates {
            for (suffix, observed) in [("running_mean", &u.mean), ("running_var", &u.var)] {
                let buf = self
                    .buffers
                    .get_mut(&format!("{}.{suffix}", u.layer))
                    .expect("stat update for a known layer");
                if count == T::zero() {
                    *buf = observed.clone();
                } else {
                    for (r, &o) in buf.data_mut().iter_mut().zip(observed.data()) {
                        *r = m * *r + (T::one() - m) * o;
                    }
                }
            }
        }
        if !updates.is_empty() {
            self.buffers.get_mut(UPDATES_BUFFER).unwrap().data_mut()[0] = count + T::one();
        }
    }

    /// Per-pixel logits `(H,W,K)` for `image (H,W,C)`.
    pub fn forward(&self, tape: &mut Tape<T>, bound: &BoundParams, image: Var, mode: Mode) -> Result<ForwardOutput<T>> {
        let shape = tape.shape(image).to_vec();
        if shape.len() != 3 || shape[2] != self.config.input_c {
            return Err(Error::Data(format!(
                "expected an (H, W, {}) image, got {shape:?}",
                self.config.input_c
            )));
        }
        let (h, w) = (shape[0], shape[1]);
        let slicing = self.slicing_for(h, w)?;
        let mut ctx = ForwardCtx {
            model: self,
            bound,
            mode,
            updates: Vec::new(),
        };

        let mut x = image;
        let mut low = None;
        for (i, stage) in self.config.stages.iter().enumerate() {
            x = ctx.sepconv(tape, &format!("stage{i}.sep0"), x, 1)?;
            x = ctx.sepconv(tape, &format!("stage{i}.sep1"), x, 1)?;
            x = ctx.sepconv(tape, &format!("stage{i}.sep2"), x, stage.stride)?;
            if let Some(variant) = stage.variant {
                let prefix = format!("stage{i}.block");
                let block = BlockParams::from_lookup(variant, |n| bound.get(&format!("{prefix}.{n}")))?;
                x = rethinker_block(tape, x, slicing[i], &block)?;
            }
            if i == self.config.decoder_low_level_stage {
                low = Some(x);
            }
        }
        let low = low.expect("validated low-level stage index");

        let deep = ctx.reduce(tape, "decoder.deep_reduce", "decoder.deep_norm", x)?;
        let low = ctx.reduce(tape, "decoder.low_reduce", "decoder.low_norm", low)?;
        let (lh, lw) = (tape.shape(low)[0], tape.shape(low)[1]);
        let deep = tape.bilinear_resize(deep, lh, lw)?;
        let mut y = tape.concat_channels(deep, low)?;
        y = ctx.sepconv(tape, "decoder.sep0", y, 1)?;
        y = ctx.sepconv(tape, "decoder.sep1", y, 1)?;
        let logits = tape.conv2d(y, bound.get("decoder.classifier")?, 1, Padding::Same, 1)?;
        let logits = tape.add_bias(logits, bound.get("decoder.classifier_bias")?)?;
        let logits = tape.bilinear_resize(logits, h, w)?;
        Ok(ForwardOutput {
            logits,
            stat_updates: ctx.updates,
        })
    }

    /// Eval-mode logits without recording gradients.
    pub fn predict(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(image.clone());
        let out = self.forward(&mut tape, &bound, x, Mode::Eval)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Per-pixel argmax class of eval-mode logits.
    pub fn predict_mask(&self, image: &Tensor<T>) -> Result<Vec<u8>> {
        Ok(argmax_classes(&self.predict(image)?))
    }

    /// Slicing coefficient each stage uses for an `h x w` input, keeping the
    /// configured patch extents fixed.
    pub fn slicing_for(&self, h: usize, w: usize) -> Result<Vec<usize>> {
        let os = self.config.output_stride();
        if h % os != 0 || w % os != 0 {
            return Err(Error::Data(format!(
                "input {h}x{w} not divisible by output stride {os}"
            )));
        }
        let extents = self.config.stage_extents(h, w);
        let patches = self.config.patch_sizes();
        self.config
            .stages
            .iter()
            .zip(extents.into_iter().zip(patches))
            .enumerate()
            .map(|(i, (stage, ((eh, ew), (ph, pw))))| {
                if !stage.variant.is_some_and(|v| v.uses_patches()) {
                    return Ok(stage.n);
                }
                if ph == 0 || pw == 0 || eh % ph != 0 || ew % pw != 0 || eh / ph != ew / pw {
                    return Err(Error::Data(format!(
                        "stage {i}: extent {eh}x{ew} is not a square grid of {ph}x{pw} patches"
                    )));
                }
                Ok(eh / ph)
            })
            .collect()
    }
}

pub fn argmax_classes<T: Scalar>(logits: &Tensor<T>) -> Vec<u8> {
    let k = *logits.shape().last().unwrap_or(&1);
    logits
        .data()
        .chunks_exact(k)
        .map(|px| {
            let mut best = 0;
            for (i, &v) in px.iter().enumerate() {
                if v > px[best] {
                    best = i;
                }
            }
            best as u8
        })
        .collect()
}

fn check_same_layout<T: Scalar>(
    what: &str,
    want: &BTreeMap<String, Tensor<T>>,
    got: &BTreeMap<String, Tensor<T>>,
) -> Result<()> {
    for (name, t) in want {
        match got.get(name) {
            None => return Err(Error::Checkpoint(format!("missing {what} {name}"))),
            Some(g) if g.shape() != t.shape() => {
                return Err(Error::Checkpoint(format!(
                    "{what} {name} has shape {:?}, expected {:?}",
                    g.shape(),
                    t.shape()
                )))
            }
            Some(_) => {}
        }
    }
    if let Some(extra) = got.keys().find(|k| !want.contains_key(*k)) {
        return Err(Error::Checkpoint(format!("unexpected {what} {extra}")));
    }
    Ok(())
}

struct ForwardCtx<'a, T> {
    model: &'a Model<T>,
    bound: &'a BoundParams,
    mode: Mode,
    updates: Vec<StatUpdate<T>>,
}

impl<T: Scalar> ForwardCtx<'_, T> {
    fn norm(&mut self, tape: &mut Tape<T>, layer: &str, x: Var) -> Result<Var> {
        let gamma = self.bound.get(&format!("{layer}.gamma"))?;
        let beta = self.bound.get(&format!("{layer}.beta"))?;
        let (y, observed) = match self.mode {
            Mode::Train => normalization_layer(tape, x, gamma, beta, NormStats::Batch)?,
            Mode::Eval => {
                let buf = |s: &str| {
                    self.model
                        .buffers
                        .get(&format!("{layer}.{s}"))
                        .ok_or_else(|| TensorError::invalid("normalization_layer", format!("no {s} for {layer}")))
                };
                let stats = NormStats::Running {
                    mean: buf("running_mean")?,
                    var: buf("running_var")?,
                };
                normalization_layer(tape, x, gamma, beta, stats)?
            }
        };
        if let Some((mean, var)) = observed {
            self.updates.push(StatUpdate {
                layer: layer.to_string(),
                mean,
                var,
            });
        }
        Ok(y)
    }

    /// Depthwise 3x3 (strided) -> norm -> ReLU -> pointwise -> norm -> ReLU.
    fn sepconv(&mut self, tape: &mut Tape<T>, prefix: &str, x: Var, stride: usize) -> Result<Var> {
        let dw = self.bound.get(&format!("{prefix}.dw"))?;
        let pw = self.bound.get(&format!("{prefix}.pw"))?;
        let y = tape.depthwise_conv2d(x, dw, stride, Padding::Same, 1)?;
        let y = self.norm(tape, &format!("{prefix}.dw_norm"), y)?;
        let y = tape.relu(y);
        let y = tape.conv2d(y, pw, 1, Padding::Same, 1)?;
        let y = self.norm(tape, &format!("{prefix}.pw_norm"), y)?;
        Ok(tape.relu(y))
    }

    /// 1x1 conv -> norm -> ReLU.
    fn reduce(&mut self, tape: &mut Tape<T>, conv: &str, norm: &str, x: Var) -> Result<Var> {
        let y = tape.conv2d(x, self.bound.get(conv)?, 1, Padding::Same, 1)?;
        let y = self.norm(tape, norm, y)?;
        Ok(tape.relu(y))
    }
}
