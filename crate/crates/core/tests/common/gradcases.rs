//! Central-difference gradient checks of every tape operation, every block
//! variant and a complete two-stage network, all in `f64`.

use std::collections::BTreeMap;

use rand::Rng;
use rethseg::blocks::{
    convlstm_step, local_conv3d, local_convlstm, rethinker_block, se_gate, BlockParams, BlockVariant, ConvLSTMParams,
    ConvLSTMState, SEParams,
};
use rethseg::network::{normalization_layer, BoundParams, Mode, Model, NormStats};
use rethseg::tensor::{grad_check_multi, Padding, TensorResult};
use rethseg::{Tape, Tensor, Var};

use super::{micro_config, random_tensor, random_tensor_off_zero, rng};

pub const EPS: f64 = 1e-6;
pub const OP_TOL: f64 = 1e-5;
pub const NETWORK_TOL: f64 = 1e-4;

/// `sum(out * W)` for a fixed, shape-determined `W`, so every output
/// coordinate carries a distinct weight.
pub fn weighted_sum(tape: &mut Tape<f64>, out: Var) -> TensorResult<Var> {
    let shape = tape.shape(out).to_vec();
    let w = tape.constant(Tensor::from_fn(shape, |i| (0.7 * i as f64 + 0.3).sin()));
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

pub struct GradCase {
    pub name: String,
    pub inputs: Vec<Tensor<f64>>,
    pub f: Box<dyn Fn(&mut Tape<f64>, &[Var]) -> TensorResult<Var>>,
}

impl GradCase {
    fn new(
        name: impl Into<String>,
        inputs: Vec<Tensor<f64>>,
        f: impl Fn(&mut Tape<f64>, &[Var]) -> TensorResult<Var> + 'static,
    ) -> Self {
        GradCase {
            name: name.into(),
            inputs,
            f: Box::new(f),
        }
    }

    /// Maximum relative error between analytic and numeric gradients.
    pub fn run(&self) -> f64 {
        grad_check_multi(|t, v| (self.f)(t, v), &self.inputs, EPS).unwrap()
    }
}

fn lstm_params(d: usize, ph: usize, pw: usize, r: &mut impl Rng) -> ConvLSTMParams<Tensor<f64>> {
    let mut p = ConvLSTMParams::<Tensor<f64>>::init(d, 3, ph, pw, r);
    for t in [&mut p.w_ci, &mut p.w_cf, &mut p.w_co, &mut p.b_i, &mut p.b_c, &mut p.b_o] {
        *t = random_tensor(t.shape(), r).map(|v| 0.5 * v);
    }
    p
}

fn block_case(variant: BlockVariant, seed: u64) -> GradCase {
    let mut r = rng(seed);
    let (h, w, d, n) = (4, 4, 4, 2);
    let mut params = BlockParams::<Tensor<f64>>::init(variant, d, 2, (h / n, w / n), &mut r).unwrap();
    if let rethseg::blocks::CoreParams::ConvLstm(p) = &mut params.core {
        *p = lstm_params(d, h / n, w / n, &mut r);
    }
    for t in [&mut params.se.b1, &mut params.se.b2] {
        *t = random_tensor(t.shape(), &mut r).map(|v| 0.5 * v);
    }
    let named: Vec<(String, Tensor<f64>)> = params.named().into_iter().map(|(k, t)| (k, t.clone())).collect();
    let mut inputs = vec![random_tensor(&[h, w, d], &mut r)];
    inputs.extend(named.iter().map(|(_, t)| t.clone()));
    let names: Vec<String> = named.into_iter().map(|(k, _)| k).collect();
    GradCase::new(format!("rethinker_block/{}", variant.name()), inputs, move |t, v| {
        let lookup: BTreeMap<&str, Var> = names.iter().map(String::as_str).zip(v[1..].iter().copied()).collect();
        let p = BlockParams::from_lookup(variant, |k| lookup.get(k).copied().ok_or(()))
            .expect("all block parameters present");
        let out = rethinker_block(t, v[0], n, &p)?;
        weighted_sum(t, out)
    })
}

fn unary(name: &str, x: Tensor<f64>, f: impl Fn(&mut Tape<f64>, Var) -> TensorResult<Var> + 'static) -> GradCase {
    GradCase::new(name, vec![x], move |t, v| {
        let y = f(t, v[0])?;
        weighted_sum(t, y)
    })
}

/// Every operation on the tape plus the composite blocks.
pub fn op_cases() -> Vec<GradCase> {
    let mut r = rng(2024);
    let mut rt = |s: &[usize]| random_tensor(s, &mut r);
    let mut cases = vec![
        GradCase::new("add", vec![rt(&[3, 4]), rt(&[3, 4])], |t, v| {
            let y = t.add(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        GradCase::new("mul", vec![rt(&[3, 4]), rt(&[3, 4])], |t, v| {
            let y = t.mul(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        GradCase::new("mul_same_input", vec![rt(&[5])], |t, v| {
            let y = t.mul(v[0], v[0])?;
            weighted_sum(t, y)
        }),
        unary("sigmoid", rt(&[2, 5]).map(|v| 4.0 * v), |t, x| Ok(t.sigmoid(x))),
        unary("tanh", rt(&[2, 5]).map(|v| 3.0 * v), |t, x| Ok(t.tanh(x))),
        unary("sum", rt(&[2, 3, 2]), |t, x| Ok(t.sum(x))),
        unary("scale", rt(&[4]), |t, x| Ok(t.scale(x, -1.7))),
        GradCase::new("add_bias", vec![rt(&[3, 2, 4]), rt(&[4])], |t, v| {
            let y = t.add_bias(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        GradCase::new("mul_channels", vec![rt(&[3, 2, 4]), rt(&[4])], |t, v| {
            let y = t.mul_channels(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        GradCase::new("concat_channels", vec![rt(&[2, 3, 2]), rt(&[2, 3, 3])], |t, v| {
            let y = t.concat_channels(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        unary("select", rt(&[3, 2, 2]), |t, x| t.select(x, 1)),
        GradCase::new("stack", vec![rt(&[2, 3]), rt(&[2, 3]), rt(&[2, 3])], |t, v| {
            let y = t.stack(v)?;
            weighted_sum(t, y)
        }),
        unary("global_avg_pool", rt(&[3, 4, 5]), |t, x| t.global_avg_pool(x)),
        GradCase::new("fully_connected", vec![rt(&[5]), rt(&[5, 3]), rt(&[3])], |t, v| {
            let y = t.fully_connected(v[0], v[1], v[2])?;
            weighted_sum(t, y)
        }),
        unary("bilinear_resize_up", rt(&[3, 2, 2]), |t, x| t.bilinear_resize(x, 7, 5)),
        unary("bilinear_resize_down", rt(&[6, 5, 2]), |t, x| t.bilinear_resize(x, 3, 2)),
        unary("softmax_cross_entropy", rt(&[3, 3, 4]).map(|v| 3.0 * v), |t, x| {
            t.softmax_cross_entropy(x, &[0, 1, 2, 3, 255, 1, 0, 3, 2], 255)
        }),
        unary("channel_normalize", rt(&[4, 3, 3]), |t, x| t.channel_normalize(x, 1e-5).map(|(y, _, _)| y)),
        GradCase::new("normalization_layer/batch", vec![rt(&[3, 3, 2]), rt(&[2]), rt(&[2])], |t, v| {
            let (y, _) = normalization_layer(t, v[0], v[1], v[2], NormStats::Batch)?;
            weighted_sum(t, y)
        }),
        GradCase::new("normalization_layer/running", vec![rt(&[3, 3, 2]), rt(&[2]), rt(&[2])], |t, v| {
            let mean = Tensor::from_f64([2], &[0.1, -0.2]).unwrap();
            let var = Tensor::from_f64([2], &[0.5, 2.0]).unwrap();
            let (y, _) = normalization_layer(
                t,
                v[0],
                v[1],
                v[2],
                NormStats::Running {
                    mean: &mean,
                    var: &var,
                },
            )?;
            weighted_sum(t, y)
        }),
        GradCase::new("conv2d/same", vec![rt(&[5, 4, 2]), rt(&[3, 3, 2, 3])], |t, v| {
            let y = t.conv2d(v[0], v[1], 1, Padding::Same, 1)?;
            weighted_sum(t, y)
        }),
        GradCase::new("conv2d/strided_dilated", vec![rt(&[7, 6, 2]), rt(&[3, 3, 2, 2])], |t, v| {
            let y = t.conv2d(v[0], v[1], 2, Padding::Same, 2)?;
            weighted_sum(t, y)
        }),
        GradCase::new("conv2d/valid", vec![rt(&[5, 6, 2]), rt(&[3, 1, 2, 2])], |t, v| {
            let y = t.conv2d(v[0], v[1], 1, Padding::Valid, 1)?;
            weighted_sum(t, y)
        }),
        GradCase::new("depthwise_conv2d", vec![rt(&[5, 5, 3]), rt(&[3, 3, 3])], |t, v| {
            let y = t.depthwise_conv2d(v[0], v[1], 2, Padding::Same, 1)?;
            weighted_sum(t, y)
        }),
        GradCase::new(
            "depthwise_separable_conv",
            vec![rt(&[4, 4, 2]), rt(&[3, 3, 2]), rt(&[1, 1, 2, 3])],
            |t, v| {
                let y = t.depthwise_separable_conv(v[0], v[1], v[2], 1)?;
                weighted_sum(t, y)
            },
        ),
        GradCase::new("conv3d", vec![rt(&[4, 3, 3, 2]), rt(&[3, 3, 3, 2, 2])], |t, v| {
            let y = t.conv3d(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        unary("image2patches", rt(&[4, 6, 2]), |t, x| t.image2patches(x, 2)),
        unary("patches2image", rt(&[4, 2, 3, 2]), |t, x| t.patches2image(x, 2)),
    ];
    cases.push(unary("relu", random_tensor_off_zero(&[3, 4], &mut rng(7)), |t, x| Ok(t.relu(x))));

    // SE gate with its four parameters.
    {
        let mut r = rng(31);
        let se = SEParams::<Tensor<f64>>::init(4, 2, &mut r).unwrap();
        let inputs = vec![
            random_tensor(&[3, 3, 4], &mut r),
            se.w1.clone(),
            random_tensor(&[2], &mut r).map(|v| v + 2.0),
            se.w2.clone(),
            random_tensor(&[4], &mut r),
        ];
        cases.push(GradCase::new("se_gate", inputs, |t, v| {
            let p = SEParams {
                w1: v[1],
                b1: v[2],
                w2: v[3],
                b2: v[4],
            };
            let g = se_gate(t, v[0], &p)?;
            weighted_sum(t, g)
        }));
    }

    // One ConvLSTM step from a random state, then the whole local sequence.
    {
        let mut r = rng(41);
        let p = lstm_params(2, 3, 3, &mut r);
        let mut inputs = vec![
            random_tensor(&[3, 3, 2], &mut r),
            random_tensor(&[3, 3, 2], &mut r),
            random_tensor(&[3, 3, 2], &mut r),
        ];
        inputs.extend(p.fields().into_iter().map(|(_, t)| t.clone()));
        cases.push(GradCase::new("convlstm_step", inputs, |t, v| {
            let names = ConvLSTMParams::<()>::FIELDS;
            let p = ConvLSTMParams::from_lookup(|k| {
                Ok::<_, ()>(v[3 + names.iter().position(|n| *n == k).unwrap()])
            })
            .unwrap();
            let out = convlstm_step(t, v[0], ConvLSTMState { h: v[1], c: v[2] }, &p)?;
            let a = weighted_sum(t, out.state.h)?;
            let b = weighted_sum(t, out.state.c)?;
            t.add(a, b)
        }));
    }
    {
        let mut r = rng(43);
        let p = lstm_params(2, 2, 2, &mut r);
        let mut inputs = vec![random_tensor(&[4, 4, 2], &mut r)];
        inputs.extend(p.fields().into_iter().map(|(_, t)| t.clone()));
        cases.push(GradCase::new("local_convlstm", inputs, |t, v| {
            let names = ConvLSTMParams::<()>::FIELDS;
            let p = ConvLSTMParams::from_lookup(|k| {
                Ok::<_, ()>(v[1 + names.iter().position(|n| *n == k).unwrap()])
            })
            .unwrap();
            let y = local_convlstm(t, v[0], 2, &p)?;
            weighted_sum(t, y)
        }));
    }
    {
        let mut r = rng(47);
        let inputs = vec![random_tensor(&[4, 4, 2], &mut r), random_tensor(&[3, 3, 3, 2, 2], &mut r)];
        cases.push(GradCase::new("local_conv3d", inputs, |t, v| {
            let y = local_conv3d(t, v[0], 2, v[1])?;
            weighted_sum(t, y)
        }));
    }

    for (i, variant) in BlockVariant::ALL.into_iter().enumerate() {
        cases.push(block_case(variant, 100 + i as u64));
    }
    cases
}

/// Cross-entropy of the full network as a function of every parameter.
pub fn network_case(variant: BlockVariant) -> GradCase {
    let cfg = micro_config(variant);
    let mut model = Model::<f64>::build(cfg.clone()).unwrap();
    let mut r = rng(5);
    for (name, p) in model.params_mut().iter_mut() {
        if name.contains(".w_c") || name.ends_with("beta") {
            *p = random_tensor(p.shape(), &mut r).map(|v| 0.3 * v);
        }
    }
    let image = random_tensor(&[cfg.input_h, cfg.input_w, cfg.input_c], &mut r);
    let labels: Vec<u8> = (0..cfg.input_h * cfg.input_w).map(|_| r.gen_range(0..cfg.num_classes as u8)).collect();
    let names: Vec<String> = model.params().keys().cloned().collect();
    let inputs: Vec<Tensor<f64>> = model.params().values().cloned().collect();
    GradCase::new(format!("network/{}", variant.name()), inputs, move |t, v| {
        let bound = BoundParams::from_vars(names.iter().cloned().zip(v.iter().copied()).collect());
        let x = t.constant(image.clone());
        let out = model.forward(t, &bound, x, Mode::Train).map_err(|e| match e {
            rethseg::Error::Tensor(te) => te,
            other => rethseg::TensorError::Usage(other.to_string()),
        })?;
        t.softmax_cross_entropy(out.logits, &labels, 255)
    })
}
