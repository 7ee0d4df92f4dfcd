//! Reference implementations written directly from the definitions, plus
//! small fixtures shared by the integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rethseg::network::{RethNetConfig, StageConfig};
use rethseg::blocks::BlockVariant;
use rethseg::tensor::Padding;
use rethseg::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Values bounded away from zero, for inputs that pass through ReLU kinks.
pub fn random_tensor_off_zero(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Leading pad of one axis: `max((out-1)*s + span - len, 0) / 2` for same
/// padding, zero for valid.
fn pad_before(len: usize, k: usize, stride: usize, dilation: usize, padding: Padding) -> (usize, isize) {
    let span = (k - 1) * dilation + 1;
    match padding {
        Padding::Same => {
            let out = (len + stride - 1) / stride;
            let need = ((out - 1) * stride + span) as isize - len as isize;
            (out, need.max(0) / 2)
        }
        Padding::Valid => ((len - span) / stride + 1, 0),
    }
}

/// `out[y,x,o] = sum_{i,j,c} in[y*s + i*d - pad, x*s + j*d - pad, c] * k[i,j,c,o]`.
pub fn conv2d_oracle(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, padding: Padding, dilation: usize) -> Tensor<f64> {
    let (h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kh, kw, cout) = (k.shape()[0], k.shape()[1], k.shape()[3]);
    let (oh, pt) = pad_before(h, kh, stride, dilation, padding);
    let (ow, pl) = pad_before(w, kw, stride, dilation, padding);
    let mut out = Tensor::zeros([oh, ow, cout]);
    for oy in 0..oh {
        for ox in 0..ow {
            for o in 0..cout {
                let mut acc = 0.0;
                for i in 0..kh {
                    for j in 0..kw {
                        let iy = (oy * stride + i * dilation) as isize - pt;
                        let ix = (ox * stride + j * dilation) as isize - pl;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        for c in 0..cin {
                            acc += x.at(&[iy as usize, ix as usize, c]) * k.at(&[i, j, c, o]);
                        }
                    }
                }
                out.set(&[oy, ox, o], acc);
            }
        }
    }
    out
}

/// Per-channel convolution with `k (kh,kw,C)`.
pub fn depthwise_oracle(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, padding: Padding, dilation: usize) -> Tensor<f64> {
    let c = x.shape()[2];
    let full = Tensor::from_fn([k.shape()[0], k.shape()[1], c, c], |idx| {
        let (ij, rest) = (idx / (c * c), idx % (c * c));
        let (ci, co) = (rest / c, rest % c);
        if ci == co {
            k.data()[ij * c + ci]
        } else {
            0.0
        }
    });
    conv2d_oracle(x, &full, stride, padding, dilation)
}

/// Same-padded, stride-1 3-D convolution of `x (T,H,W,Cin)` with
/// `k (kt,kh,kw,Cin,Cout)`, odd kernel extents.
pub fn conv3d_oracle(x: &Tensor<f64>, k: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let (t, h, w, cin) = (s[0], s[1], s[2], s[3]);
    let ks = k.shape();
    let (kt, kh, kw, cout) = (ks[0], ks[1], ks[2], ks[4]);
    let mut out = Tensor::zeros([t, h, w, cout]);
    for ot in 0..t {
        for oy in 0..h {
            for ox in 0..w {
                for o in 0..cout {
                    let mut acc = 0.0;
                    for a in 0..kt {
                        for i in 0..kh {
                            for j in 0..kw {
                                let it = (ot + a) as isize - (kt / 2) as isize;
                                let iy = (oy + i) as isize - (kh / 2) as isize;
                                let ix = (ox + j) as isize - (kw / 2) as isize;
                                if it < 0 || iy < 0 || ix < 0 || it >= t as isize || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                for c in 0..cin {
                                    acc += x.at(&[it as usize, iy as usize, ix as usize, c]) * k.at(&[a, i, j, c, o]);
                                }
                            }
                        }
                    }
                    out.set(&[ot, oy, ox, o], acc);
                }
            }
        }
    }
    out
}

pub fn fc_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (cin, cout) = (w.shape()[0], w.shape()[1]);
    Tensor::from_fn([cout], |o| b.data()[o] + (0..cin).map(|i| x.data()[i] * w.at(&[i, o])).sum::<f64>())
}

/// Logistic function, evaluated without overflow on either side.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        z.exp() / (1.0 + z.exp())
    }
}

/// Scalar weights of a 1x1x1 peephole ConvLSTM (only the kernel centre tap
/// touches a 1x1 image).
#[derive(Clone, Copy, Debug)]
pub struct ScalarLstm {
    pub w_vi: f64,
    pub w_hi: f64,
    pub w_vf: f64,
    pub w_hf: f64,
    pub w_vc: f64,
    pub w_hc: f64,
    pub w_vo: f64,
    pub w_ho: f64,
    pub w_ci: f64,
    pub w_cf: f64,
    pub w_co: f64,
    pub b_i: f64,
    pub b_f: f64,
    pub b_c: f64,
    pub b_o: f64,
}

impl ScalarLstm {
    /// Returns `(h, c)` after one step on input `v`.
    pub fn step(&self, v: f64, h: f64, c: f64) -> (f64, f64) {
        let i = sigmoid(v * self.w_vi + h * self.w_hi + self.w_ci * c + self.b_i);
        let f = sigmoid(v * self.w_vf + h * self.w_hf + self.w_cf * c + self.b_f);
        let g = (v * self.w_vc + h * self.w_hc + self.b_c).tanh();
        let c_new = f * c + i * g;
        let o = sigmoid(v * self.w_vo + h * self.w_ho + self.w_co * c_new + self.b_o);
        (o * c_new.tanh(), c_new)
    }
}

/// Two-stage network small enough for exhaustive finite differences:
/// 8x8x2 input, 4 channels per stage, ConvLSTM or other blocks in both.
pub fn micro_config(variant: BlockVariant) -> RethNetConfig {
    RethNetConfig {
        input_h: 8,
        input_w: 8,
        input_c: 2,
        num_classes: 3,
        stages: vec![
            StageConfig {
                out_channels: 4,
                stride: 2,
                variant: Some(variant),
                n: 2,
            },
            StageConfig {
                out_channels: 4,
                stride: 2,
                variant: Some(variant),
                n: 2,
            },
        ],
        decoder_low_level_stage: 0,
        decoder_channels: 4,
        se_ratio: 2,
        seed: 3,
    }
}

/// The two-stage 32x32 configuration used for the co-occurrence comparison.
pub fn ablation_model(variant: BlockVariant) -> RethNetConfig {
    RethNetConfig {
        input_h: 32,
        input_w: 32,
        input_c: 3,
        num_classes: 6,
        stages: vec![
            StageConfig {
                out_channels: 8,
                stride: 2,
                variant: Some(variant),
                n: 4,
            },
            StageConfig {
                out_channels: 16,
                stride: 2,
                variant: Some(variant),
                n: 2,
            },
        ],
        decoder_low_level_stage: 0,
        decoder_channels: 16,
        se_ratio: 4,
        seed: 0,
    }
}
pub mod checks;
pub mod gradcases;
