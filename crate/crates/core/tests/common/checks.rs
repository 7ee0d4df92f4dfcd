//! Measurements shared by the focused tests and the acceptance run. Each
//! returns the observed quantity so callers can apply and report tolerances.

use super::{conv2d_oracle, conv3d_oracle, fc_oracle, random_tensor, rng, ScalarLstm};
use rand::Rng;
use rethseg::blocks::{
    convlstm_step, local_convlstm, local_convlstm_traced, rethinker_block, se_gate, BlockParams, BlockVariant,
    ConvLSTMParams, ConvLSTMState, SEParams,
};
use rethseg::metrics::ConfusionMatrix;
use rethseg::patch::{image2patches, patches2image};
use rethseg::tensor::Padding;
use rethseg::{Tape, Tensor, IGNORE_INDEX};

/// Random conv2d (Same or Valid, stride 1-3, dilation 1-2, odd kernel) with
/// every extent at most 8; max deviation from the loop reference.
pub fn conv2d_error(r: &mut impl Rng) -> f64 {
    loop {
        let (h, w, cin, cout) = (r.gen_range(1..=8), r.gen_range(1..=8), r.gen_range(1..=8), r.gen_range(1..=8));
        let (kh, kw) = (2 * r.gen_range(0..4) + 1, 2 * r.gen_range(0..4) + 1);
        let (stride, dilation) = (r.gen_range(1..=3), r.gen_range(1..=2));
        let padding = if r.gen_bool(0.5) { Padding::Same } else { Padding::Valid };
        if padding == Padding::Valid && (h < (kh - 1) * dilation + 1 || w < (kw - 1) * dilation + 1) {
            continue;
        }
        let x = random_tensor(&[h, w, cin], r);
        let k = random_tensor(&[kh, kw, cin, cout], r);
        let mut tape = Tape::new();
        let (xv, kv) = (tape.constant(x.clone()), tape.constant(k.clone()));
        let y = tape.conv2d(xv, kv, stride, padding, dilation).unwrap();
        let want = conv2d_oracle(&x, &k, stride, padding, dilation);
        assert_eq!(tape.shape(y), want.shape());
        return tape.value(y).max_abs_diff(&want);
    }
}

pub fn conv3d_error(r: &mut impl Rng) -> f64 {
    let (t, h, w) = (r.gen_range(1..=8), r.gen_range(1..=8), r.gen_range(1..=8));
    let (cin, cout) = (r.gen_range(1..=8), r.gen_range(1..=8));
    let (kt, kh, kw) = (2 * r.gen_range(0..2) + 1, 2 * r.gen_range(0..3) + 1, 2 * r.gen_range(0..3) + 1);
    let x = random_tensor(&[t, h, w, cin], r);
    let k = random_tensor(&[kt, kh, kw, cin, cout], r);
    let mut tape = Tape::new();
    let (xv, kv) = (tape.constant(x.clone()), tape.constant(k.clone()));
    let y = tape.conv3d(xv, kv).unwrap();
    let want = conv3d_oracle(&x, &k);
    assert_eq!(tape.shape(y), want.shape());
    tape.value(y).max_abs_diff(&want)
}

pub fn fc_error(r: &mut impl Rng) -> f64 {
    let (cin, cout) = (r.gen_range(1..=8), r.gen_range(1..=8));
    let (x, w, b) = (random_tensor(&[cin], r), random_tensor(&[cin, cout], r), random_tensor(&[cout], r));
    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
    let y = tape.fully_connected(xv, wv, bv).unwrap();
    tape.value(y).max_abs_diff(&fc_oracle(&x, &w, &b))
}

pub fn random_lstm(d: usize, ph: usize, pw: usize, r: &mut impl Rng) -> ConvLSTMParams<Tensor<f64>> {
    let mut p = ConvLSTMParams::<Tensor<f64>>::init(d, 3, ph, pw, r);
    for t in [&mut p.w_ci, &mut p.w_cf, &mut p.w_co, &mut p.b_i, &mut p.b_c, &mut p.b_o] {
        *t = random_tensor(t.shape(), r);
    }
    p
}

/// Largest |h| or |c| difference between a 1x1x1 step and the scalar formula.
pub fn single_pixel_step_error(trials: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let w: Vec<f64> = (0..15).map(|_| r.gen_range(-2.0..2.0)).collect();
        let s = ScalarLstm {
            w_vi: w[0],
            w_hi: w[1],
            w_vf: w[2],
            w_hf: w[3],
            w_vc: w[4],
            w_hc: w[5],
            w_vo: w[6],
            w_ho: w[7],
            w_ci: w[8],
            w_cf: w[9],
            w_co: w[10],
            b_i: w[11],
            b_f: w[12],
            b_c: w[13],
            b_o: w[14],
        };
        let (v, h, c) = (r.gen_range(-2.0..2.0), r.gen_range(-1.0..1.0), r.gen_range(-2.0..2.0));
        // 3x3 kernels whose centre tap carries the scalar weight.
        let kernel = |x: f64| Tensor::from_fn([3, 3, 1, 1], |i| if i == 4 { x } else { 0.0 });
        let cell = |x: f64| Tensor::full([1, 1, 1], x);
        let bias = |x: f64| Tensor::full([1], x);
        let p = ConvLSTMParams {
            w_vi: kernel(s.w_vi),
            w_hi: kernel(s.w_hi),
            w_vf: kernel(s.w_vf),
            w_hf: kernel(s.w_hf),
            w_vc: kernel(s.w_vc),
            w_hc: kernel(s.w_hc),
            w_vo: kernel(s.w_vo),
            w_ho: kernel(s.w_ho),
            w_ci: cell(s.w_ci),
            w_cf: cell(s.w_cf),
            w_co: cell(s.w_co),
            b_i: bias(s.b_i),
            b_f: bias(s.b_f),
            b_c: bias(s.b_c),
            b_o: bias(s.b_o),
        };
        let mut tape = Tape::new();
        let pv = p.map(|_, t| tape.constant(t.clone()));
        let (vv, hv, cv) = (tape.constant(cell(v)), tape.constant(cell(h)), tape.constant(cell(c)));
        let out = convlstm_step(&mut tape, vv, ConvLSTMState { h: hv, c: cv }, &pv).unwrap();
        let (h_want, c_want) = s.step(v, h, c);
        worst = worst
            .max((tape.value(out.state.h).item() - h_want).abs())
            .max((tape.value(out.state.c).item() - c_want).abs());
    }
    worst
}

/// Whether `local_convlstm` at n=2 equals hand-sliced patches threaded
/// through `convlstm_step` one at a time, bit for bit.
pub fn threading_matches(seed: u64) -> bool {
    let mut r = rng(seed);
    let (n, ph, pw, d) = (2, 3, 2, 3);
    let u = random_tensor(&[n * ph, n * pw, d], &mut r);
    let p = random_lstm(d, ph, pw, &mut r);

    let mut tape = Tape::new();
    let pv = p.map(|_, t| tape.constant(t.clone()));
    let uv = tape.constant(u.clone());
    let got = local_convlstm(&mut tape, uv, n, &pv).unwrap();
    let got = tape.value(got).clone();

    let mut tape = Tape::new();
    let pv = p.map(|_, t| tape.constant(t.clone()));
    let mut state = ConvLSTMState {
        h: tape.constant(Tensor::zeros([ph, pw, d])),
        c: tape.constant(Tensor::zeros([ph, pw, d])),
    };
    let mut want = Tensor::<f64>::zeros([n * ph, n * pw, d]);
    for bi in 0..n {
        for bj in 0..n {
            let patch = Tensor::from_fn([ph, pw, d], |i| {
                let (y, x, c) = (i / (pw * d), i / d % pw, i % d);
                u.at(&[bi * ph + y, bj * pw + x, c])
            });
            let v = tape.constant(patch);
            state = convlstm_step(&mut tape, v, state, &pv).unwrap().state;
            let h = tape.value(state.h);
            for y in 0..ph {
                for x in 0..pw {
                    for c in 0..d {
                        want.set(&[bi * ph + y, bj * pw + x, c], h.at(&[y, x, c]));
                    }
                }
            }
        }
    }
    got.data().iter().zip(want.data()).all(|(a, b)| a.to_bits() == b.to_bits())
}

/// Random extents and slicing; whether patches2image(image2patches(x)) == x bitwise.
pub fn patch_round_trip_exact(r: &mut impl Rng) -> bool {
    let (n, ph, pw, d) = (r.gen_range(1..=4), r.gen_range(1..=4), r.gen_range(1..=4), r.gen_range(1..=3));
    let x = random_tensor(&[n * ph, n * pw, d], r);
    let p = image2patches(&x, n).unwrap();
    if p.patches().shape() != [n * n, ph, pw, d] {
        return false;
    }
    let back = patches2image(&p).unwrap();
    back.shape() == x.shape() && back.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits())
}

/// Perturbs every patch in turn; true when outputs of earlier patches stay
/// bit-identical and the perturbed patch itself changes.
pub fn causality_holds(seed: u64) -> bool {
    let mut r = rng(seed);
    let (n, ph, pw, d) = (3, 2, 2, 2);
    let u = random_tensor(&[n * ph, n * pw, d], &mut r);
    let p = random_lstm(d, ph, pw, &mut r);
    let run = |u: &Tensor<f64>| {
        let mut tape = Tape::new();
        let pv = p.map(|_, t| tape.constant(t.clone()));
        let uv = tape.constant(u.clone());
        let y = local_convlstm(&mut tape, uv, n, &pv).unwrap();
        image2patches(tape.value(y), n).unwrap().into_patches()
    };
    let base = run(&u);
    let per = ph * pw * d;
    (0..n * n).all(|t| {
        let (bi, bj) = (t / n, t % n);
        let mut perturbed = u.clone();
        for y in 0..ph {
            for x in 0..pw {
                let v = perturbed.at(&[bi * ph + y, bj * pw + x, 0]);
                perturbed.set(&[bi * ph + y, bj * pw + x, 0], v + 1.0);
            }
        }
        let out = run(&perturbed);
        out.data()[..t * per] == base.data()[..t * per]
            && out.data()[t * per..(t + 1) * per] != base.data()[t * per..(t + 1) * per]
    })
}

/// Largest |block(u) - u| over all variants when the core weights are zero.
pub fn zero_core_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for variant in BlockVariant::ALL {
        let se = SEParams::<Tensor<f64>>::init(4, 2, &mut r).unwrap();
        let params = BlockParams::with_zero_core(variant, se, 4, (2, 2));
        let u = random_tensor(&[4, 4, 4], &mut r);
        let mut tape = Tape::new();
        let pv = params.bind(&mut tape);
        let uv = tape.constant(u.clone());
        let y = rethinker_block(&mut tape, uv, 2, &pv).unwrap();
        worst = worst.max(tape.value(y).max_abs_diff(&u));
    }
    worst
}

/// Number of random inputs (scaled up to 20x) for which some gate leaves its
/// range: i, f, o and the SE gate in [0, 1], h in [-1, 1].
pub fn gate_range_violations(trials: usize, seed: u64) -> usize {
    let mut r = rng(seed);
    let (n, ph, pw, d) = (2, 2, 2, 4);
    let in_unit = |t: &Tensor<f64>| t.data().iter().all(|v| (0.0..=1.0).contains(v));
    (0..trials)
        .filter(|_| {
            let scale = r.gen_range(0.1..20.0);
            let u = random_tensor(&[n * ph, n * pw, d], &mut r).map(|v| v * scale);
            let p = random_lstm(d, ph, pw, &mut r);
            let se = SEParams::<Tensor<f64>>::init(d, 2, &mut r).unwrap();
            let mut tape = Tape::new();
            let pv = p.map(|_, t| tape.constant(t.clone()));
            let sv = se.map(|_, t| tape.constant(t.clone()));
            let uv = tape.constant(u);
            let (_, steps) = local_convlstm_traced(&mut tape, uv, n, &pv).unwrap();
            let gate = se_gate(&mut tape, uv, &sv).unwrap();
            let ok = in_unit(tape.value(gate))
                && steps.iter().all(|s| {
                    [s.input_gate, s.forget_gate, s.output_gate]
                        .iter()
                        .all(|&g| in_unit(tape.value(g)))
                        && tape.value(s.state.h).data().iter().all(|v| v.abs() <= 1.0)
                });
            !ok
        })
        .count()
}

/// Per-class IoU, Dice and pixel accuracy by enumerating pixel sets.
pub fn enumerate_metrics(k: usize, pred: &[u8], truth: &[u8]) -> (Vec<Option<f64>>, Vec<Option<f64>>, f64) {
    let scored: Vec<(u8, u8)> = pred
        .iter()
        .zip(truth)
        .filter(|(_, &t)| t != IGNORE_INDEX)
        .map(|(&p, &t)| (p, t))
        .collect();
    let mut iou = Vec::new();
    let mut dice = Vec::new();
    for c in 0..k as u8 {
        let inter = scored.iter().filter(|&&(p, t)| p == c && t == c).count();
        let union = scored.iter().filter(|&&(p, t)| p == c || t == c).count();
        let sizes = scored.iter().filter(|&&(p, _)| p == c).count() + scored.iter().filter(|&&(_, t)| t == c).count();
        iou.push((union > 0).then(|| inter as f64 / union as f64));
        dice.push((sizes > 0).then(|| 2.0 * inter as f64 / sizes as f64));
    }
    let correct = scored.iter().filter(|(p, t)| p == t).count();
    (iou, dice, correct as f64 / scored.len().max(1) as f64)
}

pub fn mean_defined(v: &[Option<f64>]) -> f64 {
    let d: Vec<f64> = v.iter().flatten().copied().collect();
    d.iter().sum::<f64>() / d.len() as f64
}

/// Deviation of the confusion-matrix scores from enumeration, and whether
/// Dice >= IoU held, for one matrix built from `pred`/`truth`. `None` when
/// every truth pixel is ignored.
pub fn metric_deviation(k: usize, pred: &[u8], truth: &[u8]) -> Option<(f64, bool)> {
    let mut cm = ConfusionMatrix::new(k);
    cm.accumulate(pred, truth, IGNORE_INDEX).unwrap();
    if cm.total() == 0 {
        return None;
    }
    let (iou, dice, acc) = enumerate_metrics(k, pred, truth);
    let got_iou = cm.per_class_iou().unwrap();
    let got_dice = cm.per_class_dice().unwrap();
    let mut dev: f64 = 0.0;
    let mut ordered = cm.dice().unwrap() + 1e-15 >= cm.miou().unwrap();
    for c in 0..k {
        for (got, want) in [(got_iou[c], iou[c]), (got_dice[c], dice[c])] {
            dev = match (got, want) {
                (Some(a), Some(b)) => dev.max((a - b).abs()),
                (None, None) => dev,
                _ => f64::INFINITY,
            };
        }
        if let (Some(i), Some(d)) = (got_iou[c], got_dice[c]) {
            ordered &= d + 1e-15 >= i;
        }
    }
    dev = dev
        .max((cm.miou().unwrap() - mean_defined(&iou)).abs())
        .max((cm.pixel_acc().unwrap() - acc).abs());
    Some((dev, ordered))
}

/// A random mask pair: `k` classes, `len` pixels, about 10% ignored truth.
pub fn random_mask_pair(k: usize, len: usize, r: &mut impl Rng) -> (Vec<u8>, Vec<u8>) {
    let pred = (0..len).map(|_| r.gen_range(0..k as u8)).collect();
    let truth = (0..len)
        .map(|_| if r.gen_bool(0.1) { IGNORE_INDEX } else { r.gen_range(0..k as u8) })
        .collect();
    (pred, truth)
}
