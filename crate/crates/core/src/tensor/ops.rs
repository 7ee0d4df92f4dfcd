use super::{expect_rank, Tape, Tensor, TensorError, TensorResult, Var};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Mul,
    Sigmoid,
    Tanh,
    Relu,
}

impl ElementwiseKind {
    pub fn is_binary(self) -> bool {
        matches!(self, ElementwiseKind::Add | ElementwiseKind::Mul)
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn same_shape(op: &'static str, a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> TensorResult<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn last_dim(t: &Tensor<impl Scalar>) -> usize {
    *t.shape().last().unwrap_or(&1)
}

impl<T: Scalar> Tape<T> {
    pub fn elementwise(&mut self, kind: ElementwiseKind, a: Var, b: Option<Var>) -> TensorResult<Var> {
        match (kind.is_binary(), b) {
            (true, Some(b)) => self.binary(kind, a, b),
            (false, None) => Ok(self.unary(kind, a)),
            (true, None) => Err(TensorError::Usage(format!("{kind:?} needs two operands"))),
            (false, Some(_)) => Err(TensorError::Usage(format!("{kind:?} takes one operand"))),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        self.binary(ElementwiseKind::Add, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        self.binary(ElementwiseKind::Mul, a, b)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(ElementwiseKind::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(ElementwiseKind::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(ElementwiseKind::Relu, a)
    }

    fn binary(&mut self, kind: ElementwiseKind, a: Var, b: Var) -> TensorResult<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("elementwise", av, bv)?;
        match kind {
            ElementwiseKind::Add => {
                let out = av.zip_map(bv, |x, y| x + y)?;
                Ok(self.record(
                    "add",
                    &[a, b],
                    out,
                    Box::new(|_inp, _out, g, needs| {
                        vec![needs[0].then(|| g.clone()), needs[1].then(|| g.clone())]
                    }),
                ))
            }
            ElementwiseKind::Mul => {
                let out = av.zip_map(bv, |x, y| x * y)?;
                Ok(self.record(
                    "mul",
                    &[a, b],
                    out,
                    Box::new(|inp, _out, g, needs| {
                        vec![
                            needs[0].then(|| g.zip_map(inp[1], |g, y| g * y).unwrap()),
                            needs[1].then(|| g.zip_map(inp[0], |g, x| g * x).unwrap()),
                        ]
                    }),
                ))
            }
            _ => unreachable!("unary kind routed to binary"),
        }
    }

    fn unary(&mut self, kind: ElementwiseKind, a: Var) -> Var {
        let av = self.value(a);
        match kind {
            ElementwiseKind::Sigmoid => {
                let out = av.map(sigmoid);
                self.record(
                    "sigmoid",
                    &[a],
                    out,
                    Box::new(|_inp, out, g, _| {
                        vec![Some(g.zip_map(out, |g, s| g * s * (T::one() - s)).unwrap())]
                    }),
                )
            }
            ElementwiseKind::Tanh => {
                let out = av.map(|x| x.tanh());
                self.record(
                    "tanh",
                    &[a],
                    out,
                    Box::new(|_inp, out, g, _| {
                        vec![Some(g.zip_map(out, |g, t| g * (T::one() - t * t)).unwrap())]
                    }),
                )
            }
            ElementwiseKind::Relu => {
                let out = av.map(|x| x.max(T::zero()));
                self.record(
                    "relu",
                    &[a],
                    out,
                    Box::new(|inp, _out, g, _| {
                        vec![Some(
                            g.zip_map(inp[0], |g, x| if x > T::zero() { g } else { T::zero() })
                                .unwrap(),
                        )]
                    }),
                )
            }
            _ => unreachable!("binary kind routed to unary"),
        }
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.record(
            "sum",
            &[a],
            out,
            Box::new(|inp, _out, g, _| vec![Some(Tensor::full(inp[0].shape().to_vec(), g.item()))]),
        )
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.record(
            "scale",
            &[a],
            out,
            Box::new(move |_inp, _out, g, _| vec![Some(g.map(|g| g * factor))]),
        )
    }

    /// Adds a per-channel vector `bias (C)` along the last axis of `x (..., C)`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> TensorResult<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let c = last_dim(xv);
        if bv.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: xv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut out = xv.clone();
        for px in out.data_mut().chunks_exact_mut(c) {
            for (o, &b) in px.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        Ok(self.record(
            "add_bias",
            &[x, bias],
            out,
            Box::new(move |_inp, _out, g, needs| {
                let gb = needs[1].then(|| {
                    let mut acc = vec![T::zero(); c];
                    for px in g.data().chunks_exact(c) {
                        for (a, &v) in acc.iter_mut().zip(px) {
                            *a += v;
                        }
                    }
                    Tensor::new([c], acc).unwrap()
                });
                vec![needs[0].then(|| g.clone()), gb]
            }),
        ))
    }

    /// Scales each channel of `x (..., C)` by `gate (C)`.
    pub fn mul_channels(&mut self, x: Var, gate: Var) -> TensorResult<Var> {
        let (xv, gv) = (self.value(x), self.value(gate));
        let c = last_dim(xv);
        if gv.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "mul_channels",
                lhs: xv.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        let mut out = xv.clone();
        for px in out.data_mut().chunks_exact_mut(c) {
            for (o, &s) in px.iter_mut().zip(gv.data()) {
                *o *= s;
            }
        }
        Ok(self.record(
            "mul_channels",
            &[x, gate],
            out,
            Box::new(move |inp, _out, g, needs| {
                let gx = needs[0].then(|| {
                    let mut gx = g.clone();
                    for px in gx.data_mut().chunks_exact_mut(c) {
                        for (o, &s) in px.iter_mut().zip(inp[1].data()) {
                            *o *= s;
                        }
                    }
                    gx
                });
                let gg = needs[1].then(|| {
                    let mut acc = vec![T::zero(); c];
                    for (gp, xp) in g.data().chunks_exact(c).zip(inp[0].data().chunks_exact(c)) {
                        for ((a, &gv), &xv) in acc.iter_mut().zip(gp).zip(xp) {
                            *a += gv * xv;
                        }
                    }
                    Tensor::new([c], acc).unwrap()
                });
                vec![gx, gg]
            }),
        ))
    }

    /// Concatenates two `(H,W,·)` maps along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        expect_rank("concat_channels", av, 3)?;
        expect_rank("concat_channels", bv, 3)?;
        if av.shape()[..2] != bv.shape()[..2] {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (h, w, ca, cb) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[2]);
        let mut data = Vec::with_capacity(h * w * (ca + cb));
        for (pa, pb) in av.data().chunks_exact(ca).zip(bv.data().chunks_exact(cb)) {
            data.extend_from_slice(pa);
            data.extend_from_slice(pb);
        }
        let out = Tensor::new([h, w, ca + cb], data)?;
        Ok(self.record(
            "concat_channels",
            &[a, b],
            out,
            Box::new(move |_inp, _out, g, needs| {
                let mut ga = Vec::with_capacity(h * w * ca);
                let mut gb = Vec::with_capacity(h * w * cb);
                for px in g.data().chunks_exact(ca + cb) {
                    ga.extend_from_slice(&px[..ca]);
                    gb.extend_from_slice(&px[ca..]);
                }
                vec![
                    needs[0].then(|| Tensor::new([h, w, ca], ga).unwrap()),
                    needs[1].then(|| Tensor::new([h, w, cb], gb).unwrap()),
                ]
            }),
        ))
    }

    /// Slice `index` of the leading axis.
    pub fn select(&mut self, x: Var, index: usize) -> TensorResult<Var> {
        let xv = self.value(x);
        if xv.rank() < 2 || index >= xv.shape()[0] {
            return Err(TensorError::invalid(
                "select",
                format!("index {index} invalid for shape {:?}", xv.shape()),
            ));
        }
        let inner: Vec<usize> = xv.shape()[1..].to_vec();
        let n: usize = inner.iter().product();
        let out = Tensor::new(inner, xv.data()[index * n..(index + 1) * n].to_vec())?;
        Ok(self.record(
            "select",
            &[x],
            out,
            Box::new(move |inp, _out, g, _| {
                let mut gx = Tensor::zeros(inp[0].shape().to_vec());
                gx.data_mut()[index * n..(index + 1) * n].copy_from_slice(g.data());
                vec![Some(gx)]
            }),
        ))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, xs: &[Var]) -> TensorResult<Var> {
        let first = xs
            .first()
            .ok_or_else(|| TensorError::invalid("stack", "no inputs"))?;
        let inner = self.value(*first).shape().to_vec();
        let n: usize = inner.iter().product();
        let mut data = Vec::with_capacity(n * xs.len());
        for &v in xs {
            let t = self.value(v);
            if t.shape() != inner.as_slice() {
                return Err(TensorError::ShapeMismatch {
                    op: "stack",
                    lhs: inner,
                    rhs: t.shape().to_vec(),
                });
            }
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![xs.len()];
        shape.extend_from_slice(&inner);
        let out = Tensor::new(shape, data)?;
        Ok(self.record(
            "stack",
            xs,
            out,
            Box::new(move |inp, _out, g, needs| {
                (0..inp.len())
                    .map(|i| {
                        needs[i].then(|| {
                            Tensor::new(inner.clone(), g.data()[i * n..(i + 1) * n].to_vec()).unwrap()
                        })
                    })
                    .collect()
            }),
        ))
    }

    /// Mean over the spatial axes: `(H,W,C) -> (C)`.
    pub fn global_avg_pool(&mut self, x: Var) -> TensorResult<Var> {
        let xv = self.value(x);
        expect_rank("global_avg_pool", xv, 3)?;
        let (h, w, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let inv = T::one() / T::from_usize_lossy(h * w);
        let mut acc = vec![T::zero(); c];
        for px in xv.data().chunks_exact(c) {
            for (a, &v) in acc.iter_mut().zip(px) {
                *a += v;
            }
        }
        for a in &mut acc {
            *a *= inv;
        }
        let out = Tensor::new([c], acc)?;
        Ok(self.record(
            "global_avg_pool",
            &[x],
            out,
            Box::new(move |inp, _out, g, _| {
                let mut gx = Tensor::zeros(inp[0].shape().to_vec());
                for px in gx.data_mut().chunks_exact_mut(c) {
                    for (o, &gv) in px.iter_mut().zip(g.data()) {
                        *o = gv * inv;
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// `out = input · weight + bias` with `input (Cin)`, `weight (Cin,Cout)`, `bias (Cout)`.
    pub fn fully_connected(&mut self, input: Var, weight: Var, bias: Var) -> TensorResult<Var> {
        const OP: &str = "fully_connected";
        let (xv, wv, bv) = (self.value(input), self.value(weight), self.value(bias));
        expect_rank(OP, xv, 1)?;
        expect_rank(OP, wv, 2)?;
        expect_rank(OP, bv, 1)?;
        let (cin, cout) = (wv.shape()[0], wv.shape()[1]);
        if xv.shape()[0] != cin || bv.shape()[0] != cout {
            return Err(TensorError::invalid(
                OP,
                format!(
                    "input {:?}, weight {:?}, bias {:?} do not agree",
                    xv.shape(),
                    wv.shape(),
                    bv.shape()
                ),
            ));
        }
        let mut out = bv.data().to_vec();
        for (i, &x) in xv.data().iter().enumerate() {
            for (o, &w) in out.iter_mut().zip(&wv.data()[i * cout..(i + 1) * cout]) {
                *o += x * w;
            }
        }
        let out = Tensor::new([cout], out)?;
        Ok(self.record(
            OP,
            &[input, weight, bias],
            out,
            Box::new(move |inp, _out, g, needs| {
                let (x, w) = (inp[0].data(), inp[1].data());
                let gx = needs[0].then(|| {
                    Tensor::from_fn([cin], |i| {
                        w[i * cout..(i + 1) * cout]
                            .iter()
                            .zip(g.data())
                            .map(|(&w, &g)| w * g)
                            .sum()
                    })
                });
                let gw = needs[1].then(|| Tensor::from_fn([cin, cout], |k| x[k / cout] * g.data()[k % cout]));
                vec![gx, gw, needs[2].then(|| g.clone())]
            }),
        ))
    }

    /// Bilinear interpolation of `(H,W,C)` to `(out_h,out_w,C)`, half-pixel
    /// centres (align-corners off), edge-clamped.
    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> TensorResult<Var> {
        const OP: &str = "bilinear_resize";
        let xv = self.value(x);
        expect_rank(OP, xv, 3)?;
        if out_h == 0 || out_w == 0 {
            return Err(TensorError::invalid(OP, "output extent must be positive"));
        }
        let (h, w, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let rows = interp_table::<T>(h, out_h);
        let cols = interp_table::<T>(w, out_w);
        let mut out = vec![T::zero(); out_h * out_w * c];
        let src = xv.data();
        for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                let o = &mut out[(oy * out_w + ox) * c..][..c];
                for (iy, wy) in [(y0, T::one() - fy), (y1, fy)] {
                    for (ix, wx) in [(x0, T::one() - fx), (x1, fx)] {
                        let wgt = wy * wx;
                        if wgt == T::zero() {
                            continue;
                        }
                        for (ov, &sv) in o.iter_mut().zip(&src[(iy * w + ix) * c..][..c]) {
                            *ov += wgt * sv;
                        }
                    }
                }
            }
        }
        let out = Tensor::new([out_h, out_w, c], out)?;
        Ok(self.record(
            OP,
            &[x],
            out,
            Box::new(move |_inp, _out, g, _| {
                let mut gx = vec![T::zero(); h * w * c];
                for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                        let go = &g.data()[(oy * out_w + ox) * c..][..c];
                        for (iy, wy) in [(y0, T::one() - fy), (y1, fy)] {
                            for (ix, wx) in [(x0, T::one() - fx), (x1, fx)] {
                                let wgt = wy * wx;
                                if wgt == T::zero() {
                                    continue;
                                }
                                for (gv, &o) in gx[(iy * w + ix) * c..][..c].iter_mut().zip(go) {
                                    *gv += wgt * o;
                                }
                            }
                        }
                    }
                }
                vec![Some(Tensor::new([h, w, c], gx).unwrap())]
            }),
        ))
    }

    /// Mean softmax cross-entropy over pixels whose label is not `ignore_index`.
    ///
    /// Returns zero (with zero gradient) when every pixel is ignored.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[u8], ignore_index: u8) -> TensorResult<Var> {
        const OP: &str = "softmax_cross_entropy";
        let lv = self.value(logits);
        expect_rank(OP, lv, 3)?;
        let k = lv.shape()[2];
        let pixels = lv.shape()[0] * lv.shape()[1];
        if labels.len() != pixels {
            return Err(TensorError::invalid(
                OP,
                format!("{} labels for {pixels} pixels", labels.len()),
            ));
        }
        if let Some((i, &l)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l != ignore_index && (l as usize) >= k)
        {
            return Err(TensorError::invalid(
                OP,
                format!("label {l} at pixel {i} out of range for {k} classes"),
            ));
        }
        let count = labels.iter().filter(|&&l| l != ignore_index).count();
        let mut probs = vec![T::zero(); lv.len()];
        let mut total = T::zero();
        for ((px, p), &l) in lv.data().chunks_exact(k).zip(probs.chunks_exact_mut(k)).zip(labels) {
            if l == ignore_index {
                continue;
            }
            let m = px.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut z = T::zero();
            for (pv, &v) in p.iter_mut().zip(px) {
                *pv = (v - m).exp();
                z += *pv;
            }
            for pv in p.iter_mut() {
                *pv /= z;
            }
            total += z.ln() + m - px[l as usize];
        }
        let inv = if count > 0 {
            T::one() / T::from_usize_lossy(count)
        } else {
            T::zero()
        };
        let out = Tensor::scalar(total * inv);
        let labels = labels.to_vec();
        let shape = lv.shape().to_vec();
        Ok(self.record(
            OP,
            &[logits],
            out,
            Box::new(move |_inp, _out, g, _| {
                let scale = g.item() * inv;
                let mut gx = probs.clone();
                for (px, &l) in gx.chunks_exact_mut(k).zip(&labels) {
                    if l == ignore_index {
                        continue;
                    }
                    px[l as usize] -= T::one();
                    for v in px.iter_mut() {
                        *v *= scale;
                    }
                }
                vec![Some(Tensor::new(shape.clone(), gx).unwrap())]
            }),
        ))
    }

    /// Per-channel standardisation over the spatial positions of `(H,W,C)`.
    ///
    /// Also returns the per-channel mean and biased variance that were used.
    pub fn channel_normalize(&mut self, x: Var, eps: T) -> TensorResult<(Var, Tensor<T>, Tensor<T>)> {
        const OP: &str = "channel_normalize";
        let xv = self.value(x);
        expect_rank(OP, xv, 3)?;
        let c = xv.shape()[2];
        let n = xv.shape()[0] * xv.shape()[1];
        let nf = T::from_usize_lossy(n);
        let mut mean = vec![T::zero(); c];
        for px in xv.data().chunks_exact(c) {
            for (m, &v) in mean.iter_mut().zip(px) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= nf;
        }
        let mut var = vec![T::zero(); c];
        for px in xv.data().chunks_exact(c) {
            for ((s, &v), &m) in var.iter_mut().zip(px).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut var {
            *s /= nf;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut out = xv.clone();
        for px in out.data_mut().chunks_exact_mut(c) {
            for ((o, &m), &is) in px.iter_mut().zip(&mean).zip(&inv_std) {
                *o = (*o - m) * is;
            }
        }
        let mean_t = Tensor::new([c], mean)?;
        let var_t = Tensor::new([c], var)?;
        let v = self.record(
            OP,
            &[x],
            out,
            Box::new(move |_inp, out, g, _| {
                // dx = inv_std/N * (N*dy - sum(dy) - y*sum(dy*y))
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gy = vec![T::zero(); c];
                for (gp, yp) in g.data().chunks_exact(c).zip(out.data().chunks_exact(c)) {
                    for ch in 0..c {
                        sum_g[ch] += gp[ch];
                        sum_gy[ch] += gp[ch] * yp[ch];
                    }
                }
                let mut gx = g.clone();
                for (gp, yp) in gx.data_mut().chunks_exact_mut(c).zip(out.data().chunks_exact(c)) {
                    for ch in 0..c {
                        gp[ch] = inv_std[ch] / nf * (nf * gp[ch] - sum_g[ch] - yp[ch] * sum_gy[ch]);
                    }
                }
                vec![Some(gx)]
            }),
        );
        Ok((v, mean_t, var_t))
    }
}

/// Per output index: (lower source index, upper source index, upper weight).
fn interp_table<T: Scalar>(in_len: usize, out_len: usize) -> Vec<(usize, usize, T)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, T::from_f64_lossy(src - i0 as f64))
        })
        .collect()
}
