//! Direct (loop) convolutions in channels-last layout, cross-correlation convention.

use super::{expect_rank, Tape, Tensor, TensorError, TensorResult, Var};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output extent `ceil(len / stride)`; zero padding split evenly, extra on the bottom/right.
    Same,
    /// No padding.
    Valid,
}

/// Output length and leading padding along one axis, or `None` when the
/// kernel does not fit a valid convolution.
fn axis_geometry(
    len: usize,
    k: usize,
    stride: usize,
    dilation: usize,
    padding: Padding,
) -> Option<(usize, usize)> {
    let span = (k - 1) * dilation + 1;
    match padding {
        Padding::Same => {
            let out = len.div_ceil(stride);
            let total = ((out - 1) * stride + span).saturating_sub(len);
            Some((out, total / 2))
        }
        Padding::Valid => (len >= span).then(|| ((len - span) / stride + 1, 0)),
    }
}

pub fn conv_output_len(
    len: usize,
    k: usize,
    stride: usize,
    dilation: usize,
    padding: Padding,
) -> Option<usize> {
    if k == 0 || stride == 0 || dilation == 0 {
        return None;
    }
    axis_geometry(len, k, stride, dilation, padding).map(|(o, _)| o)
}

#[derive(Clone, Copy, Debug)]
struct Geom2d {
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    stride: usize,
    dil: usize,
    oh: usize,
    ow: usize,
    pad_t: usize,
    pad_l: usize,
}

impl Geom2d {
    /// Input row/column for output position `o` and kernel tap `k`.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, dil: usize, pad: usize, len: usize) -> Option<usize> {
        let p = (o * stride + k * dil) as isize - pad as isize;
        (p >= 0 && (p as usize) < len).then_some(p as usize)
    }
}

fn validate_common(
    op: &'static str,
    kh: usize,
    kw: usize,
    stride: usize,
    dilation: usize,
) -> TensorResult<()> {
    if stride == 0 {
        return Err(TensorError::invalid(op, "stride must be positive"));
    }
    if dilation == 0 {
        return Err(TensorError::invalid(op, "dilation must be positive"));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(TensorError::invalid(
            op,
            format!("kernel extents must be odd, got {kh}x{kw}"),
        ));
    }
    Ok(())
}

fn geom2d(
    op: &'static str,
    x: &[usize],
    kh: usize,
    kw: usize,
    cout: usize,
    stride: usize,
    dil: usize,
    padding: Padding,
) -> TensorResult<Geom2d> {
    validate_common(op, kh, kw, stride, dil)?;
    let (h, w, cin) = (x[0], x[1], x[2]);
    let (oh, pad_t) = axis_geometry(h, kh, stride, dil, padding)
        .ok_or_else(|| TensorError::invalid(op, format!("kernel height {kh} exceeds input {h}")))?;
    let (ow, pad_l) = axis_geometry(w, kw, stride, dil, padding)
        .ok_or_else(|| TensorError::invalid(op, format!("kernel width {kw} exceeds input {w}")))?;
    Ok(Geom2d {
        h,
        w,
        cin,
        kh,
        kw,
        cout,
        stride,
        dil,
        oh,
        ow,
        pad_t,
        pad_l,
    })
}

fn conv2d_forward<T: Scalar>(g: &Geom2d, x: &[T], k: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); g.oh * g.ow * g.cout];
    for oy in 0..g.oh {
        for ky in 0..g.kh {
            let Some(iy) = Geom2d::src(oy, ky, g.stride, g.dil, g.pad_t, g.h) else {
                continue;
            };
            for ox in 0..g.ow {
                let out_px = &mut out[(oy * g.ow + ox) * g.cout..][..g.cout];
                for kx in 0..g.kw {
                    let Some(ix) = Geom2d::src(ox, kx, g.stride, g.dil, g.pad_l, g.w) else {
                        continue;
                    };
                    let in_px = &x[(iy * g.w + ix) * g.cin..][..g.cin];
                    let kbase = (ky * g.kw + kx) * g.cin * g.cout;
                    for (ci, &xv) in in_px.iter().enumerate() {
                        let krow = &k[kbase + ci * g.cout..][..g.cout];
                        for (o, &kv) in out_px.iter_mut().zip(krow) {
                            *o += xv * kv;
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv2d_backward<T: Scalar>(
    g: &Geom2d,
    x: &[T],
    k: &[T],
    gout: &[T],
    need_x: bool,
    need_k: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let mut gx = need_x.then(|| vec![T::zero(); x.len()]);
    let mut gk = need_k.then(|| vec![T::zero(); k.len()]);
    for oy in 0..g.oh {
        for ky in 0..g.kh {
            let Some(iy) = Geom2d::src(oy, ky, g.stride, g.dil, g.pad_t, g.h) else {
                continue;
            };
            for ox in 0..g.ow {
                let go = &gout[(oy * g.ow + ox) * g.cout..][..g.cout];
                for kx in 0..g.kw {
                    let Some(ix) = Geom2d::src(ox, kx, g.stride, g.dil, g.pad_l, g.w) else {
                        continue;
                    };
                    let in_off = (iy * g.w + ix) * g.cin;
                    let kbase = (ky * g.kw + kx) * g.cin * g.cout;
                    if let Some(gx) = gx.as_mut() {
                        let gx_px = &mut gx[in_off..][..g.cin];
                        for (ci, gxv) in gx_px.iter_mut().enumerate() {
                            let krow = &k[kbase + ci * g.cout..][..g.cout];
                            let mut acc = T::zero();
                            for (&gv, &kv) in go.iter().zip(krow) {
                                acc += gv * kv;
                            }
                            *gxv += acc;
                        }
                    }
                    if let Some(gk) = gk.as_mut() {
                        let in_px = &x[in_off..][..g.cin];
                        for (ci, &xv) in in_px.iter().enumerate() {
                            let gkrow = &mut gk[kbase + ci * g.cout..][..g.cout];
                            for (gkv, &gv) in gkrow.iter_mut().zip(go) {
                                *gkv += xv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gk)
}

fn depthwise_forward<T: Scalar>(g: &Geom2d, x: &[T], k: &[T]) -> Vec<T> {
    let c = g.cin;
    let mut out = vec![T::zero(); g.oh * g.ow * c];
    for oy in 0..g.oh {
        for ky in 0..g.kh {
            let Some(iy) = Geom2d::src(oy, ky, g.stride, g.dil, g.pad_t, g.h) else {
                continue;
            };
            for ox in 0..g.ow {
                let out_px = &mut out[(oy * g.ow + ox) * c..][..c];
                for kx in 0..g.kw {
                    let Some(ix) = Geom2d::src(ox, kx, g.stride, g.dil, g.pad_l, g.w) else {
                        continue;
                    };
                    let in_px = &x[(iy * g.w + ix) * c..][..c];
                    let kpx = &k[(ky * g.kw + kx) * c..][..c];
                    for ((o, &xv), &kv) in out_px.iter_mut().zip(in_px).zip(kpx) {
                        *o += xv * kv;
                    }
                }
            }
        }
    }
    out
}

fn depthwise_backward<T: Scalar>(
    g: &Geom2d,
    x: &[T],
    k: &[T],
    gout: &[T],
    need_x: bool,
    need_k: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let c = g.cin;
    let mut gx = need_x.then(|| vec![T::zero(); x.len()]);
    let mut gk = need_k.then(|| vec![T::zero(); k.len()]);
    for oy in 0..g.oh {
        for ky in 0..g.kh {
            let Some(iy) = Geom2d::src(oy, ky, g.stride, g.dil, g.pad_t, g.h) else {
                continue;
            };
            for ox in 0..g.ow {
                let go = &gout[(oy * g.ow + ox) * c..][..c];
                for kx in 0..g.kw {
                    let Some(ix) = Geom2d::src(ox, kx, g.stride, g.dil, g.pad_l, g.w) else {
                        continue;
                    };
                    let in_off = (iy * g.w + ix) * c;
                    let k_off = (ky * g.kw + kx) * c;
                    if let Some(gx) = gx.as_mut() {
                        for ((gxv, &gv), &kv) in gx[in_off..][..c].iter_mut().zip(go).zip(&k[k_off..][..c]) {
                            *gxv += gv * kv;
                        }
                    }
                    if let Some(gk) = gk.as_mut() {
                        for ((gkv, &gv), &xv) in gk[k_off..][..c].iter_mut().zip(go).zip(&x[in_off..][..c]) {
                            *gkv += gv * xv;
                        }
                    }
                }
            }
        }
    }
    (gx, gk)
}

#[derive(Clone, Copy, Debug)]
struct Geom3d {
    t: usize,
    h: usize,
    w: usize,
    cin: usize,
    kt: usize,
    kh: usize,
    kw: usize,
    cout: usize,
}

impl Geom3d {
    #[inline]
    fn src(o: usize, k: usize, klen: usize, len: usize) -> Option<usize> {
        let p = (o + k) as isize - (klen / 2) as isize;
        (p >= 0 && (p as usize) < len).then_some(p as usize)
    }

    /// Iterates every (output offset, input offset, kernel offset) triple of
    /// pixel rows that overlap, leaving the channel contraction to `f`.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for ot in 0..self.t {
            for kt in 0..self.kt {
                let Some(it) = Self::src(ot, kt, self.kt, self.t) else { continue };
                for oy in 0..self.h {
                    for ky in 0..self.kh {
                        let Some(iy) = Self::src(oy, ky, self.kh, self.h) else { continue };
                        for ox in 0..self.w {
                            let out_off = ((ot * self.h + oy) * self.w + ox) * self.cout;
                            for kx in 0..self.kw {
                                let Some(ix) = Self::src(ox, kx, self.kw, self.w) else { continue };
                                let in_off = ((it * self.h + iy) * self.w + ix) * self.cin;
                                let k_off = ((kt * self.kh + ky) * self.kw + kx) * self.cin * self.cout;
                                f(out_off, in_off, k_off);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv3d_forward<T: Scalar>(g: &Geom3d, x: &[T], k: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); g.t * g.h * g.w * g.cout];
    let (cin, cout) = (g.cin, g.cout);
    g.for_each_tap(|out_off, in_off, k_off| {
        let out_px = &mut out[out_off..][..cout];
        for (ci, &xv) in x[in_off..][..cin].iter().enumerate() {
            let krow = &k[k_off + ci * cout..][..cout];
            for (o, &kv) in out_px.iter_mut().zip(krow) {
                *o += xv * kv;
            }
        }
    });
    out
}

fn conv3d_backward<T: Scalar>(
    g: &Geom3d,
    x: &[T],
    k: &[T],
    gout: &[T],
    need_x: bool,
    need_k: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let mut gx = need_x.then(|| vec![T::zero(); x.len()]);
    let mut gk = need_k.then(|| vec![T::zero(); k.len()]);
    let (cin, cout) = (g.cin, g.cout);
    g.for_each_tap(|out_off, in_off, k_off| {
        let go = &gout[out_off..][..cout];
        if let Some(gx) = gx.as_mut() {
            for (ci, gxv) in gx[in_off..][..cin].iter_mut().enumerate() {
                let krow = &k[k_off + ci * cout..][..cout];
                let mut acc = T::zero();
                for (&gv, &kv) in go.iter().zip(krow) {
                    acc += gv * kv;
                }
                *gxv += acc;
            }
        }
        if let Some(gk) = gk.as_mut() {
            for (ci, &xv) in x[in_off..][..cin].iter().enumerate() {
                for (gkv, &gv) in gk[k_off + ci * cout..][..cout].iter_mut().zip(go) {
                    *gkv += xv * gv;
                }
            }
        }
    });
    (gx, gk)
}

fn tensor_from<T: Scalar>(shape: Vec<usize>, data: Vec<T>) -> Tensor<T> {
    Tensor::new(shape, data).expect("conv kernels produce consistent shapes")
}

impl<T: Scalar> Tape<T> {
    /// 2-D convolution of `input (H,W,Cin)` with `kernel (kh,kw,Cin,Cout)`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        stride: usize,
        padding: Padding,
        dilation: usize,
    ) -> TensorResult<Var> {
        const OP: &str = "conv2d";
        let (x, k) = (self.value(input), self.value(kernel));
        expect_rank(OP, x, 3)?;
        expect_rank(OP, k, 4)?;
        let ks = k.shape();
        if ks[2] != x.shape()[2] {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                lhs: x.shape().to_vec(),
                rhs: ks.to_vec(),
            });
        }
        let g = geom2d(OP, x.shape(), ks[0], ks[1], ks[3], stride, dilation, padding)?;
        let out = tensor_from(vec![g.oh, g.ow, g.cout], conv2d_forward(&g, x.data(), k.data()));
        Ok(self.record(
            OP,
            &[input, kernel],
            out,
            Box::new(move |inp, _out, grad, needs| {
                let (gx, gk) =
                    conv2d_backward(&g, inp[0].data(), inp[1].data(), grad.data(), needs[0], needs[1]);
                vec![
                    gx.map(|d| tensor_from(inp[0].shape().to_vec(), d)),
                    gk.map(|d| tensor_from(inp[1].shape().to_vec(), d)),
                ]
            }),
        ))
    }

    /// Per-channel spatial convolution with `kernel (kh,kw,C)`.
    pub fn depthwise_conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        stride: usize,
        padding: Padding,
        dilation: usize,
    ) -> TensorResult<Var> {
        const OP: &str = "depthwise_conv2d";
        let (x, k) = (self.value(input), self.value(kernel));
        expect_rank(OP, x, 3)?;
        expect_rank(OP, k, 3)?;
        let ks = k.shape();
        if ks[2] != x.shape()[2] {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                lhs: x.shape().to_vec(),
                rhs: ks.to_vec(),
            });
        }
        let g = geom2d(OP, x.shape(), ks[0], ks[1], ks[2], stride, dilation, padding)?;
        let out = tensor_from(vec![g.oh, g.ow, g.cin], depthwise_forward(&g, x.data(), k.data()));
        Ok(self.record(
            OP,
            &[input, kernel],
            out,
            Box::new(move |inp, _out, grad, needs| {
                let (gx, gk) =
                    depthwise_backward(&g, inp[0].data(), inp[1].data(), grad.data(), needs[0], needs[1]);
                vec![
                    gx.map(|d| tensor_from(inp[0].shape().to_vec(), d)),
                    gk.map(|d| tensor_from(inp[1].shape().to_vec(), d)),
                ]
            }),
        ))
    }

    /// Depthwise `(kh,kw,Cin)` convolution (same padding, strided) followed by
    /// a pointwise `(1,1,Cin,Cout)` convolution.
    pub fn depthwise_separable_conv(
        &mut self,
        input: Var,
        dw_kernel: Var,
        pw_kernel: Var,
        stride: usize,
    ) -> TensorResult<Var> {
        let pw = self.value(pw_kernel).shape();
        if pw.len() != 4 || pw[0] != 1 || pw[1] != 1 {
            return Err(TensorError::invalid(
                "depthwise_separable_conv",
                format!("pointwise kernel must be (1,1,Cin,Cout), got {pw:?}"),
            ));
        }
        let dw = self.depthwise_conv2d(input, dw_kernel, stride, Padding::Same, 1)?;
        self.conv2d(dw, pw_kernel, 1, Padding::Same, 1)
    }

    /// Same-padded, unit-stride 3-D convolution of `input (T,H,W,Cin)` with
    /// `kernel (kt,kh,kw,Cin,Cout)`.
    pub fn conv3d(&mut self, input: Var, kernel: Var) -> TensorResult<Var> {
        const OP: &str = "conv3d";
        let (x, k) = (self.value(input), self.value(kernel));
        expect_rank(OP, x, 4)?;
        expect_rank(OP, k, 5)?;
        let (xs, ks) = (x.shape(), k.shape());
        if ks[3] != xs[3] {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                lhs: xs.to_vec(),
                rhs: ks.to_vec(),
            });
        }
        if ks[..3].iter().any(|&e| e % 2 == 0) {
            return Err(TensorError::invalid(
                OP,
                format!("kernel extents must be odd, got {:?}", &ks[..3]),
            ));
        }
        let g = Geom3d {
            t: xs[0],
            h: xs[1],
            w: xs[2],
            cin: xs[3],
            kt: ks[0],
            kh: ks[1],
            kw: ks[2],
            cout: ks[4],
        };
        let out = tensor_from(vec![g.t, g.h, g.w, g.cout], conv3d_forward(&g, x.data(), k.data()));
        Ok(self.record(
            OP,
            &[input, kernel],
            out,
            Box::new(move |inp, _out, grad, needs| {
                let (gx, gk) =
                    conv3d_backward(&g, inp[0].data(), inp[1].data(), grad.data(), needs[0], needs[1]);
                vec![
                    gx.map(|d| tensor_from(inp[0].shape().to_vec(), d)),
                    gk.map(|d| tensor_from(inp[1].shape().to_vec(), d)),
                ]
            }),
        ))
    }
}
