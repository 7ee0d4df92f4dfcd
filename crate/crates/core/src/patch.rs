//! Conversion between a feature map `(H,W,D)` and its raster-ordered sequence
//! of `N²` non-overlapping patches `(N², H/N, W/N, D)`.
//!
//! Patch `t` is grid cell `(t / N, t % N)`. Both directions are pure index
//! permutations, so the round trip is bit-exact and the gradient of each
//! direction is the other direction.

use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, TensorError, TensorResult, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct PatchSequence<T> {
    patches: Tensor<T>,
    n: usize,
    original_h: usize,
    original_w: usize,
}

impl<T: Scalar> PatchSequence<T> {
    /// Wraps an existing `(N², H/N, W/N, D)` tensor, checking it is consistent
    /// with the recorded source extents.
    pub fn from_parts(patches: Tensor<T>, n: usize, original_h: usize, original_w: usize) -> TensorResult<Self> {
        check_divisible(original_h, original_w, n)?;
        let s = patches.shape();
        if s.len() != 4 || s[0] != n * n || s[1] != original_h / n || s[2] != original_w / n {
            return Err(TensorError::invalid(
                "patches2image",
                format!("patch tensor {s:?} inconsistent with {original_h}x{original_w} and n={n}"),
            ));
        }
        Ok(PatchSequence {
            patches,
            n,
            original_h,
            original_w,
        })
    }

    pub fn patches(&self) -> &Tensor<T> {
        &self.patches
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn original_h(&self) -> usize {
        self.original_h
    }

    pub fn original_w(&self) -> usize {
        self.original_w
    }

    pub fn patch_h(&self) -> usize {
        self.original_h / self.n
    }

    pub fn patch_w(&self) -> usize {
        self.original_w / self.n
    }

    pub fn into_patches(self) -> Tensor<T> {
        self.patches
    }
}

pub fn check_divisible(h: usize, w: usize, n: usize) -> TensorResult<()> {
    if n == 0 || h % n != 0 || w % n != 0 {
        return Err(TensorError::invalid(
            "image2patches",
            format!("slicing coefficient n={n} must divide H={h} and W={w}"),
        ));
    }
    Ok(())
}

/// Copies between image and patch layouts. `to_patches` selects direction.
fn permute<T: Scalar>(src: &[T], h: usize, w: usize, d: usize, n: usize, to_patches: bool) -> Vec<T> {
    let (ph, pw) = (h / n, w / n);
    let mut dst = vec![T::zero(); src.len()];
    let row = pw * d;
    for t in 0..n * n {
        let (gr, gc) = (t / n, t % n);
        for i in 0..ph {
            let img_off = ((gr * ph + i) * w + gc * pw) * d;
            let patch_off = (t * ph + i) * pw * d;
            let (from, to) = if to_patches {
                (img_off, patch_off)
            } else {
                (patch_off, img_off)
            };
            dst[to..to + row].copy_from_slice(&src[from..from + row]);
        }
    }
    dst
}

fn dims3(op: &'static str, u: &Tensor<impl Scalar>) -> TensorResult<(usize, usize, usize)> {
    match *u.shape() {
        [h, w, d] => Ok((h, w, d)),
        _ => Err(TensorError::Rank {
            op,
            expected: 3,
            got: u.shape().to_vec(),
        }),
    }
}

pub fn image2patches<T: Scalar>(u: &Tensor<T>, n: usize) -> TensorResult<PatchSequence<T>> {
    let (h, w, d) = dims3("image2patches", u)?;
    check_divisible(h, w, n)?;
    let patches = Tensor::new([n * n, h / n, w / n, d], permute(u.data(), h, w, d, n, true))?;
    Ok(PatchSequence {
        patches,
        n,
        original_h: h,
        original_w: w,
    })
}

pub fn patches2image<T: Scalar>(p: &PatchSequence<T>) -> TensorResult<Tensor<T>> {
    let (h, w, n) = (p.original_h, p.original_w, p.n);
    let d = p.patches.shape()[3];
    Tensor::new([h, w, d], permute(p.patches.data(), h, w, d, n, false))
}

impl<T: Scalar> Tape<T> {
    /// Differentiable [`image2patches`]; yields the `(N², H/N, W/N, D)` tensor.
    pub fn image2patches(&mut self, u: Var, n: usize) -> TensorResult<Var> {
        let seq = image2patches(self.value(u), n)?;
        let (h, w, d) = (seq.original_h, seq.original_w, seq.patches.shape()[3]);
        Ok(self.record(
            "image2patches",
            &[u],
            seq.into_patches(),
            Box::new(move |_inp, _out, g, _| {
                vec![Some(Tensor::new([h, w, d], permute(g.data(), h, w, d, n, false)).unwrap())]
            }),
        ))
    }

    /// Differentiable [`patches2image`] for a `(N², H/N, W/N, D)` tensor.
    pub fn patches2image(&mut self, p: Var, n: usize) -> TensorResult<Var> {
        let pv = self.value(p);
        let s = pv.shape();
        if s.len() != 4 {
            return Err(TensorError::Rank {
                op: "patches2image",
                expected: 4,
                got: s.to_vec(),
            });
        }
        let (h, w, d) = (s[1] * n, s[2] * n, s[3]);
        let seq = PatchSequence::from_parts(pv.clone(), n, h, w)?;
        let out = patches2image(&seq)?;
        let shape = s.to_vec();
        Ok(self.record(
            "patches2image",
            &[p],
            out,
            Box::new(move |_inp, _out, g, _| {
                vec![Some(Tensor::new(shape.clone(), permute(g.data(), h, w, d, n, true)).unwrap())]
            }),
        ))
    }
}
