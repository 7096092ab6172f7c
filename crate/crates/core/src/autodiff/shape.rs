//! Layout ops: reshape, permute, concat/slice, gather, padding and pixel shuffle.

use super::{BackwardCtx, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{strides, Tensor};

/// Materializes `x` with its axes reordered so that output axis `i` is
/// input axis `perm[i]`.
pub(crate) fn permute_tensor(x: &Tensor, perm: &[usize]) -> Tensor {
    let in_shape = x.shape();
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let rank = out_shape.len();
    let n = x.numel();
    let mut out = Vec::with_capacity(n);
    let src = x.data();
    let last = out_shape[rank - 1];
    let last_stride = src_strides[rank - 1];
    let mut idx = vec![0usize; rank - 1];
    while out.len() < n {
        let base: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        if last_stride == 1 {
            out.extend_from_slice(&src[base..base + last]);
        } else {
            out.extend((0..last).map(|j| src[base + j * last_stride]));
        }
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Tensor::from_parts(out_shape, out)
}

/// Copies a `len`-wide window of `axis` starting at `start`.
fn slice_tensor(x: &Tensor, axis: usize, start: usize, len: usize) -> Tensor {
    let shape = x.shape();
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let d = shape[axis];
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * d + start) * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut s = shape.to_vec();
    s[axis] = len;
    Tensor::from_parts(s, out)
}

impl Graph {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let in_shape = v.shape().to_vec();
        let out = v.clone().reshape(shape)?;
        let backward = Box::new(move |ctx: &BackwardCtx<'_>| {
            vec![Some(ctx.grad.clone().reshape(&in_shape).expect("same element count"))]
        });
        self.push("reshape", out, &[x], backward)
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let rank = v.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::contract("permute", format!("{perm:?} is not a permutation of rank {rank}")));
        }
        let out = permute_tensor(v, perm);
        let mut inverse = vec![0; rank];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let backward =
            Box::new(move |ctx: &BackwardCtx<'_>| vec![Some(permute_tensor(ctx.grad, &inverse))]);
        self.push("permute", out, &[x], backward)
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&mut self, x: Var) -> Result<Var> {
        let rank = self.value(x).rank();
        if rank < 2 {
            return Err(Error::contract("transpose_last", "rank below 2"));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(x, &perm)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::contract("concat", "no inputs"))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::contract("concat", format!("axis {axis} out of range")));
        }
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.value(x).shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::contract("concat", format!("shape {s:?} incompatible with {base:?} on axis {axis}")));
            }
            widths.push(s[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&x, &w) in xs.iter().zip(&widths) {
                let d = self.value(x).data();
                data.extend_from_slice(&d[o * w * inner..(o + 1) * w * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::from_parts(shape, data);
        let backward = Box::new(move |ctx: &BackwardCtx<'_>| {
            let mut start = 0;
            widths
                .iter()
                .zip(&ctx.needs)
                .map(|(&w, &need)| {
                    let g = need.then(|| slice_tensor(ctx.grad, axis, start, w));
                    start += w;
                    g
                })
                .collect()
        });
        self.push("concat", out, xs, backward)
    }

    /// Extracts `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        let shape = v.shape().to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::contract(
                "slice",
                format!("range {start}..{} of axis {axis} out of bounds for {shape:?}", start + len),
            ));
        }
        let out = slice_tensor(v, axis, start, len);
        let backward = Box::new(move |ctx: &BackwardCtx<'_>| {
            let mut g = Tensor::zeros(&shape);
            let outer: usize = shape[..axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let d = shape[axis];
            let src = ctx.grad.data();
            let dst = g.data_mut();
            for o in 0..outer {
                let to = (o * d + start) * inner;
                let from = o * len * inner;
                dst[to..to + len * inner].copy_from_slice(&src[from..from + len * inner]);
            }
            vec![Some(g)]
        });
        self.push("slice", out, &[x], backward)
    }

    /// Splits `axis` into consecutive pieces of the given widths.
    pub fn split(&mut self, x: Var, axis: usize, widths: &[usize]) -> Result<Vec<Var>> {
        let d = self.value(x).shape().get(axis).copied().unwrap_or(0);
        if widths.iter().sum::<usize>() != d {
            return Err(Error::contract("split", format!("widths {widths:?} do not sum to extent {d}")));
        }
        let mut start = 0;
        let mut parts = Vec::with_capacity(widths.len());
        for &w in widths {
            parts.push(self.slice(x, axis, start, w)?);
            start += w;
        }
        Ok(parts)
    }

    /// Gathers entries of `axis` by index (with repetition allowed).
    pub fn index_select(&mut self, x: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let shape = v.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::contract("index_select", format!("axis {axis} out of range")));
        }
        let d = shape[axis];
        if let Some(&bad) = indices.iter().find(|&&i| i >= d) {
            return Err(Error::contract("index_select", format!("index {bad} out of range for extent {d}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let b = (o * d + i) * inner;
                data.extend_from_slice(&v.data()[b..b + inner]);
            }
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = indices.len();
        let out = Tensor::from_parts(out_shape, data);
        let indices = indices.to_vec();
        let backward = Box::new(move |ctx: &BackwardCtx<'_>| {
            let mut g = Tensor::zeros(&shape);
            let src = ctx.grad.data();
            let dst = g.data_mut();
            let k = indices.len();
            for o in 0..outer {
                for (j, &i) in indices.iter().enumerate() {
                    let to = (o * d + i) * inner;
                    let from = (o * k + j) * inner;
                    for t in 0..inner {
                        dst[to + t] += src[from + t];
                    }
                }
            }
            vec![Some(g)]
        });
        self.push("index_select", out, &[x], backward)
    }

    /// Zero-pads the last two axes of an N×C×H×W tensor by `pad` on every side.
    pub fn pad2d(&mut self, x: Var, pad: usize) -> Result<Var> {
        let v = self.value(x);
        let &[n, c, h, w] = v.shape() else {
            return Err(Error::contract("pad2d", "expected an N×C×H×W tensor"));
        };
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        let mut out = Tensor::zeros(&[n, c, hp, wp]);
        {
            let (src, dst) = (v.data(), out.data_mut());
            for plane in 0..n * c {
                for y in 0..h {
                    let s = (plane * h + y) * w;
                    let d = (plane * hp + y + pad) * wp + pad;
                    dst[d..d + w].copy_from_slice(&src[s..s + w]);
                }
            }
        }
        let backward = Box::new(move |ctx: &BackwardCtx<'_>| {
            let mut g = Tensor::zeros(&[n, c, h, w]);
            let (src, dst) = (ctx.grad.data(), g.data_mut());
            for plane in 0..n * c {
                for y in 0..h {
                    let d = (plane * h + y) * w;
                    let s = (plane * hp + y + pad) * wp + pad;
                    dst[d..d + w].copy_from_slice(&src[s..s + w]);
                }
            }
            vec![Some(g)]
        });
        self.push("pad2d", out, &[x], backward)
    }

    /// N×(C·r²)×H×W → N×C×rH×rW. Output channel `c` at `(r·i+dy, r·j+dx)` is
    /// input channel `c·r²+dy·r+dx` at `(i, j)`.
    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let &[n, cr2, h, w] = self.value(x).shape() else {
            return Err(Error::contract("pixel_shuffle", "expected an N×C×H×W tensor"));
        };
        if r == 0 || cr2 % (r * r) != 0 {
            return Err(Error::contract(
                "pixel_shuffle",
                format!("channel extent {cr2} not divisible by r²={}", r * r),
            ));
        }
        let c = cr2 / (r * r);
        let t = self.reshape(x, &[n, c, r, r, h, w])?;
        let t = self.permute(t, &[0, 1, 4, 2, 5, 3])?;
        self.reshape(t, &[n, c, h * r, w * r])
    }

    /// Inverse of [`Graph::pixel_shuffle`].
    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let &[n, c, hr, wr] = self.value(x).shape() else {
            return Err(Error::contract("pixel_unshuffle", "expected an N×C×H×W tensor"));
        };
        if r == 0 || hr % r != 0 || wr % r != 0 {
            return Err(Error::contract(
                "pixel_unshuffle",
                format!("spatial extents {hr}×{wr} not divisible by r={r}"),
            ));
        }
        let (h, w) = (hr / r, wr / r);
        let t = self.reshape(x, &[n, c, h, r, w, r])?;
        let t = self.permute(t, &[0, 1, 3, 5, 2, 4])?;
        self.reshape(t, &[n, c * r * r, h, w])
    }
}
