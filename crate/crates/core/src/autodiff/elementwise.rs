//! Elementwise arithmetic, activations and reductions.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::{BackwardCtx, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{strides, Tensor};

/// Standard normal CDF via the exact error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Broadcast layout of a binary op: output shape plus per-operand strides
/// in output index space (zero along broadcast axes).
struct Broadcast {
    out: Vec<usize>,
    sa: Vec<usize>,
    sb: Vec<usize>,
}

fn broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<Broadcast> {
    if a.len() != b.len() {
        return Err(Error::contract(op, format!("rank mismatch {a:?} vs {b:?}")));
    }
    let mut out = Vec::with_capacity(a.len());
    for (ax, (&da, &db)) in a.iter().zip(b).enumerate() {
        out.push(match (da, db) {
            _ if da == db => da,
            (1, _) => db,
            (_, 1) => da,
            _ => {
                return Err(Error::contract(
                    op,
                    format!("axis {ax}: extents {da} and {db} do not broadcast ({a:?} vs {b:?})"),
                ))
            }
        });
    }
    let masked = |s: &[usize]| -> Vec<usize> {
        strides(s).into_iter().zip(s).map(|(st, &d)| if d == 1 { 0 } else { st }).collect()
    };
    Ok(Broadcast { sa: masked(a), sb: masked(b), out })
}

/// Calls `f(out_offset, a_offset, b_offset)` for every output element in
/// row-major order.
fn for_each_broadcast(bc: &Broadcast, mut f: impl FnMut(usize, usize, usize)) {
    let rank = bc.out.len();
    let n: usize = bc.out.iter().product();
    if rank == 0 {
        return;
    }
    let last = bc.out[rank - 1];
    let (la, lb) = (bc.sa[rank - 1], bc.sb[rank - 1]);
    let mut idx = vec![0usize; rank - 1];
    let mut o = 0;
    while o < n {
        let base_a: usize = idx.iter().zip(&bc.sa).map(|(i, s)| i * s).sum();
        let base_b: usize = idx.iter().zip(&bc.sb).map(|(i, s)| i * s).sum();
        for j in 0..last {
            f(o + j, base_a + j * la, base_b + j * lb);
        }
        o += last;
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            if idx[ax] < bc.out[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

/// Sums `grad` (of the broadcast output shape) down to `target` shape.
pub(crate) fn unbroadcast(grad: &Tensor, target: &[usize]) -> Tensor {
    if grad.shape() == target {
        return grad.clone();
    }
    let bc = broadcast("unbroadcast", grad.shape(), target).expect("broadcast-compatible");
    let mut out = Tensor::zeros(target);
    let (g, o) = (grad.data(), out.data_mut());
    for_each_broadcast(&bc, |i, ia, ib| {
        debug_assert_eq!(i, ia);
        o[ib] += g[ia];
    });
    out
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl Graph {
    fn binary(&mut self, op: &'static str, kind: BinOp, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let bc = broadcast(op, va.shape(), vb.shape())?;
        let mut out = Tensor::zeros(&bc.out);
        {
            let (da, db, o) = (va.data(), vb.data(), out.data_mut());
            if va.shape() == vb.shape() {
                for i in 0..o.len() {
                    o[i] = apply(kind, da[i], db[i]);
                }
            } else {
                for_each_broadcast(&bc, |i, ia, ib| o[i] = apply(kind, da[ia], db[ib]));
            }
        }
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        let backward = Box::new(move |ctx: &BackwardCtx<'_>| {
            let (xa, xb) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let g = ctx.grad.data();
            let out_shape = ctx.grad.shape();
            let bc = broadcast("backward", &sa, &sb).expect("validated in forward");
            let mut ga = ctx.needs[0].then(|| Tensor::zeros(out_shape));
            let mut gb = ctx.needs[1].then(|| Tensor::zeros(out_shape));
            {
                let mut pa = ga.as_mut().map(|t| t.data_mut());
                let mut pb = gb.as_mut().map(|t| t.data_mut());
                for_each_broadcast(&bc, |i, ia, ib| {
                    let (x, y, gi) = (xa[ia], xb[ib], g[i]);
                    let (da, db) = match kind {
                        BinOp::Add => (gi, gi),
                        BinOp::Sub => (gi, -gi),
                        BinOp::Mul => (gi * y, gi * x),
                        BinOp::Div => (gi / y, -gi * x / (y * y)),
                    };
                    if let Some(p) = pa.as_deref_mut() {
                        p[i] = da;
                    }
                    if let Some(p) = pb.as_deref_mut() {
                        p[i] = db;
                    }
                });
            }
            vec![ga.map(|t| unbroadcast(&t, &sa)), gb.map(|t| unbroadcast(&t, &sb))]
        });
        self.push(op, out, &[a, b], backward)
    }

    /// `a + b` with same-rank broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", BinOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", BinOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", BinOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", BinOp::Div, a, b)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("add_scalar", x, move |v| v + c, |_, _| 1.0)
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("mul_scalar", x, move |v| v * c, move |_, _| c)
    }

    /// Applies `f` elementwise; `df(x, y)` is the derivative at input `x`
    /// with output `y`.
    pub(crate) fn unary(
        &mut self,
        op: &'static str,
        x: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Var> {
        let out = self.value(x).map(f);
        let backward = Box::new(move |ctx: &BackwardCtx<'_>| {
            let (xs, ys, g) = (ctx.inputs[0].data(), ctx.output.data(), ctx.grad.data());
            let data = (0..g.len()).map(|i| g[i] * df(xs[i], ys[i])).collect();
            vec![Some(Tensor::from_parts(ctx.grad.shape().to_vec(), data))]
        });
        self.push(op, out, &[x], backward)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid_scalar, |_, y| y * (1.0 - y))
    }

    /// Exact-erf GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary("gelu", x, gelu_scalar, |x, _| normal_cdf(x) + x * normal_pdf(x))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary("abs", x, f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary("square", x, |v| v * v, |x, _| 2.0 * x)
    }

    /// `x^p` for nonnegative `x`; the derivative at zero is taken as zero.
    pub fn powf(&mut self, x: Var, p: f64) -> Result<Var> {
        self.unary("powf", x, move |v| v.powf(p), move |x, _| {
            if x == 0.0 {
                0.0
            } else {
                p * x.powf(p - 1.0)
            }
        })
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let out = Tensor::scalar(v.data().iter().sum());
        let backward = Box::new(|ctx: &BackwardCtx<'_>| {
            vec![Some(Tensor::full(ctx.inputs[0].shape(), ctx.grad.data()[0]))]
        });
        self.push("sum", out, &[x], backward)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x)?;
        self.mul_scalar(s, 1.0 / n)
    }

    /// Sums over `axes`, keeping them as extent-1 dimensions.
    pub fn sum_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let rank = v.rank();
        if let Some(&bad) = axes.iter().find(|&&a| a >= rank) {
            return Err(Error::contract("sum_axes", format!("axis {bad} out of range for rank {rank}")));
        }
        let in_shape = v.shape().to_vec();
        let out_shape: Vec<usize> = in_shape
            .iter()
            .enumerate()
            .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
            .collect();
        let out = unbroadcast(v, &out_shape);
        let backward = Box::new(move |ctx: &BackwardCtx<'_>| {
            let mut g = Tensor::zeros(&in_shape);
            let bc = broadcast("sum_axes", &in_shape, ctx.grad.shape()).expect("reduced shape");
            let (src, dst) = (ctx.grad.data(), g.data_mut());
            for_each_broadcast(&bc, |i, _, ib| dst[i] = src[ib]);
            vec![Some(g)]
        });
        self.push("sum_axes", out, &[x], backward)
    }

    pub fn mean_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x);
        let count: usize = axes.iter().filter_map(|&a| shape.get(a)).product();
        let s = self.sum_axes(x, axes)?;
        self.mul_scalar(s, 1.0 / count as f64)
    }

    /// Mean over the spatial axes of an N×C×H×W tensor, giving N×C×1×1.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        if self.value(x).rank() != 4 {
            return Err(Error::contract("global_avg_pool", "expected an N×C×H×W tensor"));
        }
        self.mean_axes(x, &[2, 3])
    }
}

fn apply(kind: BinOp, a: f64, b: f64) -> f64 {
    match kind {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => a / b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Precision;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn broadcast_add_and_gradient_reduction() {
        let mut g = Graph::new(Precision::High);
        let a = g.leaf(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = g.leaf(t(&[1, 3], &[10.0, 20.0, 30.0]));
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let s = g.sum(c).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(b).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn incompatible_broadcast_names_axis() {
        let mut g = Graph::new(Precision::High);
        let a = g.leaf(Tensor::zeros(&[2, 3]));
        let b = g.leaf(Tensor::zeros(&[2, 2]));
        let err = g.add(a, b).unwrap_err().to_string();
        assert!(err.contains("axis 1"), "{err}");
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut g = Graph::new(Precision::High);
        let x = g.leaf(t(&[1], &[0.0]));
        let y = g.sigmoid(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5]);
    }

    #[test]
    fn gelu_fixed_points() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-6);
        for x in [-3.0, -0.5, 0.25, 2.0] {
            let odd = gelu_scalar(x) - gelu_scalar(-x);
            assert!((odd - x).abs() < 1e-15);
        }
    }

    #[test]
    fn global_avg_pool_is_mean() {
        let mut g = Graph::new(Precision::High);
        let x = g.leaf(t(&[1, 1, 2, 2], &[1.0, 3.0, 5.0, 7.0]));
        let p = g.global_avg_pool(x).unwrap();
        assert_eq!(g.shape(p), &[1, 1, 1, 1]);
        assert_eq!(g.value(p).data(), &[4.0]);
    }

    #[test]
    fn sum_axes_keeps_dims() {
        let mut g = Graph::new(Precision::High);
        let x = g.leaf(Tensor::from_fn(&[2, 3, 2], |i| (i[0] * 6 + i[1] * 2 + i[2]) as f64));
        let s = g.sum_axes(x, &[1]).unwrap();
        assert_eq!(g.shape(s), &[2, 1, 2]);
        assert_eq!(g.value(s).data(), &[6.0, 9.0, 24.0, 27.0]);
    }
}
