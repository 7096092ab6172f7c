//! Batched matrix products and softmax.

use super::{BackwardCtx, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `c[m,n] += Σ_k a[m,k]·b[k,n]` with optional transposes, row-major.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], m: usize, k: usize, n: usize) {
    let a_at = |i: usize, p: usize| if ta { a[p * m + i] } else { a[i * k + p] };
    if !tb {
        for i in 0..m {
            let crow = &mut c[i * n..][..n];
            for p in 0..k {
                let av = a_at(i, p);
                let brow = &b[p * n..][..n];
                crow.iter_mut().zip(brow).for_each(|(c, b)| *c += av * b);
            }
        }
    } else {
        for i in 0..m {
            for j in 0..n {
                let brow = &b[j * k..][..k];
                let mut acc = 0.0;
                for (p, bv) in brow.iter().enumerate() {
                    acc += a_at(i, p) * bv;
                }
                c[i * n + j] += acc;
            }
        }
    }
}

fn dims3(op: &'static str, what: &str, t: &Tensor) -> Result<[usize; 3]> {
    <[usize; 3]>::try_from(t.shape())
        .map_err(|_| Error::contract(op, format!("{what} operand must be 3-D, got {:?}", t.shape())))
}

impl Graph {
    /// Batched product of B×M×K and B×K×N operands. Either batch extent may
    /// be 1 and is then shared across the other operand's batch.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        const OP: &str = "bmm";
        let (av, bv) = (self.value(a), self.value(b));
        let [ba, m, k] = dims3(OP, "left", av)?;
        let [bb, k2, n] = dims3(OP, "right", bv)?;
        if k != k2 {
            return Err(Error::contract(OP, format!("inner extents differ: {:?} × {:?}", av.shape(), bv.shape())));
        }
        if ba != bb && ba != 1 && bb != 1 {
            return Err(Error::contract(OP, format!("batch extents {ba} and {bb} do not broadcast")));
        }
        let batch = ba.max(bb);
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            let ai = if ba == 1 { 0 } else { i };
            let bi = if bb == 1 { 0 } else { i };
            gemm_acc(
                &av.data()[ai * m * k..][..m * k],
                false,
                &bv.data()[bi * k * n..][..k * n],
                false,
                &mut out[i * m * n..][..m * n],
                m,
                k,
                n,
            );
        }
        let out = Tensor::from_parts(vec![batch, m, n], out);
        let backward = Box::new(move |ctx: &BackwardCtx<'_>| {
            let (a, b, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
            let ga = ctx.needs[0].then(|| {
                let mut d = vec![0.0; ba * m * k];
                for i in 0..batch {
                    let ai = if ba == 1 { 0 } else { i };
                    let bi = if bb == 1 { 0 } else { i };
                    // dA = G · Bᵀ
                    gemm_acc(
                        &g[i * m * n..][..m * n],
                        false,
                        &b[bi * k * n..][..k * n],
                        true,
                        &mut d[ai * m * k..][..m * k],
                        m,
                        n,
                        k,
                    );
                }
                Tensor::from_parts(vec![ba, m, k], d)
            });
            let gb = ctx.needs[1].then(|| {
                let mut d = vec![0.0; bb * k * n];
                for i in 0..batch {
                    let ai = if ba == 1 { 0 } else { i };
                    let bi = if bb == 1 { 0 } else { i };
                    // dB = Aᵀ · G
                    gemm_acc(
                        &a[ai * m * k..][..m * k],
                        true,
                        &g[i * m * n..][..m * n],
                        false,
                        &mut d[bi * k * n..][..k * n],
                        k,
                        m,
                        n,
                    );
                }
                Tensor::from_parts(vec![bb, k, n], d)
            });
            vec![ga, gb]
        });
        self.push(OP, out, &[a, b], backward)
    }

    /// Softmax along the last axis, max-shifted for stability.
    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = *xv.shape().last().ok_or_else(|| Error::contract("softmax", "empty shape"))?;
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(n) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), out);
        let backward = Box::new(move |ctx: &BackwardCtx<'_>| {
            let (y, g) = (ctx.output.data(), ctx.grad.data());
            let mut d = vec![0.0; y.len()];
            for ((dr, yr), gr) in d.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for i in 0..n {
                    dr[i] = yr[i] * (gr[i] - dot);
                }
            }
            vec![Some(Tensor::from_parts(ctx.grad.shape().to_vec(), d))]
        });
        self.push("softmax", out, &[x], backward)
    }
}
