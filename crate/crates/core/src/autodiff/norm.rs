//! Layer normalisation over a single axis.

use super::{BackwardCtx, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Views `shape` as (outer, C, inner) around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Per (outer, inner) position: mean and reciprocal standard deviation.
fn moments(x: &[f64], outer: usize, c: usize, inner: usize, eps: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        let base = o * c * inner;
        for i in 0..inner {
            let mut mean = 0.0;
            for ch in 0..c {
                mean += x[base + ch * inner + i];
            }
            mean /= c as f64;
            let mut var = 0.0;
            for ch in 0..c {
                let d = x[base + ch * inner + i] - mean;
                var += d * d;
            }
            var /= c as f64;
            out.push((mean, 1.0 / (var + eps).sqrt()));
        }
    }
    out
}

impl Graph {
    /// Normalises `x` along `axis` (biased variance) and applies the
    /// per-channel affine `gamma`, `beta` of shape `[C]`.
    pub fn layer_norm(&mut self, x: Var, axis: usize, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        const OP: &str = "layer_norm";
        let xv = self.value(x);
        if axis >= xv.rank() {
            return Err(Error::contract(OP, format!("axis {axis} out of range for {:?}", xv.shape())));
        }
        let (outer, c, inner) = split_axis(xv.shape(), axis);
        for (name, p) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(p) != [c] {
                return Err(Error::contract(
                    OP,
                    format!("{name} shape {:?} does not match {c} channels", self.shape(p)),
                ));
            }
        }
        let (xd, gd, bd) = (self.value(x).data(), self.value(gamma).data(), self.value(beta).data());
        let stats = moments(xd, outer, c, inner, eps);
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for ch in 0..c {
                let off = (o * c + ch) * inner;
                for i in 0..inner {
                    let (m, r) = stats[o * inner + i];
                    out[off + i] = (xd[off + i] - m) * r * gd[ch] + bd[ch];
                }
            }
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), out);
        let backward = Box::new(move |ctx: &BackwardCtx<'_>| {
            let (xd, gd, gout) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
            let stats = moments(xd, outer, c, inner, eps);
            let mut dx = vec![0.0; xd.len()];
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            let n = c as f64;
            for o in 0..outer {
                let base = o * c * inner;
                for i in 0..inner {
                    let (m, r) = stats[o * inner + i];
                    let (mut s1, mut s2) = (0.0, 0.0);
                    for ch in 0..c {
                        let k = base + ch * inner + i;
                        let xhat = (xd[k] - m) * r;
                        let dxhat = gout[k] * gd[ch];
                        s1 += dxhat;
                        s2 += dxhat * xhat;
                        dgamma[ch] += gout[k] * xhat;
                        dbeta[ch] += gout[k];
                    }
                    for ch in 0..c {
                        let k = base + ch * inner + i;
                        let xhat = (xd[k] - m) * r;
                        dx[k] = r * (gout[k] * gd[ch] - s1 / n - xhat * s2 / n);
                    }
                }
            }
            let shape = ctx.inputs[0].shape().to_vec();
            vec![
                ctx.needs[0].then(|| Tensor::from_parts(shape, dx)),
                ctx.needs[1].then(|| Tensor::from_parts(vec![c], dgamma)),
                ctx.needs[2].then(|| Tensor::from_parts(vec![c], dbeta)),
            ]
        });
        self.push(OP, out, &[x, gamma, beta], backward)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Precision;

    #[test]
    fn normalises_each_position_over_channels() {
        let mut g = Graph::new(Precision::High);
        let x = g.leaf(Tensor::from_fn(&[2, 4, 3, 1], |i| (i[1] * i[1]) as f64 + i[2] as f64 * 0.5 - i[0] as f64));
        let ga = g.leaf(Tensor::full(&[4], 1.0));
        let be = g.leaf(Tensor::zeros(&[4]));
        let y = g.layer_norm(x, 1, ga, be, 0.0).unwrap();
        let yv = g.value(y);
        for n in 0..2 {
            for h in 0..3 {
                let col: Vec<f64> = (0..4).map(|c| yv.at(&[n, c, h, 0])).collect();
                let mean = col.iter().sum::<f64>() / 4.0;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
                assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn affine_is_applied() {
        let mut g = Graph::new(Precision::High);
        let x = g.leaf(Tensor::new(&[1, 2], vec![-1.0, 1.0]).unwrap());
        let ga = g.leaf(Tensor::new(&[2], vec![2.0, 3.0]).unwrap());
        let be = g.leaf(Tensor::new(&[2], vec![0.5, -0.5]).unwrap());
        let y = g.layer_norm(x, 1, ga, be, 0.0).unwrap();
        assert_eq!(g.value(y).data(), &[-1.5, 2.5]);
    }

    #[test]
    fn rejects_bad_affine_shape() {
        let mut g = Graph::new(Precision::High);
        let x = g.leaf(Tensor::zeros(&[1, 3, 2, 2]));
        let ga = g.leaf(Tensor::zeros(&[2]));
        let be = g.leaf(Tensor::zeros(&[3]));
        assert!(g.layer_norm(x, 1, ga, be, 1e-5).is_err());
    }
}
