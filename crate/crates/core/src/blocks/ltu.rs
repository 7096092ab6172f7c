//! Local Transformer Unit: window self-attention with a relative position
//! bias, followed by an expansion-reversion MLP.
//!
//! Token-wise projections are 1×1 convolutions on the N×D×H×W map, which is
//! the same linear map as multiplying each flattened token by a D×D matrix.

use super::{Conv, LayerNorm};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::params::{Builder, ParamId, Session};

/// For every (query, key) pair of an M×M window, flattened row-major, the
/// index of its relative offset in a (2M−1)² table:
/// `(Δrow + M−1)·(2M−1) + (Δcol + M−1)`.
pub fn relative_position_index(m: usize) -> Vec<usize> {
    let side = 2 * m - 1;
    let mut idx = Vec::with_capacity(m.pow(4));
    for q in 0..m * m {
        for k in 0..m * m {
            let dr = q / m + m - 1 - k / m;
            let dc = q % m + m - 1 - k % m;
            idx.push(dr * side + dc);
        }
    }
    idx
}

#[derive(Clone, Debug)]
pub struct Ltu {
    pub norm1: LayerNorm,
    /// Q, K and V projections stacked along output channels (3D×D).
    pub qkv: Conv,
    /// heads×(2M−1)², zero-initialised.
    pub rel_bias: ParamId,
    pub proj: Conv,
    pub norm2: LayerNorm,
    pub expand: Conv,
    pub reduce: Conv,
    pub dim: usize,
    pub heads: usize,
    pub window: usize,
    rel_index: Vec<usize>,
}

impl Ltu {
    pub fn build(
        b: &mut Builder<'_>,
        name: &str,
        dim: usize,
        heads: usize,
        window: usize,
        expansion: usize,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::contract("ltu", format!("dimension {dim} not divisible by {heads} heads")));
        }
        if window == 0 {
            return Err(Error::contract("ltu", "window size must be positive"));
        }
        let mut b = b.child(name);
        let norm1 = LayerNorm::build(&mut b, "norm1", dim)?;
        let qkv = Conv::linear(&mut b, "qkv", dim, 3 * dim, false)?;
        let side = 2 * window - 1;
        let rel_bias = b.zeros("rel_bias", &[heads, side * side])?;
        let proj = Conv::linear(&mut b, "proj", dim, dim, false)?;
        let norm2 = LayerNorm::build(&mut b, "norm2", dim)?;
        let expand = Conv::linear(&mut b, "expand", dim, expansion * dim, false)?;
        let reduce = Conv::linear(&mut b, "reduce", expansion * dim, dim, false)?;
        Ok(Ltu {
            norm1,
            qkv,
            rel_bias,
            proj,
            norm2,
            expand,
            reduce,
            dim,
            heads,
            window,
            rel_index: relative_position_index(window),
        })
    }

    /// Softmaxed attention weights, (N·windows·heads)×M²×M² with windows in
    /// row-major order and heads innermost, plus the head-concatenated
    /// attention output N×D×H×W (before the output projection).
    pub fn attention(&self, s: &mut Session<'_>, x: Var) -> Result<(Var, Var)> {
        const OP: &str = "ltu";
        let &[n, d, h, w] = s.g.shape(x) else {
            return Err(Error::contract(OP, format!("expected N×C×H×W, got {:?}", s.g.shape(x))));
        };
        let m = self.window;
        if d != self.dim {
            return Err(Error::contract(OP, format!("expected {} channels, got {d}", self.dim)));
        }
        if h % m != 0 || w % m != 0 {
            return Err(Error::contract(OP, format!("extents {h}×{w} not divisible by window {m}")));
        }
        let (nh, nw, heads, hd, mm) = (h / m, w / m, self.heads, d / self.heads, m * m);
        let batch = n * nh * nw * heads;

        let y = self.norm1.forward(s, x)?;
        let qkv = self.qkv.forward(s, y)?;
        let t = s.g.reshape(qkv, &[n, 3, heads, hd, nh, m, nw, m])?;
        let t = s.g.permute(t, &[1, 0, 4, 6, 2, 5, 7, 3])?;
        let t = s.g.reshape(t, &[3, batch, mm, hd])?;
        let parts = s.g.split(t, 0, &[1, 1, 1])?;
        let q = s.g.reshape(parts[0], &[batch, mm, hd])?;
        let k = s.g.reshape(parts[1], &[batch, mm, hd])?;
        let v = s.g.reshape(parts[2], &[batch, mm, hd])?;

        let kt = s.g.transpose_last(k)?;
        let scores = s.g.bmm(q, kt)?;
        let scores = s.g.mul_scalar(scores, 1.0 / (hd as f64).sqrt())?;
        let table = s.param(self.rel_bias);
        let bias = s.g.index_select(table, 1, &self.rel_index)?;
        let bias = s.g.reshape(bias, &[1, heads, mm, mm])?;
        let scores = s.g.reshape(scores, &[n * nh * nw, heads, mm, mm])?;
        let scores = s.g.add(scores, bias)?;
        let scores = s.g.reshape(scores, &[batch, mm, mm])?;
        let attn = s.g.softmax_last(scores)?;

        let out = s.g.bmm(attn, v)?;
        let out = s.g.reshape(out, &[n, nh, nw, heads, m, m, hd])?;
        let out = s.g.permute(out, &[0, 3, 6, 1, 4, 2, 5])?;
        let out = s.g.reshape(out, &[n, d, h, w])?;
        Ok((attn, out))
    }

    /// The LTU transform of an N×D×H×W map (no outer residual).
    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let (_, a) = self.attention(s, x)?;
        let z = self.proj.forward(s, a)?;
        let z = self.norm2.forward(s, z)?;
        let z = self.expand.forward(s, z)?;
        let z = s.g.gelu(z)?;
        self.reduce.forward(s, z)
    }
}
