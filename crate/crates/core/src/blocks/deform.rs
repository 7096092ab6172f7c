//! Grouped deformable convolution.

use super::{init_weight, Init};
use crate::autodiff::{ConvSpec, Var};
use crate::error::{Error, Result};
use crate::params::{Builder, ParamId, Session};
use crate::tensor::Tensor;

/// Stride-1 grouped k×k convolution whose taps are displaced by learned,
/// per-group offsets.
///
/// The offset predictor is an ordinary grouped convolution producing, for
/// each group and tap `t = ky·k + kx`, the pair `(Δy, Δx)` at channels
/// `g·2k² + 2t` and `g·2k² + 2t + 1`. It is zero-initialised, so a fresh
/// layer is exactly a zero-padded grouped convolution.
#[derive(Clone, Debug)]
pub struct DeformableConv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub offset_weight: ParamId,
    pub offset_bias: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub groups: usize,
    pub k: usize,
}

impl DeformableConv {
    pub fn build(b: &mut Builder<'_>, name: &str, cin: usize, cout: usize, k: usize, groups: usize) -> Result<Self> {
        if groups == 0 || cin % groups != 0 || cout % groups != 0 {
            return Err(Error::contract(
                "deformable_conv",
                format!("channels {cin}→{cout} not divisible by {groups} groups"),
            ));
        }
        if k % 2 == 0 {
            return Err(Error::contract("deformable_conv", format!("kernel {k} must be odd")));
        }
        let mut b = b.child(name);
        let weight = init_weight(&mut b, "weight", &[cout, cin / groups, k, k], Init::FanIn)?;
        let bias = b.zeros("bias", &[cout])?;
        let mut ob = b.child("offset");
        let offset_weight = ob.zeros("weight", &[groups * 2 * k * k, cin / groups, k, k])?;
        let offset_bias = ob.zeros("bias", &[groups * 2 * k * k])?;
        Ok(DeformableConv { weight, bias, offset_weight, offset_bias, cin, cout, groups, k })
    }

    /// Predicted offsets, N×(g·2k²)×H×W.
    pub fn offsets(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.offset_weight), s.param(self.offset_bias));
        s.g.conv2d(x, w, Some(b), ConvSpec::same(self.k, self.groups))
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let off = self.offsets(s, x)?;
        self.forward_with_offsets(s, x, off)
    }

    /// Applies the layer with externally supplied offsets of shape
    /// N×(g·2k²)×H×W.
    pub fn forward_with_offsets(&self, s: &mut Session<'_>, x: Var, offsets: Var) -> Result<Var> {
        const OP: &str = "deformable_conv";
        let [n, c, h, w] = <[usize; 4]>::try_from(s.g.shape(x))
            .map_err(|_| Error::contract(OP, format!("input must be 4-D, got {:?}", s.g.shape(x))))?;
        if c != self.cin {
            return Err(Error::contract(OP, format!("expected {} input channels, got {c}", self.cin)));
        }
        let (g, k, kk, hw) = (self.groups, self.k, self.k * self.k, h * w);
        if s.g.shape(offsets) != [n, g * 2 * kk, h, w] {
            return Err(Error::contract(
                OP,
                format!("offsets {:?} do not match N×{}×{h}×{w}", s.g.shape(offsets), g * 2 * kk),
            ));
        }
        // One extra ring of zeros beyond the kernel reach, so that clamped
        // bilinear samples falling outside the image read zeros.
        let pad = k / 2 + 1;
        let xp = s.g.pad2d(x, pad)?;

        // Coordinates N×G×(k²·HW)×2, ordered tap-major.
        let o = s.g.reshape(offsets, &[n, g, kk, 2, hw])?;
        let o = s.g.permute(o, &[0, 1, 2, 4, 3])?;
        let o = s.g.reshape(o, &[n, g, kk * hw, 2])?;
        let base = Tensor::from_fn(&[1, 1, kk * hw, 2], |i| {
            let (t, p) = (i[2] / hw, i[2] % hw);
            let (tap, pix) = if i[3] == 0 { (t / k, p / w) } else { (t % k, p % w) };
            (pix + tap + pad - k / 2) as f64
        });
        let base = s.g.constant(base);
        let coords = s.g.add(o, base)?;
        let sampled = s.g.bilinear_sample(xp, coords)?;

        // Grouped weighting as one batched product over groups.
        let (cg, cog) = (c / g, self.cout / g);
        let cols = s.g.reshape(sampled, &[n, g, cg * kk, hw])?;
        let cols = s.g.permute(cols, &[1, 2, 0, 3])?;
        let cols = s.g.reshape(cols, &[g, cg * kk, n * hw])?;
        let wv = s.param(self.weight);
        let wm = s.g.reshape(wv, &[g, cog, cg * kk])?;
        let y = s.g.bmm(wm, cols)?;
        let y = s.g.reshape(y, &[g, cog, n, hw])?;
        let y = s.g.permute(y, &[2, 0, 1, 3])?;
        let y = s.g.reshape(y, &[n, self.cout, h, w])?;
        let b = s.param(self.bias);
        let b = s.g.reshape(b, &[1, self.cout, 1, 1])?;
        s.g.add(y, b)
    }
}
