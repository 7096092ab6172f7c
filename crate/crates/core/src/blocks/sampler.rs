//! Stride-2 resampling between pyramid levels.

use super::{Conv, Init};
use crate::autodiff::{ConvSpec, Var};
use crate::error::Result;
use crate::params::{Builder, ParamId, Session};

/// 2×2 stride-2 convolution: halves the extents and changes the width.
#[derive(Clone, Debug)]
pub struct DownSampler {
    pub conv: Conv,
}

impl DownSampler {
    pub fn build(b: &mut Builder<'_>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        let conv = Conv::build(b, name, cin, cout, 2, ConvSpec::new(2, 0, 1), true, Init::FanIn)?;
        Ok(DownSampler { conv })
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        self.conv.forward(s, x)
    }
}

/// 2×2 stride-2 transposed convolution, concatenation with the encoder skip,
/// then a 1×1 projection back to the target width.
#[derive(Clone, Debug)]
pub struct UpSampler {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fuse: Conv,
}

impl UpSampler {
    pub fn build(b: &mut Builder<'_>, name: &str, cin: usize, cout: usize, skip: usize) -> Result<Self> {
        let mut b = b.child(name);
        // Transposed weights are Cin×Cout×k×k; fan-in is taken over Cout·k².
        let weight = b.fan_in_uniform("weight", &[cin, cout, 2, 2])?;
        let bias = b.zeros("bias", &[cout])?;
        let fuse = Conv::same(&mut b, "fuse", cout + skip, cout, 1, 1)?;
        Ok(UpSampler { weight, bias, fuse })
    }

    /// Up-samples `x` without the skip connection.
    pub fn upsample(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.weight), s.param(self.bias));
        s.g.conv_transpose2d(x, w, Some(b), ConvSpec::new(2, 0, 1))
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var, skip: Var) -> Result<Var> {
        let u = self.upsample(s, x)?;
        let cat = s.g.concat(&[u, skip], 1)?;
        self.fuse.forward(s, cat)
    }
}
