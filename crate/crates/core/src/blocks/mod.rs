//! Network layers built from autodiff ops and named parameters.

mod deform;
mod ltu;
mod mobilenet;
mod sampler;
mod sceb;
mod scem;

pub use deform::DeformableConv;
pub use ltu::{relative_position_index, Ltu};
pub use mobilenet::MobileNetUnit;
pub use sampler::{DownSampler, UpSampler};
pub use sceb::{Cell, CellOptions};
pub use scem::{Scem, SpectralModule};

use crate::autodiff::{ConvSpec, Var};
use crate::error::Result;
use crate::params::{Builder, ParamId, Session};

/// Epsilon of every layer normalisation.
pub const LN_EPS: f64 = 1e-5;

/// How a weight tensor is initialised.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform on ±1/√fan_in.
    FanIn,
    /// Truncated normal with std 0.02.
    TruncNormal,
    Zeros,
}

fn init_weight(b: &mut Builder<'_>, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
    match init {
        Init::FanIn => b.fan_in_uniform(name, shape),
        Init::TruncNormal => b.trunc_normal(name, shape, 0.02),
        Init::Zeros => b.zeros(name, shape),
    }
}

/// A 2-D convolution with optional bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        b: &mut Builder<'_>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        spec: ConvSpec,
        bias: bool,
        init: Init,
    ) -> Result<Self> {
        let mut b = b.child(name);
        let weight = init_weight(&mut b, "weight", &[cout, cin / spec.groups, k, k], init)?;
        let bias = if bias { Some(b.zeros("bias", &[cout])?) } else { None };
        Ok(Conv { weight, bias, spec })
    }

    /// Stride-1 convolution with `k/2` zero padding.
    pub fn same(b: &mut Builder<'_>, name: &str, cin: usize, cout: usize, k: usize, groups: usize) -> Result<Self> {
        Self::build(b, name, cin, cout, k, ConvSpec::same(k, groups), true, Init::FanIn)
    }

    /// Bias-free 1×1 projection initialised as an attention/MLP matrix.
    pub fn linear(b: &mut Builder<'_>, name: &str, cin: usize, cout: usize, bias: bool) -> Result<Self> {
        Self::build(b, name, cin, cout, 1, ConvSpec::default(), bias, Init::TruncNormal)
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = self.bias.map(|id| s.param(id));
        s.g.conv2d(x, w, b, self.spec)
    }
}

/// Layer normalisation over the channel axis of an N×C×H×W tensor.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn build(b: &mut Builder<'_>, name: &str, c: usize) -> Result<Self> {
        let mut b = b.child(name);
        Ok(LayerNorm { gamma: b.ones("weight", &[c])?, beta: b.zeros("bias", &[c])? })
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let (g, b) = (s.param(self.gamma), s.param(self.beta));
        s.g.layer_norm(x, 1, g, b, LN_EPS)
    }
}

/// `x + conv3×3(x)`: the stand-in for an ablated SCEM or LTU.
#[derive(Clone, Debug)]
pub struct ResidualConv {
    pub conv: Conv,
}

impl ResidualConv {
    pub fn build(b: &mut Builder<'_>, name: &str, c: usize) -> Result<Self> {
        Ok(ResidualConv { conv: Conv::same(b, name, c, c, 3, 1)? })
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let y = self.conv.forward(s, x)?;
        s.g.add(x, y)
    }
}

/// The spatial-aggregation slot of a cell, feature generator or predictor.
#[derive(Clone, Debug)]
pub enum SpatialUnit {
    Ltu(Ltu),
    Conv(ResidualConv),
}

impl SpatialUnit {
    pub fn build(b: &mut Builder<'_>, name: &str, c: usize, ltu: Option<(usize, usize, usize)>) -> Result<Self> {
        Ok(match ltu {
            Some((heads, window, expansion)) => SpatialUnit::Ltu(Ltu::build(b, name, c, heads, window, expansion)?),
            None => SpatialUnit::Conv(ResidualConv::build(b, name, c)?),
        })
    }

    /// `x + LTU(x)`, or the residual convolution when attention is ablated.
    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        match self {
            SpatialUnit::Ltu(l) => {
                let y = l.forward(s, x)?;
                s.g.add(x, y)
            }
            SpatialUnit::Conv(c) => c.forward(s, x),
        }
    }
}
