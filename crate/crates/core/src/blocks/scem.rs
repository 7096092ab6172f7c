//! Spectral Communication Enhancement Module.

use super::{Conv, Init, MobileNetUnit, ResidualConv};
use crate::autodiff::{ConvSpec, Var};
use crate::error::Result;
use crate::params::{Builder, Session};

/// ```text
/// F_dw = dw3×3(x) + x
/// F_m  = m(F_dw)                    (m carries its own residual)
/// out  = re(GELU(ex(F_m))) + F_m
/// ```
#[derive(Clone, Debug)]
pub struct Scem {
    pub dw: Conv,
    pub unit: MobileNetUnit,
    pub expand: Conv,
    pub reduce: Conv,
}

impl Scem {
    pub fn build(b: &mut Builder<'_>, name: &str, dim: usize, expansion: usize, kappa: usize) -> Result<Self> {
        let mut b = b.child(name);
        let hidden = expansion * dim;
        Ok(Scem {
            dw: Conv::same(&mut b, "dw", dim, dim, 3, dim)?,
            unit: MobileNetUnit::build(&mut b, "unit", dim, kappa)?,
            expand: Conv::build(&mut b, "expand", dim, hidden, 1, ConvSpec::default(), true, Init::TruncNormal)?,
            reduce: Conv::build(&mut b, "reduce", hidden, dim, 1, ConvSpec::default(), true, Init::TruncNormal)?,
        })
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let d = self.dw.forward(s, x)?;
        let f_dw = s.g.add(d, x)?;
        let f_m = self.unit.forward(s, f_dw)?;
        let e = self.expand.forward(s, f_m)?;
        let e = s.g.gelu(e)?;
        let r = self.reduce.forward(s, e)?;
        s.g.add(r, f_m)
    }
}

/// One stage of a cell's cascade: a SCEM, or a residual 3×3 convolution when
/// SCEMs are ablated.
#[derive(Clone, Debug)]
pub enum SpectralModule {
    Scem(Scem),
    Conv(ResidualConv),
}

impl SpectralModule {
    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        match self {
            SpectralModule::Scem(m) => m.forward(s, x),
            SpectralModule::Conv(c) => c.forward(s, x),
        }
    }
}
