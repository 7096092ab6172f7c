//! Encoder/decoder cell: a cascade of spectral modules (the SCEB) followed by
//! spatial aggregation.

use super::{Conv, ResidualConv, Scem, SpatialUnit, SpectralModule};
use crate::autodiff::Var;
use crate::error::Result;
use crate::params::{Builder, Session};

/// Width-independent settings shared by every cell.
#[derive(Clone, Copy, Debug)]
pub struct CellOptions {
    pub expansion: usize,
    pub kappa: usize,
    /// Kernel of the full channel-mixing convolution after the cascade.
    pub mix_kernel: usize,
    pub use_scem: bool,
    /// `(heads, window)` when attention is enabled.
    pub ltu: Option<(usize, usize)>,
}

/// ```text
/// F_i = module_i(F_{i−1}),  F_0 = x
/// z   = GELU(mix(F_m) + x)
/// out = z + LTU(z)
/// ```
#[derive(Clone, Debug)]
pub struct Cell {
    pub modules: Vec<SpectralModule>,
    pub mix: Conv,
    pub spatial: SpatialUnit,
}

impl Cell {
    pub fn build(b: &mut Builder<'_>, name: &str, dim: usize, depth: usize, opt: CellOptions) -> Result<Self> {
        let mut b = b.child(name);
        let mut modules = Vec::with_capacity(depth);
        for i in 0..depth {
            let key = format!("scem{i}");
            modules.push(if opt.use_scem {
                SpectralModule::Scem(Scem::build(&mut b, &key, dim, opt.expansion, opt.kappa)?)
            } else {
                SpectralModule::Conv(ResidualConv::build(&mut b, &key, dim)?)
            });
        }
        let mix = Conv::same(&mut b, "mix", dim, dim, opt.mix_kernel, 1)?;
        let spatial = SpatialUnit::build(&mut b, "ltu", dim, opt.ltu.map(|(h, m)| (h, m, opt.expansion)))?;
        Ok(Cell { modules, mix, spatial })
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let mut f = x;
        for m in &self.modules {
            f = m.forward(s, f)?;
        }
        let y = self.mix.forward(s, f)?;
        let y = s.g.add(y, x)?;
        let z = s.g.gelu(y)?;
        self.spatial.forward(s, z)
    }
}
