//! Modified MobileNetV3 unit without the expand/reverse in its point-wise pair.

use super::{Conv, LayerNorm};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::params::{Builder, Session};

#[derive(Clone, Debug)]
pub struct MobileNetUnit {
    pub norm_in: LayerNorm,
    pub pw: Conv,
    pub norm_pw: LayerNorm,
    /// 5×5 depth-wise.
    pub dw: Conv,
    pub norm_dw: LayerNorm,
    pub se_squeeze: Conv,
    pub se_excite: Conv,
    pub pw_out: Conv,
}

impl MobileNetUnit {
    pub fn build(b: &mut Builder<'_>, name: &str, dim: usize, kappa: usize) -> Result<Self> {
        if kappa == 0 || dim % kappa != 0 {
            return Err(Error::contract(
                "mobilenet_unit",
                format!("dimension {dim} not divisible by squeeze factor {kappa}"),
            ));
        }
        let mut b = b.child(name);
        let squeezed = dim / kappa;
        Ok(MobileNetUnit {
            norm_in: LayerNorm::build(&mut b, "norm_in", dim)?,
            pw: Conv::same(&mut b, "pw", dim, dim, 1, 1)?,
            norm_pw: LayerNorm::build(&mut b, "norm_pw", dim)?,
            dw: Conv::same(&mut b, "dw", dim, dim, 5, dim)?,
            norm_dw: LayerNorm::build(&mut b, "norm_dw", dim)?,
            se_squeeze: Conv::same(&mut b, "se_squeeze", dim, squeezed, 1, 1)?,
            se_excite: Conv::same(&mut b, "se_excite", squeezed, dim, 1, 1)?,
            pw_out: Conv::same(&mut b, "pw_out", dim, dim, 1, 1)?,
        })
    }

    /// The pre-gating feature and its squeeze-excitation gate (N×D×1×1).
    pub fn features_and_gate(&self, s: &mut Session<'_>, x: Var) -> Result<(Var, Var)> {
        let t = self.norm_in.forward(s, x)?;
        let t = self.pw.forward(s, t)?;
        let t = self.norm_pw.forward(s, t)?;
        let t = s.g.gelu(t)?;
        let t = self.dw.forward(s, t)?;
        let t = self.norm_dw.forward(s, t)?;
        let f = s.g.gelu(t)?;
        let z = s.g.global_avg_pool(f)?;
        let z = self.se_squeeze.forward(s, z)?;
        let z = s.g.gelu(z)?;
        let z = self.se_excite.forward(s, z)?;
        let gate = s.g.sigmoid(z)?;
        Ok((f, gate))
    }

    /// `x + pw_out(F̃ ⊙ gate)`.
    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let (f, gate) = self.features_and_gate(s, x)?;
        let scaled = s.g.mul(f, gate)?;
        let y = self.pw_out.forward(s, scaled)?;
        s.g.add(x, y)
    }
}
