//! Training objective: Gaussian-weighted L1 mixed with an MS-SSIM term.
//!
//! ```text
//! L = α · mean(G_σmax ∗ |p − t|) + (1 − α) · (1 − MS-SSIM_G(p, t))
//! ```
//!
//! `MS-SSIM_G` evaluates the structural terms at full resolution with one
//! Gaussian window per scale (the σ list), zero-padded so that it is defined
//! on small training patches. The evaluation metric in [`crate::metrics`]
//! uses the dyadic pyramid instead.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ConvSpec, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Standard MS-SSIM scale weights, finest scale first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Lower bound applied to per-scale similarities before exponentiation.
const SIMILARITY_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the L1 term; MS-SSIM gets `1 − alpha`.
    pub alpha: f64,
    /// Gaussian scales of the MS-SSIM term; the largest also smooths L1.
    pub sigma_list: Vec<f64>,
    pub ms_ssim_weights: Vec<f64>,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.16,
            sigma_list: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            ms_ssim_weights: MS_SSIM_WEIGHTS.to_vec(),
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("alpha", format!("{} is outside [0, 1]", self.alpha)));
        }
        if self.sigma_list.is_empty() || self.sigma_list.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::config("sigma_list", "needs at least one positive entry"));
        }
        if self.sigma_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("sigma_list", "must be strictly ascending"));
        }
        if self.ms_ssim_weights.len() != self.sigma_list.len() {
            return Err(Error::config(
                "ms_ssim_weights",
                format!("{} weights for {} scales", self.ms_ssim_weights.len(), self.sigma_list.len()),
            ));
        }
        if self.ms_ssim_weights.iter().any(|&w| w < 0.0) {
            return Err(Error::config("ms_ssim_weights", "weights must be non-negative"));
        }
        if !(self.data_range > 0.0) {
            return Err(Error::config("data_range", "must be positive"));
        }
        Ok(())
    }

    pub(crate) fn c1(&self) -> f64 {
        (self.k1 * self.data_range).powi(2)
    }

    pub(crate) fn c2(&self) -> f64 {
        (self.k2 * self.data_range).powi(2)
    }
}

/// `ceil(3σ)`.
pub fn gaussian_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil() as usize
}

/// Normalised 1-D Gaussian taps over `[−r, r]`, `r = ceil(3σ)`.
pub fn gaussian_kernel_1d(sigma: f64) -> Vec<f64> {
    let r = gaussian_radius(sigma) as isize;
    let taps: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|v| v / total).collect()
}

/// Normalised separable 2-D Gaussian of side `2·ceil(3σ) + 1`.
pub fn gaussian_kernel(sigma: f64) -> Tensor {
    let k = gaussian_kernel_1d(sigma);
    let n = k.len();
    Tensor::from_fn(&[n, n], |i| k[i[0]] * k[i[1]])
}

/// Separable blur of an M×1×H×W map; `same` zero-pads to keep the extents,
/// otherwise only fully covered positions are kept.
pub(crate) fn blur(g: &mut Graph, x: Var, taps: &[f64], same: bool) -> Result<Var> {
    let n = taps.len();
    let r = if same { n / 2 } else { 0 };
    let wv = g.constant(Tensor::new(&[1, 1, n, 1], taps.to_vec())?);
    let wh = g.constant(Tensor::new(&[1, 1, 1, n], taps.to_vec())?);
    let y = g.conv2d(x, wv, None, ConvSpec { stride: (1, 1), padding: (r, 0), groups: 1 })?;
    g.conv2d(y, wh, None, ConvSpec { stride: (1, 1), padding: (0, r), groups: 1 })
}

/// Luminance and contrast-structure maps of SSIM under one window.
pub(crate) fn ssim_maps(g: &mut Graph, x: Var, y: Var, taps: &[f64], same: bool, c1: f64, c2: f64) -> Result<(Var, Var)> {
    let mx = blur(g, x, taps, same)?;
    let my = blur(g, y, taps, same)?;
    let xx = g.mul(x, x)?;
    let yy = g.mul(y, y)?;
    let xy = g.mul(x, y)?;
    let exx = blur(g, xx, taps, same)?;
    let eyy = blur(g, yy, taps, same)?;
    let exy = blur(g, xy, taps, same)?;

    let mx2 = g.mul(mx, mx)?;
    let my2 = g.mul(my, my)?;
    let mxy = g.mul(mx, my)?;
    let sxx = g.sub(exx, mx2)?;
    let syy = g.sub(eyy, my2)?;
    let sxy = g.sub(exy, mxy)?;

    let num = g.mul_scalar(mxy, 2.0)?;
    let num = g.add_scalar(num, c1)?;
    let den = g.add(mx2, my2)?;
    let den = g.add_scalar(den, c1)?;
    let lum = g.div(num, den)?;

    let num = g.mul_scalar(sxy, 2.0)?;
    let num = g.add_scalar(num, c2)?;
    let den = g.add(sxx, syy)?;
    let den = g.add_scalar(den, c2)?;
    let cs = g.div(num, den)?;
    Ok((lum, cs))
}

/// `Π_j max(s_j, floor)^{w_j}` over per-scale scalar similarities.
pub(crate) fn combine_scales(g: &mut Graph, sims: &[Var], weights: &[f64]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (&s, &w) in sims.iter().zip(weights) {
        let v = g.add_scalar(s, -SIMILARITY_FLOOR)?;
        let v = g.relu(v)?;
        let v = g.add_scalar(v, SIMILARITY_FLOOR)?;
        let v = g.powf(v, w)?;
        acc = Some(match acc {
            None => v,
            Some(a) => g.mul(a, v)?,
        });
    }
    acc.ok_or_else(|| Error::contract("ms_ssim", "no scales"))
}

/// Flattens every leading axis into an M×1×H×W stack of planes.
pub(crate) fn as_planes(g: &mut Graph, x: Var, op: &'static str) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() < 2 {
        return Err(Error::contract(op, format!("expected at least 2 axes, got {shape:?}")));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let m: usize = shape[..shape.len() - 2].iter().product();
    g.reshape(x, &[m, 1, h, w])
}

/// The Gaussian-weighted L1 term: `mean(G_σmax ∗ |p − t|)`.
pub fn weighted_l1(g: &mut Graph, pred: Var, target: Var, cfg: &LossConfig) -> Result<Var> {
    check_pair(g, pred, target)?;
    let d = g.sub(pred, target)?;
    let d = g.abs(d)?;
    let d = as_planes(g, d, "mixed_loss")?;
    let sigma = cfg.sigma_list.iter().copied().fold(f64::MIN, f64::max);
    let smooth = blur(g, d, &gaussian_kernel_1d(sigma), true)?;
    g.mean(smooth)
}

/// Multi-scale SSIM with one Gaussian window per σ at full resolution.
pub fn gaussian_ms_ssim(g: &mut Graph, pred: Var, target: Var, cfg: &LossConfig) -> Result<Var> {
    check_pair(g, pred, target)?;
    let p = as_planes(g, pred, "mixed_loss")?;
    let t = as_planes(g, target, "mixed_loss")?;
    let last = cfg.sigma_list.len() - 1;
    let mut sims = Vec::with_capacity(cfg.sigma_list.len());
    for (j, &sigma) in cfg.sigma_list.iter().enumerate() {
        let (lum, cs) = ssim_maps(g, p, t, &gaussian_kernel_1d(sigma), true, cfg.c1(), cfg.c2())?;
        let map = if j == last { g.mul(lum, cs)? } else { cs };
        sims.push(g.mean(map)?);
    }
    combine_scales(g, &sims, &cfg.ms_ssim_weights)
}

/// The full objective as a differentiable scalar.
pub fn mixed_loss(g: &mut Graph, pred: Var, target: Var, cfg: &LossConfig) -> Result<Var> {
    let l1 = weighted_l1(g, pred, target, cfg)?;
    let ms = gaussian_ms_ssim(g, pred, target, cfg)?;
    let a = g.mul_scalar(l1, cfg.alpha)?;
    let b = g.mul_scalar(ms, -(1.0 - cfg.alpha))?;
    let b = g.add_scalar(b, 1.0 - cfg.alpha)?;
    g.add(a, b)
}

fn check_pair(g: &Graph, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::contract(
            "mixed_loss",
            format!("prediction {:?} and target {:?} differ in shape", g.shape(a), g.shape(b)),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Precision;

    #[test]
    fn kernel_is_normalised_and_symmetric() {
        for sigma in [0.5, 1.5, 8.0] {
            let k = gaussian_kernel(sigma);
            let n = k.shape()[0];
            assert_eq!(n, 2 * gaussian_radius(sigma) + 1);
            assert!((k.sum() - 1.0).abs() < 1e-12);
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(k.at(&[i, j]), k.at(&[n - 1 - i, j]));
                    assert_eq!(k.at(&[i, j]), k.at(&[i, n - 1 - j]));
                }
            }
        }
    }

    #[test]
    fn config_validation() {
        LossConfig::default().validate().unwrap();
        let bad = LossConfig { alpha: 1.5, ..LossConfig::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("`alpha`"));
        let bad = LossConfig { sigma_list: vec![1.0, 0.5, 2.0, 4.0, 8.0], ..LossConfig::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("`sigma_list`"));
        let bad = LossConfig { sigma_list: vec![1.0], ..LossConfig::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("`ms_ssim_weights`"));
    }

    #[test]
    fn loss_rejects_shape_mismatch() {
        let mut g = Graph::inference(Precision::High);
        let a = g.constant(Tensor::zeros(&[1, 3, 4, 4]));
        let b = g.constant(Tensor::zeros(&[1, 3, 4, 6]));
        assert!(mixed_loss(&mut g, a, b, &LossConfig::default()).is_err());
    }
}
