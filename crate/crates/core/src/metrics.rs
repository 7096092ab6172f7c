//! Evaluation metrics and reports.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5) over fully covered positions;
//! MS-SSIM adds a dyadic 2×2 average-pooling pyramid. Images with several
//! channels are compared plane by plane and averaged.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, Ordering};

use crate::autodiff::{ConvSpec, Graph};
use crate::error::{Error, Result};
use crate::loss::{as_planes, combine_scales, gaussian_kernel_1d, ssim_maps, LossConfig, MS_SSIM_WEIGHTS};
use crate::tensor::{Precision, Tensor};

pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_WINDOW: usize = 11;

fn check_pair(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::contract(op, format!("shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean squared error over every element.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_pair("mse", a, b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.numel() as f64)
}

/// `10·log10(1/MSE)` in dB for unit data range; identical inputs give
/// `f64::INFINITY`.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

fn plane_extents(op: &'static str, a: &Tensor) -> Result<(usize, usize)> {
    let s = a.shape();
    if s.len() < 2 {
        return Err(Error::contract(op, format!("expected at least 2 axes, got {s:?}")));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::contract(op, format!("{h}×{w} is smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window")));
    }
    Ok((h, w))
}

/// Mean SSIM over all planes.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_pair("ssim", a, b)?;
    plane_extents("ssim", a)?;
    let cfg = LossConfig::default();
    let mut g = Graph::inference(Precision::High);
    let (x, y) = (g.constant(a.clone()), g.constant(b.clone()));
    let x = as_planes(&mut g, x, "ssim")?;
    let y = as_planes(&mut g, y, "ssim")?;
    let (lum, cs) = ssim_maps(&mut g, x, y, &gaussian_kernel_1d(SSIM_SIGMA), false, cfg.c1(), cfg.c2())?;
    let map = g.mul(lum, cs)?;
    let m = g.mean(map)?;
    Ok(g.value(m).data()[0])
}

/// Number of pyramid levels that fit both extents, at most five.
pub fn ms_ssim_levels(h: usize, w: usize) -> usize {
    let mut levels = 0;
    while levels < MS_SSIM_WEIGHTS.len() && h.min(w) >> levels >= SSIM_WINDOW {
        levels += 1;
    }
    levels
}

static WARNED_LEVELS: AtomicBool = AtomicBool::new(false);

/// MS-SSIM with the standard weights. Images too small for five levels use
/// as many as fit, with the leading weights renormalised to sum to one.
pub fn ms_ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_pair("ms_ssim", a, b)?;
    let (h, w) = plane_extents("ms_ssim", a)?;
    let levels = ms_ssim_levels(h, w);
    let mut weights = MS_SSIM_WEIGHTS[..levels].to_vec();
    if levels < MS_SSIM_WEIGHTS.len() {
        if !WARNED_LEVELS.swap(true, Ordering::Relaxed) {
            log::warn!("ms_ssim: {h}×{w} images fit {levels} of 5 scales; weights renormalised");
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|v| *v /= total);
    }
    let cfg = LossConfig::default();
    let taps = gaussian_kernel_1d(SSIM_SIGMA);
    let mut g = Graph::inference(Precision::High);
    let (x, y) = (g.constant(a.clone()), g.constant(b.clone()));
    let mut x = as_planes(&mut g, x, "ms_ssim")?;
    let mut y = as_planes(&mut g, y, "ms_ssim")?;
    let pool = g.constant(Tensor::full(&[1, 1, 2, 2], 0.25));
    let mut sims = Vec::with_capacity(levels);
    for level in 0..levels {
        let (lum, cs) = ssim_maps(&mut g, x, y, &taps, false, cfg.c1(), cfg.c2())?;
        let map = if level + 1 == levels { g.mul(lum, cs)? } else { cs };
        sims.push(g.mean(map)?);
        if level + 1 < levels {
            x = g.conv2d(x, pool, None, ConvSpec::new(2, 0, 1))?;
            y = g.conv2d(y, pool, None, ConvSpec::new(2, 0, 1))?;
        }
    }
    let v = combine_scales(&mut g, &sims, &weights)?;
    Ok(g.value(v).data()[0])
}

/// Metrics of one evaluated image.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub dataset: String,
    pub config: String,
    /// Noise level in 8-bit units.
    pub sigma: f64,
    pub image: String,
    pub psnr: f64,
    pub ssim: f64,
    pub ms_ssim: f64,
}

/// Mean metrics of one (dataset, config, sigma) group.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricMean {
    pub dataset: String,
    pub config: String,
    pub sigma: f64,
    pub images: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub ms_ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

pub const CSV_HEADER: &str = "dataset,config,sigma,image,psnr,ssim,ms_ssim";

impl MetricReport {
    pub fn push(&mut self, row: MetricRow) {
        self.rows.push(row);
    }

    /// Arithmetic means per group, in order of first appearance.
    pub fn means(&self) -> Vec<MetricMean> {
        let mut out: Vec<MetricMean> = Vec::new();
        for r in &self.rows {
            let pos = out.iter().position(|m| m.dataset == r.dataset && m.config == r.config && m.sigma == r.sigma);
            let m = match pos {
                Some(i) => &mut out[i],
                None => {
                    out.push(MetricMean {
                        dataset: r.dataset.clone(),
                        config: r.config.clone(),
                        sigma: r.sigma,
                        images: 0,
                        psnr: 0.0,
                        ssim: 0.0,
                        ms_ssim: 0.0,
                    });
                    out.last_mut().expect("just pushed")
                }
            };
            m.images += 1;
            m.psnr += r.psnr;
            m.ssim += r.ssim;
            m.ms_ssim += r.ms_ssim;
        }
        for m in &mut out {
            let n = m.images as f64;
            m.psnr /= n;
            m.ssim /= n;
            m.ms_ssim /= n;
        }
        out
    }

    /// One row per image under [`CSV_HEADER`].
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let write = |w: &mut csv::Writer<Vec<u8>>| -> csv::Result<()> {
            w.write_record(CSV_HEADER.split(','))?;
            for r in &self.rows {
                let nums = [r.sigma, r.psnr, r.ssim, r.ms_ssim].map(|v| v.to_string());
                w.write_record([&r.dataset, &r.config, &nums[0], &r.image, &nums[1], &nums[2], &nums[3]])?;
            }
            Ok(())
        };
        write(&mut w).expect("writing to memory");
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 fields")
    }

    /// Group means as a markdown table.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| dataset | config | sigma | images | PSNR (dB) | SSIM | MS-SSIM |\n");
        s.push_str("|---|---|---:|---:|---:|---:|---:|\n");
        for m in self.means() {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {:.4} | {:.6} | {:.6} |",
                m.dataset, m.config, m.sigma, m.images, m.psnr, m.ssim, m.ms_ssim
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_of_uniform_offset() {
        let a = Tensor::from_fn(&[3, 8, 8], |i| 0.05 * (i[1] + i[2]) as f64 / 14.0);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert!(psnr(&a, &Tensor::zeros(&[3, 8, 6])).is_err());
    }

    #[test]
    fn level_count() {
        assert_eq!(ms_ssim_levels(176, 200), 5);
        assert_eq!(ms_ssim_levels(64, 64), 3);
        assert_eq!(ms_ssim_levels(10, 64), 0);
    }

    #[test]
    fn report_means_and_csv() {
        let mut r = MetricReport::default();
        for (i, p) in [30.0, 32.0, 40.0].into_iter().enumerate() {
            r.push(MetricRow {
                dataset: "set".into(),
                config: if i < 2 { "a".into() } else { "b,c".into() },
                sigma: 0.0,
                image: format!("img{i}"),
                psnr: p,
                ssim: 0.5,
                ms_ssim: 0.75,
            });
        }
        let m = r.means();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].psnr, 31.0);
        let csv = r.to_csv();
        assert!(csv.starts_with("dataset,config,sigma,image,psnr,ssim,ms_ssim\n"));
        assert!(csv.contains("set,\"b,c\",0,img2,40,0.5,0.75"));
        assert!(r.to_markdown().contains("| set | a | 0 | 2 | 31.0000 |"));
    }
}
