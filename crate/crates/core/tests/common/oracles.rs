//! Scalar-loop reference implementations of the image metrics.

use mfdp::loss::MS_SSIM_WEIGHTS;
use mfdp::Tensor;

pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

pub fn oracle_psnr(a: &Tensor, b: &Tensor) -> f64 {
    let mut s = 0.0;
    for i in 0..a.numel() {
        let d = a.data()[i] - b.data()[i];
        s += d * d;
    }
    10.0 * (1.0 / (s / a.numel() as f64)).log10()
}

fn gauss_1d(sigma: f64, r: i64) -> Vec<f64> {
    let v: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let z: f64 = v.iter().sum();
    v.iter().map(|x| x / z).collect()
}

/// Per-position SSIM maps of one plane by direct 11×11 weighted sums.
fn oracle_maps(x: &[Vec<f64>], y: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let k = gauss_1d(1.5, 5);
    let (h, w) = (x.len(), x[0].len());
    let (mut lum, mut cs) = (Vec::new(), Vec::new());
    for i in 0..=h - 11 {
        for j in 0..=w - 11 {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for u in 0..11 {
                for v in 0..11 {
                    let wt = k[u] * k[v];
                    let (a, b) = (x[i + u][j + v], y[i + u][j + v]);
                    mx += wt * a;
                    my += wt * b;
                    xx += wt * a * a;
                    yy += wt * b * b;
                    xy += wt * a * b;
                }
            }
            let (sx, sy, sxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
            lum.push((2.0 * mx * my + C1) / (mx * mx + my * my + C1));
            cs.push((2.0 * sxy + C2) / (sx + sy + C2));
        }
    }
    (lum, cs)
}

fn planes(t: &Tensor) -> Vec<Vec<Vec<f64>>> {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    (0..c).map(|ch| (0..h).map(|i| (0..w).map(|j| t.at(&[ch, i, j])).collect()).collect()).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn oracle_ssim(a: &Tensor, b: &Tensor) -> f64 {
    let (pa, pb) = (planes(a), planes(b));
    let mut all = Vec::new();
    for (x, y) in pa.iter().zip(&pb) {
        let (l, c) = oracle_maps(x, y);
        all.extend(l.iter().zip(&c).map(|(l, c)| l * c));
    }
    mean(&all)
}

fn pool(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (h, w) = (x.len() / 2, x[0].len() / 2);
    (0..h)
        .map(|i| {
            (0..w).map(|j| 0.25 * (x[2 * i][2 * j] + x[2 * i][2 * j + 1] + x[2 * i + 1][2 * j] + x[2 * i + 1][2 * j + 1])).collect()
        })
        .collect()
}

pub fn oracle_ms_ssim(a: &Tensor, b: &Tensor) -> f64 {
    let (mut pa, mut pb) = (planes(a), planes(b));
    let side = a.shape()[1].min(a.shape()[2]);
    let levels = (0..5).take_while(|&l| side >> l >= 11).count();
    let total: f64 = MS_SSIM_WEIGHTS[..levels].iter().sum();
    let mut result = 1.0;
    for level in 0..levels {
        let mut vals = Vec::new();
        for (x, y) in pa.iter().zip(&pb) {
            let (l, c) = oracle_maps(x, y);
            if level + 1 == levels {
                vals.extend(l.iter().zip(&c).map(|(l, c)| l * c));
            } else {
                vals.extend(c);
            }
        }
        result *= mean(&vals).max(1e-6).powf(MS_SSIM_WEIGHTS[level] / total);
        pa = pa.iter().map(|p| pool(p)).collect();
        pb = pb.iter().map(|p| pool(p)).collect();
    }
    result
}
