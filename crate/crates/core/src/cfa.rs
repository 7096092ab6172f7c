//! Bayer capture simulation and the RGGB rearrangements.
//!
//! The CFA phase is RGGB with red at 0-based position (0, 0):
//!
//! ```text
//! R  G1
//! G2 B
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Whether the input carries a noise-level map for joint denoising.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Demosaic,
    JointDenoise,
}

fn even_extents(op: &'static str, h: usize, w: usize) -> Result<()> {
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::contract(op, format!("spatial extents {h}×{w} must both be even")));
    }
    Ok(())
}

/// A 3×2H×2W image, nominally in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage(Tensor);

impl RgbImage {
    pub fn new(t: Tensor) -> Result<Self> {
        match *t.shape() {
            [3, h, w] => {
                even_extents("rgb image", h, w)?;
                Ok(RgbImage(t))
            }
            ref s => Err(Error::contract("rgb image", format!("expected 3×H×W, got {s:?}"))),
        }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    /// Values clamped to [0, 1], as written at I/O boundaries.
    pub fn clamped(&self) -> RgbImage {
        RgbImage(self.0.map(|v| v.clamp(0.0, 1.0)))
    }

    /// The `h`×`w` window with top-left corner (`y`, `x`).
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<RgbImage> {
        if y + h > self.height() || x + w > self.width() {
            return Err(Error::contract(
                "crop",
                format!("window {h}×{w} at ({y},{x}) exceeds {}×{}", self.height(), self.width()),
            ));
        }
        let src = &self.0;
        RgbImage::new(Tensor::from_fn(&[3, h, w], |i| src.at(&[i[0], y + i[1], x + i[2]])))
    }
}

/// A 1×2H×2W single-channel CFA image.
#[derive(Clone, Debug, PartialEq)]
pub struct BayerMosaic(Tensor);

impl BayerMosaic {
    pub fn new(t: Tensor) -> Result<Self> {
        match *t.shape() {
            [1, h, w] => {
                even_extents("bayer mosaic", h, w)?;
                Ok(BayerMosaic(t))
            }
            ref s => Err(Error::contract("bayer mosaic", format!("expected 1×H×W, got {s:?}"))),
        }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }
}

/// A 4×H×W subband stack in channel order [R, G1, G2, B].
#[derive(Clone, Debug, PartialEq)]
pub struct RggbStack(Tensor);

impl RggbStack {
    pub fn new(t: Tensor) -> Result<Self> {
        match t.shape() {
            [4, _, _] => Ok(RggbStack(t)),
            s => Err(Error::contract("rggb stack", format!("expected 4×H×W, got {s:?}"))),
        }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// Additive white Gaussian noise of standard deviation `sigma` (in [0, 1]
/// intensity units, i.e. an 8-bit level divided by 255).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

/// CFA colour index (0 = R, 1 = G, 2 = B) at mosaic position (y, x).
pub fn cfa_color(y: usize, x: usize) -> usize {
    match (y % 2, x % 2) {
        (0, 0) => 0,
        (1, 1) => 2,
        _ => 1,
    }
}

pub fn mosaic(rgb: &RgbImage) -> BayerMosaic {
    let t = rgb.tensor();
    let (h, w) = (rgb.height(), rgb.width());
    BayerMosaic(Tensor::from_fn(&[1, h, w], |i| t.at(&[cfa_color(i[1], i[2]), i[1], i[2]])))
}

pub fn pack_rggb(bayer: &BayerMosaic) -> RggbStack {
    let t = bayer.tensor();
    let (h, w) = (bayer.height() / 2, bayer.width() / 2);
    RggbStack(Tensor::from_fn(&[4, h, w], |i| t.at(&[0, 2 * i[1] + i[0] / 2, 2 * i[2] + i[0] % 2])))
}

pub fn unpack_rggb(stack: &RggbStack) -> BayerMosaic {
    let t = stack.tensor();
    let (h, w) = (t.shape()[1], t.shape()[2]);
    BayerMosaic(Tensor::from_fn(&[1, 2 * h, 2 * w], |i| {
        let (y, x) = (i[1], i[2]);
        t.at(&[(y % 2) * 2 + x % 2, y / 2, x / 2])
    }))
}

/// Channel order of the warm start: four copies of R, two of G1, two of G2,
/// four of B.
pub const WARM_START_SOURCE: [usize; 12] = [0, 0, 0, 0, 1, 1, 2, 2, 3, 3, 3, 3];

pub fn warm_start(stack: &RggbStack) -> Tensor {
    let t = stack.tensor();
    let (h, w) = (t.shape()[1], t.shape()[2]);
    Tensor::from_fn(&[12, h, w], |i| t.at(&[WARM_START_SOURCE[i[0]], i[1], i[2]]))
}

/// Nearest-neighbour demosaicking: each 2×2 cell takes its own R and B
/// samples everywhere, G1 on the top row and G2 on the bottom row.
pub fn demosaic_nn(bayer: &BayerMosaic) -> RgbImage {
    let t = bayer.tensor();
    let (h, w) = (bayer.height(), bayer.width());
    RgbImage(Tensor::from_fn(&[3, h, w], |i| {
        let (c, y, x) = (i[0], i[1], i[2]);
        let (y0, x0) = (y - y % 2, x - x % 2);
        match c {
            0 => t.at(&[0, y0, x0]),
            1 if y % 2 == 0 => t.at(&[0, y0, x0 + 1]),
            1 => t.at(&[0, y0 + 1, x0]),
            _ => t.at(&[0, y0 + 1, x0 + 1]),
        }
    }))
}

/// `bayer + n` with `n ~ N(0, σ²)` drawn from a ChaCha8 stream seeded by
/// `spec.seed`. σ = 0 returns the input unchanged.
pub fn add_gaussian_noise(bayer: &BayerMosaic, spec: NoiseSpec) -> Result<BayerMosaic> {
    if !(spec.sigma >= 0.0 && spec.sigma.is_finite()) {
        return Err(Error::contract("add_gaussian_noise", format!("sigma must be ≥ 0, got {}", spec.sigma)));
    }
    if spec.sigma == 0.0 {
        return Ok(bayer.clone());
    }
    let normal = Normal::new(0.0, spec.sigma).expect("validated sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let data = bayer.tensor().data().iter().map(|v| v + normal.sample(&mut rng)).collect();
    Ok(BayerMosaic(Tensor::new(bayer.tensor().shape(), data)?))
}

/// Interleaves a constant σ plane after each subband: [R, σ, G1, σ, G2, σ, B, σ].
pub fn attach_noise_map(stack: &RggbStack, sigma: f64, task: Task) -> Result<Tensor> {
    if task != Task::JointDenoise {
        return Err(Error::contract("attach_noise_map", "noise maps are only used in joint-denoise mode"));
    }
    let t = stack.tensor();
    let (h, w) = (t.shape()[1], t.shape()[2]);
    Ok(Tensor::from_fn(&[8, h, w], |i| if i[0] % 2 == 1 { sigma } else { t.at(&[i[0] / 2, i[1], i[2]]) }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb_const(r: f64, g: f64, b: f64, h: usize, w: usize) -> RgbImage {
        RgbImage::new(Tensor::from_fn(&[3, h, w], |i| [r, g, b][i[0]])).unwrap()
    }

    #[test]
    fn constant_image_tile() {
        let m = mosaic(&rgb_const(0.2, 0.4, 0.6, 4, 4));
        let d = m.tensor();
        for y in 0..4 {
            for x in 0..4 {
                let want = [[0.2, 0.4], [0.4, 0.6]][y % 2][x % 2];
                assert_eq!(d.at(&[0, y, x]), want);
            }
        }
    }

    #[test]
    fn pure_red_only_on_red_sites() {
        let m = mosaic(&rgb_const(1.0, 0.0, 0.0, 6, 4));
        for y in 0..6 {
            for x in 0..4 {
                assert_eq!(m.tensor().at(&[0, y, x]) != 0.0, y % 2 == 0 && x % 2 == 0);
            }
        }
    }

    #[test]
    fn odd_extents_rejected() {
        assert!(RgbImage::new(Tensor::zeros(&[3, 3, 4])).is_err());
        assert!(BayerMosaic::new(Tensor::zeros(&[1, 4, 5])).is_err());
    }

    #[test]
    fn pack_two_by_two() {
        let m = BayerMosaic::new(Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        let s = pack_rggb(&m);
        assert_eq!(s.tensor().shape(), &[4, 1, 1]);
        assert_eq!(s.tensor().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn warm_start_token() {
        let s = RggbStack::new(Tensor::new(&[4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        assert_eq!(
            warm_start(&s).data(),
            &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 4.0, 4.0]
        );
    }

    #[test]
    fn zero_sigma_is_identity_and_seeds_repeat() {
        let m = mosaic(&rgb_const(0.1, 0.5, 0.9, 8, 8));
        assert_eq!(add_gaussian_noise(&m, NoiseSpec { sigma: 0.0, seed: 3 }).unwrap(), m);
        let a = add_gaussian_noise(&m, NoiseSpec { sigma: 0.05, seed: 3 }).unwrap();
        let b = add_gaussian_noise(&m, NoiseSpec { sigma: 0.05, seed: 3 }).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, m);
        assert!(add_gaussian_noise(&m, NoiseSpec { sigma: -1.0, seed: 3 }).is_err());
    }

    #[test]
    fn noise_map_layout() {
        let s = RggbStack::new(Tensor::from_fn(&[4, 2, 3], |i| (i[0] + 1) as f64)).unwrap();
        let t = attach_noise_map(&s, 0.0, Task::JointDenoise).unwrap();
        assert_eq!(t.shape(), &[8, 2, 3]);
        for c in 0..8 {
            let want = if c % 2 == 1 { 0.0 } else { (c / 2 + 1) as f64 };
            assert!(t.data()[c * 6..(c + 1) * 6].iter().all(|&v| v == want));
        }
        assert!(attach_noise_map(&s, 0.0, Task::Demosaic).is_err());
    }
}
