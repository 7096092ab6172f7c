//! Training patch sampling. Augmentation acts on the RGB crop before
//! mosaicking, so every Bayer patch keeps the RGGB phase.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cfa::{add_gaussian_noise, mosaic, pack_rggb, BayerMosaic, NoiseSpec, RgbImage, Task};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of dihedral variants: four rotations, each optionally flipped.
pub const VARIANTS: usize = 8;

/// Applies variant `v`: `v % 4` counter-clockwise quarter turns, then a
/// horizontal flip when `v ≥ 4`. The input must be square.
pub fn augment(t: &Tensor, v: usize) -> Tensor {
    let s = t.shape();
    let (c, n) = (s[0], s[1]);
    debug_assert_eq!(s[1], s[2]);
    let (rot, flip) = (v % 4, v >= 4);
    Tensor::from_fn(&[c, n, n], |i| {
        let (ch, y, mut x) = (i[0], i[1], i[2]);
        if flip {
            x = n - 1 - x;
        }
        let (sy, sx) = match rot {
            0 => (y, x),
            1 => (x, n - 1 - y),
            2 => (n - 1 - y, n - 1 - x),
            _ => (n - 1 - x, y),
        };
        t.at(&[ch, sy, sx])
    })
}

/// A batch of `N` Bayer patches and their RGB targets over the same sensor region.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Observed mosaics, noisy in joint-denoise mode.
    pub mosaics: Vec<BayerMosaic>,
    /// Packed stacks, N×4×(p/2)×(p/2).
    pub stacks: Tensor,
    /// Clean targets, N×3×p×p.
    pub targets: Tensor,
    /// Per-patch noise level in joint-denoise mode.
    pub sigmas: Option<Vec<f64>>,
    pub variants: Vec<usize>,
}

impl Batch {
    /// A noise-free batch of whole images, unaugmented. All images must share extents.
    pub fn from_targets(images: &[RgbImage]) -> Result<Batch> {
        let first = images.first().ok_or_else(|| Error::contract("batch", "no images"))?;
        let (h, w) = (first.height(), first.width());
        if let Some(i) = images.iter().position(|im| im.height() != h || im.width() != w) {
            return Err(Error::contract("batch", format!("image #{i} differs from the {h}×{w} extents of #0")));
        }
        let n = images.len();
        let mosaics: Vec<BayerMosaic> = images.iter().map(mosaic).collect();
        let stacks = mosaics.iter().flat_map(|m| pack_rggb(m).into_tensor().into_data()).collect();
        let targets = images.iter().flat_map(|im| im.tensor().data().to_vec()).collect();
        Ok(Batch {
            mosaics,
            stacks: Tensor::new(&[n, 4, h / 2, w / 2], stacks)?,
            targets: Tensor::new(&[n, 3, h, w], targets)?,
            sigmas: None,
            variants: vec![0; n],
        })
    }
}

fn check_sources(images: &[RgbImage], patch: usize) -> Result<()> {
    if images.is_empty() {
        return Err(Error::contract("sample_batch", "dataset is empty"));
    }
    let small: Vec<String> = images
        .iter()
        .enumerate()
        .filter(|(_, im)| im.height() < patch || im.width() < patch)
        .map(|(i, im)| format!("#{i} ({}×{})", im.height(), im.width()))
        .collect();
    if !small.is_empty() {
        return Err(Error::contract(
            "sample_batch",
            format!("images smaller than the {patch}×{patch} patch: {}", small.join(", ")),
        ));
    }
    Ok(())
}

/// Draws `count` random crops of side `patch`, each with a uniformly chosen
/// variant; in joint-denoise mode σ ~ U[0, noise_max] per patch.
pub fn sample_patches(
    images: &[RgbImage],
    count: usize,
    patch: usize,
    task: Task,
    noise_max: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Batch> {
    check_sources(images, patch)?;
    if patch == 0 || patch % 2 != 0 {
        return Err(Error::contract("sample_batch", format!("patch size {patch} must be even and positive")));
    }
    let half = patch / 2;
    let mut mosaics = Vec::with_capacity(count);
    let mut stacks = Vec::with_capacity(count * 4 * half * half);
    let mut targets = Vec::with_capacity(count * 3 * patch * patch);
    let mut sigmas = Vec::with_capacity(count);
    let mut variants = Vec::with_capacity(count);
    for _ in 0..count {
        let im = &images[rng.random_range(0..images.len())];
        let y = rng.random_range(0..=im.height() - patch);
        let x = rng.random_range(0..=im.width() - patch);
        let v = rng.random_range(0..VARIANTS);
        let crop = im.crop(y, x, patch, patch)?;
        let target = RgbImage::new(augment(crop.tensor(), v))?;
        let mut bayer = mosaic(&target);
        if task == Task::JointDenoise {
            let sigma = if noise_max > 0.0 { rng.random_range(0.0..=noise_max) } else { 0.0 };
            bayer = add_gaussian_noise(&bayer, NoiseSpec { sigma, seed: rng.random() })?;
            sigmas.push(sigma);
        }
        stacks.extend_from_slice(pack_rggb(&bayer).tensor().data());
        targets.extend_from_slice(target.tensor().data());
        mosaics.push(bayer);
        variants.push(v);
    }
    Ok(Batch {
        mosaics,
        stacks: Tensor::new(&[count, 4, half, half], stacks)?,
        targets: Tensor::new(&[count, 3, patch, patch], targets)?,
        sigmas: (task == Task::JointDenoise).then_some(sigmas),
        variants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Tensor {
        Tensor::from_fn(&[1, n, n], |i| (i[1] * n + i[2]) as f64)
    }

    #[test]
    fn variants_are_the_eight_symmetries() {
        let t = ramp(3);
        let all: Vec<Tensor> = (0..VARIANTS).map(|v| augment(&t, v)).collect();
        for a in 0..VARIANTS {
            for b in a + 1..VARIANTS {
                assert_ne!(all[a], all[b], "{a} vs {b}");
            }
        }
        assert_eq!(all[0], t);
        // A quarter turn counter-clockwise moves the top-right corner to the top-left.
        assert_eq!(all[1].at(&[0, 0, 0]), t.at(&[0, 0, 2]));
        assert_eq!(augment(&augment(&t, 1), 3), t);
        assert_eq!(augment(&all[4], 4), t);
    }
}
