//! Seeded procedural RGB textures: oriented colour gratings, soft colour
//! edges and smooth gradients, the kind of content where nearest-neighbour
//! demosaicking shows false colour.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cfa::RgbImage;
use crate::error::Result;
use crate::tensor::Tensor;

fn colour(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
}

/// One `3×h×w` texture with values in [0,1].
pub fn texture(seed: u64, h: usize, w: usize) -> Result<RgbImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = [rng.random_range(0.3..0.7), rng.random_range(0.3..0.7), rng.random_range(0.3..0.7)];
    let tilt = colour(&mut rng);

    // (angle, period in pixels, phase, colour, amplitude)
    let gratings: Vec<(f64, f64, f64, [f64; 3], f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.0..PI),
                rng.random_range(5.0..24.0),
                rng.random_range(0.0..2.0 * PI),
                colour(&mut rng),
                rng.random_range(0.05..0.15),
            )
        })
        .collect();
    // (angle, offset from centre, softness, colour)
    let edges: Vec<(f64, f64, f64, [f64; 3])> = (0..2)
        .map(|_| {
            (
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(-0.3..0.3) * h.min(w) as f64,
                rng.random_range(0.5..2.0),
                colour(&mut rng),
            )
        })
        .collect();

    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let t = Tensor::from_fn(&[3, h, w], |i| {
        let (c, y, x) = (i[0], i[1] as f64, i[2] as f64);
        let mut v = base[c] + 0.1 * tilt[c] * ((y - cy) / h as f64 + (x - cx) / w as f64);
        for &(a, period, phase, col, amp) in &gratings {
            let u = y * a.sin() + x * a.cos();
            v += amp * col[c] * (2.0 * PI * u / period + phase).sin();
        }
        for &(a, off, soft, col) in &edges {
            let d = (y - cy) * a.sin() + (x - cx) * a.cos() - off;
            v += 0.15 * col[c] * (d / soft).tanh();
        }
        v.clamp(0.0, 1.0)
    });
    RgbImage::new(t)
}

/// `count` textures with seeds derived from `seed`.
pub fn dataset(seed: u64, count: usize, h: usize, w: usize) -> Result<Vec<RgbImage>> {
    (0..count).map(|i| texture(seed.wrapping_mul(1_000_003).wrapping_add(i as u64), h, w)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textures_are_seeded_and_in_range() {
        let a = texture(3, 32, 48).unwrap();
        assert_eq!(a.tensor().shape(), &[3, 32, 48]);
        assert_eq!(a.tensor(), texture(3, 32, 48).unwrap().tensor());
        assert_ne!(a.tensor(), texture(4, 32, 48).unwrap().tensor());
        assert!(a.tensor().data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(dataset(1, 3, 16, 16).unwrap().len(), 3);
    }
}
