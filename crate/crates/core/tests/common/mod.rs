#![allow(dead_code)]

pub mod oracles;

use mfdp::autodiff::Var;
use mfdp::params::{Builder, ParamId, ParamStore, Session};
use mfdp::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

pub fn seeded_tensor(seed: u64, shape: &[usize]) -> Tensor {
    rand_tensor(&mut ChaCha8Rng::seed_from_u64(seed), shape)
}

/// Overwrites every parameter with uniform values in ±`scale`, so that
/// zero-initialised biases and tables take part in gradient checks.
pub fn randomize(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for leaf in store.leaves_mut() {
        for v in leaf.value.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

/// Adds a random input tensor to the store as a parameter so that the
/// parameter checker also covers input gradients.
pub fn input_leaf(b: &mut Builder<'_>, shape: &[usize]) -> Result<ParamId> {
    b.zeros("input", shape)
}

/// Multiplies `y` by fixed pseudo-random weights so each element contributes
/// a distinct amount to the summed scalar.
pub fn weighted(s: &mut Session<'_>, y: Var) -> Result<Var> {
    let w = seeded_tensor(99, s.g.shape(y));
    let wv = s.g.constant(w);
    s.g.mul(y, wv)
}

pub fn zero_params(store: &mut ParamStore, ids: &[ParamId]) {
    for &id in ids {
        store.leaf_mut(id).value.fill(0.0);
    }
}
