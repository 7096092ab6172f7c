//! Named parameter storage, deterministic initialisation and graph binding.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::gradcheck::Probe;
use crate::autodiff::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

/// A learnable tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLeaf {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    leaves: Vec<ParamLeaf>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: String, value: Tensor) -> Result<ParamId> {
        if self.by_name.contains_key(&name) {
            return Err(Error::contract("params", format!("duplicate parameter name `{name}`")));
        }
        let id = self.leaves.len();
        self.by_name.insert(name.clone(), id);
        let grad = Tensor::zeros(value.shape());
        self.leaves.push(ParamLeaf { name, value, grad });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn leaf(&self, id: ParamId) -> &ParamLeaf {
        &self.leaves[id.0]
    }

    pub fn leaf_mut(&mut self, id: ParamId) -> &mut ParamLeaf {
        &mut self.leaves[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn get(&self, name: &str) -> Option<&ParamLeaf> {
        self.id(name).map(|id| self.leaf(id))
    }

    pub fn leaves(&self) -> &[ParamLeaf] {
        &self.leaves
    }

    pub fn leaves_mut(&mut self) -> &mut [ParamLeaf] {
        &mut self.leaves
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.leaves.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.leaves.iter().map(|l| l.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for l in &mut self.leaves {
            l.grad.fill(0.0);
        }
    }

    /// Adds the gradients of every parameter bound in `bindings`.
    pub fn accumulate(&mut self, bindings: &Bindings, grads: &Gradients) {
        for (leaf, var) in self.leaves.iter_mut().zip(&bindings.0) {
            if let Some(g) = var.and_then(|v| grads.get(v)) {
                leaf.grad.add_assign(g);
            }
        }
    }
}

/// Deterministic parameter initialiser with hierarchical names.
pub struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Builder { store, rng, prefix: String::new() }
    }

    /// Builder whose parameter names are prefixed with `name.`.
    pub fn child(&mut self, name: &str) -> Builder<'_> {
        Builder { store: self.store, rng: self.rng, prefix: format!("{}{name}.", self.prefix) }
    }

    fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        self.store.insert(format!("{}{name}", self.prefix), value)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.add(name, Tensor::full(shape, 1.0))
    }

    /// Uniform on ±1/√fan_in where fan_in is the product of all but the
    /// leading extent.
    pub fn fan_in_uniform(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let fan_in: usize = shape[1..].iter().product();
        let bound = 1.0 / (fan_in as f64).sqrt();
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| rng.random_range(-bound..bound));
        self.add(name, t)
    }

    /// Normal(0, std²) truncated to ±2·std by resampling.
    pub fn trunc_normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<ParamId> {
        let normal = Normal::new(0.0, std).map_err(|e| Error::contract("init", e.to_string()))?;
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 * std {
                break v;
            }
        });
        self.add(name, t)
    }
}

/// Builds a fresh store with a seeded builder.
pub fn build_store<T>(seed: u64, f: impl FnOnce(&mut Builder<'_>) -> Result<T>) -> Result<(ParamStore, T)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = f(&mut Builder::new(&mut store, &mut rng))?;
    Ok((store, out))
}

/// Graph variables of the parameters used in one forward pass.
#[derive(Debug, Default)]
pub struct Bindings(Vec<Option<Var>>);

impl Bindings {
    pub fn var(&self, id: ParamId) -> Option<Var> {
        self.0.get(id.0).copied().flatten()
    }
}

/// A graph plus lazy parameter binding: each parameter enters the tape as a
/// leaf the first time a layer asks for it.
pub struct Session<'s> {
    pub g: Graph,
    store: &'s ParamStore,
    vars: Vec<Option<Var>>,
    trainable: bool,
}

impl<'s> Session<'s> {
    /// A session that records gradients for parameters.
    pub fn training(store: &'s ParamStore, precision: Precision) -> Self {
        Session { g: Graph::new(precision), store, vars: vec![None; store.len()], trainable: true }
    }

    /// A session for evaluation only.
    pub fn inference(store: &'s ParamStore, precision: Precision) -> Self {
        Session { g: Graph::inference(precision), store, vars: vec![None; store.len()], trainable: false }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let value = self.store.leaf(id).value.clone();
        let v = if self.trainable { self.g.leaf(value) } else { self.g.constant(value) };
        self.vars[id.0] = Some(v);
        v
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn into_parts(self) -> (Graph, Bindings) {
        (self.g, Bindings(self.vars))
    }
}

/// Finite-difference check of parameter gradients: `f` builds a forward pass
/// whose summed output is differentiated. `points` are `(leaf index, element)`.
pub fn check_params<F>(store: &ParamStore, f: F, points: &[(usize, usize)], h: f64) -> Result<Vec<Probe>>
where
    F: Fn(&mut Session<'_>) -> Result<Var>,
{
    let mut s = Session::training(store, Precision::High);
    let out = f(&mut s)?;
    let loss = s.g.sum(out)?;
    let grads = s.g.backward(loss)?;
    let (_, bindings) = s.into_parts();

    let mut work = store.clone();
    let eval = |work: &ParamStore| -> Result<f64> {
        let mut s = Session::inference(work, Precision::High);
        let out = f(&mut s)?;
        Ok(s.g.value(out).sum())
    };
    let mut probes = Vec::with_capacity(points.len());
    for &(leaf, k) in points {
        let id = ParamId(leaf);
        let orig = work.leaf(id).value.data()[k];
        work.leaf_mut(id).value.data_mut()[k] = orig + h;
        let up = eval(&work)?;
        work.leaf_mut(id).value.data_mut()[k] = orig - h;
        let down = eval(&work)?;
        work.leaf_mut(id).value.data_mut()[k] = orig;
        let analytic = bindings.var(id).and_then(|v| grads.get(v)).map_or(0.0, |g| g.data()[k]);
        probes.push(Probe { input: leaf, index: k, analytic, numeric: (up - down) / (2.0 * h) });
    }
    Ok(probes)
}

/// Every `(leaf, element)` pair of a store, for exhaustive checks on small blocks.
pub fn all_points(store: &ParamStore) -> Vec<(usize, usize)> {
    store.leaves().iter().enumerate().flat_map(|(i, l)| (0..l.value.numel()).map(move |k| (i, k))).collect()
}
