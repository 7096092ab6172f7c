//! Central finite-difference gradient checking.

use super::{Graph, Var};
use crate::error::Result;
use crate::tensor::{Precision, Tensor};

/// Comparison of one analytic partial derivative against its numeric estimate.
#[derive(Clone, Debug)]
pub struct Probe {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    /// `|a − n| / max(1, |a|, |n|)`.
    pub fn relative_error(&self) -> f64 {
        (self.analytic - self.numeric).abs() / 1f64.max(self.analytic.abs()).max(self.numeric.abs())
    }
}

/// Builds `f` on fresh high-precision graphs and compares analytic gradients
/// with central differences of step `h` at the given `(input, index)`
/// positions (all positions when `points` is `None`).
pub fn check<F>(f: F, inputs: &[Tensor], h: f64, points: Option<&[(usize, usize)]>) -> Result<Vec<Probe>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut g = Graph::inference(Precision::High);
        let vars: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).sum())
    };
    let mut g = Graph::new(Precision::High);
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let loss = g.sum(out)?;
    let grads = g.backward(loss)?;

    let all: Vec<(usize, usize)>;
    let points = match points {
        Some(p) => p,
        None => {
            all = inputs.iter().enumerate().flat_map(|(i, t)| (0..t.numel()).map(move |k| (i, k))).collect();
            &all
        }
    };
    let mut probes = Vec::with_capacity(points.len());
    let mut work = inputs.to_vec();
    for &(i, k) in points {
        let orig = work[i].data()[k];
        work[i].data_mut()[k] = orig + h;
        let up = eval(&work)?;
        work[i].data_mut()[k] = orig - h;
        let down = eval(&work)?;
        work[i].data_mut()[k] = orig;
        let analytic = grads.get(vars[i]).map_or(0.0, |t| t.data()[k]);
        probes.push(Probe { input: i, index: k, analytic, numeric: (up - down) / (2.0 * h) });
    }
    Ok(probes)
}

/// Largest relative error over `probes`.
pub fn worst(probes: &[Probe]) -> f64 {
    probes.iter().map(Probe::relative_error).fold(0.0, f64::max)
}
