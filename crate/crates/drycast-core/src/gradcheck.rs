//! Central-difference verification of backward rules.
//!
//! `grad_check` drives a scalar-valued function built on a fresh tape, once
//! for the analytic gradient and twice per probed coordinate for the numeric
//! estimate, and reports the worst relative disagreement. The relative error
//! of coordinate i is |analytic − numeric| / max(1, |analytic|, |numeric|).

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Default probe spacing for central differences.
pub const DEFAULT_EPS: f64 = 1e-5;

fn eval<F>(f: &F, point: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::NonScalarLoss {
            shape: tape.value(out).shape().to_vec(),
        });
    }
    Ok(tape.value(out).item())
}

/// Checks every coordinate of every input. Returns the max relative error.
pub fn grad_check<F>(f: F, point: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let coords: Vec<(usize, usize)> = point
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect();
    grad_check_coords(f, point, eps, &coords)
}

/// Checks a random subset of coordinates (up to `per_tensor` from each
/// input), for functions too large to probe exhaustively.
pub fn grad_check_sampled<F>(
    f: F,
    point: &[Tensor],
    eps: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut rng = Rng::derive(seed, "grad-check-probe");
    let mut coords = Vec::new();
    for (i, t) in point.iter().enumerate() {
        let n = t.numel();
        if n <= per_tensor {
            coords.extend((0..n).map(|j| (i, j)));
        } else {
            // Sample without replacement by shuffling the index space.
            let mut idx: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut idx);
            coords.extend(idx[..per_tensor].iter().map(|&j| (i, j)));
        }
    }
    grad_check_coords(f, point, eps, &coords)
}

fn grad_check_coords<F>(
    f: F,
    point: &[Tensor],
    eps: f64,
    coords: &[(usize, usize)],
) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    // Analytic pass: every input is a differentiable leaf.
    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|v| grads.get(*v).cloned().expect("leaf gradient"))
        .collect();
    drop(tape);

    let mut worst = 0.0_f64;
    let mut probe: Vec<Tensor> = point.to_vec();
    for &(i, j) in coords {
        let orig = probe[i].data()[j];
        probe[i].data_mut()[j] = orig + eps;
        let up = eval(&f, &probe)?;
        probe[i].data_mut()[j] = orig - eps;
        let down = eval(&f, &probe)?;
        probe[i].data_mut()[j] = orig;

        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i].data()[j];
        let rel = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}
