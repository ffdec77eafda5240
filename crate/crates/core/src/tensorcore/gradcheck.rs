//! Central finite-difference verification of tape gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::params::{Bound, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor of [`relative_error`]. Central differences at
/// [`FD_STEP`] carry roundoff near `1e-11` on O(1) losses, so gradients below
/// `1e-7` cannot be resolved to a relative `1e-4` anyway.
pub const REL_ERROR_FLOOR: f64 = 1e-7;

/// Relative error used by every gradient check:
/// `|analytic - numeric| / max(REL_ERROR_FLOOR, |analytic| + |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(REL_ERROR_FLOOR)
}

fn eval_scalar<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let out = f(&mut tape, v)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::contract(format!(
            "grad_check needs a scalar-valued function, got shape {:?}",
            tape.shape(out)
        )));
    }
    Ok(tape.item(out))
}

/// Max relative error between the tape gradient of `f` at `x` and central
/// differences, over every coordinate of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    grad_check_coords(f, x, step, &coords)
}

/// As [`grad_check`], restricted to the listed flat coordinates.
pub fn grad_check_coords<F>(f: F, x: &Tensor, step: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let out = f(&mut tape, v)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::contract(format!(
            "grad_check needs a scalar-valued function, got shape {:?}",
            tape.shape(out)
        )));
    }
    let analytic = tape.backward(out)?.get_or_zeros(v, x.numel());

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for &c in coords {
        let orig = probe.data()[c];
        probe.data_mut()[c] = orig + step;
        let plus = eval_scalar(&f, &probe)?;
        probe.data_mut()[c] = orig - step;
        let minus = eval_scalar(&f, &probe)?;
        probe.data_mut()[c] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        worst = worst.max(relative_error(analytic[c], numeric));
    }
    Ok(worst)
}

/// Outcome of checking one named parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
}

/// Gradient check of a scalar function of a whole [`ParamStore`].
///
/// For every parameter tensor, up to `max_coords` flat coordinates (all of
/// them when the tensor is that small, otherwise a sample drawn with `seed`)
/// are compared against central differences.
pub fn grad_check_params<F>(
    store: &ParamStore,
    f: F,
    step: f64,
    max_coords: usize,
    seed: u64,
) -> Result<Vec<ParamCheck>>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let scalar = |tape: &Tape, out: Var| -> Result<f64> {
        if tape.value(out).numel() != 1 {
            return Err(Error::contract(format!(
                "grad_check needs a scalar-valued function, got shape {:?}",
                tape.shape(out)
            )));
        }
        Ok(tape.item(out))
    };
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let out = f(&mut tape, &bound)?;
    scalar(&tape, out)?;
    let analytic = bound.grads(&tape.backward(out)?, store);
    drop(tape);

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = s.bind_frozen(&mut tape);
        let out = f(&mut tape, &bound)?;
        scalar(&tape, out)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = store.clone();
    let mut report = Vec::with_capacity(store.len());
    for (k, id) in store.ids().enumerate() {
        let n = store.get(id).numel();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            let mut c = index::sample(&mut rng, n, max_coords).into_vec();
            c.sort_unstable();
            c
        };
        let mut worst = 0.0f64;
        for &c in &coords {
            let orig = probe.get(id).data()[c];
            probe.get_mut(id).data_mut()[c] = orig + step;
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[c] = orig - step;
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[c] = orig;
            worst = worst.max(relative_error(analytic[k][c], (plus - minus) / (2.0 * step)));
        }
        report.push(ParamCheck {
            name: store.name(id).to_string(),
            coords_checked: coords.len(),
            max_rel_error: worst,
        });
    }
    Ok(report)
}
