//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::Rng;

use super::{no_grad, Tensor};

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Max over elements of `|analytic - numeric| / max(1, |analytic|, |numeric|)`
/// for the gradient of scalar `f` at `x`, numeric gradients taken as
/// `(f(x+h) - f(x-h)) / 2h`.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, h: f64) -> Result<f64>
where
    T: Real,
    F: Fn(&Tensor<T>) -> Result<Tensor<T>>,
{
    let leaf = x.to_param();
    grad_check_params(|| f(&leaf), std::slice::from_ref(&leaf), h, None)
}

/// Finite-difference check of the gradient of `f()` with respect to tensors
/// it closes over. The tensors are perturbed in place and restored.
///
/// With `max_coords = Some(k)`, at most `k` coordinates per tensor are
/// probed, chosen by a fixed-seed draw.
pub fn grad_check_params<T, F>(
    f: F,
    params: &[Tensor<T>],
    h: f64,
    max_coords: Option<usize>,
) -> Result<f64>
where
    T: Real,
    F: Fn() -> Result<Tensor<T>>,
{
    if !(h > 0.0) {
        return Err(Error::invalid(format!("finite-difference step {h} must be positive")));
    }
    if params.iter().any(|p| !p.requires_grad()) {
        return Err(Error::invalid("grad_check needs tensors that require grad"));
    }
    let eval = || -> Result<f64> {
        let _g = no_grad();
        let y = f()?;
        if y.numel() != 1 {
            return Err(Error::NonScalarLoss(y.shape().to_vec()));
        }
        Ok(y.item()?.f64())
    };

    let first = eval()?;
    let second = eval()?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic(format!(
            "two evaluations gave {first} and {second}"
        )));
    }

    params.iter().for_each(Tensor::zero_grad);
    let y = f()?;
    // a loss independent of every parameter has a zero analytic gradient
    if y.requires_grad() {
        y.backward()?;
    }

    let mut rng = Rng::seed_from_u64(0x6772_6164);
    let mut worst = 0.0f64;
    for p in params {
        let analytic = p.grad().unwrap_or_else(|| vec![T::zero(); p.numel()]);
        let n = p.numel();
        let coords: Vec<usize> = match max_coords {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = p.data()[i];
            p.data_mut()[i] = T::of(orig.f64() + h);
            let up = eval();
            p.data_mut()[i] = T::of(orig.f64() - h);
            let down = eval();
            p.data_mut()[i] = orig;
            let numeric = (up? - down?) / (2.0 * h);
            worst = worst.max(relative_error(analytic[i].f64(), numeric));
        }
    }
    Ok(worst)
}
