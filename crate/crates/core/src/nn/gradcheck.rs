//! Central finite differences, used as an oracle for the tape.

use crate::error::{Error, Result};

use super::mat::Mat;
use super::model::{DynamicsModel, GradBuffer};

/// Gradients below this magnitude are compared absolutely rather than relatively.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// Central-difference estimate `(L(p + eps) - L(p - eps)) / (2 eps)` for
/// every entry of every tensor in `params`.
pub fn finite_difference_params(
    params: &mut [Mat],
    mut loss_fn: impl FnMut(&[Mat]) -> Result<f64>,
    step: f64,
) -> Result<Vec<Mat>> {
    if !(step > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut grads: Vec<Mat> = params.iter().map(|p| Mat::zeros(p.rows(), p.cols())).collect();
    for t in 0..params.len() {
        for i in 0..params[t].len() {
            let orig = params[t].as_slice()[i];
            params[t].as_mut_slice()[i] = orig + step;
            let plus = loss_fn(params);
            params[t].as_mut_slice()[i] = orig - step;
            let minus = loss_fn(params);
            params[t].as_mut_slice()[i] = orig;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NumericalInstability(format!(
                    "non-finite loss when perturbing tensor {t} entry {i}"
                )));
            }
            grads[t].as_mut_slice()[i] = (plus - minus) / (2.0 * step);
        }
    }
    Ok(grads)
}

/// Finite-difference gradient of `loss_fn` with respect to the model's parameters.
pub fn finite_difference_grad(
    model: &DynamicsModel,
    mut loss_fn: impl FnMut(&DynamicsModel) -> Result<f64>,
    step: f64,
) -> Result<GradBuffer> {
    let mut probe = model.clone();
    let mut params = model.params().to_vec();
    let grads = finite_difference_params(
        &mut params,
        |p| {
            for (dst, src) in probe.params_mut().iter_mut().zip(p) {
                dst.as_mut_slice().copy_from_slice(src.as_slice());
            }
            loss_fn(&probe)
        },
        step,
    )?;
    Ok(GradBuffer { grads })
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest [`relative_error`] over corresponding entries.
pub fn max_relative_error(a: &[Mat], b: &[Mat], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.as_slice().iter().zip(y.as_slice()))
        .map(|(&x, &y)| relative_error(x, y, floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let mut p = vec![Mat::filled(1, 1, 3.0)];
        let g = finite_difference_params(&mut p, |p| Ok(p[0].scalar().powi(2)), 1e-5).unwrap();
        assert!((g[0].scalar() - 6.0).abs() < 1e-6);
        assert_eq!(p[0].scalar(), 3.0);
    }

    #[test]
    fn loss_independent_of_params_has_zero_gradient() {
        let mut p = vec![Mat::row_vector(&[1.0, 2.0])];
        let g = finite_difference_params(&mut p, |_| Ok(4.2), 1e-5).unwrap();
        assert!(g[0].as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut p = vec![Mat::filled(1, 1, 0.0)];
        let r = finite_difference_params(&mut p, |p| Ok(1.0 / p[0].scalar().abs().min(0.0)), 1e-5);
        assert!(matches!(r, Err(Error::NumericalInstability(_))));
    }
}
