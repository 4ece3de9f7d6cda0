use crate::error::{Error, Result};

use super::mlp::{Gradients, Mlp};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Compares an analytic gradient against central finite differences over a
/// flat parameter vector. Returns `max_i |analytic_i − numeric_i| / max(1, |numeric_i|)`.
pub fn grad_check_flat<F>(mut loss: F, params: &[f64], step: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (value, analytic) = loss(params)?;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            term: "loss".into(),
        });
    }
    if analytic.len() != params.len() {
        return Err(Error::dim("analytic gradient", params.len(), analytic.len()));
    }
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        probe[i] = params[i] + step;
        let (plus, _) = loss(&probe)?;
        probe[i] = params[i] - step;
        let (minus, _) = loss(&probe)?;
        probe[i] = params[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite {
                term: format!("loss at perturbed parameter {i}"),
            });
        }
        let numeric = (plus - minus) / (2.0 * step);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// [`grad_check_flat`] for a loss over a single network.
pub fn grad_check<F>(mut loss: F, params: &Mlp, step: f64) -> Result<f64>
where
    F: FnMut(&Mlp) -> Result<(f64, Gradients)>,
{
    let mut scratch = params.clone();
    grad_check_flat(
        |flat| {
            scratch.set_flat_params(flat)?;
            let (v, g) = loss(&scratch)?;
            Ok((v, g.flat()))
        },
        &params.flat_params(),
        step,
    )
}
