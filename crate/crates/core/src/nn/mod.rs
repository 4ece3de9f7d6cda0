//! Minimal feed-forward network machinery: dense layers, exact reverse-mode
//! gradients, Adam, finite-difference gradient checks and text persistence.

mod adam;
mod gradcheck;
pub mod io;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_flat, DEFAULT_STEP};
pub use mlp::{Activation, Gradients, Layer, LayerGradient, Mlp, Trace, Workspace};

use crate::error::{Error, Result};
use crate::gaussian::GaussianParams;

/// Interprets a `2n`-wide output as `n` means followed by `n` log-variances.
pub fn gaussian_head(params: &Mlp, input: &[f64]) -> Result<GaussianParams> {
    let out = params.forward(input)?;
    split_gaussian(&out)
}

pub fn split_gaussian(out: &[f64]) -> Result<GaussianParams> {
    if out.len() % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "gaussian head needs an even output width, got {}",
            out.len()
        )));
    }
    let n = out.len() / 2;
    let mean = out[..n].to_vec();
    let var = out[n..].iter().map(|lv| lv.exp()).collect();
    GaussianParams::diagonal(mean, var)
}
