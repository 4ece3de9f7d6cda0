use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const DARE_TOL: f64 = 1e-12;
pub const DARE_MAX_ITER: usize = 100_000;
pub const DARE_RESIDUAL_TOL: f64 = 1e-9;

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn riccati_map(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let at = a.transpose();
    let bt_p = b.transpose() * p;
    let s = r + &bt_p * b;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("R + BᵀPB is singular".into()))?;
    let at_p = &at * p;
    let next = &at_p * a - &at_p * b * s_inv * &bt_p * a + q;
    Ok((&next + next.transpose()) * 0.5)
}

/// `‖P − (AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA + Q)‖_∞`.
pub fn dare_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<f64> {
    Ok(inf_norm(&(p - riccati_map(a, b, q, r, p)?)))
}

/// Solves the discrete algebraic Riccati equation by fixed-point iteration
/// from `P = Q`.
pub fn dare_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::dim("A columns", n, a.ncols()));
    }
    if b.nrows() != n {
        return Err(Error::dim("B rows", n, b.nrows()));
    }
    if q.nrows() != n || q.ncols() != n {
        return Err(Error::dim("Q", n, q.nrows()));
    }
    let m = b.ncols();
    if r.nrows() != m || r.ncols() != m {
        return Err(Error::dim("R", m, r.nrows()));
    }
    let mut p = q.clone();
    let mut step = f64::INFINITY;
    let mut iterations = 0;
    while iterations < DARE_MAX_ITER {
        iterations += 1;
        let next = riccati_map(a, b, q, r, &p)?;
        step = inf_norm(&(&next - &p));
        p = next;
        if !step.is_finite() {
            break;
        }
        // Absolute tolerance, floored at a few ulps of ‖P‖ so large solutions
        // cannot stall on round-off.
        if step <= DARE_TOL.max(4.0 * f64::EPSILON * inf_norm(&p)) {
            let residual = dare_residual(a, b, q, r, &p)?;
            if residual <= DARE_RESIDUAL_TOL {
                return Ok(p);
            }
        }
    }
    let residual = dare_residual(a, b, q, r, &p).unwrap_or(step);
    Err(Error::DareNotConverged {
        iterations,
        residual,
    })
}

/// LQR gain `K = (R + BᵀPB)⁻¹BᵀPA`, applied as `u = −K x`.
pub fn lqr_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let bt_p = b.transpose() * p;
    let s = r + &bt_p * b;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("R + BᵀPB is singular".into()))?;
    Ok(s_inv * bt_p * a)
}

/// `A = [[1, Δt], [0, 1]]`, `B = [½Δt², Δt]ᵀ`.
pub fn double_integrator_model(dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    (
        DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]),
        DMatrix::from_column_slice(2, 1, &[0.5 * dt * dt, dt]),
    )
}
