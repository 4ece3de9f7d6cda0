use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector2, Vector3};

use crate::barrier::BarrierSpec;
use crate::error::{Error, Result};
use crate::sim::{SimState, System};

use super::solver::FilterProblem;

/// Coefficients of `g(u) = h(F(x, u) ⊕ m) − c − αh(x)` as a concave quadratic
/// in `u`.
///
/// The double-integrator composition is exact. For the quadrotor the altitude
/// terms are exact (affine in thrust) and the orientation penalty is
/// linearized in `ω` about zero.
pub fn build_constraint(
    spec: &BarrierSpec,
    system: &System,
    x: &SimState,
    u_nom: &[f64],
    mean: &[f64],
    c: f64,
) -> Result<FilterProblem> {
    if mean.len() != system.residual_dim() {
        return Err(Error::dim("residual mean", system.residual_dim(), mean.len()));
    }
    if u_nom.len() != system.input_dim() {
        return Err(Error::dim("nominal input", system.input_dim(), u_nom.len()));
    }
    let p = spec.p();
    let hx = spec.eval(x)?;
    let offset = spec.c() - c - spec.alpha() * hx;
    match (system, x) {
        (System::DoubleIntegrator(params), SimState::DoubleIntegrator { x: pos, v }) => {
            let dt = params.dt;
            let zeta0 = Vector2::new(pos + dt * v - spec.z0() + mean[0], v + mean[1]);
            let beta = Vector2::new(0.5 * dt * dt, dt);
            let q = -beta.dot(&(p * beta));
            let b = -2.0 * beta.dot(&(p * zeta0));
            let r = offset - zeta0.dot(&(p * zeta0));
            FilterProblem::new(
                DVector::from_column_slice(u_nom),
                DMatrix::from_element(1, 1, q),
                DVector::from_element(1, b),
                r,
            )
        }
        (System::Quadrotor(params), SimState::Quadrotor(s)) => {
            s.check_unit()?;
            let dt = params.dt;
            let axis = s.thrust_axis();
            let zeta0 = Vector2::new(
                s.p.z + dt * s.v.z + mean[2] - spec.z0(),
                s.v.z - dt * params.gravity + mean[8],
            );
            let beta = Vector2::new(0.0, dt * axis.z / params.mass);
            // Uprightness after the step: e_zᵀ R(δθ) R(q⁺) e_z with
            // R(q⁺) ≈ (I + Δt[ω]×) R(q).
            let tilt = UnitQuaternion::from_scaled_axis(Vector3::new(mean[3], mean[4], mean[5]));
            let a = tilt.inverse() * Vector3::z();
            let f0 = a.dot(&axis);
            let grad = axis.cross(&a) * dt;
            let lam = spec.lambda_pen();

            let mut q = DMatrix::zeros(4, 4);
            q[(0, 0)] = -beta.dot(&(p * beta));
            let b = DVector::from_column_slice(&[
                -2.0 * beta.dot(&(p * zeta0)),
                lam * grad.x,
                lam * grad.y,
                lam * grad.z,
            ]);
            let r = offset - zeta0.dot(&(p * zeta0)) - lam * (1.0 - f0);
            FilterProblem::new(DVector::from_column_slice(u_nom), q, b, r)
        }
        _ => Err(Error::InvalidArgument("state does not match the system".into())),
    }
}
