use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::gaussian::GaussianParams;

use super::UNIT_QUATERNION_TOL;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadrotorParams {
    /// kg
    pub mass: f64,
    /// m/s²
    pub gravity: f64,
    /// s
    pub dt: f64,
    pub noise: bool,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            gravity: 9.81,
            dt: 1.0 / 333.0,
            noise: true,
        }
    }
}

impl QuadrotorParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mass", self.mass), ("gravity", self.gravity), ("dt", self.dt)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }
}

/// Position (m), attitude quaternion (body to world) and velocity (m/s).
#[derive(Clone, Debug, PartialEq)]
pub struct QuadState {
    pub p: Vector3<f64>,
    pub q: Quaternion<f64>,
    pub v: Vector3<f64>,
}

impl QuadState {
    pub fn new(p: Vector3<f64>, q: Quaternion<f64>, v: Vector3<f64>) -> Result<Self> {
        let s = Self { p, q, v };
        s.check_unit()?;
        Ok(s)
    }

    pub fn hover(p: Vector3<f64>) -> Self {
        Self {
            p,
            q: Quaternion::identity(),
            v: Vector3::zeros(),
        }
    }

    pub fn check_unit(&self) -> Result<()> {
        let n = self.q.norm();
        if (n - 1.0).abs() > UNIT_QUATERNION_TOL || !n.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "quaternion norm {n} is not unit"
            )));
        }
        Ok(())
    }

    pub fn attitude(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::new_unchecked(self.q)
    }

    /// Body z-axis expressed in the world frame, `R(q) e_z`.
    pub fn thrust_axis(&self) -> Vector3<f64> {
        let (w, x, y, z) = (self.q.w, self.q.i, self.q.j, self.q.k);
        Vector3::new(
            2.0 * (x * z + w * y),
            2.0 * (y * z - w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// `e_zᵀ R(q) e_z`.
    pub fn uprightness(&self) -> f64 {
        1.0 - 2.0 * (self.q.i * self.q.i + self.q.j * self.q.j)
    }

    /// Applies a tangent-space residual `[δp, δθ, δv]`.
    pub fn perturbed(&self, d: &[f64]) -> Self {
        let dq = UnitQuaternion::from_scaled_axis(Vector3::new(d[3], d[4], d[5]));
        let q = (dq.into_inner() * self.q).normalize();
        Self {
            p: self.p + Vector3::new(d[0], d[1], d[2]),
            q,
            v: self.v + Vector3::new(d[6], d[7], d[8]),
        }
    }
}

/// Euler step on the manifold with inputs `u = [τ, ω_x, ω_y, ω_z]` (thrust in
/// N, world-frame angular rate in rad/s).
pub fn quad_euler_step(x: &QuadState, u: &[f64], params: &QuadrotorParams) -> Result<QuadState> {
    x.check_unit()?;
    if u.len() != 4 {
        return Err(Error::dim("quadrotor input", 4, u.len()));
    }
    let dt = params.dt;
    let thrust = u[0];
    let omega = Quaternion::new(0.0, u[1], u[2], u[3]);
    let acc = Vector3::new(0.0, 0.0, -params.gravity) + x.thrust_axis() * (thrust / params.mass);
    let q = (x.q + omega * x.q * (0.5 * dt)).normalize();
    Ok(QuadState {
        p: x.p + x.v * dt,
        q,
        v: x.v + acc * dt,
    })
}

/// Ground-effect residual: zero mean, covariance `I₉ (1 + 50 e^{−30 z²}) 10⁻⁵`.
pub fn quad_disturbance(z: f64) -> GaussianParams {
    let var = (1.0 + 50.0 * (-30.0 * z * z).exp()) * 1e-5;
    GaussianParams::diagonal(vec![0.0; 9], vec![var; 9]).expect("positive variance")
}
