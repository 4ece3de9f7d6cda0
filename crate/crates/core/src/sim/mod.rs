//! Ground-truth systems: a double integrator with state-dependent Gaussian
//! residuals and a quadrotor with a ground-effect disturbance.

mod collect;
mod double_integrator;
mod kushner;
mod quadrotor;
mod rollout;

pub use collect::collect_dataset;
pub use double_integrator::{di_step, di_true_disturbance, DiParams};
pub use kushner::KushnerWalk;
pub use quadrotor::{quad_disturbance, quad_euler_step, QuadState, QuadrotorParams};
pub use rollout::{rollout, ControlOutcome, Controller, InfeasiblePolicy, Trajectory};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::GaussianParams;

/// Tolerance on `|‖q‖ − 1|` accepted at module boundaries.
pub const UNIT_QUATERNION_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub enum SimState {
    DoubleIntegrator { x: f64, v: f64 },
    Quadrotor(QuadState),
}

impl SimState {
    /// Flat layout: `[x, v]` or `[p (3), q (w, x, y, z), v (3)]`.
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            SimState::DoubleIntegrator { x, v } => vec![*x, *v],
            SimState::Quadrotor(s) => {
                let mut out = Vec::with_capacity(10);
                out.extend(s.p.iter());
                out.extend([s.q.w, s.q.i, s.q.j, s.q.k]);
                out.extend(s.v.iter());
                out
            }
        }
    }

    /// Altitude-like coordinate and its rate: `(x, v)` for the double
    /// integrator, `(p_z, v_z)` for the quadrotor.
    pub fn vertical(&self) -> (f64, f64) {
        match self {
            SimState::DoubleIntegrator { x, v } => (*x, *v),
            SimState::Quadrotor(s) => (s.p.z, s.v.z),
        }
    }

    pub fn as_quadrotor(&self) -> Result<&QuadState> {
        match self {
            SimState::Quadrotor(s) => Ok(s),
            _ => Err(Error::InvalidArgument("expected a quadrotor state".into())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SystemKind {
    DoubleIntegrator,
    Quadrotor,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum System {
    DoubleIntegrator(DiParams),
    Quadrotor(QuadrotorParams),
}

impl System {
    pub fn kind(&self) -> SystemKind {
        match self {
            System::DoubleIntegrator(_) => SystemKind::DoubleIntegrator,
            System::Quadrotor(_) => SystemKind::Quadrotor,
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            System::DoubleIntegrator(p) => p.dt,
            System::Quadrotor(p) => p.dt,
        }
    }

    pub fn noise_enabled(&self) -> bool {
        match self {
            System::DoubleIntegrator(p) => p.noise,
            System::Quadrotor(p) => p.noise,
        }
    }

    pub fn with_noise(self, noise: bool) -> Self {
        match self {
            System::DoubleIntegrator(p) => System::DoubleIntegrator(DiParams { noise, ..p }),
            System::Quadrotor(p) => System::Quadrotor(QuadrotorParams { noise, ..p }),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            System::DoubleIntegrator(_) => 2,
            System::Quadrotor(_) => 10,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            System::DoubleIntegrator(_) => 1,
            System::Quadrotor(_) => 4,
        }
    }

    pub fn residual_dim(&self) -> usize {
        match self {
            System::DoubleIntegrator(_) => 2,
            System::Quadrotor(_) => 9,
        }
    }

    pub fn state_from_vec(&self, v: &[f64]) -> Result<SimState> {
        if v.len() != self.state_dim() {
            return Err(Error::dim("state vector", self.state_dim(), v.len()));
        }
        Ok(match self {
            System::DoubleIntegrator(_) => SimState::DoubleIntegrator { x: v[0], v: v[1] },
            System::Quadrotor(_) => SimState::Quadrotor(QuadState::new(
                Vector3::new(v[0], v[1], v[2]),
                Quaternion::new(v[3], v[4], v[5], v[6]),
                Vector3::new(v[7], v[8], v[9]),
            )?),
        })
    }

    fn check_kind(&self, x: &SimState) -> Result<()> {
        match (self, x) {
            (System::DoubleIntegrator(_), SimState::DoubleIntegrator { .. })
            | (System::Quadrotor(_), SimState::Quadrotor(_)) => Ok(()),
            _ => Err(Error::InvalidArgument("state does not match the system".into())),
        }
    }

    /// Disturbance-free model step `F(x, u)`.
    pub fn nominal_step(&self, x: &SimState, u: &[f64]) -> Result<SimState> {
        self.check_kind(x)?;
        if u.len() != self.input_dim() {
            return Err(Error::dim("input", self.input_dim(), u.len()));
        }
        match (self, x) {
            (System::DoubleIntegrator(p), SimState::DoubleIntegrator { x, v }) => {
                let (nx, nv) = double_integrator::nominal(*x, *v, u[0], p.dt);
                Ok(SimState::DoubleIntegrator { x: nx, v: nv })
            }
            (System::Quadrotor(p), SimState::Quadrotor(s)) => {
                Ok(SimState::Quadrotor(quad_euler_step(s, u, p)?))
            }
            _ => unreachable!(),
        }
    }

    /// True residual distribution at `x`, whether or not noise is enabled.
    pub fn true_disturbance(&self, x: &SimState) -> Result<GaussianParams> {
        self.check_kind(x)?;
        match x {
            SimState::DoubleIntegrator { x, .. } => Ok(di_true_disturbance(*x)),
            SimState::Quadrotor(s) => Ok(quad_disturbance(s.p.z)),
        }
    }

    /// `x ⊕ d`: additive for the double integrator; for the quadrotor `d` is
    /// `[δp, δθ, δv]` and the rotation applies as `exp(δθ) ⊗ q`.
    pub fn apply_residual(&self, x: &SimState, d: &[f64]) -> Result<SimState> {
        self.check_kind(x)?;
        if d.len() != self.residual_dim() {
            return Err(Error::dim("residual", self.residual_dim(), d.len()));
        }
        Ok(match x {
            SimState::DoubleIntegrator { x, v } => SimState::DoubleIntegrator {
                x: x + d[0],
                v: v + d[1],
            },
            SimState::Quadrotor(s) => SimState::Quadrotor(s.perturbed(d)),
        })
    }

    /// `next ⊖ nominal`, the inverse of [`System::apply_residual`].
    pub fn residual_between(&self, next: &SimState, nominal: &SimState) -> Result<Vec<f64>> {
        self.check_kind(next)?;
        self.check_kind(nominal)?;
        Ok(match (next, nominal) {
            (SimState::DoubleIntegrator { x: a, v: va }, SimState::DoubleIntegrator { x: b, v: vb }) => {
                vec![a - b, va - vb]
            }
            (SimState::Quadrotor(a), SimState::Quadrotor(b)) => {
                let dp = a.p - b.p;
                let rel = UnitQuaternion::new_normalize(a.q) * UnitQuaternion::new_normalize(b.q).inverse();
                let dth = rel.scaled_axis();
                let dv = a.v - b.v;
                dp.iter().chain(dth.iter()).chain(dv.iter()).copied().collect()
            }
            _ => unreachable!(),
        })
    }

    /// One true step: `F(x, u) ⊕ d` with `d` drawn from the true disturbance
    /// (zero when noise is disabled). Returns the next state and `d`.
    pub fn step<R: Rng + ?Sized>(&self, x: &SimState, u: &[f64], rng: &mut R) -> Result<(SimState, Vec<f64>)> {
        let nominal = self.nominal_step(x, u)?;
        if !self.noise_enabled() {
            return Ok((nominal, vec![0.0; self.residual_dim()]));
        }
        let d = self.true_disturbance(x)?.sample(rng);
        Ok((self.apply_residual(&nominal, &d)?, d))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadrotor_residual_round_trips() {
        let sys = System::Quadrotor(QuadrotorParams::default());
        let q = UnitQuaternion::from_euler_angles(0.2, -0.1, 0.7).into_inner();
        let x = SimState::Quadrotor(
            QuadState::new(Vector3::new(0.1, 0.2, 0.9), q, Vector3::new(0.0, 0.3, -0.2)).unwrap(),
        );
        let d = [1e-3, -2e-3, 5e-4, 0.01, -0.02, 0.005, 0.003, 0.0, -0.004];
        let y = sys.apply_residual(&x, &d).unwrap();
        let back = sys.residual_between(&y, &x).unwrap();
        for (a, b) in back.iter().zip(&d) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn vector_layout_round_trips() {
        let sys = System::Quadrotor(QuadrotorParams::default());
        let x = QuadState::hover(Vector3::new(1.0, 2.0, 3.0));
        let s = SimState::Quadrotor(x);
        assert_eq!(sys.state_from_vec(&s.to_vec()).unwrap(), s);
        assert!(sys.state_from_vec(&[0.0; 3]).is_err());
    }

    #[test]
    fn mismatched_state_kind_is_rejected() {
        let sys = System::DoubleIntegrator(DiParams::default());
        let x = SimState::Quadrotor(QuadState::hover(Vector3::zeros()));
        assert!(sys.nominal_step(&x, &[0.0]).is_err());
    }

    #[test]
    fn seeded_steps_are_reproducible() {
        let sys = System::DoubleIntegrator(DiParams::default());
        let x = SimState::DoubleIntegrator { x: 0.3, v: -0.1 };
        let a = sys.step(&x, &[0.5], &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = sys.step(&x, &[0.5], &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
    }
}
