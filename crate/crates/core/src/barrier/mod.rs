//! Barrier functions, their certificates and exit-probability bounds.

mod dare;
mod probe;

pub use dare::{dare_residual, dare_solve, double_integrator_model, lqr_gain, DARE_RESIDUAL_TOL};
pub use probe::{feasibility_probe, ProbeSettings};

use nalgebra::{DMatrix, Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::sim::{SimState, System};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BarrierKind {
    /// `h = C − ζᵀPζ` on a double-integrator state, `ζ = [x − z0, v]`.
    Quadratic,
    /// `h = C − ζᵀPζ − λ(1 − e_zᵀR(q)e_z)` on a quadrotor state,
    /// `ζ = [p_z − z0, v_z]`.
    QuadrotorOrientation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BarrierSpec {
    kind: BarrierKind,
    p: Matrix2<f64>,
    c: f64,
    z0: f64,
    lambda_pen: f64,
    alpha: f64,
}

impl BarrierSpec {
    pub fn new(kind: BarrierKind, p: Matrix2<f64>, c: f64, z0: f64, lambda_pen: f64, alpha: f64) -> Result<Self> {
        if (p - p.transpose()).amax() > 1e-12 * p.amax().max(1.0) {
            return Err(Error::InvalidArgument("P must be symmetric".into()));
        }
        if p.cholesky().is_none() {
            return Err(Error::InvalidArgument("P must be positive definite".into()));
        }
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidArgument("C must be positive".into()));
        }
        if !(lambda_pen >= 0.0) || !lambda_pen.is_finite() {
            return Err(Error::InvalidArgument("orientation penalty must be nonnegative".into()));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("α = {alpha} must lie in (0, 1)")));
        }
        if !z0.is_finite() {
            return Err(Error::InvalidArgument("z0 must be finite".into()));
        }
        let lambda_pen = if kind == BarrierKind::Quadratic { 0.0 } else { lambda_pen };
        Ok(Self {
            kind,
            p: (p + p.transpose()) * 0.5,
            c,
            z0,
            lambda_pen,
            alpha,
        })
    }

    /// Synthesizes `P` from the DARE of the `[z − z0, v]` double integrator
    /// sampled at `dt` with weights `Q = q_weight·I`, `R = r_weight`.
    pub fn from_dare(
        kind: BarrierKind,
        dt: f64,
        q_weight: f64,
        r_weight: f64,
        c: f64,
        z0: f64,
        lambda_pen: f64,
        alpha: f64,
    ) -> Result<Self> {
        let (a, b) = double_integrator_model(dt);
        let q = DMatrix::identity(2, 2) * q_weight;
        let r = DMatrix::from_element(1, 1, r_weight);
        let p = dare_solve(&a, &b, &q, &r)?;
        Self::new(kind, Matrix2::from_iterator(p.iter().copied()), c, z0, lambda_pen, alpha)
    }

    pub fn kind(&self) -> BarrierKind {
        self.kind
    }

    pub fn p(&self) -> &Matrix2<f64> {
        &self.p
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn z0(&self) -> f64 {
        self.z0
    }

    pub fn lambda_pen(&self) -> f64 {
        self.lambda_pen
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.kind, self.p, self.c, self.z0, self.lambda_pen, alpha)
    }

    /// `M = sup h = C`.
    pub fn upper_bound(&self) -> f64 {
        self.c
    }

    /// Bound on the spectral norm of the Hessian of `h` in the residual
    /// coordinates: `2‖P‖₂`, plus `λ_pen` for the orientation penalty whose
    /// curvature under tangent perturbations has unit norm at most.
    pub fn hessian_bound(&self) -> f64 {
        let top = self.p.symmetric_eigenvalues().max();
        2.0 * top + self.lambda_pen
    }

    pub fn zeta(&self, x: &SimState) -> Result<Vector2<f64>> {
        self.check_kind(x)?;
        let (z, v) = x.vertical();
        Ok(Vector2::new(z - self.z0, v))
    }

    fn check_kind(&self, x: &SimState) -> Result<()> {
        match (self.kind, x) {
            (BarrierKind::Quadratic, SimState::DoubleIntegrator { .. })
            | (BarrierKind::QuadrotorOrientation, SimState::Quadrotor(_)) => Ok(()),
            _ => Err(Error::InvalidArgument(format!(
                "a {:?} barrier cannot evaluate this state",
                self.kind
            ))),
        }
    }

    /// `C − ζᵀPζ − λ(1 − upright)`.
    #[inline]
    pub fn eval_parts(&self, zeta: &Vector2<f64>, upright: f64) -> f64 {
        self.c - zeta.dot(&(self.p * zeta)) - self.lambda_pen * (1.0 - upright)
    }

    pub fn eval(&self, x: &SimState) -> Result<f64> {
        let zeta = self.zeta(x)?;
        let upright = match x {
            SimState::Quadrotor(s) => {
                s.check_unit()?;
                s.uprightness()
            }
            _ => 1.0,
        };
        Ok(self.eval_parts(&zeta, upright))
    }
}

/// Upper bound on the probability of leaving the safe set within `k` steps:
/// `1 − (h0/M)·αᵏ`, clamped to `[0, 1]`. Returns 1 for `h0 < 0`.
pub fn exit_prob_bound(h0: f64, m: f64, alpha: f64, k: usize) -> Result<f64> {
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::InvalidArgument("M must be positive".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("α = {alpha} must lie in (0, 1)")));
    }
    if h0.is_nan() {
        return Err(Error::NonFinite { term: "h0".into() });
    }
    if h0 < 0.0 {
        return Ok(1.0);
    }
    if h0 > m {
        return Err(Error::InvalidArgument(format!("h0 = {h0} exceeds M = {m}")));
    }
    let k = i32::try_from(k).unwrap_or(i32::MAX);
    Ok((1.0 - (h0 / m) * alpha.powi(k)).clamp(0.0, 1.0))
}

/// `h(F(x, u) ⊕ μ̄) − (λ_max/2)·tr(Σ̄) − α·h(x)`; the relaxed expectation
/// constraint holds iff this is nonnegative.
pub fn jensen_margin(
    spec: &BarrierSpec,
    system: &System,
    x: &SimState,
    u: &[f64],
    mean: &[f64],
    cov: &DMatrix<f64>,
) -> Result<f64> {
    let l = system.residual_dim();
    if cov.nrows() != l || cov.ncols() != l {
        return Err(Error::dim("residual covariance", l, cov.nrows()));
    }
    let next = system.apply_residual(&system.nominal_step(x, u)?, mean)?;
    Ok(spec.eval(&next)? - 0.5 * spec.hessian_bound() * cov.trace() - spec.alpha * spec.eval(x)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{DiParams, QuadState, QuadrotorParams};
    use nalgebra::{UnitQuaternion, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quad_spec() -> BarrierSpec {
        BarrierSpec::new(
            BarrierKind::QuadrotorOrientation,
            Matrix2::new(2.0, 0.3, 0.3, 1.0),
            1.0,
            0.5,
            0.25,
            0.9,
        )
        .unwrap()
    }

    #[test]
    fn level_hover_at_target_gives_c() {
        let s = SimState::Quadrotor(QuadState::hover(Vector3::new(0.0, 0.0, 0.5)));
        assert_eq!(quad_spec().eval(&s).unwrap(), 1.0);
    }

    #[test]
    fn sideways_attitude_pays_full_penalty() {
        let q = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::FRAC_PI_2);
        let mut x = QuadState::hover(Vector3::new(0.0, 0.0, 0.5));
        x.q = q.into_inner();
        let h = quad_spec().eval(&SimState::Quadrotor(x)).unwrap();
        assert!((h - 0.75).abs() < 1e-15);
    }

    #[test]
    fn quadratic_matches_scalar_expansion() {
        let spec = BarrierSpec::new(BarrierKind::Quadratic, Matrix2::new(3.0, -0.5, -0.5, 2.0), 4.0, 1.0, 0.0, 0.5)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let (x, v) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let z = x - 1.0;
            let expected = 4.0 - (3.0 * z * z - 2.0 * 0.5 * z * v + 2.0 * v * v);
            let h = spec.eval(&SimState::DoubleIntegrator { x, v }).unwrap();
            assert!((h - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn non_unit_quaternion_is_rejected() {
        let mut x = QuadState::hover(Vector3::zeros());
        x.q = x.q * 1.001;
        assert!(quad_spec().eval(&SimState::Quadrotor(x)).is_err());
    }

    #[test]
    fn state_kind_must_match() {
        assert!(quad_spec().eval(&SimState::DoubleIntegrator { x: 0.0, v: 0.0 }).is_err());
    }

    #[test]
    fn hessian_bound_examples() {
        let mk = |p| BarrierSpec::new(BarrierKind::Quadratic, p, 1.0, 0.0, 0.0, 0.5).unwrap();
        assert!((mk(Matrix2::identity()).hessian_bound() - 2.0).abs() < 1e-12);
        assert!((mk(Matrix2::new(4.0, 0.0, 0.0, 1.0)).hessian_bound() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let p = Matrix2::identity();
        assert!(BarrierSpec::new(BarrierKind::Quadratic, p, 1.0, 0.0, 0.0, 1.0).is_err());
        assert!(BarrierSpec::new(BarrierKind::Quadratic, p, 0.0, 0.0, 0.0, 0.5).is_err());
        assert!(BarrierSpec::new(BarrierKind::Quadratic, Matrix2::new(1.0, 2.0, 2.0, 1.0), 1.0, 0.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn exit_bound_examples() {
        assert_eq!(exit_prob_bound(2.0, 2.0, 0.5, 0).unwrap(), 0.0);
        assert!((exit_prob_bound(1.0, 2.0, 0.5, 1).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(exit_prob_bound(-0.1, 2.0, 0.5, 3).unwrap(), 1.0);
        assert!(exit_prob_bound(2.1, 2.0, 0.5, 3).is_err());
    }

    #[test]
    fn jensen_margin_reduces_to_deterministic_margin() {
        let sys = System::DoubleIntegrator(DiParams::default());
        let spec = BarrierSpec::from_dare(BarrierKind::Quadratic, 0.01, 1.0, 1.0, 1.0, 0.0, 0.0, 0.9).unwrap();
        let x = SimState::DoubleIntegrator { x: 0.02, v: -0.1 };
        let u = [0.3];
        let m0 = jensen_margin(&spec, &sys, &x, &u, &[0.0, 0.0], &DMatrix::zeros(2, 2)).unwrap();
        let direct = spec.eval(&sys.nominal_step(&x, &u).unwrap()).unwrap() - 0.9 * spec.eval(&x).unwrap();
        assert!((m0 - direct).abs() < 1e-12);
        let s2 = 0.01;
        let m1 = jensen_margin(&spec, &sys, &x, &u, &[0.0, 0.0], &(DMatrix::identity(2, 2) * s2)).unwrap();
        assert!((m0 - m1 - spec.hessian_bound() * s2).abs() < 1e-12);
    }

    #[test]
    fn quadrotor_disturbance_within_upper_bound() {
        let spec = quad_spec();
        let sys = System::Quadrotor(QuadrotorParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let q = UnitQuaternion::from_euler_angles(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 0.0);
            let x = QuadState::new(
                Vector3::new(0.0, 0.0, rng.random_range(-2.0..2.0)),
                q.into_inner(),
                Vector3::new(0.0, 0.0, rng.random_range(-2.0..2.0)),
            )
            .unwrap();
            let s = SimState::Quadrotor(x);
            assert!(spec.eval(&s).unwrap() <= spec.upper_bound());
            let _ = sys.true_disturbance(&s).unwrap();
        }
    }
}
