mod common;

use nalgebra::{DMatrix, Matrix2, UnitQuaternion, Vector2, Vector3};
use orio::barrier::{exit_prob_bound, jensen_margin, BarrierKind, BarrierSpec};
use orio::control::{solve_safety_filter, FilterProblem, ROOT_TOL};
use orio::cvae::{CvaeArchitecture, CvaeModel, Standardizer};
use orio::sim::{rollout, ControlOutcome, DiParams, InfeasiblePolicy, QuadState, QuadrotorParams, SimState, System};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spd(a: f64, b: f64, c: f64) -> Matrix2<f64> {
    // LLᵀ + 0.1 I from a lower-triangular L.
    let l = Matrix2::new(a, 0.0, b, c);
    l * l.transpose() + Matrix2::identity() * 0.1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn exit_bound_is_monotone(
        m in 0.1f64..100.0,
        frac in 0.0f64..1.0,
        bump in 0.0f64..1.0,
        alpha in 0.01f64..0.99,
        dalpha in 0.0f64..0.5,
        k in 0usize..2000,
    ) {
        let h0 = frac * m;
        let b = exit_prob_bound(h0, m, alpha, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&b));
        let h1 = (h0 + bump * (m - h0)).min(m);
        prop_assert!(exit_prob_bound(h1, m, alpha, k).unwrap() <= b);
        prop_assert!(exit_prob_bound(h0, m, alpha, k + 1).unwrap() >= b);
        let a1 = (alpha + dalpha * (1.0 - alpha)).min(0.999_999);
        prop_assert!(exit_prob_bound(h0, m, a1, k).unwrap() <= b);
    }

    #[test]
    fn relaxed_constraint_implies_expectation_constraint(
        (pa, pb, pc) in (0.1f64..3.0, -2.0f64..2.0, 0.1f64..3.0),
        c in 0.5f64..20.0,
        z0 in -1.0f64..1.0,
        alpha in 0.05f64..0.99,
        x in -2.0f64..2.0,
        v in -2.0f64..2.0,
        u in -50.0f64..50.0,
        mean in (-0.2f64..0.2, -0.2f64..0.2),
        (la, lb, lc) in (0.0f64..0.2, -0.2f64..0.2, 0.0f64..0.2),
    ) {
        let dt = 0.05;
        let p = spd(pa, pb, pc);
        let spec = BarrierSpec::new(BarrierKind::Quadratic, p, c, z0, 0.0, alpha).unwrap();
        let sys = System::DoubleIntegrator(DiParams { dt, noise: true });
        let l = Matrix2::new(la, 0.0, lb, lc);
        let sigma = l * l.transpose();
        let cov = DMatrix::from_iterator(2, 2, sigma.iter().copied());
        let state = SimState::DoubleIntegrator { x, v };
        let margin = jensen_margin(&spec, &sys, &state, &[u], &[mean.0, mean.1], &cov).unwrap();
        // E[C − ζᵀPζ] = C − ζ̄ᵀPζ̄ − tr(PΣ) for ζ = ζ̄ + d, d ~ N(0, Σ).
        let zbar = Vector2::new(x + dt * v + 0.5 * dt * dt * u + mean.0 - z0, v + dt * u + mean.1);
        let expected = c - zbar.dot(&(p * zbar)) - (p * sigma).trace();
        let hx = c - Vector2::new(x - z0, v).dot(&(p * Vector2::new(x - z0, v)));
        if margin >= 0.0 {
            prop_assert!(expected - alpha * hx >= -1e-9 * c.max(1.0), "margin {margin} but E gap {}", expected - alpha * hx);
        }
    }

    #[test]
    fn filter_output_is_feasible_or_reported(seed in any::<u64>(), m in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = common::random_problem(&mut rng, m);
        let s = solve_safety_filter(&p).unwrap();
        prop_assert!(p.g(&s.u) >= -ROOT_TOL);
        if p.g(&p.u_nom) >= 0.0 {
            prop_assert!(!s.active);
            prop_assert_eq!(&s.u, &p.u_nom);
        } else {
            let kkt = (&s.u - &p.u_nom) * 2.0 - p.gradient(&s.u) * s.multiplier;
            prop_assert!(kkt.norm() <= 1e-6, "stationarity residual {}", kkt.norm());
        }
    }

    #[test]
    fn kl_term_is_nonnegative(seed in any::<u64>(), x in prop::array::uniform3(-3.0f64..3.0), d in prop::array::uniform2(-3.0f64..3.0)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = CvaeArchitecture { state_dim: 3, residual_dim: 2, latent_dim: 2, hidden: vec![6], condition_on: None };
        let model = CvaeModel::new(&arch, Standardizer::identity(3), Standardizer::identity(2), &mut rng).unwrap();
        let noise = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let terms = model.elbo(&x, &d, &noise, 1.0).unwrap();
        prop_assert!(terms.kl >= -1e-12, "KL {}", terms.kl);
    }

    #[test]
    fn trajectory_shape_and_exit_flag(k in 0usize..60, seed in any::<u64>(), x0 in -0.5f64..0.5) {
        let sys = System::DoubleIntegrator(DiParams::default());
        let spec = BarrierSpec::new(BarrierKind::Quadratic, Matrix2::identity(), 0.5, 0.0, 0.0, 0.9).unwrap();
        let mut zero = |_: usize, _: &SimState| Ok(ControlOutcome::Feasible(vec![0.0]));
        let t = rollout(&sys, &spec, &mut zero, &SimState::DoubleIntegrator { x: x0, v: 0.0 }, k, seed, InfeasiblePolicy::Truncate).unwrap();
        prop_assert_eq!(t.states.len(), k + 1);
        prop_assert_eq!(t.h.len(), k + 1);
        prop_assert_eq!(t.exited, t.min_h < 0.0);
        prop_assert_eq!(t.min_h, t.h.iter().copied().fold(f64::INFINITY, f64::min));
    }
}

#[test]
fn filter_matches_grid_search_on_small_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..200 {
        let p = common::random_problem(&mut rng, 1 + i % 3);
        let s = solve_safety_filter(&p).unwrap();
        let oracle = common::grid_search(&p);
        let (du, dor) = ((&s.u - &p.u_nom).norm(), (&oracle - &p.u_nom).norm());
        assert!((&s.u - &oracle).amax() <= 1e-4, "instance {i}: {:?} vs {:?}, dist {du} vs {dor}, g {} vs {}", s.u.as_slice(), oracle.as_slice(), p.g(&s.u), p.g(&oracle));
    }
}

#[test]
fn concavity_is_enforced() {
    let q = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.5]);
    let res = FilterProblem::new(nalgebra::DVector::zeros(2), q, nalgebra::DVector::zeros(2), 1.0);
    assert!(res.is_err());
}

fn random_quaternion<R: Rng>(rng: &mut R) -> UnitQuaternion<f64> {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    UnitQuaternion::from_scaled_axis(axis * rng.random_range(0.0..std::f64::consts::PI))
}

#[test]
fn barrier_never_exceeds_its_upper_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let params = QuadrotorParams::default();
    let quad = BarrierSpec::from_dare(BarrierKind::QuadrotorOrientation, params.dt, 1.0, 1.0, 100.0, 0.9, 0.25, 0.9975).unwrap();
    let di = BarrierSpec::from_dare(BarrierKind::Quadratic, 0.01, 1.0, 1.0, 100.0, 0.0, 0.0, 0.99).unwrap();
    for _ in 0..100_000 {
        let x = SimState::DoubleIntegrator { x: rng.random_range(-5.0..5.0), v: rng.random_range(-5.0..5.0) };
        assert!(di.eval(&x).unwrap() <= di.upper_bound());
        let p = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-1.0..3.0));
        let v = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let s = QuadState::new(p, random_quaternion(&mut rng).into_inner(), v).unwrap();
        assert!(quad.eval(&SimState::Quadrotor(s)).unwrap() <= quad.upper_bound());
    }
}

/// Largest |eigenvalue| of the central-difference Hessian of `d ↦ h(x ⊕ d)`
/// at `d = 0`.
fn numeric_hessian_norm(spec: &BarrierSpec, sys: &System, x: &SimState) -> f64 {
    let n = sys.residual_dim();
    let step = 1e-4;
    let h = |d: &[f64]| spec.eval(&sys.apply_residual(x, d).unwrap()).unwrap();
    let mut hess = DMatrix::zeros(n, n);
    let mut d = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let mut f = [0.0; 4];
            for (k, (si, sj)) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)].into_iter().enumerate() {
                d.iter_mut().for_each(|v| *v = 0.0);
                d[i] += si * step;
                d[j] += sj * step;
                f[k] = h(&d);
            }
            hess[(i, j)] = (f[0] - f[1] - f[2] + f[3]) / (4.0 * step * step);
        }
    }
    let hess = (&hess + hess.transpose()) * 0.5;
    hess.symmetric_eigenvalues().iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

#[test]
fn hessian_bound_dominates_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = QuadrotorParams::default();
    let sys = System::Quadrotor(params);
    let spec = BarrierSpec::from_dare(BarrierKind::QuadrotorOrientation, params.dt, 1.0, 1.0, 100.0, 0.9, 0.25, 0.9975).unwrap();
    let di_sys = System::DoubleIntegrator(DiParams::default());
    let di = BarrierSpec::new(BarrierKind::Quadratic, Matrix2::new(4.0, 0.0, 0.0, 1.0), 1.0, 0.0, 0.0, 0.9).unwrap();
    for _ in 0..100 {
        let p = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..2.0));
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let x = SimState::Quadrotor(QuadState::new(p, random_quaternion(&mut rng).into_inner(), v).unwrap());
        let num = numeric_hessian_norm(&spec, &sys, &x);
        assert!(num <= spec.hessian_bound() * (1.0 + 1e-4), "{num} > {}", spec.hessian_bound());
        let y = SimState::DoubleIntegrator { x: rng.random_range(-2.0..2.0), v: rng.random_range(-2.0..2.0) };
        let num = numeric_hessian_norm(&di, &di_sys, &y);
        assert!((num - di.hessian_bound()).abs() <= 1e-4 * di.hessian_bound(), "{num}");
    }
}
