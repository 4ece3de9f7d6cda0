//! Quadratic barrier from the discrete Riccati equation of the double
//! integrator, and the finite-horizon exit-probability bound it implies.

use nalgebra::DMatrix;
use orio::barrier::{dare_residual, dare_solve, double_integrator_model, exit_prob_bound, BarrierKind, BarrierSpec};
use orio::sim::SimState;

fn main() -> orio::Result<()> {
    let dt = 0.01;
    let (a, b) = double_integrator_model(dt);
    let q = DMatrix::identity(2, 2);
    let r = DMatrix::identity(1, 1);
    let p = dare_solve(&a, &b, &q, &r)?;
    println!("P = {p:.6}");
    println!("Riccati residual {:.2e}", dare_residual(&a, &b, &q, &r, &p)?);

    let spec = BarrierSpec::from_dare(BarrierKind::Quadratic, dt, 1.0, 1.0, 100.0, 0.0, 0.0, 0.99)?;
    println!("upper bound M = {}, Hessian bound {:.4}", spec.upper_bound(), spec.hessian_bound());
    for (x, v) in [(0.0, 0.0), (0.3, 0.0), (0.5, 0.3), (0.8, 0.0)] {
        let h = spec.eval(&SimState::DoubleIntegrator { x, v })?;
        println!("h({x}, {v}) = {h:.3}");
    }

    let h0 = spec.eval(&SimState::DoubleIntegrator { x: 0.5, v: 0.0 })?;
    for k in [10, 100, 500, 2000] {
        let bound = exit_prob_bound(h0, spec.upper_bound(), spec.alpha(), k)?;
        println!("P(exit within {k:>4} steps) ≤ {bound:.4}");
    }
    Ok(())
}
