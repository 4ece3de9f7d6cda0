//! Minimum-deviation safety filter on a hand-built two-input problem:
//! `min ‖u − u_nom‖²` subject to `uᵀQu + bᵀu + r ≥ 0` with `Q ≺ 0`.

use nalgebra::{DMatrix, DVector};
use orio::control::{solve_safety_filter, FilterProblem, InputBox};

fn main() -> orio::Result<()> {
    // The feasible set is the disc ‖u − (1, 0)‖ ≤ 1.
    let q = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -1.0]));
    let b = DVector::from_vec(vec![2.0, 0.0]);

    for nominal in [[1.5, 0.2], [3.0, 0.0], [-1.0, 2.0]] {
        let problem = FilterProblem::new(DVector::from_row_slice(&nominal), q.clone(), b.clone(), 0.0)?;
        let sol = solve_safety_filter(&problem)?;
        println!(
            "u_nom = {:?} -> u = [{:.6}, {:.6}]  active {}  multiplier {:.4}  g(u) = {:.2e}",
            nominal, sol.u[0], sol.u[1], sol.active, sol.multiplier, problem.g(&sol.u)
        );
    }

    // When the constraint cannot be met inside actuator limits, the best the
    // filter can do is maximize g over the box.
    let tight = InputBox::new(vec![-3.0, -1.0], vec![-2.5, 1.0])?;
    let problem = FilterProblem::new(DVector::from_vec(vec![-3.0, 0.0]), q, b, 0.0)?;
    let best = problem.maximize_over_box(&tight);
    println!("box-limited best effort: u = [{:.3}, {:.3}], g = {:.3}", best[0], best[1], problem.g(&best));
    Ok(())
}
