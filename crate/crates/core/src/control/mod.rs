//! Nominal controllers, constraint construction and the single-constraint
//! safety-filter solver.

mod ablation;
mod constraint;
mod nominal;
mod solver;

pub use ablation::{make_ablation, mix_seed, Ablation, AblationContext, AblationKind, MomentFn, SafetyFilter, StepDiagnostics};
pub use constraint::build_constraint;
pub use nominal::{LqrController, NominalController, Se3Controller};
pub use solver::{solve_safety_filter, FilterProblem, FilterSolution, InputBox, CONCAVITY_TOL, MAX_MULTIPLIER, ROOT_TOL};
