use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::barrier::BarrierSpec;
use crate::error::Result;

use super::{SimState, System};

/// What a controller decided at one step.
#[derive(Clone, Debug, PartialEq)]
pub enum ControlOutcome {
    Feasible(Vec<f64>),
    /// No input satisfies the safety constraint; carries the best-effort input.
    Infeasible(Vec<f64>),
}

pub trait Controller {
    fn control(&mut self, step: usize, x: &SimState) -> Result<ControlOutcome>;
}

impl<F> Controller for F
where
    F: FnMut(usize, &SimState) -> Result<ControlOutcome>,
{
    fn control(&mut self, step: usize, x: &SimState) -> Result<ControlOutcome> {
        self(step, x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InfeasiblePolicy {
    /// Stop the rollout at the first infeasible step.
    Truncate,
    /// Apply the best-effort input and keep going; the step is counted.
    BestEffort,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<SimState>,
    pub inputs: Vec<Vec<f64>>,
    pub residuals: Vec<Vec<f64>>,
    /// `h(x_k)` for every recorded state.
    pub h: Vec<f64>,
    pub min_h: f64,
    pub exited: bool,
    pub infeasible_steps: usize,
    pub truncated: bool,
}

/// Closed-loop simulation for `horizon` steps from `x0`. All randomness comes
/// from `seed`.
pub fn rollout(
    system: &System,
    barrier: &BarrierSpec,
    controller: &mut dyn Controller,
    x0: &SimState,
    horizon: usize,
    seed: u64,
    policy: InfeasiblePolicy,
) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h0 = barrier.eval(x0)?;
    let mut traj = Trajectory {
        states: vec![x0.clone()],
        inputs: Vec::with_capacity(horizon),
        residuals: Vec::with_capacity(horizon),
        h: vec![h0],
        min_h: h0,
        exited: false,
        infeasible_steps: 0,
        truncated: false,
    };
    let mut x = x0.clone();
    for k in 0..horizon {
        let u = match controller.control(k, &x)? {
            ControlOutcome::Feasible(u) => u,
            ControlOutcome::Infeasible(u) => {
                traj.infeasible_steps += 1;
                if policy == InfeasiblePolicy::Truncate {
                    traj.truncated = true;
                    break;
                }
                u
            }
        };
        let (next, d) = system.step(&x, &u, &mut rng)?;
        let h = barrier.eval(&next)?;
        traj.min_h = traj.min_h.min(h);
        traj.inputs.push(u);
        traj.residuals.push(d);
        traj.h.push(h);
        traj.states.push(next.clone());
        x = next;
    }
    traj.exited = traj.min_h < 0.0;
    Ok(traj)
}
