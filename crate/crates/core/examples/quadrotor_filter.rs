//! Geometric tracking controller on the noisy quadrotor, with and without a
//! risk-aware barrier filter that keeps the vehicle above the ground.

use nalgebra::Vector3;
use orio::barrier::{BarrierKind, BarrierSpec};
use orio::control::{make_ablation, AblationContext, AblationKind, InputBox, SafetyFilter, Se3Controller, NominalController};
use orio::sim::{rollout, ControlOutcome, InfeasiblePolicy, QuadState, QuadrotorParams, SimState, System};

fn main() -> orio::Result<()> {
    let params = QuadrotorParams::default();
    let system = System::Quadrotor(params);
    let spec = BarrierSpec::from_dare(BarrierKind::QuadrotorOrientation, params.dt, 1.0, 1.0, 100.0, 0.9107, 0.25, 0.9975)?;
    // The nominal controller flies towards the ground.
    let nominal = Se3Controller::new(params, Vector3::zeros());
    let x0 = SimState::Quadrotor(QuadState::hover(Vector3::new(0.0, 0.0, 1.0)));
    let steps = 666;

    let mut open = |_: usize, x: &SimState| nominal.input(x).map(ControlOutcome::Feasible);
    let plain = rollout(&system, &spec, &mut open, &x0, steps, 11, InfeasiblePolicy::BestEffort)?;
    println!("unfiltered: exited {}, min h {:.2}", plain.exited, plain.min_h);

    let ctx = AblationContext {
        system: Some(system),
        ..Default::default()
    };
    let bounds = InputBox::new(vec![0.0, -10.0, -10.0, -10.0], vec![39.24, 10.0, 10.0, 10.0])?;
    for kind in [AblationKind::Standard, AblationKind::True] {
        let ablation = make_ablation(kind, &spec, &ctx)?;
        let mut filter = SafetyFilter::new(&spec, system, nominal.clone(), &ablation, 5).with_box(bounds.clone());
        let t = rollout(&system, &spec, &mut filter, &x0, steps, 11, InfeasiblePolicy::BestEffort)?;
        let z_min = t.states.iter().map(|s| s.vertical().0).fold(f64::INFINITY, f64::min);
        println!(
            "{:<8} filter: exited {}, min h {:.2}, lowest altitude {:.3} m, infeasible steps {}",
            kind.name(),
            t.exited,
            t.min_h,
            z_min,
            t.infeasible_steps
        );
    }
    Ok(())
}
