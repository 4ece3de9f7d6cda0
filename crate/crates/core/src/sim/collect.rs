use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cvae::{DatasetMeta, ResidualDataset};
use crate::error::{Error, Result};

use super::{SimState, System};

/// Rolls out `trajectories` runs of `steps` transitions each from `x0` under
/// `pilot`, logging `(x_k, x_{k+1} ⊖ F(x_k, u_k))`.
///
/// Trajectory `i` draws its noise from `seed + i`.
pub fn collect_dataset<P>(
    system: &System,
    mut pilot: P,
    x0: &SimState,
    trajectories: usize,
    steps: usize,
    seed: u64,
) -> Result<ResidualDataset>
where
    P: FnMut(&SimState) -> Result<Vec<f64>>,
{
    if trajectories == 0 || steps == 0 {
        return Err(Error::InvalidArgument(
            "need at least one trajectory with at least one step".into(),
        ));
    }
    let mut ds = ResidualDataset::new(
        system.state_dim(),
        system.residual_dim(),
        DatasetMeta {
            system: match system.kind() {
                super::SystemKind::DoubleIntegrator => "double-integrator".into(),
                super::SystemKind::Quadrotor => "quadrotor".into(),
            },
            dt: system.dt(),
            fingerprint: String::new(),
        },
    );
    for t in 0..trajectories {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
        let mut x = x0.clone();
        for _ in 0..steps {
            let u = pilot(&x)?;
            let nominal = system.nominal_step(&x, &u)?;
            let (next, _) = system.step(&x, &u, &mut rng)?;
            let d = system.residual_between(&next, &nominal)?;
            ds.push(&x.to_vec(), &d)?;
            x = next;
        }
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::DiParams;

    #[test]
    fn double_integrator_protocol_row_count() {
        let sys = System::DoubleIntegrator(DiParams::default());
        let x0 = SimState::DoubleIntegrator { x: 0.0, v: 0.0 };
        let ds = collect_dataset(&sys, |_| Ok(vec![0.0]), &x0, 36, 500, 0).unwrap();
        assert_eq!(ds.len(), 18_000);
    }

    #[test]
    fn noiseless_residuals_vanish() {
        let sys = System::DoubleIntegrator(DiParams { noise: false, ..Default::default() });
        let x0 = SimState::DoubleIntegrator { x: 0.3, v: 1.0 };
        let ds = collect_dataset(&sys, |_| Ok(vec![0.7]), &x0, 2, 50, 0).unwrap();
        assert!(ds.rows().all(|(_, d)| d.iter().all(|v| v.abs() <= 1e-12)));
    }

    #[test]
    fn zero_trajectories_rejected() {
        let sys = System::DoubleIntegrator(DiParams::default());
        let x0 = SimState::DoubleIntegrator { x: 0.0, v: 0.0 };
        assert!(collect_dataset(&sys, |_| Ok(vec![0.0]), &x0, 0, 5, 0).is_err());
    }
}
