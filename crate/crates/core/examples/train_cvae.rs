//! Collects a residual dataset from the noisy double integrator, fits the
//! conditional VAE, and compares its moments with the true state-dependent
//! noise.
//!
//! Pass an epoch count to train longer (default 40).

use orio::cvae::{estimate_moments_gmm, train_cvae, LrSchedule, TrainConfig};
use orio::sim::{collect_dataset, DiParams, SimState, System};

fn main() -> orio::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let system = System::DoubleIntegrator(DiParams::default());
    let x0 = SimState::DoubleIntegrator { x: 0.0, v: 0.0 };
    let data = collect_dataset(&system, |_| Ok(vec![0.0]), &x0, 36, 500, 0)?;
    println!("{} transitions", data.len());

    let config = TrainConfig {
        epochs,
        batch_size: 32,
        learning_rate: 1e-3,
        schedule: LrSchedule::Cosine,
        kl_warmup: 0.3,
        hidden: vec![32, 32],
        latent_dim: 2,
        condition_on: Some(vec![0]),
        standardize_state: false,
        standardize_residual: true,
        seed: 0,
    };
    let (model, trace) = train_cvae(&data, &config)?;
    for (epoch, nll) in trace.epoch_neg_elbo.iter().enumerate().step_by((epochs / 8).max(1)) {
        println!("epoch {epoch:>3}  negative ELBO {nll:.4}");
    }

    println!("\n    x   true sd(x)   learned sd(x)   true sd(v)   learned sd(v)");
    for x in [-3.0, -1.5, 0.0, 1.5, 3.0] {
        let truth = system.true_disturbance(&SimState::DoubleIntegrator { x, v: 0.0 })?.cov_matrix();
        let est = estimate_moments_gmm(&model, &[x, 0.0], 10_000, 7)?;
        println!(
            "{x:>5.1}   {:.5}      {:.5}         {:.5}      {:.5}",
            truth[(0, 0)].sqrt(),
            est.cov[(0, 0)].sqrt(),
            truth[(1, 1)].sqrt(),
            est.cov[(1, 1)].sqrt()
        );
    }
    Ok(())
}
