//! Monte Carlo exit frequency of a random walk that meets the expectation
//! condition with equality, next to its martingale bound.

use orio::experiments::{wilson_interval, Z95};
use orio::sim::KushnerWalk;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> orio::Result<()> {
    let trials = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    println!("alpha    x0   K   empirical  95% interval        bound");
    for (alpha, x0, horizon) in [(0.9, 0.5, 20), (0.9, 0.8, 20), (0.95, 0.5, 50), (0.99, 0.9, 100)] {
        let walk = KushnerWalk::new(alpha, 1.0)?;
        let exits = (0..trials).filter(|_| walk.exits(x0, horizon, &mut rng)).count();
        let (lo, hi) = wilson_interval(exits, trials, Z95)?;
        println!(
            "{alpha:<6} {x0:>4} {horizon:>3}   {:.4}     [{lo:.4}, {hi:.4}]   {:.4}",
            exits as f64 / trials as f64,
            walk.bound(x0, horizon)?
        );
    }
    Ok(())
}
