//! Drives the experiment layer from a config preset with overrides:
//! collect, train, then a coarse estimator sweep against the true noise.
//! Results go to a temporary directory unless ORIO_OUTPUT_DIR is set.

use orio::experiments::{run_collect, run_estimate, run_train, ExperimentConfig, SystemTag};

fn main() -> orio::Result<()> {
    let dir = std::env::temp_dir().join("orio-example");
    let cfg = ExperimentConfig::preset(SystemTag::DoubleIntegrator)?.with(&[
        ("output_dir", dir.to_str().unwrap()),
        ("train.epochs", "40"),
        ("train.model", "cvae"),
        ("estimate.grid_points", "21"),
        ("estimate.repetitions", "5"),
        ("estimate.samples", "2000"),
    ])?;
    println!("fingerprint {}", cfg.fingerprint());

    let data = run_collect(&cfg)?;
    println!("{} rows -> {}", data.rows, data.path.display());
    let trained = run_train(&cfg)?;
    if let Some((path, trace)) = &trained.cvae {
        println!("CVAE final ELBO {:.4} -> {}", trace.final_elbo().unwrap_or(f64::NAN), path.display());
    }
    let sweep = run_estimate(&cfg)?;
    for s in [&sweep.gmm, &sweep.sampling] {
        println!(
            "{:<9} mean error {:.4} (2σ {:.4})  covariance error {:.4} (2σ {:.4})",
            s.estimator, s.mean_error, s.mean_spread, s.cov_error, s.cov_spread
        );
    }
    println!("per-call rows -> {}", sweep.path.display());
    Ok(())
}
