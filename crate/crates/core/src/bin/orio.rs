use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use orio::experiments::{
    run_bench, run_collect, run_estimate, run_simulate, run_train, run_verify, ExperimentConfig,
};

/// Learned residual distributions and risk-aware barrier filters.
///
/// The output directory comes from the config's `output_dir` unless the
/// ORIO_OUTPUT_DIR environment variable is set. Exit status: 0 success,
/// 1 config error, 2 runtime failure or infeasibility budget exceeded.
#[derive(Parser)]
#[command(name = "orio", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the data-collection protocol and write the residual dataset.
    Collect(Common),
    /// Train the CVAE and/or MLP baseline on the dataset.
    Train(Common),
    /// Sweep the state grid with both moment estimators.
    Estimate(Common),
    /// Run one filtered closed-loop rollout.
    Simulate(Common),
    /// Monte Carlo exit frequencies per ablation against the bound.
    Verify(Common),
    /// Time both moment estimators.
    Bench(Common),
}

fn run(cli: Cli) -> orio::Result<()> {
    let common = match &cli.command {
        Command::Collect(c)
        | Command::Train(c)
        | Command::Estimate(c)
        | Command::Simulate(c)
        | Command::Verify(c)
        | Command::Bench(c) => c,
    };
    let cfg = ExperimentConfig::load(&common.config, common.seed)?;
    println!("fingerprint {}", cfg.fingerprint());
    match cli.command {
        Command::Collect(_) => {
            let out = run_collect(&cfg)?;
            println!("{} rows -> {}", out.rows, out.path.display());
        }
        Command::Train(_) => {
            let out = run_train(&cfg)?;
            if let Some((path, trace)) = &out.cvae {
                let elbo = trace.final_elbo().unwrap_or(f64::NAN);
                println!("cvae final ELBO {elbo:.5} -> {}", path.display());
            }
            if let Some((path, trace)) = &out.mlp {
                let loss = trace.final_loss().unwrap_or(f64::NAN);
                println!("mlp final loss {loss:.5} -> {}", path.display());
            }
            println!("loss trace -> {}", out.loss_path.display());
        }
        Command::Estimate(_) => {
            let out = run_estimate(&cfg)?;
            println!("estimator  mean_err  2sigma    cov_err   2sigma    s/call");
            for s in [&out.gmm, &out.sampling] {
                println!(
                    "{:<9}  {:.5}   {:.5}   {:.5}   {:.5}   {:.2e}",
                    s.estimator, s.mean_error, s.mean_spread, s.cov_error, s.cov_spread, s.seconds_per_call
                );
            }
            println!("{} rows -> {}", out.rows, out.path.display());
        }
        Command::Simulate(_) => {
            let out = run_simulate(&cfg)?;
            let t = &out.trajectory;
            println!(
                "{} steps, min h {:.4}, exited {}, infeasible steps {} -> {}",
                t.inputs.len(),
                t.min_h,
                t.exited,
                t.infeasible_steps,
                out.path.display()
            );
        }
        Command::Verify(_) => {
            let out = run_verify(&cfg)?;
            let r = &out.report;
            println!("bound {:.4} (h0 {:.4}, M {}, alpha {}, K {})", r.bound, r.h0, r.upper, r.alpha, r.horizon);
            for a in &r.rows {
                println!(
                    "{:<9} {:.3} [{:.3}, {:.3}]  infeasible steps {}",
                    a.kind.name(),
                    a.frequency,
                    a.interval.0,
                    a.interval.1,
                    a.infeasible_steps
                );
            }
            println!("-> {}", out.path.display());
        }
        Command::Bench(_) => {
            let out = run_bench(&cfg)?;
            for r in &out.rows {
                println!("{:<9} S={:<6} median {:.3e} s  p95 {:.3e} s", r.estimator, r.samples, r.median, r.p95);
            }
            println!("-> {}", out.path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
