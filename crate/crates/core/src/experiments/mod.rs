//! Config-driven experiment harness behind the `orio` binary: dataset
//! collection, training, estimator sweeps, rollouts, Monte Carlo
//! verification and timing. Every CSV it writes starts with a
//! `# fingerprint: <sha256>` line identifying the resolved config.

mod config;
mod report;
mod run;

pub use config::{
    BarrierSettings, BenchSettings, CollectSettings, ControllerSettings, EstimateSettings, ExperimentConfig,
    ModelKind, SystemTag, VerifySettings, OUTPUT_DIR_ENV,
};
pub use report::{num, wilson_interval, AblationResult, CsvTable, ExitProbReport, Z95, Z99};
pub use run::{
    load_cvae, load_dataset, load_regressor, nominal_controller, run_bench, run_collect, run_estimate,
    run_simulate, run_train, run_verify, trial_seeds, BenchOutput, BenchRow, CollectOutput, EstimateOutput,
    EstimatorSummary, Nominal, SimulateOutput, TrainOutput, VerifyOutput,
};
