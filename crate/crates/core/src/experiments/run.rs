use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, Vector3};

use crate::barrier::exit_prob_bound;
use crate::control::{
    make_ablation, mix_seed, AblationContext, AblationKind, LqrController, NominalController, SafetyFilter,
    Se3Controller,
};
use crate::cvae::{
    estimate_moments_gmm, estimate_moments_sampling, train_cvae, train_regressor, CvaeModel, MomentEstimate,
    Regressor, ResidualDataset, TrainTrace,
};
use crate::error::{Error, Result};
use crate::sim::{collect_dataset, rollout, InfeasiblePolicy, SimState, System, Trajectory};

use super::config::ExperimentConfig;
use super::report::{num, wilson_interval, AblationResult, CsvTable, ExitProbReport, Z95};

/// Nominal controller selected by the system: LQR for the double
/// integrator, the geometric controller for the quadrotor.
#[derive(Clone, Debug)]
pub enum Nominal {
    Lqr(LqrController),
    Se3(Se3Controller),
}

impl NominalController for Nominal {
    fn input(&self, x: &SimState) -> Result<Vec<f64>> {
        match self {
            Nominal::Lqr(c) => c.input(x),
            Nominal::Se3(c) => c.input(x),
        }
    }
}

pub fn nominal_controller(cfg: &ExperimentConfig) -> Result<Nominal> {
    let t = &cfg.controller.target;
    match cfg.system() {
        System::DoubleIntegrator(p) => Ok(Nominal::Lqr(LqrController::new(
            p.dt,
            cfg.controller.lqr_q,
            cfg.controller.lqr_r,
            [t[0], t[1]],
        )?)),
        System::Quadrotor(p) => {
            let mut c = Se3Controller::new(p, Vector3::new(t[0], t[1], t[2]));
            c.kp = cfg.controller.kp;
            c.kd = cfg.controller.kd;
            c.k_att = cfg.controller.k_att;
            Ok(Nominal::Se3(c))
        }
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", path.display())))
    }
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<ResidualDataset> {
    let path = cfg.dataset_path();
    require(&path, "dataset")?;
    ResidualDataset::load(&path)
}

pub fn load_cvae(cfg: &ExperimentConfig) -> Result<CvaeModel> {
    let path = cfg.model_path();
    require(&path, "model")?;
    let m = CvaeModel::load(&path)?;
    let sys = cfg.system();
    if m.state_dim() != sys.state_dim() || m.residual_dim() != sys.residual_dim() {
        return Err(Error::dim("model state/residual dims", sys.state_dim(), m.state_dim()));
    }
    Ok(m)
}

pub fn load_regressor(cfg: &ExperimentConfig) -> Result<Regressor> {
    let path = cfg.mlp_model_path();
    require(&path, "MLP model")?;
    Regressor::load(&path)
}

#[derive(Clone, Debug)]
pub struct CollectOutput {
    pub path: PathBuf,
    pub rows: usize,
}

/// Simulates the data-collection protocol and writes the residual dataset.
pub fn run_collect(cfg: &ExperimentConfig) -> Result<CollectOutput> {
    let system = cfg.system();
    let x0 = cfg.initial_state();
    let nominal = nominal_controller(cfg)?;
    let zero = vec![0.0; system.input_dim()];
    let mut ds = collect_dataset(
        &system,
        |x| {
            if cfg.collect.closed_loop {
                nominal.input(x)
            } else {
                Ok(zero.clone())
            }
        },
        &x0,
        cfg.collect.trajectories,
        cfg.collect.steps,
        cfg.seed,
    )?;
    ds.meta.fingerprint = cfg.fingerprint();
    let path = cfg.dataset_path();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    ds.save(&path)?;
    Ok(CollectOutput { rows: ds.len(), path })
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub cvae: Option<(PathBuf, TrainTrace)>,
    pub mlp: Option<(PathBuf, TrainTrace)>,
    pub loss_path: PathBuf,
}

/// Trains the configured model(s) on the dataset and writes them plus a
/// per-epoch loss trace.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainOutput> {
    let ds = load_dataset(cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut table = CsvTable::new(&cfg.fingerprint(), &["model", "epoch", "loss", "neg_elbo"]);
    let mut out = TrainOutput {
        cvae: None,
        mlp: None,
        loss_path: cfg.output_dir.join("train_loss.csv"),
    };
    if cfg.model_kind.includes_cvae() {
        let (model, trace) = train_cvae(&ds, &cfg.train)?;
        let path = cfg.model_path();
        model.save(&path)?;
        for (e, (l, n)) in trace.epoch_loss.iter().zip(&trace.epoch_neg_elbo).enumerate() {
            table.push(&["cvae".into(), e.to_string(), num(*l), num(*n)])?;
        }
        out.cvae = Some((path, trace));
    }
    if cfg.model_kind.includes_mlp() {
        let (model, trace) = train_regressor(&ds, &cfg.train)?;
        let path = cfg.mlp_model_path();
        model.save(&path)?;
        for (e, l) in trace.epoch_loss.iter().enumerate() {
            table.push(&["mlp".into(), e.to_string(), num(*l), String::new()])?;
        }
        out.mlp = Some((path, trace));
    }
    table.save(&out.loss_path)?;
    Ok(out)
}

/// Error statistics of one estimator over the state grid.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorSummary {
    pub estimator: &'static str,
    /// Mean over states and repetitions of `‖m̂ − m‖₂`.
    pub mean_error: f64,
    /// Mean over states of twice the across-repetition standard deviation
    /// of the mean error.
    pub mean_spread: f64,
    /// Same two statistics for `‖Σ̂ − Σ‖₂`.
    pub cov_error: f64,
    pub cov_spread: f64,
    pub seconds_per_call: f64,
}

#[derive(Clone, Debug)]
pub struct EstimateOutput {
    pub path: PathBuf,
    pub summary_path: PathBuf,
    pub rows: usize,
    pub gmm: EstimatorSummary,
    pub sampling: EstimatorSummary,
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

fn errors(est: &MomentEstimate, mean: &[f64], cov: &DMatrix<f64>) -> (f64, f64) {
    let em = est.mean.iter().zip(mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    (em, spectral_norm(&(&est.cov - cov)))
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

type Estimator = fn(&CvaeModel, &[f64], usize, u64) -> Result<MomentEstimate>;

/// Sweeps the state grid with both moment estimators, `repetitions` times
/// each, against the true residual distribution.
pub fn run_estimate(cfg: &ExperimentConfig) -> Result<EstimateOutput> {
    let model = load_cvae(cfg)?;
    let system = cfg.system();
    let est = &cfg.estimate;
    let grid = cfg.grid(est.grid_points);
    let n = system.residual_dim();
    let fp = cfg.fingerprint();

    let mut header: Vec<String> = ["estimator", "rep", "state_index", "grid_value"].map(String::from).to_vec();
    for i in 0..n {
        header.push(format!("mean_{i}"));
    }
    for i in 0..n {
        for j in i..n {
            header.push(format!("cov_{i}{j}"));
        }
    }
    header.extend(["true_trace", "mean_error", "cov_error", "seconds"].map(String::from));
    let mut table = CsvTable::with_header(&fp, header);

    let estimators: [(&'static str, Estimator, u64); 2] = [
        ("gmm", estimate_moments_gmm, 0),
        ("sampling", estimate_moments_sampling, 1),
    ];
    // errors[estimator][state] = per-repetition (mean, cov) errors
    let mut errs = vec![vec![(Vec::new(), Vec::new()); grid.len()]; 2];
    let mut seconds = [0.0f64; 2];
    let truths = grid
        .iter()
        .map(|&g| system.true_disturbance(&cfg.grid_state(g)))
        .collect::<Result<Vec<_>>>()?;
    for rep in 0..est.repetitions {
        for (i, &g) in grid.iter().enumerate() {
            let x = cfg.grid_state(g).to_vec();
            let truth = &truths[i];
            let true_cov = truth.cov_matrix();
            let base = mix_seed(cfg.seed, (rep * grid.len() + i) as u64);
            for (e, (name, f, salt)) in estimators.iter().enumerate() {
                let t = Instant::now();
                let m = f(&model, &x, est.samples, mix_seed(base, *salt))?;
                let dt = t.elapsed().as_secs_f64();
                seconds[e] += dt;
                let (em, ec) = errors(&m, &truth.mean, &true_cov);
                errs[e][i].0.push(em);
                errs[e][i].1.push(ec);
                let mut row = vec![name.to_string(), rep.to_string(), i.to_string(), num(g)];
                row.extend(m.mean.iter().map(|v| num(*v)));
                for a in 0..n {
                    for b in a..n {
                        row.push(num(m.cov[(a, b)]));
                    }
                }
                row.extend([num(truth.trace()), num(em), num(ec), num(dt)]);
                table.push(&row)?;
            }
        }
    }
    let calls = (est.repetitions * grid.len()) as f64;
    let summarize = |e: usize| {
        let per_state = &errs[e];
        let avg = |f: &dyn Fn(&(Vec<f64>, Vec<f64>)) -> f64| per_state.iter().map(f).sum::<f64>() / grid.len() as f64;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        EstimatorSummary {
            estimator: estimators[e].0,
            mean_error: avg(&|s| mean(&s.0)),
            mean_spread: avg(&|s| 2.0 * std_dev(&s.0)),
            cov_error: avg(&|s| mean(&s.1)),
            cov_spread: avg(&|s| 2.0 * std_dev(&s.1)),
            seconds_per_call: seconds[e] / calls,
        }
    };
    let (gmm, sampling) = (summarize(0), summarize(1));

    let path = cfg.output_dir.join("estimates.csv");
    table.save(&path)?;
    let mut summary = CsvTable::new(
        &fp,
        &["estimator", "samples", "mean_error", "mean_spread_2sigma", "cov_error", "cov_spread_2sigma", "seconds_per_call"],
    );
    for s in [&gmm, &sampling] {
        summary.push(&[
            s.estimator.to_string(),
            est.samples.to_string(),
            num(s.mean_error),
            num(s.mean_spread),
            num(s.cov_error),
            num(s.cov_spread),
            num(s.seconds_per_call),
        ])?;
    }
    let summary_path = cfg.output_dir.join("estimate_summary.csv");
    summary.save(&summary_path)?;
    Ok(EstimateOutput {
        rows: table.len(),
        path,
        summary_path,
        gmm,
        sampling,
    })
}

/// Models an ablation set needs, loaded once.
#[derive(Default)]
struct Models {
    dataset: Option<ResidualDataset>,
    regressor: Option<Regressor>,
    cvae: Option<CvaeModel>,
}

impl Models {
    fn load(cfg: &ExperimentConfig, kinds: &[AblationKind]) -> Result<Self> {
        let mut m = Models::default();
        if kinds.contains(&AblationKind::Jed) {
            m.dataset = Some(load_dataset(cfg)?);
        }
        if kinds.contains(&AblationKind::Mlp) {
            m.regressor = Some(load_regressor(cfg)?);
        }
        if kinds.contains(&AblationKind::Orio) {
            m.cvae = Some(load_cvae(cfg)?);
        }
        Ok(m)
    }

    fn context(&self, cfg: &ExperimentConfig) -> AblationContext<'_> {
        AblationContext {
            dataset: self.dataset.as_ref(),
            regressor: self.regressor.as_ref(),
            cvae: self.cvae.as_ref(),
            system: Some(cfg.system()),
            samples: cfg.controller.samples,
        }
    }
}

/// Seeds of trial `i`: `(disturbance stream, estimator stream)`.
pub fn trial_seeds(seed: u64, trial: usize) -> (u64, u64) {
    let base = mix_seed(seed, trial as u64);
    (mix_seed(base, 0), mix_seed(base, 1))
}

#[derive(Clone, Debug)]
pub struct SimulateOutput {
    pub path: PathBuf,
    pub diagnostics_path: Option<PathBuf>,
    pub trajectory: Trajectory,
}

/// One closed-loop rollout with `controller.kind`, logged step by step.
pub fn run_simulate(cfg: &ExperimentConfig) -> Result<SimulateOutput> {
    let kind = cfg.controller.kind;
    let models = Models::load(cfg, &[kind])?;
    let spec = cfg.barrier_spec()?;
    let system = cfg.system();
    let ablation = make_ablation(kind, &spec, &models.context(cfg))?;
    let (noise_seed, est_seed) = trial_seeds(cfg.seed, 0);
    let mut filter = SafetyFilter::new(&spec, system, nominal_controller(cfg)?, &ablation, est_seed);
    if let Some(b) = &cfg.controller.input_box {
        filter = filter.with_box(b.clone());
    }
    filter = filter.with_estimate_period(cfg.controller.estimate_every);
    if cfg.controller.diagnostics {
        filter = filter.with_diagnostics();
    }
    let x0 = cfg.initial_state();
    let traj = rollout(&system, &spec, &mut filter, &x0, cfg.simulate_horizon, noise_seed, InfeasiblePolicy::BestEffort)?;

    let fp = cfg.fingerprint();
    let names = |prefix: &'static str, n: usize| (0..n).map(move |i| format!("{prefix}{i}"));
    let mut header = vec!["k".to_string()];
    header.extend(names("x", system.state_dim()));
    header.extend(names("u", system.input_dim()));
    header.extend(names("d", system.residual_dim()));
    header.push("h".into());
    let mut table = CsvTable::with_header(&fp, header);
    for (k, state) in traj.states.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(state.to_vec().iter().map(|v| num(*v)));
        // The final state has no input or residual.
        let blank = |n: usize| vec![String::new(); n];
        match (traj.inputs.get(k), traj.residuals.get(k)) {
            (Some(u), Some(d)) => {
                row.extend(u.iter().map(|v| num(*v)));
                row.extend(d.iter().map(|v| num(*v)));
            }
            _ => {
                row.extend(blank(system.input_dim()));
                row.extend(blank(system.residual_dim()));
            }
        }
        row.push(num(traj.h[k]));
        table.push(&row)?;
    }
    let path = cfg.output_dir.join(format!("trajectory_{}.csv", kind.name()));
    table.save(&path)?;

    let diagnostics_path = match &filter.diagnostics {
        Some(log) => {
            let mut t = CsvTable::new(&fp, &["k", "active", "feasible", "multiplier", "margin"]);
            for d in log {
                t.push(&[
                    d.step.to_string(),
                    d.active.to_string(),
                    d.feasible.to_string(),
                    num(d.multiplier),
                    num(d.margin),
                ])?;
            }
            let p = cfg.output_dir.join(format!("diagnostics_{}.csv", kind.name()));
            t.save(&p)?;
            Some(p)
        }
        None => None,
    };
    Ok(SimulateOutput {
        path,
        diagnostics_path,
        trajectory: traj,
    })
}

#[derive(Clone, Debug)]
pub struct VerifyOutput {
    pub path: PathBuf,
    pub report: ExitProbReport,
}

/// Monte Carlo exit frequencies per ablation against the martingale bound.
///
/// Infeasible steps apply the best-effort input and are counted; when
/// `verify.infeasible_budget` is set and the total exceeds it, the report is
/// still written and a [`Error::BudgetExceeded`] is returned.
pub fn run_verify(cfg: &ExperimentConfig) -> Result<VerifyOutput> {
    let kinds = &cfg.verify.ablations;
    let models = Models::load(cfg, kinds)?;
    let ctx = models.context(cfg);
    let spec = cfg.barrier_spec()?;
    let system = cfg.system();
    let x0 = cfg.initial_state();
    let nominal = nominal_controller(cfg)?;
    let h0 = spec.eval(&x0)?;
    if h0 < 0.0 {
        return Err(Error::Config(format!("initial state lies outside the safe set (h = {h0})")));
    }
    let horizon = cfg.verify.horizon;
    let bound = exit_prob_bound(h0, spec.upper_bound(), spec.alpha(), horizon)?;

    let mut rows = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let ablation = make_ablation(kind, &spec, &ctx)?;
        let (mut exits, mut infeasible_steps, mut infeasible_trials, mut steps) = (0, 0, 0, 0);
        let start = Instant::now();
        for trial in 0..cfg.verify.trials {
            let (noise_seed, est_seed) = trial_seeds(cfg.seed, trial);
            let mut filter = SafetyFilter::new(&spec, system, nominal.clone(), &ablation, est_seed);
            if let Some(b) = &cfg.controller.input_box {
                filter = filter.with_box(b.clone());
            }
            filter = filter.with_estimate_period(cfg.controller.estimate_every);
            let traj = rollout(&system, &spec, &mut filter, &x0, horizon, noise_seed, InfeasiblePolicy::BestEffort)?;
            exits += traj.exited as usize;
            infeasible_steps += traj.infeasible_steps;
            infeasible_trials += (traj.infeasible_steps > 0) as usize;
            steps += traj.inputs.len();
        }
        let trials = cfg.verify.trials;
        rows.push(AblationResult {
            kind,
            trials,
            exits,
            frequency: exits as f64 / trials as f64,
            interval: wilson_interval(exits, trials, Z95)?,
            infeasible_steps,
            infeasible_trials,
            seconds_per_step: start.elapsed().as_secs_f64() / steps.max(1) as f64,
        });
    }
    let report = ExitProbReport {
        h0,
        upper: spec.upper_bound(),
        alpha: spec.alpha(),
        horizon,
        bound,
        rows,
    };
    let path = cfg.output_dir.join("verify.csv");
    report.to_table(&cfg.fingerprint())?.save(&path)?;
    if let Some(budget) = cfg.verify.infeasible_budget {
        let total: usize = report.rows.iter().map(|r| r.infeasible_steps).sum();
        if total > budget {
            return Err(Error::BudgetExceeded {
                infeasible: total,
                budget,
            });
        }
    }
    Ok(VerifyOutput { path, report })
}

/// Timing quantiles for one estimator at one sample count.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub estimator: &'static str,
    pub samples: usize,
    pub calls: usize,
    pub median: f64,
    pub p95: f64,
}

#[derive(Clone, Debug)]
pub struct BenchOutput {
    pub path: PathBuf,
    pub rows: Vec<BenchRow>,
}

impl BenchOutput {
    pub fn get(&self, estimator: &str, samples: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.samples == samples)
    }
}

/// Nearest-rank quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

/// Wall-clock of both estimators over a state grid. Calls alternate between
/// the estimators so drifts in machine load hit both equally; warm-up
/// rounds are discarded.
pub fn run_bench(cfg: &ExperimentConfig) -> Result<BenchOutput> {
    let model = load_cvae(cfg)?;
    let grid = cfg.grid(cfg.bench.states);
    let states: Vec<Vec<f64>> = grid.iter().map(|&g| cfg.grid_state(g).to_vec()).collect();
    let mut rows = Vec::new();
    for &s in &cfg.bench.samples {
        let mut times = [Vec::new(), Vec::new()];
        for round in 0..cfg.bench.warmup + cfg.bench.repeats {
            for (i, x) in states.iter().enumerate() {
                let seed = mix_seed(cfg.seed, (round * states.len() + i) as u64);
                // Alternate which estimator goes first.
                let order = if (round + i) % 2 == 0 { [0, 1] } else { [1, 0] };
                for e in order {
                    let t = Instant::now();
                    let m = if e == 0 {
                        estimate_moments_gmm(&model, x, s, seed)?
                    } else {
                        estimate_moments_sampling(&model, x, s, seed)?
                    };
                    let dt = t.elapsed().as_secs_f64();
                    std::hint::black_box(m);
                    if round >= cfg.bench.warmup {
                        times[e].push(dt);
                    }
                }
            }
        }
        for (e, name) in ["gmm", "sampling"].into_iter().enumerate() {
            let t = &mut times[e];
            t.sort_by(f64::total_cmp);
            rows.push(BenchRow {
                estimator: name,
                samples: s,
                calls: t.len(),
                median: quantile(t, 0.5),
                p95: quantile(t, 0.95),
            });
        }
    }
    let mut table = CsvTable::new(&cfg.fingerprint(), &["estimator", "samples", "calls", "median_s", "p95_s"]);
    for r in &rows {
        table.push(&[
            r.estimator.to_string(),
            r.samples.to_string(),
            r.calls.to_string(),
            num(r.median),
            num(r.p95),
        ])?;
    }
    let path = cfg.output_dir.join("bench.csv");
    table.save(&path)?;
    Ok(BenchOutput { path, rows })
}
