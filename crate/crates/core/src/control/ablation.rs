use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DVector;

use crate::barrier::BarrierSpec;
use crate::cvae::{estimate_moments_gmm, CvaeModel, Regressor, ResidualDataset};
use crate::error::{Error, Result};
use crate::gaussian::GaussianParams;
use crate::sim::{ControlOutcome, Controller, SimState, System};

use super::constraint::build_constraint;
use super::nominal::NominalController;
use super::solver::{solve_safety_filter, InputBox};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AblationKind {
    /// No disturbance model.
    Standard,
    /// Constant dataset mean and covariance.
    Jed,
    /// Learned mean only.
    Mlp,
    /// Exact disturbance moments.
    True,
    /// CVAE moments.
    Orio,
}

impl AblationKind {
    pub const ALL: [AblationKind; 5] = [
        AblationKind::Standard,
        AblationKind::Jed,
        AblationKind::Mlp,
        AblationKind::True,
        AblationKind::Orio,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationKind::Standard => "standard",
            AblationKind::Jed => "jed",
            AblationKind::Mlp => "mlp",
            AblationKind::True => "true",
            AblationKind::Orio => "orio",
        }
    }
}

impl FromStr for AblationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}`")))
    }
}

/// Handles an ablation may need; unused ones can stay `None`.
#[derive(Clone, Copy, Default)]
pub struct AblationContext<'a> {
    pub dataset: Option<&'a ResidualDataset>,
    pub regressor: Option<&'a Regressor>,
    pub cvae: Option<&'a CvaeModel>,
    pub system: Option<System>,
    /// Latent samples per ORIO step.
    pub samples: usize,
}

/// Moment model supplied by the caller.
pub type MomentFn<'a> = Arc<dyn Fn(&SimState) -> Result<GaussianParams> + Send + Sync + 'a>;

#[derive(Clone)]
enum Source<'a> {
    Zero(usize),
    Constant { mean: Vec<f64>, trace: f64 },
    Regressor(&'a Regressor),
    True(System),
    Cvae { model: &'a CvaeModel, samples: usize },
    Custom(MomentFn<'a>),
}

impl fmt::Debug for Source<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Zero(l) => write!(f, "Zero({l})"),
            Source::Constant { mean, trace } => write!(f, "Constant {{ mean: {mean:?}, trace: {trace} }}"),
            Source::Regressor(_) => f.write_str("Regressor"),
            Source::True(s) => write!(f, "True({s:?})"),
            Source::Cvae { samples, .. } => write!(f, "Cvae {{ samples: {samples} }}"),
            Source::Custom(_) => f.write_str("Custom"),
        }
    }
}

/// Disturbance model `x ↦ (m(x), c(x))` with `c = (λ_max/2)·tr Σ(x)`.
#[derive(Clone, Debug)]
pub struct Ablation<'a> {
    kind: AblationKind,
    half_lambda: f64,
    source: Source<'a>,
}

pub fn make_ablation<'a>(kind: AblationKind, spec: &BarrierSpec, ctx: &AblationContext<'a>) -> Result<Ablation<'a>> {
    let missing = |what: &str| Error::InvalidArgument(format!("{} ablation needs {what}", kind.name()));
    let source = match kind {
        AblationKind::Standard => {
            let system = ctx.system.ok_or_else(|| missing("the system"))?;
            Source::Zero(system.residual_dim())
        }
        AblationKind::Jed => {
            let ds = ctx.dataset.ok_or_else(|| missing("a dataset"))?;
            if ds.len() < 2 {
                return Err(missing("at least two dataset rows"));
            }
            Source::Constant {
                mean: ds.residual_mean(),
                trace: ds.residual_cov().trace(),
            }
        }
        AblationKind::Mlp => Source::Regressor(ctx.regressor.ok_or_else(|| missing("a regressor"))?),
        AblationKind::True => Source::True(ctx.system.ok_or_else(|| missing("the system"))?),
        AblationKind::Orio => {
            if ctx.samples == 0 {
                return Err(missing("a positive sample count"));
            }
            Source::Cvae {
                model: ctx.cvae.ok_or_else(|| missing("a CVAE model"))?,
                samples: ctx.samples,
            }
        }
    };
    Ok(Ablation {
        kind,
        half_lambda: 0.5 * spec.hessian_bound(),
        source,
    })
}

impl<'a> Ablation<'a> {
    /// Ablation of `kind` whose moments come from `moments` instead of the
    /// built-in source.
    pub fn from_moments(kind: AblationKind, spec: &BarrierSpec, moments: MomentFn<'a>) -> Self {
        Ablation {
            kind,
            half_lambda: 0.5 * spec.hessian_bound(),
            source: Source::Custom(moments),
        }
    }

    pub fn kind(&self) -> AblationKind {
        self.kind
    }

    /// `(m(x), c(x))`; `seed` feeds the CVAE estimator only.
    pub fn moments(&self, x: &SimState, seed: u64) -> Result<(Vec<f64>, f64)> {
        match &self.source {
            Source::Zero(l) => Ok((vec![0.0; *l], 0.0)),
            Source::Constant { mean, trace } => Ok((mean.clone(), self.half_lambda * trace)),
            Source::Regressor(reg) => Ok((reg.predict(&x.to_vec())?, 0.0)),
            Source::True(system) => {
                let g = system.true_disturbance(x)?;
                let trace = g.trace();
                Ok((g.mean, self.half_lambda * trace))
            }
            Source::Cvae { model, samples } => {
                let est = estimate_moments_gmm(model, &x.to_vec(), *samples, seed)?;
                Ok((est.mean, self.half_lambda * est.cov.trace()))
            }
            Source::Custom(f) => {
                let g = f(x)?;
                let trace = g.trace();
                Ok((g.mean, self.half_lambda * trace))
            }
        }
    }
}

/// SplitMix64 finalizer; derives per-step estimator seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-step solver diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub active: bool,
    pub feasible: bool,
    pub multiplier: f64,
    pub margin: f64,
}

/// Nominal controller followed by the ablation's safety filter.
pub struct SafetyFilter<'a, N> {
    pub spec: &'a BarrierSpec,
    pub system: System,
    pub nominal: N,
    pub ablation: &'a Ablation<'a>,
    pub input_box: Option<InputBox>,
    pub run_seed: u64,
    pub diagnostics: Option<Vec<StepDiagnostics>>,
    /// Moments are re-estimated every this many steps and held in between.
    pub estimate_every: usize,
    held: Option<(Vec<f64>, f64)>,
}

impl<'a, N: NominalController> SafetyFilter<'a, N> {
    pub fn new(spec: &'a BarrierSpec, system: System, nominal: N, ablation: &'a Ablation<'a>, run_seed: u64) -> Self {
        Self {
            spec,
            system,
            nominal,
            ablation,
            input_box: None,
            run_seed,
            diagnostics: None,
            estimate_every: 1,
            held: None,
        }
    }

    /// Runs the estimator only on steps divisible by `every`, e.g. 100 Hz
    /// estimation under 333 Hz control with `every = 3`.
    pub fn with_estimate_period(mut self, every: usize) -> Self {
        self.estimate_every = every.max(1);
        self
    }

    pub fn with_box(mut self, input_box: InputBox) -> Self {
        self.input_box = Some(input_box);
        self
    }

    pub fn with_diagnostics(mut self) -> Self {
        self.diagnostics = Some(Vec::new());
        self
    }

    fn record(&mut self, d: StepDiagnostics) {
        if let Some(log) = self.diagnostics.as_mut() {
            log.push(d);
        }
    }

    /// Filtered input at step `k`.
    pub fn decide(&mut self, k: usize, x: &SimState) -> Result<ControlOutcome> {
        let u_nom = self.nominal.input(x)?;
        let (mean, c) = match &self.held {
            Some(m) if k % self.estimate_every != 0 => m.clone(),
            _ => {
                let m = self.ablation.moments(x, mix_seed(self.run_seed, k as u64))?;
                if self.estimate_every > 1 {
                    self.held = Some(m.clone());
                }
                m
            }
        };
        let problem = build_constraint(self.spec, &self.system, x, &u_nom, &mean, c)?;
        let outcome = match solve_safety_filter(&problem) {
            Ok(sol) => match &self.input_box {
                Some(b) if !b.contains(&sol.u) => {
                    let projected = b.project(&sol.u);
                    let margin = problem.g(&projected);
                    if margin >= -super::solver::ROOT_TOL {
                        self.record(StepDiagnostics { step: k, active: true, feasible: true, multiplier: sol.multiplier, margin });
                        ControlOutcome::Feasible(projected.iter().copied().collect())
                    } else {
                        let best = problem.maximize_over_box(b);
                        let margin = problem.g(&best);
                        self.record(StepDiagnostics { step: k, active: true, feasible: false, multiplier: sol.multiplier, margin });
                        ControlOutcome::Infeasible(best.iter().copied().collect())
                    }
                }
                _ => {
                    self.record(StepDiagnostics {
                        step: k,
                        active: sol.active,
                        feasible: true,
                        multiplier: sol.multiplier,
                        margin: sol.margin,
                    });
                    ControlOutcome::Feasible(sol.u.iter().copied().collect())
                }
            },
            Err(Error::Infeasible { sup_g, best_input }) => {
                let best = match &self.input_box {
                    Some(b) => problem.maximize_over_box(b),
                    None => DVector::from_vec(best_input),
                };
                self.record(StepDiagnostics { step: k, active: true, feasible: false, multiplier: f64::INFINITY, margin: sup_g });
                ControlOutcome::Infeasible(best.iter().copied().collect())
            }
            Err(e) => return Err(e),
        };
        Ok(outcome)
    }
}

impl<N: NominalController> Controller for SafetyFilter<'_, N> {
    fn control(&mut self, step: usize, x: &SimState) -> Result<ControlOutcome> {
        self.decide(step, x)
    }
}
