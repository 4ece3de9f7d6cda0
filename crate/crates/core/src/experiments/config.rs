use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Vector3;
use sha2::{Digest, Sha256};

use crate::barrier::{BarrierKind, BarrierSpec};
use crate::control::{AblationKind, InputBox};
use crate::cvae::{LrSchedule, TrainConfig};
use crate::error::{Error, Result};
use crate::sim::{DiParams, QuadState, QuadrotorParams, SimState, System};

/// Environment variable that replaces `output_dir` from the config file.
pub const OUTPUT_DIR_ENV: &str = "ORIO_OUTPUT_DIR";

/// Values that mean "unset" for optional keys.
const NONE: &str = "none";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SystemTag {
    DoubleIntegrator,
    Quadrotor,
}

impl SystemTag {
    pub fn name(self) -> &'static str {
        match self {
            SystemTag::DoubleIntegrator => "double-integrator",
            SystemTag::Quadrotor => "quadrotor",
        }
    }
}

impl FromStr for SystemTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "double-integrator" | "di" => Ok(SystemTag::DoubleIntegrator),
            "quadrotor" => Ok(SystemTag::Quadrotor),
            other => Err(Error::Config(format!("unknown system `{other}`"))),
        }
    }
}

/// Which learned models `train` produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Cvae,
    Mlp,
    Both,
}

impl ModelKind {
    pub fn includes_cvae(self) -> bool {
        matches!(self, ModelKind::Cvae | ModelKind::Both)
    }

    pub fn includes_mlp(self) -> bool {
        matches!(self, ModelKind::Mlp | ModelKind::Both)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollectSettings {
    pub trajectories: usize,
    pub steps: usize,
    /// Closed-loop pilot (`true`) or zero input.
    pub closed_loop: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BarrierSettings {
    pub c: f64,
    pub z0: f64,
    pub lambda_pen: f64,
    pub alpha: f64,
    pub q_weight: f64,
    pub r_weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerSettings {
    pub kind: AblationKind,
    pub samples: usize,
    pub input_box: Option<InputBox>,
    pub target: Vec<f64>,
    pub kp: f64,
    pub kd: f64,
    pub k_att: f64,
    pub lqr_q: f64,
    pub lqr_r: f64,
    pub diagnostics: bool,
    /// Control steps per moment estimate; 1 re-estimates every step.
    pub estimate_every: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateSettings {
    pub grid_lower: f64,
    pub grid_upper: f64,
    pub grid_points: usize,
    /// Velocity held fixed across the double-integrator grid.
    pub velocity: f64,
    pub repetitions: usize,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifySettings {
    pub ablations: Vec<AblationKind>,
    pub trials: usize,
    pub horizon: usize,
    pub infeasible_budget: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchSettings {
    pub samples: Vec<usize>,
    pub states: usize,
    pub repeats: usize,
    pub warmup: usize,
}

/// Fully resolved experiment settings.
///
/// The file format is one `key = value` per line with dotted section
/// prefixes; `#` starts a comment. The `system` key selects a preset whose
/// values every other key may override. Unknown keys are errors.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub system: SystemTag,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dt: f64,
    pub noise: bool,
    pub mass: f64,
    pub gravity: f64,
    /// Double integrator: `[x, v]`; quadrotor: hover position `[x, y, z]`.
    pub x0: Vec<f64>,
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub mlp_model: Option<PathBuf>,
    pub collect: CollectSettings,
    pub model_kind: ModelKind,
    pub train: TrainConfig,
    pub barrier: BarrierSettings,
    pub controller: ControllerSettings,
    pub estimate: EstimateSettings,
    pub simulate_horizon: usize,
    pub verify: VerifySettings,
    pub bench: BenchSettings,
    entries: BTreeMap<String, String>,
}

fn preset(system: SystemTag) -> Vec<(&'static str, &'static str)> {
    let shared = [
        ("seed", "0"),
        ("output_dir", "out"),
        ("noise", "true"),
        ("dataset", NONE),
        ("model", NONE),
        ("mlp_model", NONE),
        ("train.latent_dim", "2"),
        ("train.kl_warmup", "0.3"),
        ("train.schedule", "cosine"),
        ("train.standardize_residual", "true"),
        ("barrier.q_weight", "1"),
        ("barrier.r_weight", "1"),
        ("controller.samples", "200"),
        ("controller.diagnostics", "false"),
        ("controller.estimate_every", "1"),
        ("controller.kp", "4"),
        ("controller.kd", "4"),
        ("controller.k_att", "10"),
        ("controller.lqr_q", "1"),
        ("controller.lqr_r", "1"),
        ("estimate.repetitions", "100"),
        ("estimate.samples", "10000"),
        ("estimate.velocity", "0"),
        ("verify.ablations", "standard, jed, mlp, true, orio"),
        ("verify.trials", "100"),
        ("verify.infeasible_budget", NONE),
        ("bench.samples", "100, 1000, 2000, 10000"),
        ("bench.states", "21"),
        ("bench.repeats", "5"),
        ("bench.warmup", "2"),
    ];
    let specific: &[(&str, &str)] = match system {
        SystemTag::DoubleIntegrator => &[
            ("system", "double-integrator"),
            ("dt", "0.01"),
            ("mass", "1"),
            ("gravity", "9.81"),
            ("x0", "0, 0"),
            ("collect.trajectories", "36"),
            ("collect.steps", "500"),
            ("collect.closed_loop", "false"),
            ("train.model", "both"),
            ("train.epochs", "150"),
            ("train.batch_size", "32"),
            ("train.learning_rate", "1e-3"),
            ("train.hidden", "32, 32"),
            ("train.condition_on", "0"),
            ("train.standardize_state", "false"),
            ("barrier.c", "100"),
            ("barrier.z0", "0"),
            ("barrier.lambda_pen", "0"),
            ("barrier.alpha", "0.99"),
            ("controller.kind", "orio"),
            ("controller.input_lower", NONE),
            ("controller.input_upper", NONE),
            ("controller.target", "2, 0"),
            ("estimate.grid_lower", "-3.141592653589793"),
            ("estimate.grid_upper", "3.141592653589793"),
            ("estimate.grid_points", "201"),
            ("simulate.horizon", "500"),
            ("verify.horizon", "500"),
        ],
        SystemTag::Quadrotor => &[
            ("system", "quadrotor"),
            ("dt", "0.003003003003003003"),
            ("mass", "1"),
            ("gravity", "9.81"),
            ("x0", "0, 0, 1"),
            ("collect.trajectories", "20"),
            ("collect.steps", "666"),
            ("collect.closed_loop", "true"),
            ("train.model", "both"),
            ("train.epochs", "60"),
            ("train.batch_size", "64"),
            ("train.learning_rate", "1e-3"),
            ("train.hidden", "32, 32"),
            ("train.condition_on", "2"),
            ("train.standardize_state", "true"),
            ("barrier.c", "100"),
            ("barrier.z0", "0.9107"),
            ("barrier.lambda_pen", "0.25"),
            ("barrier.alpha", "0.9975"),
            ("controller.kind", "orio"),
            ("controller.input_lower", "0, -10, -10, -10"),
            ("controller.input_upper", "39.24, 10, 10, 10"),
            ("controller.target", "0, 0, 0"),
            ("estimate.grid_lower", "0"),
            ("estimate.grid_upper", "1.5"),
            ("estimate.grid_points", "151"),
            ("simulate.horizon", "666"),
            ("verify.horizon", "666"),
        ],
    };
    shared.iter().chain(specific).copied().collect()
}

/// Splits config text into `(line, key, value)` triples.
fn parse_lines(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        out.push((i + 1, k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

struct Reader<'a>(&'a BTreeMap<String, String>);

impl Reader<'_> {
    fn raw(&self, key: &str) -> &str {
        self.0.get(key).map(String::as_str).unwrap_or_default()
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key);
        v.parse()
            .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
    }

    fn positive<T: FromStr + PartialOrd + Default>(&self, key: &str) -> Result<T> {
        let v: T = self.get(key)?;
        if v > T::default() {
            Ok(v)
        } else {
            Err(Error::Config(format!("`{key}` must be positive")))
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{s}`")))
            })
            .collect()
    }

    fn optional(&self, key: &str) -> Option<&str> {
        match self.raw(key) {
            "" | NONE => None,
            v => Some(v),
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.optional(key).map(PathBuf::from)
    }
}

impl ExperimentConfig {
    /// Reads a config file; `seed` replaces the file's seed when given.
    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text, seed)
    }

    pub fn from_text(text: &str, seed: Option<u64>) -> Result<Self> {
        let lines = parse_lines(text)?;
        let system = lines
            .iter()
            .find(|(_, k, _)| k == "system")
            .map(|(_, _, v)| v.parse())
            .transpose()?
            .ok_or_else(|| Error::Config("missing `system`".into()))?;
        Self::with_overrides(system, lines.into_iter().map(|(l, k, v)| (Some(l), k, v)), seed)
    }

    /// The preset for `system` with no overrides.
    pub fn preset(system: SystemTag) -> Result<Self> {
        Self::with_overrides(system, std::iter::empty(), None)
    }

    /// Applies `key = value` overrides on top of this config.
    pub fn with(&self, overrides: &[(&str, &str)]) -> Result<Self> {
        let base = self.entries.iter().map(|(k, v)| (None, k.clone(), v.clone()));
        let extra = overrides.iter().map(|(k, v)| (None, k.to_string(), v.to_string()));
        Self::with_overrides(self.system, base.chain(extra), None)
    }

    fn with_overrides(
        system: SystemTag,
        overrides: impl Iterator<Item = (Option<usize>, String, String)>,
        seed: Option<u64>,
    ) -> Result<Self> {
        let mut entries: BTreeMap<String, String> = preset(system)
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        for (line, k, v) in overrides {
            if k == "system" && v.parse::<SystemTag>()? != system {
                return Err(Error::Config("`system` cannot change after the preset is chosen".into()));
            }
            match entries.get_mut(&k) {
                Some(slot) => *slot = v,
                None => {
                    let at = line.map(|l| format!("line {l}: ")).unwrap_or_default();
                    return Err(Error::Config(format!("{at}unknown key `{k}`")));
                }
            }
        }
        if let Some(s) = seed {
            entries.insert("seed".into(), s.to_string());
        }
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                entries.insert("output_dir".into(), dir);
            }
        }
        Self::resolve(system, entries)
    }

    fn resolve(system: SystemTag, entries: BTreeMap<String, String>) -> Result<Self> {
        let r = Reader(&entries);
        let seed: u64 = r.get("seed")?;
        let schedule = match r.raw("train.schedule") {
            "constant" => LrSchedule::Constant,
            "cosine" => LrSchedule::Cosine,
            other => return Err(Error::Config(format!("unknown schedule `{other}`"))),
        };
        let model_kind = match r.raw("train.model") {
            "cvae" => ModelKind::Cvae,
            "mlp" => ModelKind::Mlp,
            "both" => ModelKind::Both,
            other => return Err(Error::Config(format!("unknown model kind `{other}`"))),
        };
        let train = TrainConfig {
            epochs: r.positive("train.epochs")?,
            batch_size: r.positive("train.batch_size")?,
            learning_rate: r.positive("train.learning_rate")?,
            schedule,
            kl_warmup: r.get("train.kl_warmup")?,
            hidden: r.list("train.hidden")?,
            latent_dim: r.positive("train.latent_dim")?,
            condition_on: match r.optional("train.condition_on") {
                None => None,
                Some(_) => Some(r.list("train.condition_on")?),
            },
            standardize_state: r.get("train.standardize_state")?,
            standardize_residual: r.get("train.standardize_residual")?,
            seed,
        };
        if !(0.0..=1.0).contains(&train.kl_warmup) {
            return Err(Error::Config("`train.kl_warmup` must lie in [0, 1]".into()));
        }

        let input_box = match (r.optional("controller.input_lower"), r.optional("controller.input_upper")) {
            (None, None) => None,
            (Some(_), Some(_)) => Some(
                InputBox::new(r.list("controller.input_lower")?, r.list("controller.input_upper")?)
                    .map_err(|e| Error::Config(e.to_string()))?,
            ),
            _ => return Err(Error::Config("input bounds need both lower and upper".into())),
        };
        let ablations = r
            .list::<String>("verify.ablations")?
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<AblationKind>>>()?;
        if ablations.is_empty() {
            return Err(Error::Config("`verify.ablations` is empty".into()));
        }
        let infeasible_budget = match r.optional("verify.infeasible_budget") {
            None => None,
            Some(_) => Some(r.get("verify.infeasible_budget")?),
        };
        let estimate = EstimateSettings {
            grid_lower: r.get("estimate.grid_lower")?,
            grid_upper: r.get("estimate.grid_upper")?,
            grid_points: r.positive("estimate.grid_points")?,
            velocity: r.get("estimate.velocity")?,
            repetitions: r.positive("estimate.repetitions")?,
            samples: r.get("estimate.samples")?,
        };
        if estimate.samples == 0 {
            return Err(Error::Config("`estimate.samples` must be positive".into()));
        }
        if !(estimate.grid_lower <= estimate.grid_upper) {
            return Err(Error::Config("estimate grid has lower > upper".into()));
        }
        let bench = BenchSettings {
            samples: r.list("bench.samples")?,
            states: r.positive("bench.states")?,
            repeats: r.positive("bench.repeats")?,
            warmup: r.get("bench.warmup")?,
        };
        if bench.samples.is_empty() || bench.samples.contains(&0) {
            return Err(Error::Config("`bench.samples` needs positive values".into()));
        }

        let cfg = Self {
            system,
            seed,
            output_dir: PathBuf::from(r.raw("output_dir")),
            dt: r.positive("dt")?,
            noise: r.get("noise")?,
            mass: r.positive("mass")?,
            gravity: r.positive("gravity")?,
            x0: r.list("x0")?,
            dataset: r.path("dataset"),
            model: r.path("model"),
            mlp_model: r.path("mlp_model"),
            collect: CollectSettings {
                trajectories: r.positive("collect.trajectories")?,
                steps: r.positive("collect.steps")?,
                closed_loop: r.get("collect.closed_loop")?,
            },
            model_kind,
            train,
            barrier: BarrierSettings {
                c: r.positive("barrier.c")?,
                z0: r.get("barrier.z0")?,
                lambda_pen: r.get("barrier.lambda_pen")?,
                alpha: r.get("barrier.alpha")?,
                q_weight: r.positive("barrier.q_weight")?,
                r_weight: r.positive("barrier.r_weight")?,
            },
            controller: ControllerSettings {
                kind: r.raw("controller.kind").parse()?,
                samples: r.positive("controller.samples")?,
                input_box,
                target: r.list("controller.target")?,
                kp: r.get("controller.kp")?,
                kd: r.get("controller.kd")?,
                k_att: r.get("controller.k_att")?,
                lqr_q: r.positive("controller.lqr_q")?,
                lqr_r: r.positive("controller.lqr_r")?,
                diagnostics: r.get("controller.diagnostics")?,
                estimate_every: r.positive("controller.estimate_every")?,
            },
            estimate,
            simulate_horizon: r.get("simulate.horizon")?,
            verify: VerifySettings {
                ablations,
                trials: r.positive("verify.trials")?,
                horizon: r.get("verify.horizon")?,
                infeasible_budget,
            },
            bench,
            entries,
        };
        cfg.check_shapes()?;
        cfg.barrier_spec()?;
        Ok(cfg)
    }

    fn check_shapes(&self) -> Result<()> {
        let (x0_len, target_len, inputs) = match self.system {
            SystemTag::DoubleIntegrator => (2, 2, 1),
            SystemTag::Quadrotor => (3, 3, 4),
        };
        let check = |what: &str, expected: usize, actual: usize| {
            if expected == actual {
                Ok(())
            } else {
                Err(Error::Config(format!("`{what}` needs {expected} values, got {actual}")))
            }
        };
        check("x0", x0_len, self.x0.len())?;
        check("controller.target", target_len, self.controller.target.len())?;
        if let Some(b) = &self.controller.input_box {
            check("controller.input_lower", inputs, b.lower.len())?;
        }
        let state_dim = self.system().state_dim();
        if let Some(idx) = &self.train.condition_on {
            if idx.is_empty() || idx.iter().any(|&i| i >= state_dim) {
                return Err(Error::Config(format!(
                    "`train.condition_on` must list indices below {state_dim}"
                )));
            }
        }
        Ok(())
    }

    pub fn system(&self) -> System {
        match self.system {
            SystemTag::DoubleIntegrator => System::DoubleIntegrator(DiParams {
                dt: self.dt,
                noise: self.noise,
            }),
            SystemTag::Quadrotor => System::Quadrotor(QuadrotorParams {
                mass: self.mass,
                gravity: self.gravity,
                dt: self.dt,
                noise: self.noise,
            }),
        }
    }

    pub fn initial_state(&self) -> SimState {
        match self.system {
            SystemTag::DoubleIntegrator => SimState::DoubleIntegrator {
                x: self.x0[0],
                v: self.x0[1],
            },
            SystemTag::Quadrotor => {
                SimState::Quadrotor(QuadState::hover(Vector3::new(self.x0[0], self.x0[1], self.x0[2])))
            }
        }
    }

    pub fn barrier_spec(&self) -> Result<BarrierSpec> {
        let kind = match self.system {
            SystemTag::DoubleIntegrator => BarrierKind::Quadratic,
            SystemTag::Quadrotor => BarrierKind::QuadrotorOrientation,
        };
        let b = &self.barrier;
        BarrierSpec::from_dare(kind, self.dt, b.q_weight, b.r_weight, b.c, b.z0, b.lambda_pen, b.alpha)
            .map_err(|e| Error::Config(format!("barrier: {e}")))
    }

    /// State at grid value `g`: position for the double integrator, hover
    /// altitude for the quadrotor.
    pub fn grid_state(&self, g: f64) -> SimState {
        match self.system {
            SystemTag::DoubleIntegrator => SimState::DoubleIntegrator {
                x: g,
                v: self.estimate.velocity,
            },
            SystemTag::Quadrotor => SimState::Quadrotor(QuadState::hover(Vector3::new(0.0, 0.0, g))),
        }
    }

    pub fn grid(&self, points: usize) -> Vec<f64> {
        let (lo, hi) = (self.estimate.grid_lower, self.estimate.grid_upper);
        if points == 1 {
            return vec![0.5 * (lo + hi)];
        }
        (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect()
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.dataset.clone().unwrap_or_else(|| self.output_dir.join("dataset.csv"))
    }

    pub fn model_path(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.output_dir.join("model.cvae"))
    }

    pub fn mlp_model_path(&self) -> PathBuf {
        self.mlp_model.clone().unwrap_or_else(|| self.output_dir.join("model.mlp"))
    }

    /// Canonical `key = value` listing of every setting, sorted by key.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// SHA-256 of [`ExperimentConfig::to_text`] without `output_dir`, so
    /// relocating results keeps their fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries.iter().filter(|(k, _)| k.as_str() != "output_dir") {
            h.update(format!("{k} = {v}\n").as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
