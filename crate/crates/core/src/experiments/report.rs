use std::fmt::Write as _;
use std::path::Path;

use crate::control::AblationKind;
use crate::error::{Error, Result};

/// Two-sided standard-normal quantiles used for Wilson intervals.
pub const Z95: f64 = 1.959_963_984_540_054;
pub const Z99: f64 = 2.575_829_303_548_901;

/// Wilson score interval for `successes` out of `trials` at normal quantile
/// `z`, clamped to `[0, 1]`.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> Result<(f64, f64)> {
    if trials == 0 || successes > trials {
        return Err(Error::InvalidArgument(format!(
            "Wilson interval needs 0 ≤ successes ≤ trials > 0, got {successes}/{trials}"
        )));
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // Round-off can push an endpoint a hair past p when p is 0 or 1.
    let lo = (centre - half).clamp(0.0, 1.0).min(p);
    let hi = (centre + half).clamp(0.0, 1.0).max(p);
    Ok((lo, hi))
}

/// Delimited text with a fingerprint comment line and a header row.
#[derive(Clone, Debug)]
pub struct CsvTable {
    fingerprint: String,
    header: Vec<String>,
    rows: Vec<String>,
}

impl CsvTable {
    pub fn new(fingerprint: &str, header: &[&str]) -> Self {
        Self {
            fingerprint: fingerprint.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_header(fingerprint: &str, header: Vec<String>) -> Self {
        Self {
            fingerprint: fingerprint.to_string(),
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, fields: &[String]) -> Result<()> {
        if fields.len() != self.header.len() {
            return Err(Error::dim("CSV row", self.header.len(), fields.len()));
        }
        self.rows.push(fields.join(","));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# fingerprint: {}", self.fingerprint);
        let _ = writeln!(s, "{}", self.header.join(","));
        for r in &self.rows {
            let _ = writeln!(s, "{r}");
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Shortest round-trip decimal form.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

/// One ablation's Monte Carlo outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationResult {
    pub kind: AblationKind,
    pub trials: usize,
    pub exits: usize,
    pub frequency: f64,
    /// Wilson 95% interval for `frequency`.
    pub interval: (f64, f64),
    /// Total infeasible control steps across all trials.
    pub infeasible_steps: usize,
    /// Trials with at least one infeasible step.
    pub infeasible_trials: usize,
    pub seconds_per_step: f64,
}

/// Exit-probability comparison across ablations.
#[derive(Clone, Debug, PartialEq)]
pub struct ExitProbReport {
    pub h0: f64,
    pub upper: f64,
    pub alpha: f64,
    pub horizon: usize,
    /// `1 − (h0/M)α^K`.
    pub bound: f64,
    pub rows: Vec<AblationResult>,
}

impl ExitProbReport {
    pub fn get(&self, kind: AblationKind) -> Option<&AblationResult> {
        self.rows.iter().find(|r| r.kind == kind)
    }

    pub fn to_table(&self, fingerprint: &str) -> Result<CsvTable> {
        let mut t = CsvTable::new(
            fingerprint,
            &[
                "ablation",
                "trials",
                "exits",
                "frequency",
                "wilson95_lower",
                "wilson95_upper",
                "bound",
                "h0",
                "M",
                "alpha",
                "K",
                "infeasible_steps",
                "infeasible_trials",
                "seconds_per_step",
            ],
        );
        for r in &self.rows {
            t.push(&[
                r.kind.name().to_string(),
                r.trials.to_string(),
                r.exits.to_string(),
                num(r.frequency),
                num(r.interval.0),
                num(r.interval.1),
                num(self.bound),
                num(self.h0),
                num(self.upper),
                num(self.alpha),
                self.horizon.to_string(),
                r.infeasible_steps.to_string(),
                r.infeasible_trials.to_string(),
                num(r.seconds_per_step),
            ])?;
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_reference_values() {
        // 10/100 at 95%: (0.05523, 0.17437), the textbook example.
        let (lo, hi) = wilson_interval(10, 100, Z95).unwrap();
        assert!((lo - 0.055_229).abs() < 1e-5 && (hi - 0.174_366).abs() < 1e-5, "{lo} {hi}");
        let (lo, hi) = wilson_interval(0, 100, Z95).unwrap();
        assert_eq!(lo, 0.0);
        assert!((hi - 0.036_994).abs() < 1e-5);
    }

    #[test]
    fn single_trial_is_well_formed() {
        for s in [0, 1] {
            let (lo, hi) = wilson_interval(s, 1, Z95).unwrap();
            assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
            assert!(lo <= s as f64 && s as f64 <= hi);
        }
        assert!(wilson_interval(0, 0, Z95).is_err());
    }

    #[test]
    fn table_has_fingerprint_and_header() {
        let mut t = CsvTable::new("abc", &["a", "b"]);
        t.push(&["1".into(), "2".into()]).unwrap();
        assert!(t.push(&["1".into()]).is_err());
        assert_eq!(t.to_text(), "# fingerprint: abc\na,b\n1,2\n");
    }
}
