//! Residual datasets: rows of `(state x, residual d = x⁺ − F(x, u))`.
//!
//! On disk a dataset is a comma-separated file
//!
//! ```text
//! # fingerprint: 3f1c9a2e5b7d0c41
//! x_0,x_1,d_0,d_1
//! 0.0,0.0,-0.41,1.07
//! ...
//! ```
//!
//! plus a `<file>.meta` sidecar of `key = value` lines (`system`, `dt`,
//! `rows`, `state_dim`, `residual_dim`, `fingerprint`).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub system: String,
    pub dt: f64,
    pub fingerprint: String,
}

impl Default for DatasetMeta {
    fn default() -> Self {
        Self {
            system: "unknown".into(),
            dt: 0.0,
            fingerprint: String::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualDataset {
    state_dim: usize,
    residual_dim: usize,
    states: Vec<f64>,
    residuals: Vec<f64>,
    pub meta: DatasetMeta,
}

impl ResidualDataset {
    pub fn new(state_dim: usize, residual_dim: usize, meta: DatasetMeta) -> Self {
        Self {
            state_dim,
            residual_dim,
            states: Vec::new(),
            residuals: Vec::new(),
            meta,
        }
    }

    pub fn push(&mut self, state: &[f64], residual: &[f64]) -> Result<()> {
        if state.len() != self.state_dim {
            return Err(Error::dim("dataset state", self.state_dim, state.len()));
        }
        if residual.len() != self.residual_dim {
            return Err(Error::dim("dataset residual", self.residual_dim, residual.len()));
        }
        if state.iter().chain(residual).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                term: format!("dataset row {}", self.len()),
            });
        }
        self.states.extend_from_slice(state);
        self.residuals.extend_from_slice(residual);
        Ok(())
    }

    pub fn len(&self) -> usize {
        if self.state_dim == 0 {
            self.residuals.len() / self.residual_dim.max(1)
        } else {
            self.states.len() / self.state_dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn residual_dim(&self) -> usize {
        self.residual_dim
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn residual(&self, i: usize) -> &[f64] {
        &self.residuals[i * self.residual_dim..(i + 1) * self.residual_dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        (0..self.len()).map(move |i| (self.state(i), self.residual(i)))
    }

    /// Column means of the residuals.
    pub fn residual_mean(&self) -> Vec<f64> {
        column_mean(&self.residuals, self.residual_dim)
    }

    /// Unbiased sample covariance of the residuals (two-pass).
    pub fn residual_cov(&self) -> DMatrix<f64> {
        let n = self.len();
        let l = self.residual_dim;
        let mean = self.residual_mean();
        let mut cov = DMatrix::zeros(l, l);
        for (_, d) in self.rows() {
            for i in 0..l {
                let di = d[i] - mean[i];
                for j in 0..l {
                    cov[(i, j)] += di * (d[j] - mean[j]);
                }
            }
        }
        cov / (n.saturating_sub(1).max(1) as f64)
    }

    pub fn state_mean(&self) -> Vec<f64> {
        column_mean(&self.states, self.state_dim)
    }

    pub fn state_std(&self) -> Vec<f64> {
        column_std(&self.states, self.state_dim)
    }

    pub fn residual_std(&self) -> Vec<f64> {
        column_std(&self.residuals, self.residual_dim)
    }

    pub fn meta_path(path: &Path) -> PathBuf {
        let mut p = path.as_os_str().to_owned();
        p.push(".meta");
        PathBuf::from(p)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# fingerprint: {}", self.meta.fingerprint).unwrap();
        let header: Vec<String> = (0..self.state_dim)
            .map(|i| format!("x_{i}"))
            .chain((0..self.residual_dim).map(|i| format!("d_{i}")))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for (x, d) in self.rows() {
            let row: Vec<String> = x.iter().chain(d).map(|v| format!("{v:?}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    fn meta_text(&self) -> String {
        format!(
            "system = {}\ndt = {:?}\nrows = {}\nstate_dim = {}\nresidual_dim = {}\nfingerprint = {}\n",
            self.meta.system,
            self.meta.dt,
            self.len(),
            self.state_dim,
            self.residual_dim,
            self.meta.fingerprint
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        std::fs::write(Self::meta_path(path), self.meta_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let meta_text = std::fs::read_to_string(Self::meta_path(path))?;
        let mut meta = DatasetMeta::default();
        let mut expected_rows = None;
        for (i, line) in meta_text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(i + 1, format!("expected key = value, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "system" => meta.system = v.to_string(),
                "dt" => {
                    meta.dt = v
                        .parse()
                        .map_err(|_| Error::parse(i + 1, format!("bad dt `{v}`")))?
                }
                "rows" => {
                    expected_rows = Some(
                        v.parse::<usize>()
                            .map_err(|_| Error::parse(i + 1, format!("bad row count `{v}`")))?,
                    )
                }
                "fingerprint" => meta.fingerprint = v.to_string(),
                _ => {}
            }
        }
        let mut ds = Self::from_csv(&text, meta)?;
        if let Some(rows) = expected_rows {
            if rows != ds.len() {
                return Err(Error::dim("dataset rows", rows, ds.len()));
            }
        }
        ds.meta.fingerprint = ds.meta.fingerprint.trim().to_string();
        Ok(ds)
    }

    pub fn from_csv(text: &str, meta: DatasetMeta) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (hline, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "missing header row"))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let state_dim = cols.iter().filter(|c| c.starts_with("x_")).count();
        let residual_dim = cols.iter().filter(|c| c.starts_with("d_")).count();
        let expected: Vec<String> = (0..state_dim)
            .map(|i| format!("x_{i}"))
            .chain((0..residual_dim).map(|i| format!("d_{i}")))
            .collect();
        if cols != expected {
            return Err(Error::parse(hline + 1, format!("unexpected header `{header}`")));
        }
        let mut ds = Self::new(state_dim, residual_dim, meta);
        for (i, line) in lines {
            let vals: Vec<f64> = line
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::parse(i + 1, format!("bad number `{t}`")))
                })
                .collect::<Result<_>>()?;
            if vals.len() != state_dim + residual_dim {
                return Err(Error::parse(
                    i + 1,
                    format!("expected {} columns, found {}", state_dim + residual_dim, vals.len()),
                ));
            }
            ds.push(&vals[..state_dim], &vals[state_dim..])?;
        }
        Ok(ds)
    }
}

fn column_mean(flat: &[f64], dim: usize) -> Vec<f64> {
    if dim == 0 {
        return Vec::new();
    }
    let n = flat.len() / dim;
    let mut mean = vec![0.0; dim];
    for row in flat.chunks_exact(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
    mean
}

fn column_std(flat: &[f64], dim: usize) -> Vec<f64> {
    let mean = column_mean(flat, dim);
    let n = flat.len() / dim.max(1);
    let mut var = vec![0.0; dim];
    for row in flat.chunks_exact(dim.max(1)) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter()
        .map(|s| (s / n.saturating_sub(1).max(1) as f64).sqrt())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ResidualDataset {
        let mut ds = ResidualDataset::new(
            2,
            1,
            DatasetMeta {
                system: "test".into(),
                dt: 0.01,
                fingerprint: "abc".into(),
            },
        );
        ds.push(&[0.1, 0.2], &[1.0 / 3.0]).unwrap();
        ds.push(&[-1e-12, 5.0], &[2.5]).unwrap();
        ds
    }

    #[test]
    fn round_trip_preserves_rows_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        let ds = sample();
        ds.save(&path).unwrap();
        let back = ResidualDataset::load(&path).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn non_finite_rows_are_rejected() {
        let mut ds = sample();
        assert!(ds.push(&[f64::NAN, 0.0], &[0.0]).is_err());
        assert!(ds.push(&[0.0], &[0.0]).is_err());
    }

    #[test]
    fn bad_header_is_a_parse_error() {
        let res = ResidualDataset::from_csv("a,b\n1,2\n", DatasetMeta::default());
        assert!(matches!(res, Err(Error::Parse { .. })));
    }

    #[test]
    fn covariance_matches_streaming_statistics() {
        let mut ds = ResidualDataset::new(1, 2, DatasetMeta::default());
        let rows = [[1.0, 2.0], [2.0, -1.0], [4.0, 0.5], [-3.0, 0.0]];
        for r in rows {
            ds.push(&[0.0], &r).unwrap();
        }
        // Welford pass.
        let (mut n, mut mean, mut m2) = (0.0, [0.0; 2], [[0.0; 2]; 2]);
        for r in rows {
            n += 1.0;
            let delta = [r[0] - mean[0], r[1] - mean[1]];
            mean[0] += delta[0] / n;
            mean[1] += delta[1] / n;
            for i in 0..2 {
                for j in 0..2 {
                    m2[i][j] += delta[i] * (r[j] - mean[j]);
                }
            }
        }
        let cov = ds.residual_cov();
        let m = ds.residual_mean();
        for i in 0..2 {
            assert!((m[i] - mean[i]).abs() < 1e-12);
            for j in 0..2 {
                assert!((cov[(i, j)] - m2[i][j] / (n - 1.0)).abs() < 1e-12);
            }
        }
    }
}
