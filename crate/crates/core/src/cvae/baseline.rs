//! Deterministic residual regressor: predicts the residual mean only.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::io::{join_floats, parse_floats, LineReader};
use crate::nn::{Activation, AdamConfig, AdamState, Gradients, Mlp};

use super::dataset::ResidualDataset;
use super::model::Standardizer;
use super::train::{diverged, fit_standardizers, TrainConfig, TrainTrace};

pub const REGRESSOR_MAGIC: &str = "ORIO-REGRESSOR v1 deterministic";

#[derive(Clone, Debug, PartialEq)]
pub struct Regressor {
    pub net: Mlp,
    state_dim: usize,
    condition_on: Vec<usize>,
    state_norm: Standardizer,
    residual_norm: Standardizer,
}

impl Regressor {
    pub fn from_parts(
        net: Mlp,
        state_dim: usize,
        condition_on: Vec<usize>,
        state_norm: Standardizer,
        residual_norm: Standardizer,
    ) -> Result<Self> {
        if let Some(bad) = condition_on.iter().find(|&&i| i >= state_dim) {
            return Err(Error::InvalidArgument(format!(
                "conditioning index {bad} is outside a {state_dim}-dimensional state"
            )));
        }
        if net.input_dim() != condition_on.len() || state_norm.dim() != condition_on.len() {
            return Err(Error::dim("regressor input", condition_on.len(), net.input_dim()));
        }
        if net.output_dim() != residual_norm.dim() {
            return Err(Error::dim("regressor output", residual_norm.dim(), net.output_dim()));
        }
        Ok(Self {
            net,
            state_dim,
            condition_on,
            state_norm,
            residual_norm,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn residual_dim(&self) -> usize {
        self.residual_norm.dim()
    }

    fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.state_dim {
            return Err(Error::dim("state", self.state_dim, x.len()));
        }
        Ok(self
            .condition_on
            .iter()
            .enumerate()
            .map(|(k, &i)| self.state_norm.apply(k, x[i]))
            .collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let out = self.net.forward(&self.features(x)?)?;
        Ok(out
            .iter()
            .enumerate()
            .map(|(i, &v)| self.residual_norm.invert(i, v))
            .collect())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(REGRESSOR_MAGIC);
        out.push('\n');
        writeln!(out, "state_dim {}", self.state_dim).unwrap();
        let idx: Vec<String> = self.condition_on.iter().map(|i| i.to_string()).collect();
        writeln!(out, "condition_on {}", idx.join(" ")).unwrap();
        writeln!(out, "state_shift {}", join_floats(&self.state_norm.shift)).unwrap();
        writeln!(out, "state_scale {}", join_floats(&self.state_norm.scale)).unwrap();
        writeln!(out, "residual_shift {}", join_floats(&self.residual_norm.shift)).unwrap();
        writeln!(out, "residual_scale {}", join_floats(&self.residual_norm.scale)).unwrap();
        out.push_str(&self.net.to_text());
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = LineReader::new(text);
        let magic = r.next_line()?;
        if magic != REGRESSOR_MAGIC {
            return Err(Error::Version {
                expected: REGRESSOR_MAGIC.into(),
                found: magic.into(),
            });
        }
        let state_dim = r.keyed_usize("state_dim")?;
        let condition_on = r
            .keyed("condition_on")?
            .iter()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::parse(r.line_number(), format!("bad index `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut floats = |key: &str| -> Result<Vec<f64>> {
            let vals = r.keyed(key)?.join(" ");
            parse_floats(&vals, r.line_number())
        };
        let state_norm = Standardizer::new(floats("state_shift")?, floats("state_scale")?)?;
        let residual_norm = Standardizer::new(floats("residual_shift")?, floats("residual_scale")?)?;
        let net = Mlp::read(&mut r)?;
        Self::from_parts(net, state_dim, condition_on, state_norm, residual_norm)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Least-squares regression of residuals on states with minibatch Adam.
/// An empty `hidden` list trains an affine map.
pub fn train_regressor(dataset: &ResidualDataset, config: &TrainConfig) -> Result<(Regressor, TrainTrace)> {
    let n = dataset.len();
    config.validate(n)?;
    let condition_on = config
        .condition_on
        .clone()
        .unwrap_or_else(|| (0..dataset.state_dim()).collect());
    let (state_norm, residual_norm) = fit_standardizers(
        dataset,
        &condition_on,
        config.standardize_state,
        config.standardize_residual,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dims = vec![condition_on.len()];
    dims.extend(&config.hidden);
    dims.push(dataset.residual_dim());
    let net = Mlp::random(&dims, Activation::Tanh, Activation::Identity, &mut rng)?;
    let mut reg = Regressor::from_parts(net, dataset.state_dim(), condition_on, state_norm, residual_norm)?;

    let mut opt = AdamState::new(
        &reg.net,
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut grads = Gradients::zeros_like(&reg.net);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = TrainTrace::default();
    let l = dataset.residual_dim();
    let mut upstream = vec![0.0; l];

    for epoch in 0..config.epochs {
        opt.set_learning_rate(config.lr_at(epoch));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let xf = reg.features(dataset.state(i))?;
                let tr = reg.net.forward_trace(&xf)?;
                let d = dataset.residual(i);
                let mut loss = 0.0;
                for (k, u) in upstream.iter_mut().enumerate() {
                    let r = tr.output()[k] - reg.residual_norm.apply(k, d[k]);
                    loss += 0.5 * r * r;
                    *u = r;
                }
                if !loss.is_finite() {
                    return Err(diverged(epoch, Error::NonFinite { term: "regression loss".into() }));
                }
                total += loss;
                reg.net.backward_into(&tr, &upstream, &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            opt.step(&mut reg.net, &grads)?;
        }
        let mean = total / n as f64;
        if !mean.is_finite() || !reg.net.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: "non-finite loss or parameters".into(),
            });
        }
        trace.epoch_loss.push(mean);
    }
    Ok((reg, trace))
}
