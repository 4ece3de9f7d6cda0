use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState};

use super::dataset::ResidualDataset;
use super::model::{CvaeArchitecture, CvaeGradients, CvaeModel, Standardizer};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from the base rate to zero over the run, per epoch.
    Cosine,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    /// Fraction of all optimizer steps over which the KL weight ramps
    /// linearly from 0 to 1. Zero disables the ramp.
    pub kl_warmup: f64,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub condition_on: Option<Vec<usize>>,
    pub standardize_state: bool,
    pub standardize_residual: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            schedule: LrSchedule::Constant,
            kl_warmup: 0.1,
            hidden: vec![64, 64],
            latent_dim: 2,
            condition_on: None,
            standardize_state: true,
            standardize_residual: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, rows: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be positive".into()));
        }
        if self.batch_size == 0 || self.batch_size > rows {
            return Err(Error::InvalidArgument(format!(
                "batch size {} must lie in 1..={rows}",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.kl_warmup) {
            return Err(Error::InvalidArgument("kl_warmup must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub(crate) fn lr_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let t = epoch as f64 / self.epochs as f64;
                self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

/// Per-epoch means over the training rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    /// The optimized objective (KL weighted by the warm-up schedule).
    pub epoch_loss: Vec<f64>,
    /// Negative ELBO with unit KL weight; empty for the regressor.
    pub epoch_neg_elbo: Vec<f64>,
}

impl TrainTrace {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_loss.last().copied()
    }

    pub fn final_elbo(&self) -> Option<f64> {
        self.epoch_neg_elbo.last().map(|v| -v)
    }
}

pub(crate) fn fit_standardizers(
    dataset: &ResidualDataset,
    condition_on: &[usize],
    state: bool,
    residual: bool,
) -> (Standardizer, Standardizer) {
    let state_norm = if state {
        let (m, s) = (dataset.state_mean(), dataset.state_std());
        let pick = |v: &[f64]| condition_on.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Standardizer::from_moments(&pick(&m), &pick(&s))
    } else {
        Standardizer::identity(condition_on.len())
    };
    let residual_norm = if residual {
        Standardizer::from_moments(&dataset.residual_mean(), &dataset.residual_std())
    } else {
        Standardizer::identity(dataset.residual_dim())
    };
    (state_norm, residual_norm)
}

/// Trains a CVAE by minibatch Adam on the single-sample negative ELBO.
///
/// Shuffling, initialization and reparameterization noise all derive from
/// `config.seed`, so equal seeds give bit-identical models.
pub fn train_cvae(dataset: &ResidualDataset, config: &TrainConfig) -> Result<(CvaeModel, TrainTrace)> {
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
    let arch = CvaeArchitecture {
        state_dim: dataset.state_dim(),
        residual_dim: dataset.residual_dim(),
        latent_dim: config.latent_dim,
        hidden: config.hidden.clone(),
        condition_on: Some(condition_on),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = CvaeModel::new(&arch, state_norm, residual_norm, &mut rng)?;

    let adam = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut opt_e = AdamState::new(&model.encoder, adam);
    let mut opt_d = AdamState::new(&model.decoder, adam);
    let mut opt_p = AdamState::new(&model.prior, adam);

    let steps_per_epoch = n.div_ceil(config.batch_size);
    let warmup_steps = config.kl_warmup * (config.epochs * steps_per_epoch) as f64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut noise = vec![0.0; config.latent_dim];
    let mut grads = CvaeGradients::zeros_like(&model);
    let mut trace = TrainTrace::default();
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        for opt in [&mut opt_e, &mut opt_d, &mut opt_p] {
            opt.set_learning_rate(lr);
        }
        order.shuffle(&mut rng);
        let (mut total, mut neg_elbo) = (0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            let beta = if warmup_steps > 0.0 {
                (step as f64 / warmup_steps).min(1.0)
            } else {
                1.0
            };
            grads.reset();
            for &i in batch {
                noise.iter_mut().for_each(|e| *e = rng.sample(StandardNormal));
                let terms = model
                    .elbo_with_gradients(dataset.state(i), dataset.residual(i), &noise, beta, &mut grads)
                    .map_err(|e| diverged(epoch, e))?;
                total += terms.loss;
                neg_elbo += terms.kl - terms.log_likelihood;
            }
            grads.scale(1.0 / batch.len() as f64);
            opt_e.step(&mut model.encoder, &grads.encoder)?;
            opt_d.step(&mut model.decoder, &grads.decoder)?;
            opt_p.step(&mut model.prior, &grads.prior)?;
            step += 1;
        }
        let mean = total / n as f64;
        if !mean.is_finite() || !model.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: "non-finite loss or parameters".into(),
            });
        }
        trace.epoch_loss.push(mean);
        trace.epoch_neg_elbo.push(neg_elbo / n as f64);
    }
    Ok((model, trace))
}

pub(crate) fn diverged(epoch: usize, err: Error) -> Error {
    match err {
        Error::NonFinite { term } => Error::Diverged {
            epoch,
            reason: format!("non-finite {term}"),
        },
        other => other,
    }
}
