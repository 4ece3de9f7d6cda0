use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gaussian::{diag_log_density, GaussianParams};
use crate::nn::Workspace;

use super::model::CvaeModel;

/// Estimated residual mean and covariance at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentEstimate {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub samples: usize,
}

impl MomentEstimate {
    pub fn to_gaussian(&self) -> Result<GaussianParams> {
        GaussianParams::full(self.mean.clone(), self.cov.clone())
    }
}

/// Decoder conditioned on one state: the prior and the state part of the
/// decoder's first layer are evaluated once, then each latent draw costs only
/// the remaining decoder layers.
struct Conditioned<'m> {
    model: &'m CvaeModel,
    partial: Vec<f64>,
    prior_mean: Vec<f64>,
    prior_std: Vec<f64>,
    z: Vec<f64>,
    ws: Workspace,
}

impl<'m> Conditioned<'m> {
    fn new(model: &'m CvaeModel, x: &[f64]) -> Result<Self> {
        let xf = model.features(x)?;
        let prior = model.prior.forward(&xf)?;
        let l = model.latent_dim();
        let prior_std = prior[l..].iter().map(|lv| (0.5 * lv).exp()).collect();
        Ok(Self {
            model,
            partial: model.decoder.first_layer_partial(&xf)?,
            prior_mean: prior[..l].to_vec(),
            prior_std,
            z: vec![0.0; l],
            ws: Workspace::default(),
        })
    }

    /// Draws `z ~ p(z | x)` and writes the raw-space decoder mean and
    /// variance of `p(d | x, z)`.
    fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R, mean: &mut [f64], var: &mut [f64]) {
        for ((z, m), s) in self.z.iter_mut().zip(&self.prior_mean).zip(&self.prior_std) {
            let e: f64 = rng.sample(StandardNormal);
            *z = m + s * e;
        }
        let out = self
            .model
            .decoder
            .forward_from_partial(&self.partial, &self.z, &mut self.ws);
        let n = mean.len();
        let norm = self.model.residual_norm();
        for i in 0..n {
            mean[i] = norm.invert(i, out[i]);
            var[i] = norm.scale[i] * norm.scale[i] * out[n + i].exp();
        }
    }
}

fn check_samples(samples: usize, min: usize) -> Result<()> {
    if samples < min {
        return Err(Error::InvalidArgument(format!(
            "need at least {min} samples, got {samples}"
        )));
    }
    Ok(())
}

/// Monte-Carlo mixture estimate of `p(d | x) = E_{z~p(z|x)} p(d | x, z)`.
pub fn estimate_density(model: &CvaeModel, x: &[f64], d: &[f64], samples: usize, seed: u64) -> Result<f64> {
    check_samples(samples, 1)?;
    if d.len() != model.residual_dim() {
        return Err(Error::dim("residual", model.residual_dim(), d.len()));
    }
    let mut cond = Conditioned::new(model, x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.residual_dim();
    let (mut mean, mut var) = (vec![0.0; n], vec![0.0; n]);
    let mut acc = 0.0;
    for _ in 0..samples {
        cond.draw(&mut rng, &mut mean, &mut var);
        acc += diag_log_density(d, &mean, &var).exp();
    }
    Ok(acc / samples as f64)
}

/// Running mean and scatter matrix (Welford).
struct Moments {
    count: f64,
    mean: Vec<f64>,
    scatter: DMatrix<f64>,
    delta: Vec<f64>,
}

impl Moments {
    fn new(n: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; n],
            scatter: DMatrix::zeros(n, n),
            delta: vec![0.0; n],
        }
    }

    fn push(&mut self, v: &[f64]) {
        self.count += 1.0;
        let n = self.mean.len();
        for i in 0..n {
            self.delta[i] = v[i] - self.mean[i];
            self.mean[i] += self.delta[i] / self.count;
        }
        for j in 0..n {
            let rj = v[j] - self.mean[j];
            for i in 0..n {
                self.scatter[(i, j)] += self.delta[i] * rj;
            }
        }
    }

    /// Population (divide-by-count) covariance, symmetrized.
    fn population_cov(&self) -> DMatrix<f64> {
        let c = &self.scatter / self.count;
        (&c + c.transpose()) * 0.5
    }
}

/// Moments of the latent Gaussian mixture:
/// mean `= avg μ_s`, covariance `= avg Σ_s + avg μ_s μ_sᵀ − mean meanᵀ`,
/// with `z_s` drawn from the conditional prior. The second term is
/// accumulated in centered form, which is algebraically identical.
pub fn estimate_moments_gmm(model: &CvaeModel, x: &[f64], samples: usize, seed: u64) -> Result<MomentEstimate> {
    check_samples(samples, 1)?;
    let mut cond = Conditioned::new(model, x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.residual_dim();
    let (mut mean, mut var) = (vec![0.0; n], vec![0.0; n]);
    let mut mom = Moments::new(n);
    let mut var_sum = vec![0.0; n];
    for _ in 0..samples {
        cond.draw(&mut rng, &mut mean, &mut var);
        mom.push(&mean);
        for (s, v) in var_sum.iter_mut().zip(&var) {
            *s += v;
        }
    }
    let mut cov = mom.population_cov();
    for i in 0..n {
        cov[(i, i)] += var_sum[i] / samples as f64;
    }
    finish(mom.mean, cov, samples)
}

/// Two-step sampling: `z ~ p(z | x)`, then `d ~ p(d | x, z)`; returns the
/// population mean and covariance of the `d` draws.
pub fn estimate_moments_sampling(model: &CvaeModel, x: &[f64], samples: usize, seed: u64) -> Result<MomentEstimate> {
    check_samples(samples, 1)?;
    let mut cond = Conditioned::new(model, x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.residual_dim();
    let (mut mean, mut var) = (vec![0.0; n], vec![0.0; n]);
    let mut draw = vec![0.0; n];
    let mut mom = Moments::new(n);
    for _ in 0..samples {
        cond.draw(&mut rng, &mut mean, &mut var);
        for i in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            draw[i] = mean[i] + var[i].sqrt() * e;
        }
        mom.push(&draw);
    }
    let cov = mom.population_cov();
    finish(mom.mean, cov, samples)
}

fn finish(mean: Vec<f64>, cov: DMatrix<f64>, samples: usize) -> Result<MomentEstimate> {
    if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            term: "moment estimate".into(),
        });
    }
    Ok(MomentEstimate { mean, cov, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvae::model::{CvaeModel, Standardizer};
    use crate::nn::{Activation, Layer, Mlp};

    /// Linear-Gaussian model: z ~ N(0, 1), d | z ~ N(a z + b, v) with
    /// closed-form marginal N(b, a² + v).
    fn linear_model(a: f64, b: f64, v: f64, residual_norm: Standardizer) -> CvaeModel {
        let (s, sh) = (residual_norm.scale[0], residual_norm.shift[0]);
        let id = |outs: usize, ins: usize, w: Vec<f64>, bias: Vec<f64>| {
            Mlp::new(vec![Layer::new(outs, ins, w, bias, Activation::Identity).unwrap()]).unwrap()
        };
        // decoder input [x, z]; outputs standardized mean and log-variance.
        let decoder = id(2, 2, vec![0.0, a / s, 0.0, 0.0], vec![(b - sh) / s, (v / (s * s)).ln()]);
        let prior = id(2, 1, vec![0.0, 0.0], vec![0.0, 0.0]);
        let encoder = id(2, 2, vec![0.0; 4], vec![0.0, 0.0]);
        CvaeModel::from_parts(
            encoder,
            decoder,
            prior,
            1,
            vec![0],
            Standardizer::identity(1),
            residual_norm,
        )
        .unwrap()
    }

    #[test]
    fn gmm_moments_match_linear_gaussian_marginal() {
        let m = linear_model(0.8, 0.3, 0.5, Standardizer::identity(1));
        let est = estimate_moments_gmm(&m, &[0.0], 200_000, 4).unwrap();
        assert!((est.mean[0] - 0.3).abs() < 0.01);
        assert!((est.cov[(0, 0)] - (0.64 + 0.5)).abs() < 0.01);
    }

    #[test]
    fn sampling_moments_match_linear_gaussian_marginal() {
        let m = linear_model(0.8, 0.3, 0.5, Standardizer::new(vec![1.0], vec![3.0]).unwrap());
        let est = estimate_moments_sampling(&m, &[0.0], 200_000, 5).unwrap();
        assert!((est.mean[0] - 0.3).abs() < 0.01);
        assert!((est.cov[(0, 0)] - 1.14).abs() < 0.02);
    }

    #[test]
    fn single_sample_gmm_is_that_component() {
        let m = linear_model(0.0, -2.0, 0.25, Standardizer::identity(1));
        let est = estimate_moments_gmm(&m, &[7.0], 1, 0).unwrap();
        assert!((est.mean[0] + 2.0).abs() < 1e-12);
        assert!((est.cov[(0, 0)] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn single_draw_has_zero_sample_covariance() {
        let m = linear_model(1.0, 0.0, 1.0, Standardizer::identity(1));
        let est = estimate_moments_sampling(&m, &[0.0], 1, 0).unwrap();
        assert_eq!(est.cov[(0, 0)], 0.0);
        assert!(estimate_moments_sampling(&m, &[0.0], 0, 0).is_err());
        assert!(estimate_moments_gmm(&m, &[0.0], 0, 0).is_err());
    }

    #[test]
    fn density_matches_marginal() {
        let m = linear_model(0.6, 0.1, 0.3, Standardizer::new(vec![0.5], vec![0.2]).unwrap());
        let d = 0.7;
        let est = estimate_density(&m, &[0.0], &[d], 200_000, 6).unwrap();
        let exact = GaussianParams::diagonal(vec![0.1], vec![0.36 + 0.3])
            .unwrap()
            .density(&[d])
            .unwrap();
        assert!((est - exact).abs() < 0.01 * exact, "{est} vs {exact}");
    }

    #[test]
    fn estimates_are_seed_deterministic() {
        let m = linear_model(0.6, 0.1, 0.3, Standardizer::identity(1));
        let a = estimate_moments_sampling(&m, &[0.0], 100, 9).unwrap();
        let b = estimate_moments_sampling(&m, &[0.0], 100, 9).unwrap();
        assert_eq!(a, b);
    }
}
