use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq)]
pub enum Covariance {
    /// Strictly positive per-coordinate variances.
    Diagonal(Vec<f64>),
    Full(DMatrix<f64>),
}

/// Multivariate Gaussian described by its mean and covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub cov: Covariance,
}

impl GaussianParams {
    pub fn diagonal(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if mean.len() != variances.len() {
            return Err(Error::dim("variances", mean.len(), variances.len()));
        }
        if variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "diagonal variances must be positive and finite".into(),
            ));
        }
        Ok(Self {
            mean,
            cov: Covariance::Diagonal(variances),
        })
    }

    pub fn full(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::dim("covariance", n, cov.nrows()));
        }
        if (&cov - cov.transpose()).amax() > 1e-10 * cov.amax().max(1.0) {
            return Err(Error::InvalidArgument("covariance is not symmetric".into()));
        }
        Ok(Self {
            mean,
            cov: Covariance::Full(cov),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cov_matrix(&self) -> DMatrix<f64> {
        match &self.cov {
            Covariance::Diagonal(v) => DMatrix::from_diagonal(&DVector::from_column_slice(v)),
            Covariance::Full(m) => m.clone(),
        }
    }

    pub fn trace(&self) -> f64 {
        match &self.cov {
            Covariance::Diagonal(v) => v.iter().sum(),
            Covariance::Full(m) => m.trace(),
        }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::dim("density argument", self.dim(), x.len()));
        }
        let n = self.dim() as f64;
        match &self.cov {
            Covariance::Diagonal(var) => Ok(diag_log_density(x, &self.mean, var)),
            Covariance::Full(cov) => {
                let chol = cov.clone().cholesky().ok_or_else(|| {
                    Error::InvalidArgument("covariance is not positive definite".into())
                })?;
                let diff = DVector::from_iterator(
                    x.len(),
                    x.iter().zip(&self.mean).map(|(a, b)| a - b),
                );
                let sol = chol.solve(&diff);
                let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                Ok(-0.5 * (diff.dot(&sol) + log_det + n * LN_2PI))
            }
        }
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_density(x)?.exp())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.dim();
        let eps: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        match &self.cov {
            Covariance::Diagonal(var) => self
                .mean
                .iter()
                .zip(var)
                .zip(&eps)
                .map(|((m, v), e)| m + v.sqrt() * e)
                .collect(),
            Covariance::Full(cov) => {
                let l = psd_factor(cov);
                let e = DVector::from_vec(eps);
                let d = l * e;
                self.mean.iter().zip(d.iter()).map(|(m, x)| m + x).collect()
            }
        }
    }
}

/// Log-density of a diagonal Gaussian.
#[inline]
pub fn diag_log_density(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((xi, mi), vi) in x.iter().zip(mean).zip(var) {
        let r = xi - mi;
        acc += r * r / vi + vi.ln() + LN_2PI;
    }
    -0.5 * acc
}

/// Square-root factor `L` with `L Lᵀ = cov`; falls back to a symmetric
/// eigen-factor when the matrix is only semidefinite.
pub fn psd_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = cov.clone().cholesky() {
        return chol.l();
    }
    let eig = cov.clone().symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals)
}
