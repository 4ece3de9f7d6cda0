use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::diag_log_density;
use crate::nn::io::{join_floats, LineReader};
use crate::nn::{Activation, Gradients, Mlp};

pub const CVAE_MAGIC: &str = "ORIO-CVAE v1";

/// Per-coordinate affine map `x ↦ (x − shift) / scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn new(shift: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if shift.len() != scale.len() {
            return Err(Error::dim("standardizer scale", shift.len(), scale.len()));
        }
        if scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) || shift.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(
                "standardizer scales must be positive and finite".into(),
            ));
        }
        Ok(Self { shift, scale })
    }

    /// Standardizer from column statistics; degenerate columns keep unit scale.
    pub fn from_moments(mean: &[f64], std: &[f64]) -> Self {
        Self {
            shift: mean.to_vec(),
            scale: std
                .iter()
                .map(|s| if *s > 1e-300 && s.is_finite() { *s } else { 1.0 })
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    #[inline]
    pub fn apply(&self, i: usize, v: f64) -> f64 {
        (v - self.shift[i]) / self.scale[i]
    }

    #[inline]
    pub fn invert(&self, i: usize, v: f64) -> f64 {
        self.shift[i] + self.scale[i] * v
    }

    /// `Σ ln scale_i`, the log-Jacobian of the inverse map.
    pub fn log_scale_sum(&self) -> f64 {
        self.scale.iter().map(|s| s.ln()).sum()
    }
}

/// Layer widths and conditioning choices for a new model.
#[derive(Clone, Debug, PartialEq)]
pub struct CvaeArchitecture {
    pub state_dim: usize,
    pub residual_dim: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    /// State components the networks see; `None` means all of them.
    pub condition_on: Option<Vec<usize>>,
}

/// Conditional VAE over residuals: encoder `q(z | x, d)`, decoder
/// `p(d | x, z)` and conditional prior `p(z | x)`, each a diagonal Gaussian.
///
/// Networks operate on standardized quantities; every public method takes
/// and returns raw state and residual coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct CvaeModel {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub prior: Mlp,
    state_dim: usize,
    residual_dim: usize,
    latent_dim: usize,
    condition_on: Vec<usize>,
    state_norm: Standardizer,
    residual_norm: Standardizer,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboTerms {
    /// Negative ELBO (with the KL weight applied).
    pub loss: f64,
    pub log_likelihood: f64,
    pub kl: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvaeGradients {
    pub encoder: Gradients,
    pub decoder: Gradients,
    pub prior: Gradients,
}

impl CvaeGradients {
    pub fn zeros_like(model: &CvaeModel) -> Self {
        Self {
            encoder: Gradients::zeros_like(&model.encoder),
            decoder: Gradients::zeros_like(&model.decoder),
            prior: Gradients::zeros_like(&model.prior),
        }
    }

    pub fn reset(&mut self) {
        for g in [&mut self.encoder, &mut self.decoder, &mut self.prior] {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.encoder.scale(factor);
        self.decoder.scale(factor);
        self.prior.scale(factor);
    }

    /// Encoder, decoder, prior, in that order.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.encoder.flat();
        v.extend(self.decoder.flat());
        v.extend(self.prior.flat());
        v
    }
}

impl CvaeModel {
    pub fn new<R: Rng + ?Sized>(
        arch: &CvaeArchitecture,
        state_norm: Standardizer,
        residual_norm: Standardizer,
        rng: &mut R,
    ) -> Result<Self> {
        let condition_on = match &arch.condition_on {
            Some(idx) => idx.clone(),
            None => (0..arch.state_dim).collect(),
        };
        let c = condition_on.len();
        let (l, n) = (arch.latent_dim, arch.residual_dim);
        if l == 0 || n == 0 {
            return Err(Error::InvalidArgument(
                "latent and residual dimensions must be positive".into(),
            ));
        }
        let widths = |input: usize, output: usize| {
            let mut d = vec![input];
            d.extend(&arch.hidden);
            d.push(output);
            d
        };
        let encoder = Mlp::random(&widths(c + n, 2 * l), Activation::Tanh, Activation::Identity, rng)?;
        let decoder = Mlp::random(&widths(c + l, 2 * n), Activation::Tanh, Activation::Identity, rng)?;
        let prior = Mlp::random(&widths(c, 2 * l), Activation::Tanh, Activation::Identity, rng)?;
        Self::from_parts(
            encoder,
            decoder,
            prior,
            arch.state_dim,
            condition_on,
            state_norm,
            residual_norm,
        )
    }

    pub fn from_parts(
        encoder: Mlp,
        decoder: Mlp,
        prior: Mlp,
        state_dim: usize,
        condition_on: Vec<usize>,
        state_norm: Standardizer,
        residual_norm: Standardizer,
    ) -> Result<Self> {
        let c = condition_on.len();
        if let Some(bad) = condition_on.iter().find(|&&i| i >= state_dim) {
            return Err(Error::InvalidArgument(format!(
                "conditioning index {bad} is outside a {state_dim}-dimensional state"
            )));
        }
        if state_norm.dim() != c {
            return Err(Error::dim("state standardizer", c, state_norm.dim()));
        }
        let n = residual_norm.dim();
        if decoder.output_dim() != 2 * n {
            return Err(Error::dim("decoder output", 2 * n, decoder.output_dim()));
        }
        if prior.input_dim() != c || prior.output_dim() % 2 != 0 {
            return Err(Error::dim("prior input", c, prior.input_dim()));
        }
        let l = prior.output_dim() / 2;
        if encoder.input_dim() != c + n {
            return Err(Error::dim("encoder input", c + n, encoder.input_dim()));
        }
        if encoder.output_dim() != 2 * l {
            return Err(Error::dim("encoder output", 2 * l, encoder.output_dim()));
        }
        if decoder.input_dim() != c + l {
            return Err(Error::dim("decoder input", c + l, decoder.input_dim()));
        }
        Ok(Self {
            encoder,
            decoder,
            prior,
            state_dim,
            residual_dim: n,
            latent_dim: l,
            condition_on,
            state_norm,
            residual_norm,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn residual_dim(&self) -> usize {
        self.residual_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn condition_on(&self) -> &[usize] {
        &self.condition_on
    }

    pub fn state_norm(&self) -> &Standardizer {
        &self.state_norm
    }

    pub fn residual_norm(&self) -> &Standardizer {
        &self.residual_norm
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite() && self.decoder.is_finite() && self.prior.is_finite()
    }

    /// Standardized conditioning features of a raw state.
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
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

    fn normalized_residual(&self, d: &[f64]) -> Result<Vec<f64>> {
        if d.len() != self.residual_dim {
            return Err(Error::dim("residual", self.residual_dim, d.len()));
        }
        Ok(d.iter()
            .enumerate()
            .map(|(i, &v)| self.residual_norm.apply(i, v))
            .collect())
    }

    /// Single-sample negative ELBO with reparameterization noise `noise`.
    pub fn elbo(&self, x: &[f64], d: &[f64], noise: &[f64], kl_weight: f64) -> Result<ElboTerms> {
        self.elbo_inner(x, d, noise, kl_weight, None)
    }

    /// As [`CvaeModel::elbo`], accumulating exact parameter gradients of the
    /// loss into `grads`.
    pub fn elbo_with_gradients(
        &self,
        x: &[f64],
        d: &[f64],
        noise: &[f64],
        kl_weight: f64,
        grads: &mut CvaeGradients,
    ) -> Result<ElboTerms> {
        self.elbo_inner(x, d, noise, kl_weight, Some(grads))
    }

    fn elbo_inner(
        &self,
        x: &[f64],
        d: &[f64],
        noise: &[f64],
        beta: f64,
        grads: Option<&mut CvaeGradients>,
    ) -> Result<ElboTerms> {
        let l = self.latent_dim;
        let n = self.residual_dim;
        if noise.len() != l {
            return Err(Error::dim("latent noise", l, noise.len()));
        }
        let xf = self.features(x)?;
        let df = self.normalized_residual(d)?;

        let mut enc_in = xf.clone();
        enc_in.extend_from_slice(&df);
        let enc = self.encoder.forward_trace(&enc_in)?;
        let pri = self.prior.forward_trace(&xf)?;
        let (mq, lvq) = enc.output().split_at(l);
        let (mp, lvp) = pri.output().split_at(l);

        let z: Vec<f64> = (0..l).map(|i| mq[i] + (0.5 * lvq[i]).exp() * noise[i]).collect();
        let mut dec_in = xf;
        dec_in.extend_from_slice(&z);
        let dec = self.decoder.forward_trace(&dec_in)?;
        let (md, lvd) = dec.output().split_at(n);
        let vd: Vec<f64> = lvd.iter().map(|v| v.exp()).collect();

        let log_likelihood = diag_log_density(&df, md, &vd) - self.residual_norm.log_scale_sum();
        let mut kl = 0.0;
        for i in 0..l {
            let diff = mq[i] - mp[i];
            kl += lvp[i] - lvq[i] + (lvq[i].exp() + diff * diff) * (-lvp[i]).exp() - 1.0;
        }
        kl *= 0.5;
        let loss = -(log_likelihood - beta * kl);
        if !loss.is_finite() {
            return Err(Error::NonFinite { term: "elbo".into() });
        }

        if let Some(g) = grads {
            let mut up_d = vec![0.0; 2 * n];
            for i in 0..n {
                let r = df[i] - md[i];
                up_d[i] = -r / vd[i];
                up_d[n + i] = 0.5 * (1.0 - r * r / vd[i]);
            }
            let gin = self.decoder.backward_into(&dec, &up_d, &mut g.decoder)?;
            let gz = &gin[gin.len() - l..];

            let mut up_q = vec![0.0; 2 * l];
            let mut up_p = vec![0.0; 2 * l];
            for i in 0..l {
                let diff = mq[i] - mp[i];
                let inv_vp = (-lvp[i]).exp();
                up_q[i] = gz[i] + beta * diff * inv_vp;
                up_q[l + i] = gz[i] * noise[i] * 0.5 * (0.5 * lvq[i]).exp()
                    + beta * 0.5 * ((lvq[i] - lvp[i]).exp() - 1.0);
                up_p[i] = -beta * diff * inv_vp;
                up_p[l + i] = beta * 0.5 * (1.0 - (lvq[i].exp() + diff * diff) * inv_vp);
            }
            self.encoder.backward_into(&enc, &up_q, &mut g.encoder)?;
            self.prior.backward_into(&pri, &up_p, &mut g.prior)?;
        }
        Ok(ElboTerms {
            loss,
            log_likelihood,
            kl,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(CVAE_MAGIC);
        out.push('\n');
        writeln!(out, "state_dim {}", self.state_dim).unwrap();
        writeln!(out, "residual_dim {}", self.residual_dim).unwrap();
        writeln!(out, "latent_dim {}", self.latent_dim).unwrap();
        let idx: Vec<String> = self.condition_on.iter().map(|i| i.to_string()).collect();
        writeln!(out, "condition_on {}", idx.join(" ")).unwrap();
        writeln!(out, "state_shift {}", join_floats(&self.state_norm.shift)).unwrap();
        writeln!(out, "state_scale {}", join_floats(&self.state_norm.scale)).unwrap();
        writeln!(out, "residual_shift {}", join_floats(&self.residual_norm.shift)).unwrap();
        writeln!(out, "residual_scale {}", join_floats(&self.residual_norm.scale)).unwrap();
        for (name, net) in [("encoder", &self.encoder), ("decoder", &self.decoder), ("prior", &self.prior)] {
            writeln!(out, "net {name}").unwrap();
            out.push_str(&net.to_text());
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = LineReader::new(text);
        let magic = r.next_line()?;
        if magic != CVAE_MAGIC {
            return Err(Error::Version {
                expected: CVAE_MAGIC.into(),
                found: magic.into(),
            });
        }
        let state_dim = r.keyed_usize("state_dim")?;
        let residual_dim = r.keyed_usize("residual_dim")?;
        let latent_dim = r.keyed_usize("latent_dim")?;
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
            crate::nn::io::parse_floats(&vals, r.line_number())
        };
        let state_norm = Standardizer::new(floats("state_shift")?, floats("state_scale")?)?;
        let residual_norm = Standardizer::new(floats("residual_shift")?, floats("residual_scale")?)?;
        let mut nets = Vec::with_capacity(3);
        for name in ["encoder", "decoder", "prior"] {
            r.expect_exact(&format!("net {name}"))?;
            nets.push(Mlp::read(&mut r)?);
        }
        let prior = nets.pop().unwrap();
        let decoder = nets.pop().unwrap();
        let encoder = nets.pop().unwrap();
        let model = Self::from_parts(
            encoder,
            decoder,
            prior,
            state_dim,
            condition_on,
            state_norm,
            residual_norm,
        )?;
        if model.residual_dim != residual_dim {
            return Err(Error::dim("residual_dim", residual_dim, model.residual_dim));
        }
        if model.latent_dim != latent_dim {
            return Err(Error::dim("latent_dim", latent_dim, model.latent_dim));
        }
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
