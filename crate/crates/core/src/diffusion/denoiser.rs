//! The per-scale denoiser interface and the analytic Gaussian oracle.

use super::schedule::{sigmoid, NoiseSchedule};
use crate::error::{Error, Result};
use crate::nn::EpsNet;
use crate::tensor::Tensor;

/// Variance of the Gaussian decoder `p(z_0 | z_{t_1})`.
#[derive(Clone, Debug, PartialEq)]
pub enum DecoderVariance {
    Scalar(f64),
    PerElement(Tensor),
}

impl DecoderVariance {
    pub fn at(&self, i: usize) -> f64 {
        match self {
            DecoderVariance::Scalar(v) => *v,
            DecoderVariance::PerElement(t) => t.data()[i],
        }
    }
}

/// Noise predictor for one scale of a cascade.
pub trait ScaleDenoiser: Sync {
    /// Predicts `ε` from the noisy latent at log-SNR `gamma`.
    fn predict_eps(&self, z_t: &Tensor, gamma: f64, cond: Option<&Tensor>) -> Result<Tensor>;

    /// Decoder variance when reconstructing from log-SNR `gamma_1`.
    fn decoder_variance(&self, gamma_1: f64) -> DecoderVariance;
}

impl ScaleDenoiser for EpsNet {
    fn predict_eps(&self, z_t: &Tensor, gamma: f64, cond: Option<&Tensor>) -> Result<Tensor> {
        self.forward(z_t, gamma, cond)
    }

    fn decoder_variance(&self, _gamma_1: f64) -> DecoderVariance {
        DecoderVariance::Scalar(self.decoder_log_var().exp())
    }
}

/// Bayes-optimal `ε` for data `z_0 ~ N(μ, diag(v))` at log-SNR `gamma`.
pub fn analytic_eps_at(mean: &Tensor, var: &Tensor, z_t: &Tensor, gamma: f64) -> Result<Tensor> {
    mean.check_same_shape(var)?;
    mean.check_same_shape(z_t)?;
    let (a2, s2) = (sigmoid(gamma), sigmoid(-gamma));
    let (a, s) = (a2.sqrt(), s2.sqrt());
    let data = mean
        .data()
        .iter()
        .zip(var.data())
        .zip(z_t.data())
        .map(|((&m, &v), &z)| {
            let post_mean = m + a * v / (a2 * v + s2) * (z - a * m);
            (z - a * post_mean) / s
        })
        .collect();
    Tensor::new(mean.shape().to_vec(), data)
}

/// [`analytic_eps_at`] at time `t` of `schedule`.
pub fn analytic_gaussian_eps(
    schedule: &NoiseSchedule,
    mean: &Tensor,
    var: &Tensor,
    z_t: &Tensor,
    t: f64,
) -> Result<Tensor> {
    analytic_eps_at(mean, var, z_t, schedule.gamma(t))
}

/// Exact denoiser for independent Gaussian latents; its decoder variance is
/// the posterior variance `Var[z_0 | z_{t_1}]`, making the reconstruction term
/// Bayes optimal too.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianOracle {
    pub mean: Tensor,
    pub var: Tensor,
}

impl GaussianOracle {
    pub fn new(mean: Tensor, var: Tensor) -> Result<Self> {
        mean.check_same_shape(&var)?;
        if var.data().iter().any(|&v| v < 0.0) {
            return Err(Error::Range("negative variance".into()));
        }
        Ok(Self { mean, var })
    }
}

impl ScaleDenoiser for GaussianOracle {
    fn predict_eps(&self, z_t: &Tensor, gamma: f64, _cond: Option<&Tensor>) -> Result<Tensor> {
        analytic_eps_at(&self.mean, &self.var, z_t, gamma)
    }

    fn decoder_variance(&self, gamma_1: f64) -> DecoderVariance {
        let (a2, s2) = (sigmoid(gamma_1), sigmoid(-gamma_1));
        let data = self.var.data().iter().map(|&v| v * s2 / (a2 * v + s2)).collect();
        DecoderVariance::PerElement(Tensor::from_parts(self.var.shape().to_vec(), data))
    }
}
