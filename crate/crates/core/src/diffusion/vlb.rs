//! Discrete-time variational bound of one scale.
//!
//! With `t_k = k/T` and the clean latent at `t_0 = 0`, the bound is
//! `L_0 + Σ_{k=2..T} L_k + L_T` where
//! - `L_0 = −log N(z_0; x̂(z_{t_1}), σ₀²)` is the Gaussian decoder term,
//! - `L_k = w_k ‖ε − ε̂(z_{t_k})‖²` with `w_k = ½(exp(γ(t_{k−1}) − γ(t_k)) − 1)`,
//! - `L_T = KL(q(z_1 | z_0) ‖ N(0, I))` in closed form.

use std::f64::consts::PI;

use super::denoiser::{DecoderVariance, ScaleDenoiser};
use super::schedule::{step_time, NoiseSchedule};
use crate::error::{Error, Result};
use crate::nn::{Activations, EpsNet};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// How the diffusion terms are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VlbMode {
    /// All `T − 1` terms, one noise draw each.
    FullSum,
    /// `N` stratified step draws, rescaled by `(T − 1)/N`.
    MonteCarlo(usize),
}

/// Bound terms of one scale, in nats.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScaleTerms {
    pub l0: f64,
    pub lk_sum: f64,
    pub lt: f64,
    /// Individual `L_k` for `k = 2..=T` under [`VlbMode::FullSum`], empty otherwise.
    pub lk_terms: Vec<f64>,
}

impl ScaleTerms {
    pub fn total(&self) -> f64 {
        self.l0 + self.lk_sum + self.lt
    }
}

/// `z_t = α(t)·z_0 + σ(t)·ε`.
pub fn diffuse(schedule: &NoiseSchedule, z0: &Tensor, t: f64, eps: &Tensor) -> Result<Tensor> {
    z0.axpby(schedule.alpha(t), eps, schedule.sigma(t))
}

/// `KL(N(α_1 z_0, σ_1²) ‖ N(0, 1))` summed over elements.
pub fn prior_kl(schedule: &NoiseSchedule, z0: &Tensor) -> f64 {
    let a2 = schedule.alpha2(1.0);
    // σ² − 1 − ln σ² with σ² = 1 − α², written to keep precision when α² is tiny.
    let per_elem = -a2 - (-a2).ln_1p();
    0.5 * (a2 * z0.norm_sq() + per_elem * z0.len() as f64)
}

/// Stratified steps `k ∈ 2..=T`: `floor(((u + i/N) mod 1)(T − 1)) + 2`.
pub fn stratified_steps(steps: usize, n: usize, rng: &mut Rng) -> Vec<usize> {
    if steps < 2 || n == 0 {
        return Vec::new();
    }
    let u = rng.uniform();
    (0..n)
        .map(|i| {
            let frac = (u + i as f64 / n as f64).fract();
            let k = (frac * (steps - 1) as f64).floor() as usize;
            k.min(steps - 2) + 2
        })
        .collect()
}

/// Receives `∂loss/∂ε̂` for every network evaluation and backpropagates it.
pub(crate) struct GradSink<'a> {
    pub net: &'a EpsNet,
    pub grads: &'a mut [f64],
    /// Multiplier applied to every gradient, e.g. `1/(batch·dim)`.
    pub scale: f64,
    ws: Activations,
}

impl<'a> GradSink<'a> {
    pub fn new(net: &'a EpsNet, grads: &'a mut [f64], scale: f64) -> Self {
        Self { net, grads, scale, ws: Activations::default() }
    }
}

fn predict(
    den: &dyn ScaleDenoiser,
    sink: &mut Option<&mut GradSink<'_>>,
    z_t: &Tensor,
    gamma: f64,
    cond: Option<&Tensor>,
) -> Result<Tensor> {
    match sink {
        Some(s) => s.net.forward_with(z_t, gamma, cond, &mut s.ws),
        None => den.predict_eps(z_t, gamma, cond),
    }
}

fn push_grad(sink: &mut Option<&mut GradSink<'_>>, d_eps: &Tensor) -> Result<()> {
    if let Some(s) = sink {
        let up = d_eps.scale(s.scale);
        s.net.backward(&s.ws, &up, s.grads)?;
    }
    Ok(())
}

/// Variational bound of one scale for clean latent `z0`.
pub fn vlb_scale(
    den: &dyn ScaleDenoiser,
    schedule: &NoiseSchedule,
    steps: usize,
    z0: &Tensor,
    cond: Option<&Tensor>,
    rng: &mut Rng,
    mode: VlbMode,
) -> Result<ScaleTerms> {
    vlb_scale_impl(den, None, schedule, steps, z0, cond, rng, mode)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn vlb_scale_impl(
    den: &dyn ScaleDenoiser,
    mut sink: Option<&mut GradSink<'_>>,
    schedule: &NoiseSchedule,
    steps: usize,
    z0: &Tensor,
    cond: Option<&Tensor>,
    rng: &mut Rng,
    mode: VlbMode,
) -> Result<ScaleTerms> {
    if steps == 0 {
        return Err(Error::InvalidArgument("T must be at least 1".into()));
    }
    if let VlbMode::MonteCarlo(0) = mode {
        return Err(Error::InvalidArgument("Monte Carlo mode needs at least one draw".into()));
    }
    let shape = z0.shape().to_vec();

    // Reconstruction from t_1.
    let t1 = step_time(1, steps);
    let (a1, s1, g1) = (schedule.alpha(t1), schedule.sigma(t1), schedule.gamma(t1));
    let eps = Tensor::randn(shape.clone(), rng);
    let z1 = diffuse(schedule, z0, t1, &eps)?;
    let eps_hat = predict(den, &mut sink, &z1, g1, cond)?;
    let var = den.decoder_variance(g1);
    let log_var_index = sink.as_ref().map(|s| s.net.log_var_index());
    let mut l0 = 0.0;
    let mut d_eps = vec![0.0; z0.len()];
    let mut d_log_var = 0.0;
    for i in 0..z0.len() {
        let x_hat = (z1.data()[i] - s1 * eps_hat.data()[i]) / a1;
        let r = z0.data()[i] - x_hat;
        let v = var.at(i);
        if !(v > 0.0) {
            return Err(Error::Range(format!("decoder variance {v} at element {i}")));
        }
        l0 += 0.5 * (r * r / v + (2.0 * PI * v).ln());
        d_eps[i] = r / v * s1 / a1;
        d_log_var += 0.5 * (1.0 - r * r / v);
    }
    if sink.is_some() {
        push_grad(&mut sink, &Tensor::from_parts(shape.clone(), d_eps))?;
        if let (Some(s), Some(idx), DecoderVariance::Scalar(_)) = (sink.as_deref_mut(), log_var_index, &var) {
            s.grads[idx] += d_log_var * s.scale;
        }
    }

    let lt = prior_kl(schedule, z0);

    let (ks, factor, keep_terms) = match mode {
        VlbMode::FullSum => ((2..=steps).collect::<Vec<_>>(), 1.0, true),
        VlbMode::MonteCarlo(n) => (stratified_steps(steps, n, rng), (steps - 1) as f64 / n as f64, false),
    };
    let mut lk_sum = 0.0;
    let mut lk_terms = Vec::new();
    for k in ks {
        let (s, t) = (step_time(k - 1, steps), step_time(k, steps));
        let eps = Tensor::randn(shape.clone(), rng);
        let zt = diffuse(schedule, z0, t, &eps)?;
        let eps_hat = predict(den, &mut sink, &zt, schedule.gamma(t), cond)?;
        let w = schedule.step_weight(s, t);
        let err_sq: f64 = eps.data().iter().zip(eps_hat.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        let term = w * err_sq;
        lk_sum += factor * term;
        if keep_terms {
            lk_terms.push(term);
        }
        if sink.is_some() {
            let g = eps_hat.zip_with(&eps, |h, e| 2.0 * w * factor * (h - e))?;
            push_grad(&mut sink, &g)?;
        }
    }
    Ok(ScaleTerms { l0, lk_sum, lt, lk_terms })
}
