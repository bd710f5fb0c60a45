//! Ancestral sampling through the cascade, coarsest scale first.

use rayon::prelude::*;

use super::denoiser::ScaleDenoiser;
use super::model::CascadedModel;
use super::schedule::{step_time, NoiseSchedule};
use crate::error::Result;
use crate::hvp::{cond_input, MultiScaleRep};
use crate::rng::Rng;
use crate::tensor::{quantize, ImageU8, Tensor, BIN_WIDTH};

/// Draws one latent of `shape`: `z_1 ~ N(0, I)`, then the reverse chain
/// `t_T → t_1`, then a sample from the Gaussian decoder.
pub fn sample_scale(
    den: &dyn ScaleDenoiser,
    schedule: &NoiseSchedule,
    steps: usize,
    shape: &[usize],
    cond: Option<&Tensor>,
    rng: &mut Rng,
) -> Result<Tensor> {
    let mut z = Tensor::randn(shape.to_vec(), rng);
    for k in (2..=steps).rev() {
        let (s, t) = (step_time(k - 1, steps), step_time(k, steps));
        let eps_hat = den.predict_eps(&z, schedule.gamma(t), cond)?;
        let x_hat = z.axpby(1.0 / schedule.alpha(t), &eps_hat, -schedule.sigma(t) / schedule.alpha(t))?;
        let post = schedule.posterior(s, t);
        let noise = Tensor::randn(shape.to_vec(), rng);
        z = z.axpby(post.a, &x_hat, post.b)?.axpby(1.0, &noise, post.var.sqrt())?;
    }
    let t1 = step_time(1, steps);
    let g1 = schedule.gamma(t1);
    let eps_hat = den.predict_eps(&z, g1, cond)?;
    let x_hat = z.axpby(1.0 / schedule.alpha(t1), &eps_hat, -schedule.sigma(t1) / schedule.alpha(t1))?;
    let var = den.decoder_variance(g1);
    let data = x_hat.data().iter().enumerate().map(|(i, m)| m + var.at(i).sqrt() * rng.normal()).collect();
    Tensor::new(shape.to_vec(), data)
}

/// Samples every scale, each conditioned on the already sampled coarser ones.
pub fn sample_rep<D: ScaleDenoiser>(model: &CascadedModel<D>, rng: &mut Rng) -> Result<MultiScaleRep> {
    let spec = model.hierarchy;
    let mut rngs = rng.children(spec.levels);
    let mut scales: Vec<Tensor> = Vec::with_capacity(spec.levels);
    for s in 1..=spec.levels {
        let cond = if s == 1 { None } else { Some(cond_input(&spec, &scales, s)?) };
        let z = sample_scale(
            &model.scales[s - 1],
            &model.schedule,
            model.steps,
            &spec.scale_shape(s),
            cond.as_ref(),
            &mut rngs[s - 1],
        )?;
        scales.push(z);
    }
    MultiScaleRep::new(spec, scales)
}

/// Draws `n` images. Each image has its own child stream, so the result
/// does not depend on the thread count.
pub fn sample<D: ScaleDenoiser>(model: &CascadedModel<D>, n: usize, rng: &mut Rng) -> Result<Vec<ImageU8>> {
    let mut rngs = rng.children(n);
    rngs.par_iter_mut()
        .map(|r| {
            let x = sample_rep(model, r)?.inverse()?;
            let hi = 1.0 - BIN_WIDTH / 2.0;
            quantize(&Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|v| v.clamp(-1.0, hi)).collect()))
        })
        .collect()
}
