//! Typicality-test out-of-distribution scoring.
//!
//! An input is anomalous when its negative log-likelihood is far from the
//! model's entropy, in either direction. The entropy is estimated as the
//! mean training NLL, and each NLL is a Monte Carlo estimate of the cascaded
//! bound with `N` stratified diffusion steps.

use std::cmp::Ordering;
use std::f64::consts::LN_2;

use rayon::prelude::*;

use crate::diffusion::{cascaded_loss, CascadedModel, ScaleDenoiser, VlbMode};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{dequantize, ImageU8};

/// Monte Carlo sample count used when none is given.
pub const DEFAULT_MC_SAMPLES: usize = 20;

/// Discrete NLL estimate of one image in nats, bin charge included.
pub fn nll_estimate<D: ScaleDenoiser>(
    model: &CascadedModel<D>,
    img: &ImageU8,
    mc_samples: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if mc_samples == 0 {
        return Err(Error::InvalidArgument("need at least one Monte Carlo sample".into()));
    }
    let x = dequantize(img, rng);
    let b = cascaded_loss(model, &x, rng, VlbMode::MonteCarlo(mc_samples))?;
    Ok(b.bpd * b.dim as f64 * LN_2)
}

/// NLL estimates of many images, each with its own child stream of `rng`.
pub fn nll_estimates<D: ScaleDenoiser>(
    model: &CascadedModel<D>,
    images: &[ImageU8],
    mc_samples: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let rngs = rng.children(images.len());
    images.par_iter().zip(rngs).map(|(img, mut r)| nll_estimate(model, img, mc_samples, &mut r)).collect()
}

/// Mean training NLL in nats per image.
pub fn estimate_entropy<D: ScaleDenoiser>(
    model: &CascadedModel<D>,
    train: &[ImageU8],
    mc_samples: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if train.is_empty() {
        return Err(Error::Empty("entropy needs at least one training image".into()));
    }
    let nlls = nll_estimates(model, train, mc_samples, rng)?;
    Ok(nlls.iter().sum::<f64>() / nlls.len() as f64)
}

/// Entropy estimate plus the sampling settings used for every score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OodScorer {
    /// `Ĥ` in nats per image.
    pub entropy: f64,
    pub mc_samples: usize,
}

impl OodScorer {
    pub fn new(entropy: f64, mc_samples: usize) -> Result<Self> {
        if !entropy.is_finite() {
            return Err(Error::Range(format!("entropy estimate {entropy}")));
        }
        if mc_samples == 0 {
            return Err(Error::InvalidArgument("need at least one Monte Carlo sample".into()));
        }
        Ok(Self { entropy, mc_samples })
    }

    pub fn fit<D: ScaleDenoiser>(
        model: &CascadedModel<D>,
        train: &[ImageU8],
        mc_samples: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Self::new(estimate_entropy(model, train, mc_samples, rng)?, mc_samples)
    }

    /// `|NLL − Ĥ|` for a group of one.
    pub fn score_nll(&self, nll: f64) -> f64 {
        (nll - self.entropy).abs()
    }

    pub fn score<D: ScaleDenoiser>(&self, model: &CascadedModel<D>, img: &ImageU8, rng: &mut Rng) -> Result<f64> {
        Ok(self.score_nll(nll_estimate(model, img, self.mc_samples, rng)?))
    }

    pub fn scores<D: ScaleDenoiser>(
        &self,
        model: &CascadedModel<D>,
        images: &[ImageU8],
        rng: &mut Rng,
    ) -> Result<Vec<f64>> {
        Ok(nll_estimates(model, images, self.mc_samples, rng)?.into_iter().map(|n| self.score_nll(n)).collect())
    }
}

/// Shorthand for [`OodScorer::score`].
pub fn typicality_score<D: ScaleDenoiser>(
    scorer: &OodScorer,
    model: &CascadedModel<D>,
    img: &ImageU8,
    rng: &mut Rng,
) -> Result<f64> {
    scorer.score(model, img, rng)
}

/// `P(out > in) + ½ P(out = in)` over all pairs, counted exactly in
/// `O((m + n) log m)`.
pub fn auroc(scores_in: &[f64], scores_out: &[f64]) -> Result<f64> {
    if scores_in.is_empty() || scores_out.is_empty() {
        return Err(Error::Empty("AUROC needs scores on both sides".into()));
    }
    if let Some(i) = scores_in.iter().chain(scores_out).position(|s| s.is_nan()) {
        return Err(Error::NonFinite(i));
    }
    let mut sorted = scores_in.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut wins = 0.0;
    for &o in scores_out {
        let below = sorted.partition_point(|&s| s.partial_cmp(&o) == Some(Ordering::Less));
        let not_above = sorted.partition_point(|&s| s <= o);
        wins += below as f64 + 0.5 * (not_above - below) as f64;
    }
    Ok(wins / (scores_in.len() as f64 * scores_out.len() as f64))
}
