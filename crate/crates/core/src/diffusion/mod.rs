//! Cascaded variational diffusion over multi-scale representations.

mod cascade;
mod denoiser;
mod model;
mod sample;
mod schedule;
mod train;
mod vlb;

pub use cascade::{
    bin_bits, cascaded_loss, cascaded_loss_with_grad, cvdm_loss, loss_on_rep, nn_scale_bits, scale_conditions,
    VlbBreakdown,
};
pub use denoiser::{analytic_eps_at, analytic_gaussian_eps, DecoderVariance, GaussianOracle, ScaleDenoiser};
pub use model::{scale_net_config, CascadedModel, MAX_STEPS};
pub use sample::{sample, sample_rep, sample_scale};
pub use schedule::{step_time, NoiseSchedule, PosteriorCoeffs};
pub use train::{train, MetricsRow, TrainConfig, TrainReport};
pub use vlb::{diffuse, prior_kl, stratified_steps, vlb_scale, ScaleTerms, VlbMode};
