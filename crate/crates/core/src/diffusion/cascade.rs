//! Variational bound of a whole cascade.
//!
//! The image is mapped to its multi-scale representation, every scale gets
//! its own bound conditioned on the coarser scales, and the bounds add up.
//! Volume-preserving maps need no Jacobian correction.

use std::f64::consts::LN_2;

use super::denoiser::ScaleDenoiser;
use super::model::CascadedModel;
use super::vlb::{vlb_scale, vlb_scale_impl, GradSink, ScaleTerms, VlbMode};
use crate::error::{Error, Result};
use crate::hvp::{cond_input, HierarchyKind, HierarchySpec, MultiScaleRep};
use crate::nn::EpsNet;
use crate::rng::Rng;
use crate::tensor::{Tensor, BIN_WIDTH};

/// Bound of one image, in nats unless stated.
#[derive(Clone, Debug, PartialEq)]
pub struct VlbBreakdown {
    pub l0: f64,
    pub lk_sum: f64,
    pub lt: f64,
    pub per_scale: Vec<ScaleTerms>,
    /// Pixel count `d` of the image.
    pub dim: usize,
    /// Discretisation charge in bits, added to the continuous bound.
    pub bin_bits: f64,
    /// Bits per dimension including the discretisation charge.
    pub bpd: f64,
}

impl VlbBreakdown {
    pub fn total_nats(&self) -> f64 {
        self.l0 + self.lk_sum + self.lt
    }

    pub fn continuous_bpd(&self) -> f64 {
        self.total_nats() / (self.dim as f64 * LN_2)
    }

    pub(crate) fn from_scales(spec: &HierarchySpec, per_scale: Vec<ScaleTerms>) -> Self {
        let l0 = per_scale.iter().map(|s| s.l0).sum();
        let lk_sum = per_scale.iter().map(|s| s.lk_sum).sum();
        let lt = per_scale.iter().map(|s| s.lt).sum();
        let dim = spec.image_dim();
        let bin_bits = bin_bits(spec);
        let nats: f64 = l0 + lk_sum + lt;
        let bpd = nats / (dim as f64 * LN_2) + bin_bits / dim as f64;
        Self { l0, lk_sum, lt, per_scale, dim, bin_bits, bpd }
    }
}

/// Bits charged for mapping integer pixels to bins of width `2/256`.
///
/// A volume-preserving map keeps bin volume, so the charge is `−log₂(2/256) = 7`
/// bits per pixel. Nearest-neighbour latents of scale `s` are `2^(S−s)` times
/// block averages of `4^(S−s)` pixels, so they live on a lattice of spacing
/// `BIN_WIDTH/2^(S−s)` and each latent pays `7 + S − s` bits.
pub fn bin_bits(spec: &HierarchySpec) -> f64 {
    let per_pixel = -BIN_WIDTH.log2();
    if spec.kind.is_volume_preserving() {
        return per_pixel * spec.image_dim() as f64;
    }
    (1..=spec.levels).map(|s| spec.scale_dim(s) as f64 * nn_scale_bits(spec, s)).sum()
}

/// Per-latent discretisation charge of nearest-neighbour scale `s`.
pub fn nn_scale_bits(spec: &HierarchySpec, s: usize) -> f64 {
    -BIN_WIDTH.log2() + (spec.levels - s) as f64
}

/// Conditioning inputs for every scale of a representation.
pub fn scale_conditions(rep: &MultiScaleRep) -> Result<Vec<Option<Tensor>>> {
    (1..=rep.spec.levels)
        .map(|s| if s == 1 { Ok(None) } else { cond_input(&rep.spec, &rep.scales[..s - 1], s).map(Some) })
        .collect()
}

/// Bound of a representation that was already computed.
pub fn loss_on_rep<D: ScaleDenoiser>(
    model: &CascadedModel<D>,
    rep: &MultiScaleRep,
    rng: &mut Rng,
    mode: VlbMode,
) -> Result<VlbBreakdown> {
    if rep.spec != model.hierarchy {
        return Err(Error::Shape("representation does not match the model hierarchy".into()));
    }
    let conds = scale_conditions(rep)?;
    let mut rngs = rng.children(model.hierarchy.levels);
    let per_scale = model
        .scales
        .iter()
        .zip(&rep.scales)
        .zip(&conds)
        .zip(rngs.iter_mut())
        .map(|(((den, z), c), r)| vlb_scale(den, &model.schedule, model.steps, z, c.as_ref(), r, mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(VlbBreakdown::from_scales(&model.hierarchy, per_scale))
}

/// Bound of a dequantized image `x ∈ [−1, 1]^d`.
pub fn cascaded_loss<D: ScaleDenoiser>(
    model: &CascadedModel<D>,
    x: &Tensor,
    rng: &mut Rng,
    mode: VlbMode,
) -> Result<VlbBreakdown> {
    let rep = model.hierarchy.forward(x)?;
    loss_on_rep(model, &rep, rng, mode)
}

/// The non-volume-preserving baseline: the same cascade over the
/// nearest-neighbour hierarchy.
pub fn cvdm_loss<D: ScaleDenoiser>(
    model: &CascadedModel<D>,
    x: &Tensor,
    rng: &mut Rng,
    mode: VlbMode,
) -> Result<VlbBreakdown> {
    if model.hierarchy.kind != HierarchyKind::NearestNeighbor {
        return Err(Error::InvalidArgument(format!(
            "baseline loss needs the nearest-neighbour hierarchy, model uses {}",
            model.hierarchy.kind
        )));
    }
    cascaded_loss(model, x, rng, mode)
}

/// [`cascaded_loss`] that also accumulates `scale · ∂loss/∂θ` into
/// `grads[s − 1]` for every scale network. Draws the same noise.
pub fn cascaded_loss_with_grad(
    model: &CascadedModel<EpsNet>,
    x: &Tensor,
    rng: &mut Rng,
    mode: VlbMode,
    grads: &mut [Vec<f64>],
    scale: f64,
) -> Result<VlbBreakdown> {
    if grads.len() != model.scales.len() {
        return Err(Error::Shape(format!("{} gradient buffers for {} scales", grads.len(), model.scales.len())));
    }
    let rep = model.hierarchy.forward(x)?;
    let conds = scale_conditions(&rep)?;
    let mut rngs = rng.children(model.hierarchy.levels);
    let mut per_scale = Vec::with_capacity(model.scales.len());
    for (i, net) in model.scales.iter().enumerate() {
        if grads[i].len() != net.num_params() {
            return Err(Error::Shape(format!("gradient buffer {i} has the wrong length")));
        }
        let mut sink = GradSink::new(net, &mut grads[i], scale);
        per_scale.push(vlb_scale_impl(
            net,
            Some(&mut sink),
            &model.schedule,
            model.steps,
            &rep.scales[i],
            conds[i].as_ref(),
            &mut rngs[i],
            mode,
        )?);
    }
    Ok(VlbBreakdown::from_scales(&model.hierarchy, per_scale))
}
