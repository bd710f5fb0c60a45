//! Laplacian pyramid: band-pass residuals `y − u(d(y))` plus the coarse
//! approximation. With the norm-preserving `d`/`u` pair it is a tight frame.

use super::resample::{downsample_np, upsample_np};
use super::{HierarchyKind, HierarchySpec, MultiScaleRep};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn lp_forward(x: &Tensor, levels: usize) -> Result<MultiScaleRep> {
    let (c, h, w) = x.chw()?;
    let spec = HierarchySpec::new(HierarchyKind::LaplacianPyramid, levels, c, h, w)?;
    let mut y = x.clone();
    let mut fine_to_coarse = Vec::with_capacity(levels);
    for _ in 1..levels {
        let coarse = downsample_np(&y)?;
        fine_to_coarse.push(y.sub(&upsample_np(&coarse)?)?);
        y = coarse;
    }
    fine_to_coarse.push(y);
    fine_to_coarse.reverse();
    MultiScaleRep::new(spec, fine_to_coarse)
}

pub fn lp_inverse(rep: &MultiScaleRep) -> Result<Tensor> {
    if rep.spec.kind != HierarchyKind::LaplacianPyramid {
        return Err(Error::InvalidArgument(format!("Laplacian inverse given a {} representation", rep.spec.kind)));
    }
    let mut y = rep.scales[0].clone();
    for z in &rep.scales[1..] {
        y = upsample_np(&y)?.add(z)?;
    }
    Ok(y)
}
