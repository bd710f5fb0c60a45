//! Nearest-neighbour hierarchy: every scale is a scaled block average of the
//! image itself, `z^(s) = d^(S−s)(x)`. It stores redundant copies of the data
//! and is therefore not volume preserving.

use super::resample::downsample_np;
use super::{HierarchyKind, HierarchySpec, MultiScaleRep};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn nn_forward(x: &Tensor, levels: usize) -> Result<MultiScaleRep> {
    let (c, h, w) = x.chw()?;
    let spec = HierarchySpec::new(HierarchyKind::NearestNeighbor, levels, c, h, w)?;
    let mut scales = vec![x.clone()];
    for _ in 1..levels {
        let next = downsample_np(scales.last().unwrap())?;
        scales.push(next);
    }
    scales.reverse();
    MultiScaleRep::new(spec, scales)
}

/// Returns the finest scale, which is the image.
pub fn nn_inverse(rep: &MultiScaleRep) -> Result<Tensor> {
    if rep.spec.kind != HierarchyKind::NearestNeighbor {
        return Err(Error::InvalidArgument(format!(
            "nearest-neighbour inverse given a {} representation",
            rep.spec.kind
        )));
    }
    Ok(rep.scales.last().unwrap().clone())
}
