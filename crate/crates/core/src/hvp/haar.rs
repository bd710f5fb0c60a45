//! Orthonormal 2-D Haar transform with the four outer-product kernels of
//! `L = [1, 1]/√2` and `H = [−1, 1]/√2`.
//!
//! For a block `[[a, b], [c, d]]`:
//! `LL = (a+b+c+d)/2`, `HH = (a−b−c+d)/2`, `HL = (−a−b+c+d)/2`, `LH = (−a+b−c+d)/2`.
//! Detail scales stack the subbands as channels `HH·C | HL·C | LH·C`.

use super::{HierarchyKind, HierarchySpec, MultiScaleRep};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct Bands {
    ll: Vec<f64>,
    details: Vec<f64>,
}

fn analyze(y: &Tensor) -> Result<Bands> {
    let (c, h, w) = y.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("Haar level needs even dimensions, got {h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let band = c * ho * wo;
    let mut ll = vec![0.0; band];
    let mut details = vec![0.0; 3 * band];
    let src = y.data();
    for ch in 0..c {
        for i in 0..ho {
            for j in 0..wo {
                let base = (ch * h + 2 * i) * w + 2 * j;
                let (a, b, cc, d) = (src[base], src[base + 1], src[base + w], src[base + w + 1]);
                let o = (ch * ho + i) * wo + j;
                ll[o] = (a + b + cc + d) * 0.5;
                details[o] = (a - b - cc + d) * 0.5;
                details[band + o] = (-a - b + cc + d) * 0.5;
                details[2 * band + o] = (-a + b - cc + d) * 0.5;
            }
        }
    }
    Ok(Bands { ll, details })
}

fn synthesize(ll: &Tensor, details: &Tensor) -> Result<Tensor> {
    let (c, ho, wo) = ll.chw()?;
    if details.shape() != [3 * c, ho, wo] {
        return Err(Error::Shape(format!("detail scale {:?} does not match {:?}", details.shape(), ll.shape())));
    }
    let (h, w) = (2 * ho, 2 * wo);
    let band = c * ho * wo;
    let (l, dd) = (ll.data(), details.data());
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for i in 0..ho {
            for j in 0..wo {
                let o = (ch * ho + i) * wo + j;
                let (s, hh, hl, lh) = (l[o], dd[o], dd[band + o], dd[2 * band + o]);
                let base = (ch * h + 2 * i) * w + 2 * j;
                out[base] = (s + hh - hl - lh) * 0.5;
                out[base + 1] = (s - hh - hl + lh) * 0.5;
                out[base + w] = (s - hh + hl - lh) * 0.5;
                out[base + w + 1] = (s + hh + hl + lh) * 0.5;
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, h, w], out))
}

/// Multi-level Haar analysis; `z^(1)` is the final approximation band.
pub fn haar_forward(x: &Tensor, levels: usize) -> Result<MultiScaleRep> {
    let (c, h, w) = x.chw()?;
    let spec = HierarchySpec::new(HierarchyKind::HaarWavelet, levels, c, h, w)?;
    let mut y = x.clone();
    let mut fine_to_coarse = Vec::with_capacity(levels);
    for _ in 1..levels {
        let (_, yh, yw) = y.chw()?;
        let bands = analyze(&y)?;
        fine_to_coarse.push(Tensor::from_parts(vec![3 * c, yh / 2, yw / 2], bands.details));
        y = Tensor::from_parts(vec![c, yh / 2, yw / 2], bands.ll);
    }
    fine_to_coarse.push(y);
    fine_to_coarse.reverse();
    MultiScaleRep::new(spec, fine_to_coarse)
}

pub fn haar_inverse(rep: &MultiScaleRep) -> Result<Tensor> {
    if rep.spec.kind != HierarchyKind::HaarWavelet {
        return Err(Error::InvalidArgument(format!("Haar inverse given a {} representation", rep.spec.kind)));
    }
    let mut y = rep.scales[0].clone();
    for z in &rep.scales[1..] {
        y = synthesize(&y, z)?;
    }
    Ok(y)
}
