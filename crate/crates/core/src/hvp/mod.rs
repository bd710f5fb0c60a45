//! Hierarchical maps `x ↦ (z^(1), …, z^(S))` from an image to a coarse-to-fine
//! sequence of scales.
//!
//! The Haar wavelet and the Laplacian pyramid are volume preserving
//! (`AᵀA = I`); the nearest-neighbour hierarchy is not and serves as the
//! baseline for the ablation.

mod haar;
mod jacobian;
mod laplacian;
mod nearest;
mod resample;

use std::fmt;
use std::str::FromStr;

pub use haar::{haar_forward, haar_inverse};
pub use jacobian::{gram_matrix, jacobian_matrix, volume_factor};
pub use laplacian::{lp_forward, lp_inverse};
pub use nearest::{nn_forward, nn_inverse};
pub use resample::{downsample_np, downsample_times, upsample_np, upsample_times};

use crate::error::{Error, Result};
use crate::io::{tensor_from_bytes, tensor_to_bytes};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HierarchyKind {
    HaarWavelet,
    LaplacianPyramid,
    NearestNeighbor,
}

impl HierarchyKind {
    pub fn is_volume_preserving(self) -> bool {
        !matches!(self, HierarchyKind::NearestNeighbor)
    }

    pub fn name(self) -> &'static str {
        match self {
            HierarchyKind::HaarWavelet => "haar",
            HierarchyKind::LaplacianPyramid => "laplacian",
            HierarchyKind::NearestNeighbor => "nearest",
        }
    }
}

impl fmt::Display for HierarchyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HierarchyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "haar" | "wavelet" => Ok(HierarchyKind::HaarWavelet),
            "laplacian" | "lp" => Ok(HierarchyKind::LaplacianPyramid),
            "nearest" | "nn" => Ok(HierarchyKind::NearestNeighbor),
            _ => Err(Error::InvalidArgument(format!("unknown hierarchy {s:?}"))),
        }
    }
}

/// Map kind, number of scales `S`, and the image shape it applies to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct HierarchySpec {
    pub kind: HierarchyKind,
    pub levels: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl HierarchySpec {
    pub fn new(kind: HierarchyKind, levels: usize, channels: usize, height: usize, width: usize) -> Result<Self> {
        let spec = Self { kind, levels, channels, height, width };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > 16 {
            return Err(Error::InvalidArgument(format!("levels must be in 1..=16, got {}", self.levels)));
        }
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::InvalidArgument("image dimensions must be positive".into()));
        }
        let f = 1usize << (self.levels - 1);
        if self.height % f != 0 || self.width % f != 0 {
            return Err(Error::Shape(format!(
                "{}x{} is not divisible by 2^{} for {} levels",
                self.height,
                self.width,
                self.levels - 1,
                self.levels
            )));
        }
        Ok(())
    }

    pub fn image_shape(&self) -> Vec<usize> {
        vec![self.channels, self.height, self.width]
    }

    pub fn image_dim(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Shape of scale `s` (1-based, coarse to fine).
    pub fn scale_shape(&self, s: usize) -> Vec<usize> {
        assert!((1..=self.levels).contains(&s), "scale {s} out of 1..={}", self.levels);
        let c = self.channels;
        match self.kind {
            HierarchyKind::HaarWavelet if s == 1 => {
                let f = 1 << (self.levels - 1);
                vec![c, self.height / f, self.width / f]
            }
            HierarchyKind::HaarWavelet => {
                let f = 1 << (self.levels - s + 1);
                vec![3 * c, self.height / f, self.width / f]
            }
            HierarchyKind::LaplacianPyramid | HierarchyKind::NearestNeighbor => {
                let f = 1 << (self.levels - s);
                vec![c, self.height / f, self.width / f]
            }
        }
    }

    pub fn scale_dim(&self, s: usize) -> usize {
        self.scale_shape(s).iter().product()
    }

    /// Total latent dimension `dim(h(x))`.
    pub fn latent_dim(&self) -> usize {
        (1..=self.levels).map(|s| self.scale_dim(s)).sum()
    }

    /// Channel count of the conditioning tensor fed to scale `s` (0 at the base scale).
    pub fn cond_channels(&self, s: usize) -> usize {
        if s == 1 {
            0
        } else {
            self.channels
        }
    }

    pub fn check_image(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.image_shape().as_slice() {
            return Err(Error::Shape(format!("image {:?} does not match {:?}", x.shape(), self.image_shape())));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<MultiScaleRep> {
        self.check_image(x)?;
        match self.kind {
            HierarchyKind::HaarWavelet => haar_forward(x, self.levels),
            HierarchyKind::LaplacianPyramid => lp_forward(x, self.levels),
            HierarchyKind::NearestNeighbor => nn_forward(x, self.levels),
        }
    }

    /// Same map applied to the level-`m` coarsening of the image: a hierarchy
    /// with `levels − m` scales on an image `2^m` times smaller per side.
    pub fn truncated(&self, levels: usize) -> Result<HierarchySpec> {
        if levels == 0 || levels > self.levels {
            return Err(Error::InvalidArgument(format!("cannot truncate {} levels to {levels}", self.levels)));
        }
        let f = 1 << (self.levels - levels);
        HierarchySpec::new(self.kind, levels, self.channels, self.height / f, self.width / f)
    }
}

/// Scales `z^(1)…z^(S)` of one image, coarse to fine.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiScaleRep {
    pub spec: HierarchySpec,
    pub scales: Vec<Tensor>,
}

impl MultiScaleRep {
    /// Validates that every scale has the shape the spec prescribes.
    pub fn new(spec: HierarchySpec, scales: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        if scales.len() != spec.levels {
            return Err(Error::Shape(format!("{} scales for {} levels", scales.len(), spec.levels)));
        }
        for (i, z) in scales.iter().enumerate() {
            let want = spec.scale_shape(i + 1);
            if z.shape() != want.as_slice() {
                return Err(Error::Shape(format!("scale {} is {:?}, expected {want:?}", i + 1, z.shape())));
            }
        }
        Ok(Self { spec, scales })
    }

    pub fn zeros(spec: HierarchySpec) -> Self {
        let scales = (1..=spec.levels).map(|s| Tensor::zeros(spec.scale_shape(s))).collect();
        Self { spec, scales }
    }

    pub fn inverse(&self) -> Result<Tensor> {
        match self.spec.kind {
            HierarchyKind::HaarWavelet => haar_inverse(self),
            HierarchyKind::LaplacianPyramid => lp_inverse(self),
            HierarchyKind::NearestNeighbor => nn_inverse(self),
        }
    }

    /// All scales concatenated in order.
    pub fn flatten(&self) -> Vec<f64> {
        self.scales.iter().flat_map(|z| z.data().iter().copied()).collect()
    }

    pub fn norm_sq(&self) -> f64 {
        self.scales.iter().map(Tensor::norm_sq).sum()
    }

    pub fn element_count(&self) -> usize {
        self.scales.iter().map(Tensor::len).sum()
    }

    /// Header line followed by one `PTNS` blob per scale.
    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.spec;
        let mut out = format!(
            "PCDMREP kind={} levels={} channels={} height={} width={}\n",
            s.kind, s.levels, s.channels, s.height, s.width
        )
        .into_bytes();
        for z in &self.scales {
            out.extend_from_slice(&tensor_to_bytes(z));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("missing representation header".into()))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::Format("non-UTF-8 header".into()))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("PCDMREP") {
            return Err(Error::Format("bad representation magic".into()));
        }
        let (mut kind, mut levels, mut channels, mut height, mut width) = (None, None, None, None, None);
        for f in fields {
            let (k, v) = f.split_once('=').ok_or_else(|| Error::Format(format!("bad header field {f:?}")))?;
            let num = || v.parse::<usize>().map_err(|_| Error::Format(format!("bad number in {f:?}")));
            match k {
                "kind" => kind = Some(v.parse::<HierarchyKind>()?),
                "levels" => levels = Some(num()?),
                "channels" => channels = Some(num()?),
                "height" => height = Some(num()?),
                "width" => width = Some(num()?),
                _ => return Err(Error::Format(format!("unknown header field {k:?}"))),
            }
        }
        let missing = || Error::Format("incomplete representation header".into());
        let spec = HierarchySpec::new(
            kind.ok_or_else(missing)?,
            levels.ok_or_else(missing)?,
            channels.ok_or_else(missing)?,
            height.ok_or_else(missing)?,
            width.ok_or_else(missing)?,
        )?;
        let mut pos = nl + 1;
        let mut scales = Vec::with_capacity(spec.levels);
        for _ in 0..spec.levels {
            let (t, used) = tensor_from_bytes(&bytes[pos..])?;
            scales.push(t);
            pos += used;
        }
        if pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - pos)));
        }
        MultiScaleRep::new(spec, scales)
    }
}

/// Conditioning tensor for scale `s ≥ 2`, built only from the coarser scales
/// `z^(1)…z^(s−1)` and shaped to the spatial extent of `z^(s)`.
///
/// For the volume-preserving maps the coarser scales are inverted with every
/// finer scale zeroed and the result is downsampled to the target extent,
/// which is the low-pass image `y^(s−1)` for Haar and `u(y^(s−1))` for the
/// Laplacian pyramid. For the nearest-neighbour hierarchy it is `u(z^(s−1))`.
pub fn cond_input(spec: &HierarchySpec, lower: &[Tensor], s: usize) -> Result<Tensor> {
    if s < 2 || s > spec.levels {
        return Err(Error::InvalidArgument(format!("conditioning scale {s} outside 2..={}", spec.levels)));
    }
    if lower.len() < s - 1 {
        return Err(Error::Shape(format!("scale {s} needs {} coarser scales, got {}", s - 1, lower.len())));
    }
    match spec.kind {
        HierarchyKind::NearestNeighbor => upsample_np(&lower[s - 2]),
        kind => {
            let mut scales: Vec<Tensor> = lower[..s - 1].to_vec();
            for k in s..=spec.levels {
                scales.push(Tensor::zeros(spec.scale_shape(k)));
            }
            let rep = MultiScaleRep::new(*spec, scales)?;
            let x = rep.inverse()?;
            let times = match kind {
                HierarchyKind::HaarWavelet => spec.levels - s + 1,
                _ => spec.levels - s,
            };
            downsample_times(&x, times)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    const KINDS: [HierarchyKind; 3] =
        [HierarchyKind::HaarWavelet, HierarchyKind::LaplacianPyramid, HierarchyKind::NearestNeighbor];

    #[test]
    fn spec_validation() {
        assert!(HierarchySpec::new(HierarchyKind::HaarWavelet, 3, 1, 8, 8).is_ok());
        assert!(HierarchySpec::new(HierarchyKind::HaarWavelet, 4, 1, 4, 8).is_err());
        assert!(HierarchySpec::new(HierarchyKind::HaarWavelet, 0, 1, 4, 4).is_err());
        assert!(HierarchySpec::new(HierarchyKind::HaarWavelet, 1, 1, 5, 3).is_ok());
    }

    #[test]
    fn scale_shapes_and_counts() {
        let h = HierarchySpec::new(HierarchyKind::HaarWavelet, 3, 2, 8, 8).unwrap();
        assert_eq!(h.scale_shape(1), vec![2, 2, 2]);
        assert_eq!(h.scale_shape(2), vec![6, 2, 2]);
        assert_eq!(h.scale_shape(3), vec![6, 4, 4]);
        assert_eq!(h.latent_dim(), h.image_dim());
        let l = HierarchySpec { kind: HierarchyKind::LaplacianPyramid, ..h };
        assert_eq!(l.latent_dim(), 2 * (4 + 16 + 64));
        assert!(l.latent_dim() > l.image_dim());
    }

    #[test]
    fn serialization_round_trip() {
        let mut rng = Rng::new(2);
        for kind in KINDS {
            let spec = HierarchySpec::new(kind, 2, 1, 4, 4).unwrap();
            let rep = spec.forward(&Tensor::randn(spec.image_shape(), &mut rng)).unwrap();
            let bytes = rep.to_bytes();
            assert_eq!(MultiScaleRep::from_bytes(&bytes).unwrap(), rep);
            assert!(MultiScaleRep::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        }
    }

    #[test]
    fn linearity_all_maps() {
        let mut rng = Rng::new(11);
        for kind in KINDS {
            let spec = HierarchySpec::new(kind, 3, 2, 8, 8).unwrap();
            let x = Tensor::randn(spec.image_shape(), &mut rng);
            let y = Tensor::randn(spec.image_shape(), &mut rng);
            let (a, b) = (0.75, -2.5);
            let lhs = spec.forward(&x.axpby(a, &y, b).unwrap()).unwrap().flatten();
            let hx = spec.forward(&x).unwrap().flatten();
            let hy = spec.forward(&y).unwrap().flatten();
            for i in 0..lhs.len() {
                assert!((lhs[i] - (a * hx[i] + b * hy[i])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cond_shapes_match_target_scale() {
        let mut rng = Rng::new(4);
        for kind in KINDS {
            let spec = HierarchySpec::new(kind, 3, 3, 8, 8).unwrap();
            let rep = spec.forward(&Tensor::randn(spec.image_shape(), &mut rng)).unwrap();
            for s in 2..=3 {
                let c = cond_input(&spec, &rep.scales, s).unwrap();
                let zs = spec.scale_shape(s);
                assert_eq!(c.shape(), &[3, zs[1], zs[2]], "{kind} s={s}");
            }
        }
    }

    #[test]
    fn cond_is_low_pass_of_constant_image() {
        for kind in KINDS {
            let spec = HierarchySpec::new(kind, 2, 1, 4, 4).unwrap();
            let rep = spec.forward(&Tensor::filled(spec.image_shape(), 0.5)).unwrap();
            let c = cond_input(&spec, &rep.scales, 2).unwrap();
            let v0 = c.data()[0];
            assert!(c.data().iter().all(|&v| (v - v0).abs() < 1e-12));
            let zero = cond_input(&spec, &[Tensor::zeros(spec.scale_shape(1))], 2).unwrap();
            assert!(zero.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn haar_cond_is_coarse_approximation() {
        let mut rng = Rng::new(8);
        let spec = HierarchySpec::new(HierarchyKind::HaarWavelet, 3, 1, 8, 8).unwrap();
        let x = Tensor::randn(spec.image_shape(), &mut rng);
        let rep = spec.forward(&x).unwrap();
        let c = cond_input(&spec, &rep.scales, 3).unwrap();
        assert!(c.max_abs_diff(&downsample_np(&x).unwrap()).unwrap() < 1e-12);
    }

    #[test]
    fn cond_rejects_base_scale() {
        let spec = HierarchySpec::new(HierarchyKind::HaarWavelet, 2, 1, 4, 4).unwrap();
        assert!(cond_input(&spec, &[], 1).is_err());
        assert!(cond_input(&spec, &[], 3).is_err());
    }
}
