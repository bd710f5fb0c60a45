//! Linear-time wavelet surrogate `μ̂` for the Earth Mover's Distance.
//!
//! `μ̂ = ‖z^(1)‖₁ + Σ_{s≥2} 2^(−s(p + D/2)) ‖z^(s)‖₁` over the full Haar
//! decomposition of `x − y`, with `z^(1)` the single coarsest coefficient.

use super::exact::check_p_public;
use super::Histogram2D;
use crate::error::{Error, Result};
use crate::hvp::{HierarchyKind, HierarchySpec, MultiScaleRep};

/// Exponent convention for the per-scale weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WaveletVariant {
    /// `2^(−s(p + D/2))` with spatial dimension `D = 2`.
    #[default]
    DimensionExponent,
    /// `2^(−s(p + n/2))` with `n = max(H, W)`, as the bound is literally printed.
    PaperLiteral,
}

/// Weight applied to `‖z^(s)‖₁`; `side` is `max(H, W)` of the image.
pub fn scale_weight(s: usize, p: f64, variant: WaveletVariant, side: usize) -> f64 {
    if s == 1 {
        return 1.0;
    }
    let half_dim = match variant {
        WaveletVariant::DimensionExponent => 1.0,
        WaveletVariant::PaperLiteral => side as f64 / 2.0,
    };
    2f64.powf(-(s as f64) * (p + half_dim))
}

/// Weighted ℓ₁ norm `Σ_s w_s ‖z^(s)‖₁` of an arbitrary Haar representation.
pub fn weighted_l1(rep: &MultiScaleRep, p: f64, variant: WaveletVariant) -> f64 {
    let side = rep.spec.height.max(rep.spec.width);
    rep.scales.iter().enumerate().map(|(i, z)| scale_weight(i + 1, p, variant, side) * z.l1()).sum()
}

/// Constant `β̂ = max_s w_s √dim_s`, so that by Cauchy–Schwarz
/// `Σ_s w_s ‖z^(s)‖₁ ≤ β̂ Σ_s ‖z^(s)‖₂`.
pub fn l1_to_l2_constant(spec: &HierarchySpec, p: f64, variant: WaveletVariant) -> f64 {
    let side = spec.height.max(spec.width);
    (1..=spec.levels).map(|s| scale_weight(s, p, variant, side) * (spec.scale_dim(s) as f64).sqrt()).fold(0.0, f64::max)
}

/// Reusable buffer and scale weights, so repeated evaluations on one grid
/// neither allocate nor recompute powers.
#[derive(Debug, Default)]
pub struct WaveletEmd {
    buf: Vec<f64>,
    /// `(p, variant, side)` the cached weights belong to.
    weights_for: Option<(f64, WaveletVariant, usize)>,
    /// `weights[s - 1] = scale_weight(s, ..)`.
    weights: Vec<f64>,
}

impl WaveletEmd {
    pub fn new() -> Self {
        Self::default()
    }

    /// Evaluates `μ̂(x, y)` with an in-place Haar pyramid in `O(H·W)`.
    pub fn evaluate(&mut self, x: &Histogram2D, y: &Histogram2D, p: f64, variant: WaveletVariant) -> Result<f64> {
        check_p_public(p)?;
        x.check_same_grid(y)?;
        let n = x.height();
        if x.width() != n || !n.is_power_of_two() {
            return Err(Error::Shape(format!("surrogate needs a square power-of-two grid, got {}x{}", n, x.width())));
        }
        self.buf.clear();
        self.buf.extend(x.masses().iter().zip(y.masses()).map(|(a, b)| a - b));
        let levels = n.trailing_zeros() as usize + 1;
        if self.weights_for != Some((p, variant, n)) {
            self.weights = (1..=levels).map(|s| scale_weight(s, p, variant, n)).collect();
            self.weights_for = Some((p, variant, n));
        }
        let mut side = n;
        let mut total = 0.0;
        // Scale index of the details produced at this pass, finest first.
        let mut s = levels;
        while side > 1 {
            let half = side / 2;
            let mut detail = 0.0;
            for i in 0..half {
                for j in 0..half {
                    let r0 = 2 * i * side + 2 * j;
                    let r1 = r0 + side;
                    let (a, b, c, d) = (self.buf[r0], self.buf[r0 + 1], self.buf[r1], self.buf[r1 + 1]);
                    detail += (a - b - c + d).abs() + (-a - b + c + d).abs() + (-a + b - c + d).abs();
                    // Row-major write at index < r0 never clobbers unread blocks.
                    self.buf[i * half + j] = (a + b + c + d) * 0.5;
                }
            }
            total += self.weights[s - 1] * detail * 0.5;
            side = half;
            s -= 1;
        }
        Ok(total + self.buf[0].abs())
    }
}

/// `μ̂(x, y)` for square power-of-two histograms.
pub fn emd_wavelet(x: &Histogram2D, y: &Histogram2D, p: f64, variant: WaveletVariant) -> Result<f64> {
    WaveletEmd::new().evaluate(x, y, p, variant)
}

/// Reference evaluation through the generic Haar map.
pub fn emd_wavelet_reference(x: &Histogram2D, y: &Histogram2D, p: f64, variant: WaveletVariant) -> Result<f64> {
    x.check_same_grid(y)?;
    let n = x.height();
    let levels = n.trailing_zeros() as usize + 1;
    let diff = x.to_tensor().sub(&y.to_tensor())?;
    let spec = HierarchySpec::new(HierarchyKind::HaarWavelet, levels, 1, n, x.width())?;
    Ok(weighted_l1(&spec.forward(&diff)?, p, variant))
}
