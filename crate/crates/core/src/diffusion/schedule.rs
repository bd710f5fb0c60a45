//! Linear log-SNR noise schedule of a variance-preserving diffusion.

use crate::error::{Error, Result};

/// `γ(t) = γ_max + (γ_min − γ_max)·t`, with `α² = sigmoid(γ)` and `σ² = sigmoid(−γ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub gamma_min: f64,
    pub gamma_max: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self { gamma_min: -13.3, gamma_max: 5.0 }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Coefficients of the reverse step `p(z_s | z_t)` for `s < t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosteriorCoeffs {
    /// Weight of `z_t` in the mean.
    pub a: f64,
    /// Weight of the data prediction `x̂` in the mean.
    pub b: f64,
    /// Variance of `q(z_s | z_t, x)`.
    pub var: f64,
}

impl NoiseSchedule {
    pub fn new(gamma_min: f64, gamma_max: f64) -> Result<Self> {
        if !(gamma_min.is_finite() && gamma_max.is_finite() && gamma_max > gamma_min) {
            return Err(Error::InvalidArgument(format!(
                "need finite gamma_max > gamma_min, got {gamma_max} and {gamma_min}"
            )));
        }
        Ok(Self { gamma_min, gamma_max })
    }

    /// Log-SNR at `t ∈ [0, 1]`.
    pub fn gamma(&self, t: f64) -> f64 {
        self.gamma_max + (self.gamma_min - self.gamma_max) * t
    }

    pub fn alpha2(&self, t: f64) -> f64 {
        sigmoid(self.gamma(t))
    }

    pub fn sigma2(&self, t: f64) -> f64 {
        sigmoid(-self.gamma(t))
    }

    pub fn alpha(&self, t: f64) -> f64 {
        self.alpha2(t).sqrt()
    }

    pub fn sigma(&self, t: f64) -> f64 {
        self.sigma2(t).sqrt()
    }

    /// Diffusion-term weight `½(exp(γ(s) − γ(t)) − 1)` for the step `s → t`.
    pub fn step_weight(&self, s: f64, t: f64) -> f64 {
        0.5 * (self.gamma(s) - self.gamma(t)).exp_m1()
    }

    /// Mean/variance coefficients of `q(z_s | z_t, x)`, used with `x̂` in place of `x`.
    pub fn posterior(&self, s: f64, t: f64) -> PosteriorCoeffs {
        let (gs, gt) = (self.gamma(s), self.gamma(t));
        // σ²_{t|s}/σ_t² = 1 − SNR(t)/SNR(s)
        let ratio = -(gt - gs).exp_m1();
        let (alpha_s, alpha_t) = (sigmoid(gs).sqrt(), sigmoid(gt).sqrt());
        let (sigma2_s, sigma2_t) = (sigmoid(-gs), sigmoid(-gt));
        let alpha_ts = alpha_t / alpha_s;
        PosteriorCoeffs { a: alpha_ts * sigma2_s / sigma2_t, b: alpha_s * ratio, var: ratio * sigma2_s }
    }
}

/// Discrete time of step `k` out of `T`.
pub fn step_time(k: usize, steps: usize) -> f64 {
    k as f64 / steps as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variance_preserving_everywhere() {
        let s = NoiseSchedule::default();
        for i in 0..=1000 {
            let t = i as f64 / 1000.0;
            assert!((s.alpha2(t) + s.sigma2(t) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn snr_strictly_decreasing() {
        let s = NoiseSchedule::default();
        for i in 0..1000 {
            assert!(s.gamma((i + 1) as f64 / 1000.0) < s.gamma(i as f64 / 1000.0));
        }
        assert!(NoiseSchedule::new(2.0, 1.0).is_err());
    }

    #[test]
    fn posterior_matches_direct_formulas() {
        let sch = NoiseSchedule::default();
        let (s, t) = (0.3, 0.31);
        let (a_s, a_t) = (sch.alpha(s), sch.alpha(t));
        let (v_s, v_t) = (sch.sigma2(s), sch.sigma2(t));
        let a_ts = a_t / a_s;
        let v_ts = v_t - a_ts * a_ts * v_s;
        let p = sch.posterior(s, t);
        assert!((p.a - a_ts * v_s / v_t).abs() < 1e-12);
        assert!((p.b - a_s * v_ts / v_t).abs() < 1e-12);
        assert!((p.var - v_ts * v_s / v_t).abs() < 1e-12);
    }

    #[test]
    fn weight_equals_half_snr_ratio_minus_one() {
        let sch = NoiseSchedule::default();
        let (s, t) = (0.5, 0.501);
        let snr = |u: f64| sch.alpha2(u) / sch.sigma2(u);
        assert!((sch.step_weight(s, t) - 0.5 * (snr(s) / snr(t) - 1.0)).abs() < 1e-12);
    }
}
