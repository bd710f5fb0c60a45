//! Discretised Gaussian over integer bins with an optional escape symbol.
//!
//! Integer `v` owns the interval `[v − ½, v + ½)`. Only a window of about
//! `±12σ` around the mean gets its own symbol; the outermost window bins
//! absorb the tails. Values inside the allowed range but outside the window
//! are sent as an escape symbol followed by a uniform code.
//!
//! A table may be rotated: its window intervals are laid out cyclically
//! from a chosen bin boundary. The code lengths are unchanged, but a pop
//! that follows a push no longer lands at the quantile just pushed.

use std::f64::consts::SQRT_2;

use super::rans::{AnsState, Interval, PRECISION, TOTAL};
use crate::error::{Error, Result};

const WINDOW_SIGMAS: f64 = 12.0;
/// Largest number of window symbols.
pub const MAX_BINS: i64 = 4096;

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Quantised `N(mean, std²)` restricted to the integers `lo..=hi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianBins {
    mean: f64,
    std: f64,
    lo: i64,
    hi: i64,
    wlo: i64,
    whi: i64,
    escape: bool,
    /// Cumulative frequency moved to the front by a rotation.
    shift: u32,
}

impl GaussianBins {
    /// With `escape == false` the range shrinks to the window, so only
    /// values near the mean are codable.
    pub fn new(mean: f64, std: f64, lo: i64, hi: i64, escape: bool) -> Result<Self> {
        if !(mean.is_finite() && std.is_finite() && std > 0.0) {
            return Err(Error::InvalidArgument(format!("bad Gaussian bins N({mean}, {std}²)")));
        }
        if lo > hi || hi - lo >= 1 << 32 {
            return Err(Error::InvalidArgument(format!("bad integer range {lo}..={hi}")));
        }
        let half = ((WINDOW_SIGMAS * std).ceil() as i64 + 1).min(MAX_BINS / 2 - 1);
        let centre = mean.round().clamp(lo as f64, hi as f64) as i64;
        let wlo = (centre - half).max(lo);
        let whi = (centre + half).min(hi);
        let escape = escape && (wlo > lo || whi < hi);
        let (lo, hi) = if escape { (lo, hi) } else { (wlo, whi) };
        Ok(Self { mean, std, lo, hi, wlo, whi, escape, shift: 0 })
    }

    /// The same table laid out from the window boundary at quantile `r ∈ [0, 1)`.
    pub fn rotated(mut self, r: f64) -> Self {
        let target = (r.clamp(0.0, 1.0) * f64::from(self.window_total())) as u32;
        self.shift = self.cum(self.bin_at(target));
        self
    }

    fn window_total(&self) -> u32 {
        TOTAL - u32::from(self.escape)
    }

    /// Largest window symbol `j` with `cum(j) ≤ slot`.
    fn bin_at(&self, slot: u32) -> u32 {
        let (mut a, mut b) = (0u32, self.bins());
        while b - a > 1 {
            let m = (a + b) / 2;
            if self.cum(m) <= slot {
                a = m;
            } else {
                b = m;
            }
        }
        a
    }

    fn bins(&self) -> u32 {
        (self.whi - self.wlo + 1) as u32
    }

    /// Cumulative frequency below window symbol `j ∈ 0..=bins`.
    fn cum(&self, j: u32) -> u32 {
        let n = self.bins();
        let spare = TOTAL - n - u32::from(self.escape);
        if j == 0 {
            return 0;
        }
        if j == n {
            return TOTAL - u32::from(self.escape);
        }
        let edge = (self.wlo + i64::from(j)) as f64 - 0.5;
        let p = normal_cdf((edge - self.mean) / self.std);
        ((p * f64::from(spare)).floor() as u32).min(spare) + j
    }

    fn window_interval(&self, j: u32) -> Interval {
        let start = self.cum(j);
        let n = self.window_total();
        Interval { start: (start + n - self.shift) % n, freq: self.cum(j + 1) - start }
    }

    /// Probability assigned to `v`, escape code included.
    pub fn probability(&self, v: i64) -> f64 {
        if (self.wlo..=self.whi).contains(&v) {
            f64::from(self.window_interval((v - self.wlo) as u32).freq) / f64::from(TOTAL)
        } else if self.escape && (self.lo..=self.hi).contains(&v) {
            1.0 / f64::from(TOTAL) / (self.hi - self.lo + 1) as f64
        } else {
            0.0
        }
    }

    pub fn push(&self, ans: &mut AnsState, v: i64) -> Result<()> {
        if (self.wlo..=self.whi).contains(&v) {
            return ans.push_interval(self.window_interval((v - self.wlo) as u32));
        }
        if !(self.escape && (self.lo..=self.hi).contains(&v)) {
            return Err(Error::Range(format!("value {v} not representable in {}..={}", self.lo, self.hi)));
        }
        push_wide_uniform(ans, (v - self.lo) as u64, (self.hi - self.lo + 1) as u64)?;
        ans.push_interval(Interval { start: TOTAL - 1, freq: 1 })
    }

    pub fn pop(&self, ans: &mut AnsState) -> Result<i64> {
        let sym = ans.pop_with(|slot| {
            if self.escape && slot == TOTAL - 1 {
                return Ok((None, Interval { start: TOTAL - 1, freq: 1 }));
            }
            let j = self.bin_at((slot + self.shift) % self.window_total());
            Ok((Some(j), self.window_interval(j)))
        })?;
        match sym {
            Some(j) => Ok(self.wlo + i64::from(j)),
            None => Ok(self.lo + pop_wide_uniform(ans, (self.hi - self.lo + 1) as u64)? as i64),
        }
    }
}

/// Uniform code over `0..n` for `n ≤ 2^32`, as a low `PRECISION`-bit digit on top of
/// the high digit.
fn push_wide_uniform(ans: &mut AnsState, v: u64, n: u64) -> Result<()> {
    if n <= u64::from(TOTAL) {
        return ans.push_uniform(v as u32, n as u32);
    }
    let high_n = ((n - 1) >> PRECISION) + 1;
    ans.push_uniform((v >> PRECISION) as u32, high_n as u32)?;
    ans.push_uniform((v & u64::from(TOTAL - 1)) as u32, TOTAL)
}

fn pop_wide_uniform(ans: &mut AnsState, n: u64) -> Result<u64> {
    if n <= u64::from(TOTAL) {
        return Ok(u64::from(ans.pop_uniform(n as u32)?));
    }
    let low = u64::from(ans.pop_uniform(TOTAL)?);
    let high = u64::from(ans.pop_uniform((((n - 1) >> PRECISION) + 1) as u32)?);
    let v = (high << PRECISION) | low;
    if v >= n {
        return Err(Error::Corrupt { position: ans.words().len(), reason: format!("escaped value {v} ≥ {n}") });
    }
    Ok(v)
}
