//! Earth Mover's Distance on pixel grids: an exact oracle and the wavelet
//! surrogate that bounds it up to constants.

mod exact;
mod wavelet;

pub use exact::{emd_exact, ground_cost, MAX_EXACT_CELLS};
pub use wavelet::{
    emd_wavelet, emd_wavelet_reference, l1_to_l2_constant, scale_weight, weighted_l1, WaveletEmd, WaveletVariant,
};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Nonnegative mass on an `H × W` grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram2D {
    height: usize,
    width: usize,
    masses: Vec<f64>,
}

impl Histogram2D {
    pub fn new(height: usize, width: usize, masses: Vec<f64>) -> Result<Self> {
        if masses.len() != height * width {
            return Err(Error::Shape(format!("{height}x{width} grid needs {} masses", height * width)));
        }
        if let Some(i) = masses.iter().position(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::Range(format!("mass {i} = {} is not a finite nonnegative value", masses[i])));
        }
        Ok(Self { height, width, masses })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn scaled(&self, k: f64) -> Histogram2D {
        Histogram2D { masses: self.masses.iter().map(|m| m * k).collect(), ..*self }
    }

    /// Copy whose total mass equals `total`.
    pub fn rescaled_to(&self, total: f64) -> Histogram2D {
        let t = self.total();
        if t == 0.0 {
            return self.clone();
        }
        self.scaled(total / t)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![1, self.height, self.width], self.masses.clone())
    }

    pub(crate) fn check_same_grid(&self, other: &Histogram2D) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::Shape(format!(
                "grids {}x{} and {}x{} differ",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// Sparse transport plan: `(source cell, sink cell, mass)` triples and the
/// transport cost `Σ ν·c` before the `1/p` power.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub flows: Vec<(usize, usize, f64)>,
    pub cost: f64,
}

/// Exact and surrogate distances of one pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairRecord {
    pub pair_id: usize,
    pub exact: f64,
    pub surrogate: f64,
    pub ratio: f64,
}

/// Summary of `exact / surrogate` over a suite of pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatioStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// `max / min`.
    pub spread: f64,
    pub pairs: usize,
    /// Pairs where exactly one of the two distances vanished.
    pub sign_violations: usize,
}

impl RatioStats {
    pub fn from_records(records: &[PairRecord], sign_violations: usize) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("no non-degenerate pairs".into()));
        }
        let min = records.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
        let max = records.iter().map(|r| r.ratio).fold(0.0, f64::max);
        let mean = records.iter().map(|r| r.ratio).sum::<f64>() / records.len() as f64;
        Ok(Self { min, max, mean, spread: max / min, pairs: records.len(), sign_violations })
    }
}

/// Random equal-mass pair: masses are squared uniforms, `y` rescaled to `x`'s total.
pub fn random_pair(rng: &mut Rng, grid: usize) -> (Histogram2D, Histogram2D) {
    let draw = |rng: &mut Rng| {
        let m = (0..grid * grid).map(|_| rng.uniform().powi(2)).collect();
        Histogram2D::new(grid, grid, m).expect("generated masses are valid")
    };
    let x = draw(rng);
    let y = draw(rng).rescaled_to(x.total());
    (x, y)
}

/// Evaluates `exact / surrogate` on `n_pairs` random pairs. Identical pairs
/// are skipped because the ratio is 0/0.
pub fn bound_suite(
    n_pairs: usize,
    grid: usize,
    p: f64,
    variant: WaveletVariant,
    rng: &mut Rng,
) -> Result<(RatioStats, Vec<PairRecord>)> {
    let pairs: Vec<(usize, Histogram2D, Histogram2D)> = (0..n_pairs)
        .map(|i| {
            let (x, y) = random_pair(rng, grid);
            (i, x, y)
        })
        .filter(|(_, x, y)| x != y)
        .collect();
    let results: Vec<Result<PairRecord>> = pairs
        .par_iter()
        .map(|(i, x, y)| {
            let (exact, _) = emd_exact(x, y, p)?;
            let surrogate = emd_wavelet(x, y, p, variant)?;
            Ok(PairRecord { pair_id: *i, exact, surrogate, ratio: exact / surrogate })
        })
        .collect();
    let mut records = Vec::with_capacity(results.len());
    let mut violations = 0;
    for r in results {
        let r = r?;
        if (r.exact > 0.0) != (r.surrogate > 0.0) || !r.ratio.is_finite() {
            violations += 1;
        } else {
            records.push(r);
        }
    }
    Ok((RatioStats::from_records(&records, violations)?, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_validation() {
        assert!(Histogram2D::new(2, 2, vec![0.0, 1.0, -0.1, 0.0]).is_err());
        assert!(Histogram2D::new(2, 2, vec![0.0; 3]).is_err());
        assert_eq!(Histogram2D::new(1, 2, vec![0.5, 1.5]).unwrap().total(), 2.0);
    }

    #[test]
    fn suite_on_small_grid() {
        let mut rng = Rng::new(5);
        let (stats, records) = bound_suite(20, 4, 1.0, WaveletVariant::default(), &mut rng).unwrap();
        assert_eq!(records.len(), 20);
        assert_eq!(stats.sign_violations, 0);
        assert!(stats.min > 0.0 && stats.max.is_finite() && stats.min <= stats.mean && stats.mean <= stats.max);
    }

    #[test]
    fn spread_invariant_to_mass_rescaling() {
        let mut rng = Rng::new(6);
        let pairs: Vec<_> = (0..10).map(|_| random_pair(&mut rng, 4)).collect();
        let ratios = |k: f64| -> Vec<f64> {
            pairs
                .iter()
                .map(|(x, y)| {
                    let (x, y) = (x.scaled(k), y.scaled(k));
                    emd_exact(&x, &y, 1.0).unwrap().0 / emd_wavelet(&x, &y, 1.0, WaveletVariant::default()).unwrap()
                })
                .collect()
        };
        for (a, b) in ratios(1.0).iter().zip(ratios(37.5)) {
            assert!((a - b).abs() < 1e-9 * a);
        }
    }
}
