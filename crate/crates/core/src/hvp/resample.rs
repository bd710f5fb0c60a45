//! Norm-preserving 2× resamplers shared by the pyramid maps.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stride-2 block sum scaled by ½ per channel (the `LLᵀ` kernel).
pub fn downsample_np(t: &Tensor) -> Result<Tensor> {
    let (c, h, w) = t.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("downsample needs even dimensions, got {h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let src = t.data();
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for i in 0..ho {
            let r0 = &plane[2 * i * w..(2 * i + 1) * w];
            let r1 = &plane[(2 * i + 1) * w..(2 * i + 2) * w];
            for j in 0..wo {
                out[(ch * ho + i) * wo + j] = (r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]) * 0.5;
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, ho, wo], out))
}

/// Adjoint of [`downsample_np`]: every value `y` becomes a 2×2 block of `y/2`.
pub fn upsample_np(t: &Tensor) -> Result<Tensor> {
    let (c, h, w) = t.chw()?;
    let (ho, wo) = (2 * h, 2 * w);
    let src = t.data();
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let v = src[(ch * h + i) * w + j] * 0.5;
                let base = (ch * ho + 2 * i) * wo + 2 * j;
                out[base] = v;
                out[base + 1] = v;
                out[base + wo] = v;
                out[base + wo + 1] = v;
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, ho, wo], out))
}

/// Applies [`downsample_np`] `times` times.
pub fn downsample_times(t: &Tensor, times: usize) -> Result<Tensor> {
    let mut cur = t.clone();
    for _ in 0..times {
        cur = downsample_np(&cur)?;
    }
    Ok(cur)
}

/// Applies [`upsample_np`] `times` times.
pub fn upsample_times(t: &Tensor, times: usize) -> Result<Tensor> {
    let mut cur = t.clone();
    for _ in 0..times {
        cur = upsample_np(&cur)?;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn img(h: usize, w: usize, data: Vec<f64>) -> Tensor {
        Tensor::new(vec![1, h, w], data).unwrap()
    }

    #[test]
    fn constant_doubles() {
        let d = downsample_np(&Tensor::filled(vec![2, 4, 4], 1.5)).unwrap();
        assert!(d.data().iter().all(|&v| v == 3.0));
        assert_eq!(d.shape(), &[2, 2, 2]);
    }

    #[test]
    fn single_spike_block() {
        let d = downsample_np(&img(2, 2, vec![2.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(d.data(), &[1.0]);
    }

    #[test]
    fn odd_dimensions_rejected() {
        assert!(downsample_np(&Tensor::zeros(vec![1, 3, 2])).is_err());
    }

    #[test]
    fn upsample_spreads_half() {
        let u = upsample_np(&img(1, 1, vec![2.0])).unwrap();
        assert_eq!(u.data(), &[1.0; 4]);
    }

    #[test]
    fn contraction_norms_and_adjointness() {
        let mut rng = Rng::new(5);
        for _ in 0..100 {
            let x = Tensor::randn(vec![2, 8, 8], &mut rng);
            let y = Tensor::randn(vec![2, 4, 4], &mut rng);
            let dx = downsample_np(&x).unwrap();
            let uy = upsample_np(&y).unwrap();
            assert!(dx.norm() <= x.norm() + 1e-12);
            assert!((uy.norm_sq() - y.norm_sq()).abs() <= 1e-12 * y.norm_sq());
            assert!(downsample_np(&uy).unwrap().max_abs_diff(&y).unwrap() < 1e-12);
            // <d x, y> == <x, u y>
            let lhs: f64 = dx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(uy.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}
