use pcdm_core::codec::{AnsState, FreqTable, GaussianBins};
use pcdm_core::emd::{emd_wavelet, Histogram2D, WaveletVariant};
use pcdm_core::hvp::{HierarchyKind, HierarchySpec};
use pcdm_core::{dequantize, quantize, ImageU8, Rng, Tensor};
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = HierarchyKind> {
    prop_oneof![
        Just(HierarchyKind::HaarWavelet),
        Just(HierarchyKind::LaplacianPyramid),
        Just(HierarchyKind::NearestNeighbor)
    ]
}

/// Image shape, level count and data for a random hierarchy input.
fn input() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>)> {
    (1usize..=3, prop_oneof![Just(1usize), Just(3)], 1usize..=2, 1usize..=2).prop_flat_map(|(levels, c, a, b)| {
        let (h, w) = (a << levels, b << levels);
        (Just(levels), Just(c), Just(h * 1000 + w), prop::collection::vec(-1.0f64..1.0, c * h * w))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn every_hierarchy_inverts(k in kind(), (levels, c, hw, data) in input()) {
        let (h, w) = (hw / 1000, hw % 1000);
        let spec = HierarchySpec::new(k, levels, c, h, w).unwrap();
        let x = Tensor::new(vec![c, h, w], data).unwrap();
        let back = spec.forward(&x).unwrap().inverse().unwrap();
        prop_assert!(back.max_abs_diff(&x).unwrap() < 1e-12);
    }

    #[test]
    fn volume_preserving_maps_keep_norms(haar in any::<bool>(), (levels, c, hw, data) in input()) {
        let k = if haar { HierarchyKind::HaarWavelet } else { HierarchyKind::LaplacianPyramid };
        let (h, w) = (hw / 1000, hw % 1000);
        let spec = HierarchySpec::new(k, levels, c, h, w).unwrap();
        let x = Tensor::new(vec![c, h, w], data).unwrap();
        let rep = spec.forward(&x).unwrap();
        prop_assert!((rep.norm_sq() - x.norm_sq()).abs() <= 1e-12 * x.norm_sq().max(1e-300));
    }

    #[test]
    fn dequantized_pixels_quantize_back(pixels in prop::collection::vec(any::<u8>(), 12), seed in any::<u64>()) {
        let img = ImageU8::new(2, 2, 3, pixels).unwrap();
        prop_assert_eq!(quantize(&dequantize(&img, &mut Rng::new(seed))).unwrap(), img);
    }

    #[test]
    fn coder_returns_symbols_in_reverse(
        probs in prop::collection::vec(0.0f64..1.0, 2..40),
        picks in prop::collection::vec(any::<prop::sample::Index>(), 1..300),
    ) {
        prop_assume!(probs.iter().sum::<f64>() > 0.0);
        let table = FreqTable::from_probs(&probs).unwrap();
        let symbols: Vec<usize> = picks.iter().map(|i| i.index(probs.len())).collect();
        let mut ans = AnsState::from_parts(1 << 40, vec![3, 1, 4]).unwrap();
        let start = ans.clone();
        for s in &symbols {
            ans.push(&table, s).unwrap();
        }
        for s in symbols.iter().rev() {
            prop_assert_eq!(ans.pop(&table).unwrap(), *s);
        }
        prop_assert_eq!(ans, start);
    }

    #[test]
    fn gaussian_bins_round_trip(mean in -50.0f64..50.0, std in 0.01f64..400.0, v in -5000i64..5000) {
        let g = GaussianBins::new(mean, std, -5000, 5000, true).unwrap();
        let mut ans = AnsState::from_parts(1 << 50, vec![9; 4]).unwrap();
        let start = ans.clone();
        g.push(&mut ans, v).unwrap();
        prop_assert_eq!(g.pop(&mut ans).unwrap(), v);
        prop_assert_eq!(ans, start);
    }

    #[test]
    fn wavelet_distance_is_symmetric(a in prop::collection::vec(0.0f64..1.0, 64), b in prop::collection::vec(0.0f64..1.0, 64)) {
        let x = Histogram2D::new(8, 8, a).unwrap();
        let y = Histogram2D::new(8, 8, b).unwrap();
        prop_assume!(x.total() > 0.0 && y.total() > 0.0);
        let y = y.rescaled_to(x.total());
        let d = emd_wavelet(&x, &y, 1.0, WaveletVariant::default()).unwrap();
        let e = emd_wavelet(&y, &x, 1.0, WaveletVariant::default()).unwrap();
        prop_assert!(d >= 0.0 && (d - e).abs() <= 1e-12 * d.max(1.0));
        prop_assert_eq!(emd_wavelet(&x, &x, 1.0, WaveletVariant::default()).unwrap(), 0.0);
    }
}
