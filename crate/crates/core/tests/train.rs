use pcdm_core::diffusion::{train, CascadedModel, NoiseSchedule, TrainConfig, VlbMode};
use pcdm_core::hvp::{HierarchyKind, HierarchySpec};
use pcdm_core::{ImageU8, Rng};

/// Two-component mixture of 8×8 images: a horizontal and a vertical ramp
/// with per-pixel noise.
fn mixture(n: usize, rng: &mut Rng) -> Vec<ImageU8> {
    (0..n)
        .map(|_| {
            let vertical = rng.below(2) == 1;
            let pixels = (0..64)
                .map(|p| {
                    let (i, j) = (p / 8, p % 8);
                    let ramp = if vertical { i } else { j } as f64 * 24.0 + 40.0;
                    (ramp + 12.0 * rng.normal()).round().clamp(0.0, 255.0) as u8
                })
                .collect();
            ImageU8::new(8, 8, 1, pixels).unwrap()
        })
        .collect()
}

fn fresh_model(seed: u64) -> CascadedModel {
    let spec = HierarchySpec::new(HierarchyKind::HaarWavelet, 2, 1, 8, 8).unwrap();
    CascadedModel::init(spec, NoiseSchedule::default(), 1000, &[8], &mut Rng::new(seed)).unwrap()
}

#[test]
fn smoothed_loss_trends_down() {
    let data = mixture(256, &mut Rng::new(1));
    let mut model = fresh_model(2);
    let cfg = TrainConfig { iterations: 2000, batch_size: 4, lr: 3e-3, ..TrainConfig::default() };
    let report = train(&mut model, &data, &cfg, &mut Rng::new(3), |_| {}).unwrap();
    let windows: Vec<f64> = (0..20).map(|w| report.mean_loss(w * 100..(w + 1) * 100)).collect();
    let first = windows[0];
    let last = windows[19];
    assert!(last < first, "windows {windows:?}");
    // Least-squares slope over the smoothed curve is negative.
    let n = windows.len() as f64;
    let xm = (n - 1.0) / 2.0;
    let ym = windows.iter().sum::<f64>() / n;
    let slope: f64 = windows.iter().enumerate().map(|(i, y)| (i as f64 - xm) * (y - ym)).sum::<f64>();
    assert!(slope < 0.0, "windows {windows:?}");
    // Later windows never climb back above the first.
    assert!(windows[1..].iter().all(|&w| w < first), "windows {windows:?}");
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let data = mixture(8, &mut Rng::new(4));
    let mut model = fresh_model(5);
    let before = model.clone();
    let cfg = TrainConfig { iterations: 5, batch_size: 2, lr: 0.0, weight_decay: 0.1, ..TrainConfig::default() };
    train(&mut model, &data, &cfg, &mut Rng::new(6), |_| {}).unwrap();
    assert_eq!(model, before);
}

#[test]
fn training_is_deterministic() {
    let data = mixture(16, &mut Rng::new(7));
    let cfg = TrainConfig { iterations: 10, batch_size: 3, mode: VlbMode::MonteCarlo(2), ..TrainConfig::default() };
    let run = || {
        let mut m = fresh_model(8);
        let r = train(&mut m, &data, &cfg, &mut Rng::new(9), |_| {}).unwrap();
        (m.model_hash(), r)
    };
    assert_eq!(run(), run());
}

#[test]
fn rejects_bad_configuration() {
    let data = mixture(2, &mut Rng::new(1));
    let mut model = fresh_model(1);
    let bad = [
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { lr: -1.0, ..TrainConfig::default() },
        TrainConfig { mode: VlbMode::MonteCarlo(0), ..TrainConfig::default() },
    ];
    for cfg in bad {
        assert!(train(&mut model, &data, &cfg, &mut Rng::new(1), |_| {}).is_err());
    }
    assert!(train(&mut model, &[], &TrainConfig::default(), &mut Rng::new(1), |_| {}).is_err());
}
