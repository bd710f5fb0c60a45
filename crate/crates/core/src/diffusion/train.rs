//! Minibatch training of every scale network on the per-dimension bound.

use std::f64::consts::LN_2;

use rayon::prelude::*;

use super::cascade::cascaded_loss_with_grad;
use super::model::CascadedModel;
use super::vlb::VlbMode;
use crate::error::{Error, Result};
use crate::nn::{AdamWState, EpsNet};
use crate::rng::Rng;
use crate::tensor::{dequantize, ImageU8};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Estimator of the diffusion terms used for gradients.
    pub mode: VlbMode,
    /// Global gradient-norm clip per scale network, if any.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            batch_size: 16,
            lr: 2e-3,
            weight_decay: 0.0,
            mode: VlbMode::MonteCarlo(1),
            grad_clip: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidArgument("learning rate and weight decay must be finite and nonnegative".into()));
        }
        if matches!(self.mode, VlbMode::MonteCarlo(0)) {
            return Err(Error::InvalidArgument("Monte Carlo mode needs at least one draw".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument("gradient clip must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One optimisation step's batch statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    /// Mean bound per dimension, in nats, without the discretisation charge.
    pub loss_nats: f64,
    /// Mean bound in bits per dimension, including the discretisation charge.
    pub bpd_estimate: f64,
    /// Mean contribution of each scale, in bits per image dimension.
    pub per_scale_bpd: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub rows: Vec<MetricsRow>,
}

impl TrainReport {
    /// Mean `loss_nats` over the rows in `range`.
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let rows = &self.rows[range];
        rows.iter().map(|r| r.loss_nats).sum::<f64>() / rows.len() as f64
    }
}

/// Trains `model` in place. Batch elements are drawn with replacement and get
/// their own child streams; their gradients are summed in batch order so the
/// result is independent of the thread count.
pub fn train(
    model: &mut CascadedModel<EpsNet>,
    data: &[ImageU8],
    cfg: &TrainConfig,
    rng: &mut Rng,
    mut on_step: impl FnMut(&MetricsRow),
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set is empty".into()));
    }
    let dim = model.hierarchy.image_dim();
    let mut opts: Vec<AdamWState> =
        model.scales.iter().map(|n| AdamWState::new(n.num_params(), cfg.lr, cfg.weight_decay)).collect();
    let grad_scale = 1.0 / (cfg.batch_size * dim) as f64;
    let mut report = TrainReport::default();

    for step in 0..cfg.iterations {
        let picks: Vec<(usize, Rng)> = (0..cfg.batch_size).map(|_| (rng.below(data.len()), rng.child())).collect();
        let frozen = &*model;
        let results: Vec<Result<(Vec<Vec<f64>>, Vec<f64>, f64)>> = picks
            .into_par_iter()
            .map(|(idx, mut r)| {
                let x = dequantize(&data[idx], &mut r);
                let mut grads: Vec<Vec<f64>> = frozen.scales.iter().map(|n| vec![0.0; n.num_params()]).collect();
                let b = cascaded_loss_with_grad(frozen, &x, &mut r, cfg.mode, &mut grads, grad_scale)?;
                let per_scale = b.per_scale.iter().map(|s| s.total() / (dim as f64 * LN_2)).collect();
                Ok((grads, per_scale, b.total_nats()))
            })
            .collect();

        let mut total: Vec<Vec<f64>> = model.scales.iter().map(|n| vec![0.0; n.num_params()]).collect();
        let mut per_scale = vec![0.0; model.scales.len()];
        let mut nats = 0.0;
        for res in results {
            let (g, ps, l) = res?;
            for (acc, gs) in total.iter_mut().zip(&g) {
                for (a, v) in acc.iter_mut().zip(gs) {
                    *a += v;
                }
            }
            for (a, v) in per_scale.iter_mut().zip(&ps) {
                *a += v / cfg.batch_size as f64;
            }
            nats += l;
        }

        for ((net, opt), g) in model.scales.iter_mut().zip(&mut opts).zip(&mut total) {
            if let Some(c) = cfg.grad_clip {
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > c {
                    g.iter_mut().for_each(|v| *v *= c / norm);
                }
            }
            opt.step(net.params_mut(), g)?;
        }

        let loss_nats = nats / (cfg.batch_size * dim) as f64;
        let bin = super::cascade::bin_bits(&model.hierarchy) / dim as f64;
        let row = MetricsRow { step, loss_nats, bpd_estimate: loss_nats / LN_2 + bin, per_scale_bpd: per_scale };
        on_step(&row);
        report.rows.push(row);
    }
    Ok(report)
}
