//! Bits-back coding of one image through the cascade.
//!
//! Every scale is a Markov chain `z_0 → z_{t_1} → … → z_{t_T}` whose latents
//! are quantised to a grid of width `δ`. The encoder walks it bottom-up:
//! it pops `z_{t_k}` under `q(z_{t_k} | z_{t_{k−1}})` and then pushes
//! `z_{t_{k−1}}` under the model `p(z_{t_{k−1}} | z_{t_k})`, so the bits spent
//! on latents are recovered from the stack. Scales are encoded finest first
//! so the decoder can rebuild them coarsest first.
//!
//! The data term codes integer pixel block sums directly. A `2×2` block of
//! children with a known parent sum `P` has three free integers, coded one at
//! a time under the decoder Gaussian conditioned on the sum.

use super::gaussian::GaussianBins;
use super::rans::AnsState;
use crate::diffusion::{step_time, CascadedModel, DecoderVariance, NoiseSchedule, ScaleDenoiser};
use crate::error::{Error, Result};
use crate::hvp::{cond_input, downsample_np, upsample_np, HierarchyKind, HierarchySpec, MultiScaleRep};
use crate::tensor::{ImageU8, Tensor};

/// Largest magnitude of a quantised latent index.
pub const LATENT_LIMIT: i64 = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CodecConfig {
    /// Latent bin width `δ`, relative to the smallest standard deviation
    /// each latent is coded under.
    pub delta: f64,
    /// Chain length used for coding.
    pub steps: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self { delta: 1.0 / 64.0, steps: 32 }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidArgument(format!("latent bin width {} must be positive", self.delta)));
        }
        if self.steps == 0 || self.steps > crate::diffusion::MAX_STEPS {
            return Err(Error::InvalidArgument(format!("codec chain length {} out of range", self.steps)));
        }
        Ok(())
    }
}

/// Integer block sums of the image at every scale resolution, coarse to fine.
/// `levels[s − 1]` has side `2^(S−s)` blocks; the last entry is the image.
fn level_sums(spec: &HierarchySpec, img: &ImageU8) -> Vec<Vec<i64>> {
    let mut levels = vec![img.to_chw_values().iter().map(|&v| v as i64).collect::<Vec<_>>()];
    let (c, mut h, mut w) = (spec.channels, spec.height, spec.width);
    for _ in 1..spec.levels {
        let fine = levels.last().unwrap();
        let (ho, wo) = (h / 2, w / 2);
        let mut coarse = vec![0i64; c * ho * wo];
        for ch in 0..c {
            for i in 0..ho {
                for j in 0..wo {
                    let b = (ch * h + 2 * i) * w + 2 * j;
                    coarse[(ch * ho + i) * wo + j] = fine[b] + fine[b + 1] + fine[b + w] + fine[b + w + 1];
                }
            }
        }
        levels.push(coarse);
        (h, w) = (ho, wo);
    }
    levels.reverse();
    levels
}

/// Model units per integer unit at scale `s`, and the offset: a block sum
/// `B` of `4^k` pixels, `k = S − s`, maps to `g·B + o` with bin-centre pixels.
fn level_affine(spec: &HierarchySpec, s: usize) -> (f64, f64) {
    let f = (1u64 << (spec.levels - s)) as f64;
    (1.0 / (128.0 * f), f * (1.0 / 256.0 - 1.0))
}

fn level_max(spec: &HierarchySpec, s: usize) -> i64 {
    255 << (2 * (spec.levels - s))
}

/// Level image of scale `s` in model units.
fn level_tensor(spec: &HierarchySpec, s: usize, sums: &[i64]) -> Tensor {
    let (g, o) = level_affine(spec, s);
    let t = spec.truncated(s).expect("valid truncation");
    Tensor::new(t.image_shape(), sums.iter().map(|&b| g * b as f64 + o).collect()).expect("finite level values")
}

/// Clean latents `z^(1..=s)` computed from the integer level image of scale `s`.
fn truncated_rep(spec: &HierarchySpec, s: usize, sums: &[i64]) -> Result<MultiScaleRep> {
    spec.truncated(s)?.forward(&level_tensor(spec, s, sums))
}

/// Chain parameters shared by encoder and decoder.
struct Chain<'a, D> {
    den: &'a D,
    schedule: NoiseSchedule,
    steps: usize,
    /// Grid width of `z_{t_k}` at index `k − 1`.
    grids: Vec<f64>,
    shape: Vec<usize>,
    cond: Option<Tensor>,
}

/// Grid width of every latent: `δ` times the smallest standard deviation it
/// is coded under, so each Gaussian spans `1/δ` bins per standard deviation
/// however small the step.
fn latent_grids(schedule: &NoiseSchedule, steps: usize, delta: f64) -> Vec<f64> {
    (1..=steps)
        .map(|k| {
            let t = step_time(k, steps);
            let q = if k == 1 {
                schedule.sigma2(t)
            } else {
                let s = step_time(k - 1, steps);
                schedule.sigma2(t) - schedule.alpha2(t) / schedule.alpha2(s) * schedule.sigma2(s)
            };
            let p = if k == steps { 1.0 } else { schedule.posterior(t, step_time(k + 1, steps)).var };
            delta * q.min(p).sqrt()
        })
        .collect()
}

impl<D: ScaleDenoiser> Chain<'_, D> {
    fn latent(&self, k: usize, idx: &[i64]) -> Tensor {
        let g = self.grids[k - 1];
        Tensor::new(self.shape.clone(), idx.iter().map(|&q| q as f64 * g).collect()).expect("finite latent values")
    }

    /// Mean and std of `q(z_{t_k} | z_{t_{k−1}})`; `prev` is `z_0` when `k = 1`.
    fn forward_transition(&self, k: usize, prev: &Tensor) -> (Vec<f64>, f64) {
        let t = step_time(k, self.steps);
        let (a, var) = if k == 1 {
            (self.schedule.alpha(t), self.schedule.sigma2(t))
        } else {
            let s = step_time(k - 1, self.steps);
            let a = (self.schedule.alpha2(t) / self.schedule.alpha2(s)).sqrt();
            (a, self.schedule.sigma2(t) - a * a * self.schedule.sigma2(s))
        };
        (prev.data().iter().map(|z| a * z).collect(), var.sqrt())
    }

    /// `x̂(z_t)` from the denoiser.
    fn predict_x(&self, z: &Tensor, t: f64) -> Result<Tensor> {
        let eps = self.den.predict_eps(z, self.schedule.gamma(t), self.cond.as_ref())?;
        z.axpby(1.0 / self.schedule.alpha(t), &eps, -self.schedule.sigma(t) / self.schedule.alpha(t))
    }

    /// Mean and std of `p(z_{t_{k−1}} | z_{t_k})`, `k ≥ 2`.
    fn reverse_transition(&self, k: usize, z: &Tensor) -> Result<(Vec<f64>, f64)> {
        let (s, t) = (step_time(k - 1, self.steps), step_time(k, self.steps));
        let x_hat = self.predict_x(z, t)?;
        let post = self.schedule.posterior(s, t);
        Ok((z.axpby(post.a, &x_hat, post.b)?.into_data(), post.var.sqrt()))
    }

    /// Table of element `i` of `z_{t_k}`, rotated by a fixed key of `(k, i)`.
    ///
    /// Without the rotation a pop reads back the quantile of the symbol
    /// pushed just before it, and along the chain those quantiles feed back
    /// into ever larger deviations.
    fn bins(&self, k: usize, i: usize, mean: f64, std: f64, escape: bool) -> Result<GaussianBins> {
        let g = self.grids[k - 1];
        let key = mix64(((k as u64) << 32) ^ i as u64);
        Ok(GaussianBins::new(mean / g, std / g, -LATENT_LIMIT, LATENT_LIMIT, escape)?
            .rotated((key >> 11) as f64 / (1u64 << 53) as f64))
    }

    /// Pops the elements of `z_{t_k}` in natural order.
    fn pop_latent(&self, ans: &mut AnsState, k: usize, means: &[f64], std: f64, escape: bool) -> Result<Vec<i64>> {
        means.iter().enumerate().map(|(i, &m)| self.bins(k, i, m, std, escape)?.pop(ans)).collect()
    }

    /// Pushes elements in reverse order, undoing [`Chain::pop_latent`].
    fn push_latent(
        &self,
        ans: &mut AnsState,
        k: usize,
        idx: &[i64],
        means: &[f64],
        std: f64,
        escape: bool,
    ) -> Result<()> {
        for (i, (&q, &m)) in idx.iter().zip(means).enumerate().rev() {
            self.bins(k, i, m, std, escape)?.push(ans, q)?;
        }
        Ok(())
    }
}

/// SplitMix64 finaliser.
fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Integer-unit Gaussians of the data term of one scale.
struct DataTerm {
    /// Per-element means in integer units.
    means: Vec<f64>,
    /// Per-element decoder variance in integer units.
    vars: Vec<f64>,
}

fn data_term(
    spec: &HierarchySpec,
    s: usize,
    x_hat: &Tensor,
    var: &DecoderVariance,
    parent: Option<&[i64]>,
) -> Result<DataTerm> {
    let (g, o) = level_affine(spec, s);
    let child_means = match parent {
        None => x_hat.clone(),
        Some(p) => {
            let parent_t = level_tensor(spec, s - 1, p);
            match spec.kind {
                HierarchyKind::HaarWavelet => {
                    let two = HierarchySpec::new(
                        spec.kind,
                        2,
                        spec.channels,
                        2 * parent_t.shape()[1],
                        2 * parent_t.shape()[2],
                    )?;
                    MultiScaleRep::new(two, vec![parent_t, x_hat.clone()])?.inverse()?
                }
                // Project the mean onto blocks that sum to the parent.
                _ => x_hat.sub(&upsample_np(&downsample_np(x_hat)?)?)?.add(&upsample_np(&parent_t)?)?,
            }
        }
    };
    let means = child_means.data().iter().map(|m| (m - o) / g).collect();
    let n = child_means.len();
    let vars = match (spec.kind, parent, var) {
        (_, _, DecoderVariance::Scalar(v)) => vec![v / (g * g); n],
        // Haar detail variances live on subbands; spread each block's mean variance to its children.
        (HierarchyKind::HaarWavelet, Some(_), DecoderVariance::PerElement(t)) => {
            let (c3, h, w) = t.chw()?;
            let c = c3 / 3;
            let mut out = vec![0.0; n];
            for ch in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        let at = |b: usize| t.data()[((b * c + ch) * h + i) * w + j];
                        let v = (at(0) + at(1) + at(2)) / 3.0 / (g * g);
                        for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            out[(ch * 2 * h + 2 * i + di) * 2 * w + 2 * j + dj] = v;
                        }
                    }
                }
            }
            out
        }
        (_, _, DecoderVariance::PerElement(t)) => t.data().iter().map(|v| v / (g * g)).collect(),
    };
    Ok(DataTerm { means, vars })
}

/// Conditional Gaussians of children `a, b, c` of one block given the parent
/// sum, the earlier children and the block means `m` and variance `v`.
fn child_bins(spec: &HierarchySpec, s: usize, m: [f64; 4], v: f64, parent: i64, known: &[i64]) -> Result<GaussianBins> {
    let top = level_max(spec, s);
    let rest = parent - known.iter().sum::<i64>();
    let left = 3 - known.len() as i64;
    let lo = (rest - left * top).max(0);
    let hi = rest.min(top);
    let (mean, var) = match known {
        [] => (m[0], 0.75 * v),
        [a] => (m[1] - (*a as f64 - m[0]) / 3.0, v * 2.0 / 3.0),
        [a, b] => (m[2] - ((*a as f64 - m[0]) + (*b as f64 - m[1])) / 2.0, 0.5 * v),
        _ => unreachable!("at most two known children"),
    };
    GaussianBins::new(mean, var.sqrt(), lo, hi, true)
}

fn block_index(c: usize, h: usize, w: usize) -> impl DoubleEndedIterator<Item = (usize, [usize; 4])> {
    let (ho, wo) = (h / 2, w / 2);
    (0..c * ho * wo).map(move |p| {
        let (ch, i, j) = (p / (ho * wo), (p / wo) % ho, p % wo);
        let b = (ch * h + 2 * i) * w + 2 * j;
        (p, [b, b + 1, b + w, b + w + 1])
    })
}

fn check_integer_data(sums: &[i64], top: i64) -> Result<()> {
    match sums.iter().position(|&b| !(0..=top).contains(&b)) {
        Some(i) => Err(Error::Range(format!("block sum {} at {i} outside 0..={top}", sums[i]))),
        None => Ok(()),
    }
}

fn push_data(
    spec: &HierarchySpec,
    s: usize,
    ans: &mut AnsState,
    term: &DataTerm,
    sums: &[i64],
    parent: Option<&[i64]>,
) -> Result<()> {
    let top = level_max(spec, s);
    check_integer_data(sums, top)?;
    let Some(parent) = parent else {
        for i in (0..sums.len()).rev() {
            GaussianBins::new(term.means[i], term.vars[i].sqrt(), 0, top, true)?.push(ans, sums[i])?;
        }
        return Ok(());
    };
    let (c, h, w) = level_tensor(spec, s, sums).chw()?;
    for (p, idx) in block_index(c, h, w).rev() {
        let m = idx.map(|i| term.means[i]);
        let v = idx.iter().map(|&i| term.vars[i]).sum::<f64>() / 4.0;
        let vals = idx.map(|i| sums[i]);
        for n in (0..3).rev() {
            child_bins(spec, s, m, v, parent[p], &vals[..n])?.push(ans, vals[n])?;
        }
    }
    Ok(())
}

fn pop_data(
    spec: &HierarchySpec,
    s: usize,
    ans: &mut AnsState,
    term: &DataTerm,
    parent: Option<&[i64]>,
) -> Result<Vec<i64>> {
    let top = level_max(spec, s);
    let n = term.means.len();
    let Some(parent) = parent else {
        return (0..n).map(|i| GaussianBins::new(term.means[i], term.vars[i].sqrt(), 0, top, true)?.pop(ans)).collect();
    };
    let t = spec.truncated(s)?;
    let (c, h, w) = (t.channels, t.height, t.width);
    let mut sums = vec![0i64; n];
    for (p, idx) in block_index(c, h, w) {
        let m = idx.map(|i| term.means[i]);
        let v = idx.iter().map(|&i| term.vars[i]).sum::<f64>() / 4.0;
        let mut vals = Vec::with_capacity(4);
        for _ in 0..3 {
            let x = child_bins(spec, s, m, v, parent[p], &vals)?.pop(ans)?;
            vals.push(x);
        }
        vals.push(parent[p] - vals.iter().sum::<i64>());
        for (k, &i) in idx.iter().enumerate() {
            sums[i] = vals[k];
        }
    }
    Ok(sums)
}

fn chain<'a, D: ScaleDenoiser>(
    model: &'a CascadedModel<D>,
    cfg: &CodecConfig,
    s: usize,
    lower: Option<&MultiScaleRep>,
) -> Result<Chain<'a, D>> {
    let spec = model.hierarchy;
    let cond = match lower {
        Some(rep) => Some(cond_input(&spec, &rep.scales, s)?),
        None => None,
    };
    Ok(Chain {
        den: &model.scales[s - 1],
        schedule: model.schedule,
        steps: cfg.steps,
        grids: latent_grids(&model.schedule, cfg.steps, cfg.delta),
        shape: spec.scale_shape(s),
        cond,
    })
}

/// Encodes `img` onto `ans`. Returns the net number of bits added.
pub fn bb_encode<D: ScaleDenoiser>(
    model: &CascadedModel<D>,
    img: &ImageU8,
    ans: &mut AnsState,
    cfg: &CodecConfig,
) -> Result<f64> {
    cfg.validate()?;
    let spec = model.hierarchy;
    if [img.channels(), img.height(), img.width()] != [spec.channels, spec.height, spec.width] {
        return Err(Error::Shape("image does not match the model hierarchy".into()));
    }
    let start = ans.bits();
    let levels = level_sums(&spec, img);
    let reps: Vec<MultiScaleRep> =
        (1..=spec.levels).map(|s| truncated_rep(&spec, s, &levels[s - 1])).collect::<Result<_>>()?;
    for s in (1..=spec.levels).rev() {
        let ch = chain(model, cfg, s, if s > 1 { Some(&reps[s - 2]) } else { None })?;
        let z0 = &reps[s - 1].scales[s - 1];
        let parent = if s > 1 { Some(levels[s - 2].as_slice()) } else { None };

        let (m, sd) = ch.forward_transition(1, z0);
        let mut idx = ch.pop_latent(ans, 1, &m, sd, false)?;
        let t1 = step_time(1, cfg.steps);
        let x_hat = ch.predict_x(&ch.latent(1, &idx), t1)?;
        let var = ch.den.decoder_variance(model.schedule.gamma(t1));
        let term = data_term(&spec, s, &x_hat, &var, parent)?;
        push_data(&spec, s, ans, &term, &levels[s - 1], parent)?;

        for k in 2..=cfg.steps {
            let prev = ch.latent(k - 1, &idx);
            let (m, sd) = ch.forward_transition(k, &prev);
            let next = ch.pop_latent(ans, k, &m, sd, false)?;
            let (m, sd) = ch.reverse_transition(k, &ch.latent(k, &next))?;
            ch.push_latent(ans, k - 1, &idx, &m, sd, true)?;
            idx = next;
        }
        let zeros = vec![0.0; idx.len()];
        ch.push_latent(ans, cfg.steps, &idx, &zeros, 1.0, true)?;
    }
    Ok(ans.bits() - start)
}

/// Decodes one image of the model's shape from the top of `ans`.
pub fn bb_decode<D: ScaleDenoiser>(model: &CascadedModel<D>, ans: &mut AnsState, cfg: &CodecConfig) -> Result<ImageU8> {
    cfg.validate()?;
    let spec = model.hierarchy;
    let mut levels: Vec<Vec<i64>> = Vec::with_capacity(spec.levels);
    let mut reps: Vec<MultiScaleRep> = Vec::with_capacity(spec.levels);
    for s in 1..=spec.levels {
        let ch = chain(model, cfg, s, reps.last())?;
        let n = spec.scale_dim(s);
        let zeros = vec![0.0; n];
        let mut idx = ch.pop_latent(ans, cfg.steps, &zeros, 1.0, true)?;
        for k in (2..=cfg.steps).rev() {
            let (m, sd) = ch.reverse_transition(k, &ch.latent(k, &idx))?;
            let prev = ch.pop_latent(ans, k - 1, &m, sd, true)?;
            let (m, sd) = ch.forward_transition(k, &ch.latent(k - 1, &prev));
            ch.push_latent(ans, k, &idx, &m, sd, false)?;
            idx = prev;
        }
        let t1 = step_time(1, cfg.steps);
        let x_hat = ch.predict_x(&ch.latent(1, &idx), t1)?;
        let var = ch.den.decoder_variance(model.schedule.gamma(t1));
        let parent = levels.last().map(Vec::as_slice);
        let term = data_term(&spec, s, &x_hat, &var, parent)?;
        let sums = pop_data(&spec, s, ans, &term, parent)?;
        let rep = truncated_rep(&spec, s, &sums)?;
        let (m, sd) = ch.forward_transition(1, &rep.scales[s - 1]);
        ch.push_latent(ans, 1, &idx, &m, sd, false)?;
        levels.push(sums);
        reps.push(rep);
    }
    let pixels = levels.pop().expect("at least one level");
    let values: Vec<u8> = pixels
        .iter()
        .map(|&v| {
            u8::try_from(v).map_err(|_| Error::Corrupt { position: ans.words().len(), reason: format!("pixel {v}") })
        })
        .collect::<Result<_>>()?;
    ImageU8::from_chw_values(spec.channels, spec.height, spec.width, &values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn level_tensors_match_hierarchy_coarsening() {
        let spec = HierarchySpec::new(HierarchyKind::HaarWavelet, 3, 3, 8, 8).unwrap();
        let mut rng = Rng::new(1);
        let img = ImageU8::new(8, 8, 3, (0..192).map(|_| rng.below(256) as u8).collect()).unwrap();
        let levels = level_sums(&spec, &img);
        let x = crate::tensor::dequantize_centered(&img);
        let full = spec.forward(&x).unwrap();
        for s in 1..=3 {
            let rep = truncated_rep(&spec, s, &levels[s - 1]).unwrap();
            for k in 0..s {
                assert!(rep.scales[k].max_abs_diff(&full.scales[k]).unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn conditional_children_sum_to_parent() {
        let spec = HierarchySpec::new(HierarchyKind::LaplacianPyramid, 2, 1, 4, 4).unwrap();
        let m = [10.2, 11.0, 9.5, 12.0];
        let a = child_bins(&spec, 2, m, 4.0, 40, &[]).unwrap();
        assert!(a.probability(41) == 0.0 && a.probability(40) > 0.0);
        let c = child_bins(&spec, 2, m, 4.0, 40, &[30, 10]).unwrap();
        assert_eq!(c.probability(0), 1.0);
    }
}
