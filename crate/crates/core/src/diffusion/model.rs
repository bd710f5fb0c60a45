//! Cascaded model container and its checkpoint format.
//!
//! Checkpoint layout: the line `PCDMCKPT`, `key=value` header lines, the line
//! `end`, then every network's flat `f64` parameters little-endian, scale 1 first.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::denoiser::ScaleDenoiser;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::hvp::{HierarchyKind, HierarchySpec};
use crate::nn::{EpsNet, NetConfig};
use crate::rng::Rng;

/// Largest supported number of discrete steps.
pub const MAX_STEPS: usize = 4096;

/// Hierarchy, noise schedule, step count and one denoiser per scale.
#[derive(Clone, Debug, PartialEq)]
pub struct CascadedModel<D = EpsNet> {
    pub hierarchy: HierarchySpec,
    pub schedule: NoiseSchedule,
    /// Number of discrete steps `T`.
    pub steps: usize,
    /// `scales[s − 1]` models `z^(s)`.
    pub scales: Vec<D>,
}

impl<D: ScaleDenoiser> CascadedModel<D> {
    pub fn new(hierarchy: HierarchySpec, schedule: NoiseSchedule, steps: usize, scales: Vec<D>) -> Result<Self> {
        hierarchy.validate()?;
        check_steps(steps)?;
        if scales.len() != hierarchy.levels {
            return Err(Error::Shape(format!("{} denoisers for {} scales", scales.len(), hierarchy.levels)));
        }
        Ok(Self { hierarchy, schedule, steps, scales })
    }

    /// Same model evaluated with a different number of steps.
    pub fn with_steps(mut self, steps: usize) -> Result<Self> {
        check_steps(steps)?;
        self.steps = steps;
        Ok(self)
    }
}

fn check_steps(steps: usize) -> Result<()> {
    if steps == 0 || steps > MAX_STEPS {
        return Err(Error::InvalidArgument(format!("T must be in 1..={MAX_STEPS}, got {steps}")));
    }
    Ok(())
}

/// Network architecture for scale `s` of a hierarchy.
pub fn scale_net_config(spec: &HierarchySpec, s: usize, hidden: &[usize]) -> NetConfig {
    NetConfig::new(spec.scale_shape(s)[0], spec.cond_channels(s), hidden.to_vec())
}

impl CascadedModel<EpsNet> {
    /// Fresh networks; decoder variances start at `σ²(t_1)/α²(t_1)`.
    pub fn init(
        hierarchy: HierarchySpec,
        schedule: NoiseSchedule,
        steps: usize,
        hidden: &[usize],
        rng: &mut Rng,
    ) -> Result<Self> {
        check_steps(steps)?;
        hierarchy.validate()?;
        let log_var = -schedule.gamma(1.0 / steps as f64);
        let mut nets = Vec::with_capacity(hierarchy.levels);
        for s in 1..=hierarchy.levels {
            let mut net = EpsNet::new(scale_net_config(&hierarchy, s, hidden), rng)?;
            net.set_decoder_log_var(log_var);
            nets.push(net);
        }
        Self::new(hierarchy, schedule, steps, nets)
    }

    pub fn num_params(&self) -> usize {
        self.scales.iter().map(EpsNet::num_params).sum()
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let h = &self.hierarchy;
        let cfg = self.scales[0].config();
        let hidden: Vec<String> = cfg.hidden.iter().map(usize::to_string).collect();
        let mut out = format!(
            "PCDMCKPT\nkind={}\nlevels={}\nchannels={}\nheight={}\nwidth={}\ngamma_min={:?}\ngamma_max={:?}\nsteps={}\nhidden={}\nembed_dim={}\nend\n",
            h.kind,
            h.levels,
            h.channels,
            h.height,
            h.width,
            self.schedule.gamma_min,
            self.schedule.gamma_max,
            self.steps,
            hidden.join(","),
            cfg.embed_dim
        )
        .into_bytes();
        for net in &self.scales {
            for v in net.params() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        const END: &[u8] = b"\nend\n";
        let split = bytes
            .windows(END.len())
            .position(|w| w == END)
            .ok_or_else(|| Error::Format("checkpoint header not terminated".into()))?;
        let header =
            std::str::from_utf8(&bytes[..split]).map_err(|_| Error::Format("checkpoint header is not UTF-8".into()))?;
        let mut lines = header.lines();
        if lines.next() != Some("PCDMCKPT") {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let mut kv = std::collections::BTreeMap::new();
        for line in lines {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format(format!("bad header line {line:?}")))?;
            kv.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| Error::Format(format!("checkpoint lacks {k}")));
        let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::Format(format!("bad {k}"))) };
        let float = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::Format(format!("bad {k}"))) };
        let kind: HierarchyKind = get("kind")?.parse()?;
        let hierarchy = HierarchySpec::new(kind, num("levels")?, num("channels")?, num("height")?, num("width")?)?;
        let schedule = NoiseSchedule::new(float("gamma_min")?, float("gamma_max")?)?;
        let hidden: Vec<usize> = get("hidden")?
            .split(',')
            .map(|s| s.parse().map_err(|_| Error::Format("bad hidden widths".into())))
            .collect::<Result<_>>()?;
        let embed_dim = num("embed_dim")?;

        let mut payload = &bytes[split + END.len()..];
        let mut nets = Vec::with_capacity(hierarchy.levels);
        for s in 1..=hierarchy.levels {
            let mut cfg = scale_net_config(&hierarchy, s, &hidden);
            cfg.embed_dim = embed_dim;
            let n = EpsNet::new(cfg.clone(), &mut Rng::new(0))?.num_params();
            if payload.len() < 8 * n {
                return Err(Error::Truncated { expected: 8 * n, found: payload.len() });
            }
            let params = payload[..8 * n].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            nets.push(EpsNet::from_params(cfg, params)?);
            payload = &payload[8 * n..];
        }
        if !payload.is_empty() {
            return Err(Error::Format(format!("{} trailing checkpoint bytes", payload.len())));
        }
        Self::new(hierarchy, schedule, num("steps")?, nets)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_checkpoint_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint_bytes(&fs::read(path)?)
    }

    /// SHA-256 of the checkpoint bytes.
    pub fn model_hash(&self) -> [u8; 32] {
        let digest = Sha256::digest(self.to_checkpoint_bytes());
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(kind: HierarchyKind) -> CascadedModel {
        let spec = HierarchySpec::new(kind, 2, 3, 8, 8).unwrap();
        CascadedModel::init(spec, NoiseSchedule::default(), 100, &[4, 5], &mut Rng::new(1)).unwrap()
    }

    #[test]
    fn input_channels_follow_hierarchy() {
        let haar = model(HierarchyKind::HaarWavelet);
        assert_eq!(haar.scales[0].config().input_channels(), 3);
        assert_eq!(haar.scales[1].config().input_channels(), 12);
        let lp = model(HierarchyKind::LaplacianPyramid);
        assert_eq!(lp.scales[1].config().input_channels(), 6);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = model(HierarchyKind::LaplacianPyramid);
        m.scales[1].params_mut()[3] = 0.123456789;
        let bytes = m.to_checkpoint_bytes();
        let back = CascadedModel::from_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.model_hash(), m.model_hash());
        assert!(CascadedModel::from_checkpoint_bytes(&bytes[..bytes.len() - 8]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(CascadedModel::from_checkpoint_bytes(&bad).is_err());
    }

    #[test]
    fn initial_decoder_variance() {
        let m = model(HierarchyKind::HaarWavelet);
        let sch = NoiseSchedule::default();
        let t1 = 0.01;
        let want = sch.sigma2(t1) / sch.alpha2(t1);
        assert!((m.scales[0].decoder_log_var().exp() - want).abs() < 1e-12);
    }

    #[test]
    fn steps_are_bounded() {
        let m = model(HierarchyKind::HaarWavelet);
        assert!(m.clone().with_steps(0).is_err());
        assert!(m.clone().with_steps(MAX_STEPS + 1).is_err());
        assert_eq!(m.with_steps(32).unwrap().steps, 32);
    }
}
