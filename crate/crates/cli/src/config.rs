//! `key = value` experiment configuration.
//!
//! Every key has a default; files and command-line overrides may only set
//! known keys. The resolved set is written next to each command's outputs.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use pcdm_core::codec::CodecConfig;
use pcdm_core::diffusion::{NoiseSchedule, TrainConfig, VlbMode};
use pcdm_core::emd::WaveletVariant;
use pcdm_core::hvp::{HierarchyKind, HierarchySpec};

use crate::data::{DatasetSpec, Generator};

/// Known keys, their defaults and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("hierarchy", "haar", "haar, laplacian or nearest"),
    ("levels", "2", "number of scales S"),
    ("channels", "1", "1 (PGM) or 3 (PPM)"),
    ("height", "8", "image height in pixels"),
    ("width", "8", "image width in pixels"),
    ("steps", "1000", "diffusion steps T"),
    ("gamma_min", "-13.3", "log-SNR at t = 1"),
    ("gamma_max", "5", "log-SNR at t = 0"),
    ("hidden", "32", "comma-separated hidden widths of each scale network"),
    ("iterations", "3000", "optimiser steps"),
    ("batch_size", "16", "images per step"),
    ("lr", "0.002", "AdamW learning rate"),
    ("weight_decay", "0", "AdamW decoupled weight decay"),
    ("train_mc", "1", "diffusion steps drawn per image during training"),
    ("grad_clip", "1", "per-network gradient norm clip, 0 disables"),
    ("seed", "0", "run seed"),
    ("dataset", "gmm", "gmm, checkerboard or dir"),
    ("dataset_seed", "7", "seed of the dataset's fixed structure, such as mixture means"),
    ("mixture_components", "4", "components of the gmm dataset"),
    ("dataset_path", "", "directory of PGM/PPM images for dataset = dir"),
    ("train_count", "512", "training images"),
    ("eval_count", "64", "held-out images for eval, compress and ood"),
    ("checkpoint", "model.ckpt", "model checkpoint, relative to out"),
    ("cvdm_checkpoint", "", "nearest-neighbour checkpoint to evaluate with the folded bound"),
    ("eval_steps", "0", "T used by eval, 0 keeps the model's"),
    ("sample_count", "8", "images drawn by sample"),
    ("codec_steps", "32", "chain length used for coding"),
    ("codec_delta", "0.015625", "relative latent bin width"),
    ("aux_words", "0", "initial bits-back capital in 32-bit words, 0 picks a default"),
    ("archive", "archive.pcdmbb", "bits-back archive, relative to out"),
    ("ood_mc", "20", "Monte Carlo steps per likelihood estimate"),
    ("ood_train_count", "128", "training images used to estimate the entropy"),
    ("emd_pairs", "200", "random pairs in emd-bench"),
    ("emd_grid", "8", "side of the emd-bench grid"),
    ("emd_p", "1", "ground cost exponent"),
    ("emd_variant", "dimension", "dimension or literal scale weights"),
    ("plot_input", "metrics.csv", "CSV converted by plot-data, relative to out"),
    ("plot_smooth", "1", "moving-average window applied by plot-data"),
    ("out", "out", "output directory"),
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExperimentConfig {
    values: BTreeMap<String, String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect() }
    }
}

impl ExperimentConfig {
    /// Defaults overridden by the `key = value` lines of `text`. Blank lines
    /// and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected key = value", n + 1))?;
            cfg.set(k.trim(), v.trim()).with_context(|| format!("line {}", n + 1))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.into();
                Ok(())
            }
            None => bail!("unknown config key {key:?}"),
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("key {key} missing from the defaults"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.parse().map_err(|e| anyhow!("config key {key} = {raw:?}: {e}"))
    }

    /// Every key in sorted order, one `key = value` per line.
    pub fn resolved(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("out"))
    }

    /// `key` as a path, relative to the output directory unless absolute.
    pub fn out_path(&self, key: &str) -> PathBuf {
        self.out_dir().join(self.raw(key))
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")
    }

    pub fn hierarchy(&self) -> Result<HierarchySpec> {
        let kind: HierarchyKind = self.get("hierarchy")?;
        Ok(HierarchySpec::new(
            kind,
            self.get("levels")?,
            self.get("channels")?,
            self.get("height")?,
            self.get("width")?,
        )?)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        Ok(NoiseSchedule::new(self.get("gamma_min")?, self.get("gamma_max")?)?)
    }

    pub fn hidden(&self) -> Result<Vec<usize>> {
        let raw = self.raw("hidden");
        let widths = raw
            .split(',')
            .map(|w| w.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| anyhow!("config key hidden = {raw:?}: {e}"))?;
        if widths.is_empty() || widths.contains(&0) {
            bail!("config key hidden = {raw:?}: widths must be positive");
        }
        Ok(widths)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let clip: f64 = self.get("grad_clip")?;
        let cfg = TrainConfig {
            iterations: self.get("iterations")?,
            batch_size: self.get("batch_size")?,
            lr: self.get("lr")?,
            weight_decay: self.get("weight_decay")?,
            mode: VlbMode::MonteCarlo(self.get("train_mc")?),
            grad_clip: (clip > 0.0).then_some(clip),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn codec_config(&self) -> Result<CodecConfig> {
        let cfg = CodecConfig { delta: self.get("codec_delta")?, steps: self.get("codec_steps")? };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn emd_variant(&self) -> Result<WaveletVariant> {
        match self.raw("emd_variant") {
            "dimension" => Ok(WaveletVariant::DimensionExponent),
            "literal" => Ok(WaveletVariant::PaperLiteral),
            other => bail!("config key emd_variant = {other:?}: expected dimension or literal"),
        }
    }

    /// Dataset of `count` images drawn with `seed`.
    pub fn dataset(&self, count: usize, seed: u64) -> Result<DatasetSpec> {
        let generator = match self.raw("dataset") {
            "gmm" => Generator::GaussianMixture { components: self.get("mixture_components")? },
            "checkerboard" => Generator::Checkerboard,
            "dir" => {
                let path = self.raw("dataset_path");
                if path.is_empty() {
                    bail!("dataset = dir needs dataset_path");
                }
                Generator::FromDirectory(PathBuf::from(path))
            }
            other => bail!("config key dataset = {other:?}: expected gmm, checkerboard or dir"),
        };
        Ok(DatasetSpec { generator, count, seed, structure_seed: self.get("dataset_seed")? })
    }
}
