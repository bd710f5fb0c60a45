//! The `pcdm` command line: configuration, toy datasets and experiment commands.
//!
//! Exit codes: 0 on success, 1 when a configuration, input or check is
//! invalid, 2 when reading or writing a file fails.

pub mod commands;
pub mod config;
pub mod data;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};

use crate::config::ExperimentConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Train,
    Eval,
    Sample,
    Compress,
    Decompress,
    Ood,
    EmdBench,
    Check,
    PlotData,
}

#[derive(Debug, Parser)]
#[command(name = "pcdm", version, about = "Cascaded diffusion on volume-preserving hierarchies")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// `key = value` configuration file; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl Cli {
    pub fn resolve_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv.split_once('=').with_context(|| format!("override {kv:?} is not key=value"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.set("seed", seed.to_string())?;
        }
        if let Some(out) = &self.out {
            cfg.set("out", out.to_string_lossy())?;
        }
        Ok(cfg)
    }
}

pub fn execute(command: Command, cfg: &ExperimentConfig) -> Result<()> {
    use commands::*;
    match command {
        Command::Train => cmd_train(cfg),
        Command::Eval => cmd_eval(cfg),
        Command::Sample => cmd_sample(cfg),
        Command::Compress => cmd_compress(cfg),
        Command::Decompress => cmd_decompress(cfg),
        Command::Ood => cmd_ood(cfg),
        Command::EmdBench => cmd_emd_bench(cfg),
        Command::Check => cmd_check(cfg),
        Command::PlotData => cmd_plot_data(cfg),
    }
}

/// 2 for file-system failures anywhere in the chain, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
        if let Some(pcdm_core::Error::Io(_)) = cause.downcast_ref::<pcdm_core::Error>() {
            return 2;
        }
        if cause.downcast_ref::<csv::Error>().is_some_and(|e| e.is_io_error()) {
            return 2;
        }
    }
    1
}

/// Caps rayon's worker count from `PCDM_THREADS`, if set.
fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("PCDM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().with_context(|| format!("PCDM_THREADS = {raw:?} is not a count"))?;
    if n == 0 {
        anyhow::bail!("PCDM_THREADS must be positive");
    }
    // A pool built earlier in the same process keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = configure_threads().and_then(|_| cli.resolve_config()).and_then(|cfg| execute(cli.command, &cfg));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
