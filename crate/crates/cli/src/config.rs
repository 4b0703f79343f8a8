//! Settings shared by all subcommands, from flags and an optional TOML file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use gpr_core::io::parse_structure;
use gpr_core::{Algorithm, RepresentationStructure, SolverConfig};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmName {
    Ap,
    Rrr,
}

/// Flags common to every subcommand. Every one of them may also be set in
/// the `--config` file; flags win.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML file with any of the settings below.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Structure: `8x4`, `3x2,1x1:complex`, `cyclic:8`, `cryo:2:5` or JSON.
    #[arg(long, global = true)]
    pub structure: Option<String>,
    /// Subspace dimension(s), comma separated.
    #[arg(long = "K", global = true, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Noise level(s), comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub sigma: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub algorithm: Option<AlgorithmName>,
    /// RRR step size.
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true)]
    pub max_iters: Option<usize>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Full scale: 10,000 trials per sweep point.
    #[arg(long, global = true)]
    pub paper_scale: bool,
    /// Run trials on one thread.
    #[arg(long, global = true)]
    pub serial: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    structure: Option<String>,
    #[serde(rename = "K")]
    k: Option<OneOrMany<usize>>,
    sigma: Option<OneOrMany<f64>>,
    trials: Option<usize>,
    seed: Option<u64>,
    algorithm: Option<AlgorithmName>,
    beta: Option<f64>,
    max_iters: Option<usize>,
    tol: Option<f64>,
    out: Option<PathBuf>,
    paper_scale: Option<bool>,
    serial: Option<bool>,
    threads: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            Self::One(v) => vec![v],
            Self::Many(v) => v,
        }
    }
}

/// Flags merged over the file; unset values stay `None`.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    pub structure: Option<RepresentationStructure>,
    pub k: Option<Vec<usize>>,
    pub sigma: Option<Vec<f64>>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub algorithm: Option<AlgorithmName>,
    pub beta: Option<f64>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub out: Option<PathBuf>,
    pub paper_scale: bool,
    pub serial: bool,
    pub threads: Option<usize>,
}

fn read_file_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

impl CommonArgs {
    pub fn settings(&self) -> Result<Settings> {
        let file = match &self.config {
            Some(p) => read_file_config(p)?,
            None => FileConfig::default(),
        };
        let structure = match self.structure.clone().or(file.structure) {
            Some(text) => Some(parse_structure(&text)?),
            None => None,
        };
        Ok(Settings {
            structure,
            k: self.k.clone().or(file.k.map(OneOrMany::into_vec)),
            sigma: self.sigma.clone().or(file.sigma.map(OneOrMany::into_vec)),
            trials: self.trials.or(file.trials),
            seed: self.seed.or(file.seed),
            algorithm: self.algorithm.or(file.algorithm),
            beta: self.beta.or(file.beta),
            max_iters: self.max_iters.or(file.max_iters),
            tol: self.tol.or(file.tol),
            out: self.out.clone().or(file.out),
            paper_scale: self.paper_scale || file.paper_scale.unwrap_or(false),
            serial: self.serial || file.serial.unwrap_or(false),
            threads: self.threads.or(file.threads),
        })
    }
}

impl Settings {
    pub fn structure_or(&self, default: &str) -> Result<RepresentationStructure> {
        match &self.structure {
            Some(s) => Ok(s.clone()),
            None => Ok(parse_structure(default)?),
        }
    }

    /// The single subspace dimension of a non-sweep subcommand.
    pub fn single_k(&self, default: usize) -> Result<usize> {
        match self.k.as_deref() {
            None => Ok(default),
            Some([k]) => Ok(*k),
            Some(ks) => bail!("expected one value for --K, got {}", ks.len()),
        }
    }

    pub fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }

    /// Applies the solver flags on top of `base`.
    pub fn solver(&self, base: SolverConfig) -> SolverConfig {
        let algorithm = match (self.algorithm, self.beta) {
            (Some(AlgorithmName::Ap), _) => Algorithm::AlternatingProjection,
            (Some(AlgorithmName::Rrr), beta) => Algorithm::Rrr {
                beta: beta.unwrap_or(Algorithm::DEFAULT_BETA),
            },
            (None, _) => base.algorithm,
        };
        SolverConfig {
            algorithm,
            max_iters: self.max_iters.unwrap_or(base.max_iters),
            tol: self.tol.unwrap_or(base.tol),
            seed: self.seed.unwrap_or(base.seed),
            ..base
        }
    }

    pub fn install_threads(&self) -> Result<()> {
        let threads = if self.serial { Some(1) } else { self.threads };
        if let Some(n) = threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("cannot configure the thread pool")?;
        }
        Ok(())
    }
}
