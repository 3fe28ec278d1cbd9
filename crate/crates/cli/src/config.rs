//! Run configuration: command-line flags layered over an optional TOML
//! file layered over library defaults.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Deserialize;

use ggmp::align::{AlignCost, AlignMethod};
use ggmp::gp::KernelFamily;
use ggmp::model::{GgmpConfig, WeightMode};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelArg {
    Se,
    Matern52,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignArg {
    Auto,
    Sort,
    Hungarian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostArg {
    W2,
    Hellinger,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightsArg {
    Equal,
    Shared,
    InputDependent,
}

/// Model settings shared by `fit` and `ablate-weights`. Every field is
/// optional so that unset flags fall through to the config file.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArgs {
    /// Number of mixture components.
    #[arg(short = 'k', long)]
    pub k: Option<usize>,
    #[arg(long, value_enum)]
    pub kernel: Option<KernelArg>,
    /// Alignment method; `auto` sorts for scalar outputs and matches otherwise.
    #[arg(long, value_enum)]
    pub align: Option<AlignArg>,
    #[arg(long, value_enum)]
    pub align_cost: Option<CostArg>,
    #[arg(long, value_enum)]
    pub weights: Option<WeightsArg>,
    #[arg(long)]
    pub em_restarts: Option<usize>,
    #[arg(long)]
    pub em_max_iters: Option<usize>,
    /// EM stopping tolerance per sample.
    #[arg(long)]
    pub em_tol: Option<f64>,
    #[arg(long)]
    pub gp_restarts: Option<usize>,
    #[arg(long)]
    pub gp_max_iters: Option<usize>,
    /// Stopping tolerance of the shared-weight optimizer.
    #[arg(long)]
    pub weight_tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fraction of inputs held out for evaluation.
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Worker threads; also read from the config file.
    #[arg(skip)]
    #[serde(default)]
    pub threads: Option<usize>,
}

impl ModelArgs {
    fn or(self, file: ModelArgs) -> ModelArgs {
        ModelArgs {
            k: self.k.or(file.k),
            kernel: self.kernel.or(file.kernel),
            align: self.align.or(file.align),
            align_cost: self.align_cost.or(file.align_cost),
            weights: self.weights.or(file.weights),
            em_restarts: self.em_restarts.or(file.em_restarts),
            em_max_iters: self.em_max_iters.or(file.em_max_iters),
            em_tol: self.em_tol.or(file.em_tol),
            gp_restarts: self.gp_restarts.or(file.gp_restarts),
            gp_max_iters: self.gp_max_iters.or(file.gp_max_iters),
            weight_tol: self.weight_tol.or(file.weight_tol),
            seed: self.seed.or(file.seed),
            test_fraction: self.test_fraction.or(file.test_fraction),
            threads: self.threads.or(file.threads),
        }
    }
}

/// Fully resolved settings of one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: GgmpConfig,
    pub test_fraction: Option<f64>,
    pub config_file: Option<PathBuf>,
}

pub fn read_config_file(path: &Path) -> Result<ModelArgs, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config file {}: {e}", path.display())))
}

impl RunConfig {
    pub fn resolve(flags: ModelArgs, file: Option<&Path>) -> Result<Self, CliError> {
        let merged = match file {
            Some(p) => flags.or(read_config_file(p)?),
            None => flags,
        };
        let mut m = GgmpConfig::default();
        if let Some(k) = merged.k {
            m.k = k;
        }
        if let Some(kernel) = merged.kernel {
            m.kernel = match kernel {
                KernelArg::Se => KernelFamily::SquaredExponential,
                KernelArg::Matern52 => KernelFamily::Matern52,
            };
        }
        if let Some(a) = merged.align {
            m.align_method = match a {
                AlignArg::Auto => None,
                AlignArg::Sort => Some(AlignMethod::SortByMean),
                AlignArg::Hungarian => Some(AlignMethod::SequentialHungarian),
            };
        }
        if let Some(c) = merged.align_cost {
            m.align_cost = match c {
                CostArg::W2 => AlignCost::Wasserstein2,
                CostArg::Hellinger => AlignCost::Hellinger,
            };
        }
        if let Some(w) = merged.weights {
            m.weight_mode = match w {
                WeightsArg::Equal => WeightMode::Equal,
                WeightsArg::Shared => WeightMode::Shared,
                WeightsArg::InputDependent => WeightMode::InputDependent,
            };
        }
        if let Some(v) = merged.em_restarts {
            m.em.restarts = v;
        }
        if let Some(v) = merged.em_max_iters {
            m.em.max_iters = v;
        }
        if let Some(v) = merged.em_tol {
            m.em.tol_per_sample = v;
        }
        if let Some(v) = merged.gp_restarts {
            m.gp_restarts = v;
        }
        if let Some(v) = merged.gp_max_iters {
            m.gp_max_iters = v;
        }
        if let Some(v) = merged.weight_tol {
            m.shared_weights.tol = v;
        }
        if let Some(v) = merged.seed {
            m.seed = v;
        }
        m.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if let Some(f) = merged.test_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(CliError::Usage("--test-fraction must lie in (0, 1)".into()));
            }
        }
        Ok(Self {
            model: m,
            test_fraction: merged.test_fraction,
            config_file: file.map(Path::to_path_buf),
        })
    }

    /// Effective settings as `key = value` pairs for provenance headers.
    pub fn describe(&self) -> Vec<(String, String)> {
        let m = &self.model;
        let mut out = vec![
            ("k".into(), m.k.to_string()),
            ("kernel".into(), format!("{:?}", m.kernel)),
            (
                "align".into(),
                m.align_method.map_or("auto".into(), |a| format!("{a:?}")),
            ),
            ("align_cost".into(), format!("{:?}", m.align_cost)),
            ("weights".into(), format!("{:?}", m.weight_mode)),
            ("weight_support".into(), format!("{:?}", m.weight_support)),
            ("histogram_bins".into(), m.histogram_bins.to_string()),
            ("em_restarts".into(), m.em.restarts.to_string()),
            ("em_max_iters".into(), m.em.max_iters.to_string()),
            ("em_tol".into(), m.em.tol_per_sample.to_string()),
            ("gp_restarts".into(), m.gp_restarts.to_string()),
            ("gp_max_iters".into(), m.gp_max_iters.to_string()),
            ("weight_tol".into(), m.shared_weights.tol.to_string()),
            ("seed".into(), m.seed.to_string()),
        ];
        if let Some(f) = self.test_fraction {
            out.push(("test_fraction".into(), f.to_string()));
        }
        if let Some(p) = &self.config_file {
            out.push(("config_file".into(), p.display().to_string()));
        }
        out
    }
}
