use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rope_geometry::rope::{
    DEFAULT_CYCLES_PER_TRAIN_LEN, DEFAULT_HALF_ROPE_THETA, DEFAULT_MAX_WAVELENGTH,
    DEFAULT_ROPE_ID_FRACTION,
};
use rope_geometry::RopeVariant;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Rotary-embedding geometry laboratory.
#[derive(Debug, Parser)]
#[command(name = "ropegeom", version, about)]
pub struct Cli {
    /// Seed for every random stream; recorded in all outputs.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Directory for CSV/JSON artifacts.
    #[arg(long, global = true, env = "ROPEGEOM_OUT_DIR", default_value = "ropegeom-out")]
    pub out_dir: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// Worker threads (default: all hardware threads).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print a frequency schedule.
    Frequencies(FrequenciesArgs),
    /// Synthetic FSV-ratio sweep over RoPE variants.
    Synth(SynthArgs),
    /// Numerically check the rank-1 convergence results and Frobenius
    /// preservation.
    Theory(TheoryArgs),
    /// Cluster, spectral and sink statistics over a dump manifest.
    Analyze(AnalyzeArgs),
    /// Apply a schedule to a pre-RoPE dump.
    Rope(RopeArgs),
    /// Write deterministic synthetic dumps and their manifest.
    Selftest(SelftestArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantKind {
    Standard,
    HighFrequency,
    Partial,
    RopeId,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct VariantArgs {
    #[arg(long, value_enum)]
    pub variant: Option<VariantKind>,
    /// Base θ (standard: 10000, partial: 500000).
    #[arg(long)]
    pub theta: Option<f64>,
    /// Training length (high-frequency, rope-id).
    #[arg(long)]
    pub train_len: Option<u64>,
    /// Share of planes that rotate (partial, rope-id; default 0.5).
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Fastest wavelength in tokens (rope-id; default 32).
    #[arg(long)]
    pub max_wavelength: Option<u64>,
    /// Cycles of the slowest plane per training length (rope-id; default 2).
    #[arg(long)]
    pub cycles: Option<u64>,
}

impl VariantArgs {
    fn given(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.theta.is_some() {
            v.push("--theta");
        }
        if self.train_len.is_some() {
            v.push("--train-len");
        }
        if self.fraction.is_some() {
            v.push("--fraction");
        }
        if self.max_wavelength.is_some() {
            v.push("--max-wavelength");
        }
        if self.cycles.is_some() {
            v.push("--cycles");
        }
        v
    }

    /// `None` when no `--variant` was given (and no variant parameters).
    pub fn build(&self) -> CliResult<Option<RopeVariant>> {
        let Some(kind) = self.variant else {
            return match self.given().first() {
                Some(flag) => Err(CliError::Usage(format!("{flag} requires --variant"))),
                None => Ok(None),
            };
        };
        let allowed: &[&str] = match kind {
            VariantKind::Standard => &["--theta"],
            VariantKind::HighFrequency => &["--train-len"],
            VariantKind::Partial => &["--theta", "--fraction"],
            VariantKind::RopeId => &["--train-len", "--fraction", "--max-wavelength", "--cycles"],
        };
        if let Some(flag) = self.given().into_iter().find(|f| !allowed.contains(f)) {
            return Err(CliError::Usage(format!(
                "{flag} does not apply to --variant {}",
                kind.to_possible_value().expect("no skipped variants").get_name()
            )));
        }
        let train_len = || {
            self.train_len
                .ok_or_else(|| CliError::Usage("this variant requires --train-len".into()))
        };
        Ok(Some(match kind {
            VariantKind::Standard => RopeVariant::Standard {
                base_theta: self.theta.unwrap_or(10_000.0),
            },
            VariantKind::HighFrequency => RopeVariant::HighFrequency {
                train_len: train_len()?,
            },
            VariantKind::Partial => RopeVariant::Partial {
                base_theta: self.theta.unwrap_or(DEFAULT_HALF_ROPE_THETA),
                fraction: self.fraction.unwrap_or(0.5),
            },
            VariantKind::RopeId => RopeVariant::RopeId {
                train_len: train_len()?,
                max_wavelength_tokens: self.max_wavelength.unwrap_or(DEFAULT_MAX_WAVELENGTH),
                cycles_per_train_len: self.cycles.unwrap_or(DEFAULT_CYCLES_PER_TRAIN_LEN),
                fraction: self.fraction.unwrap_or(DEFAULT_ROPE_ID_FRACTION),
            },
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    Table,
    Csv,
}

#[derive(Debug, Args)]
pub struct FrequenciesArgs {
    #[command(flatten)]
    pub variant: VariantArgs,
    #[arg(long)]
    pub head_dim: usize,
    #[arg(long, value_enum, default_value_t = TableFormat::Table)]
    pub format: TableFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Fig7,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = Preset::Fig7)]
    pub preset: Preset,
    /// Override the preset head dimension.
    #[arg(long)]
    pub head_dim: Option<usize>,
    /// Override the preset training length.
    #[arg(long)]
    pub train_len: Option<u64>,
    /// Override the preset length grid (comma-separated).
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub n_grid: Option<Vec<usize>>,
    /// Restrict to these variants (comma-separated).
    #[arg(long, value_enum, value_delimiter = ',', num_args = 1..)]
    pub variants: Option<Vec<VariantKind>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Lemma1,
    Lemma2,
    Theorem1,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VShape {
    SinglePlane,
    Uniform,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum UShape {
    Ones,
    Monotone,
    Oscillation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TierArg {
    Strict,
    Loose,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    #[arg(long, value_enum, default_value_t = Suite::All)]
    pub suite: Suite,
    /// Which extreme of v to test.
    #[arg(long, value_enum, default_value_t = VShape::Both)]
    pub v: VShape,
    #[arg(long, value_enum, default_value_t = UShape::Ones)]
    pub u: UShape,
    /// Length grid (comma-separated); default 1024,4096,16384,65536.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub n: Option<Vec<usize>>,
    /// Head dimension (default 128 for single-plane, 16 for uniform).
    #[arg(long)]
    pub head_dim: Option<usize>,
    /// Standard-schedule base for the rank-1 suites.
    #[arg(long, default_value_t = 10_000.0)]
    pub theta: f64,
    /// Force one tolerance tier (default: strict for single-plane, loose
    /// for uniform v).
    #[arg(long, value_enum)]
    pub tier: Option<TierArg>,
    /// Random clouds in the Frobenius suite.
    #[arg(long, default_value_t = 100)]
    pub clouds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Cluster,
    Spectral,
    Sink,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Window lengths (comma-separated); default 1k..64k powers of two that
    /// fit the dumps.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub lengths: Option<Vec<usize>>,
    #[arg(long, value_enum, value_delimiter = ',', num_args = 1.., default_value = "cluster,spectral,sink")]
    pub metrics: Vec<Metric>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub layers: Option<Vec<u32>>,
    /// Query heads to analyze.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub heads: Option<Vec<u32>>,
    /// Pairs drawn per pairwise statistic when sampling.
    #[arg(long, default_value_t = 200_000)]
    pub pair_budget: usize,
    /// Windows shorter than this are enumerated exactly.
    #[arg(long, default_value_t = 2048)]
    pub exact_below: usize,
    /// Apply the length-dependent logit temperature in sink attention.
    #[arg(long)]
    pub temperature_scaling: bool,
}

#[derive(Debug, Args)]
pub struct RopeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub variant: VariantArgs,
    /// Take the schedule (and head_dim check) from this manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Rotate every row as if it sat at position 0 (identity).
    #[arg(long)]
    pub positions_zero: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 2048)]
    pub n: usize,
    #[arg(long, default_value_t = 16)]
    pub head_dim: usize,
    #[arg(long, default_value_t = 256)]
    pub train_len: u64,
    #[arg(long, default_value_t = 8.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn variant_flag_rules() {
        let v = VariantArgs {
            variant: Some(VariantKind::RopeId),
            train_len: Some(4096),
            ..Default::default()
        };
        assert_eq!(v.build().unwrap(), Some(RopeVariant::rope_id(4096)));
        let missing = VariantArgs {
            variant: Some(VariantKind::HighFrequency),
            ..Default::default()
        };
        assert!(matches!(missing.build(), Err(CliError::Usage(_))));
        let stray = VariantArgs {
            variant: Some(VariantKind::Standard),
            fraction: Some(0.5),
            ..Default::default()
        };
        assert!(matches!(stray.build(), Err(CliError::Usage(_))));
        let orphan = VariantArgs {
            theta: Some(10.0),
            ..Default::default()
        };
        assert!(matches!(orphan.build(), Err(CliError::Usage(_))));
        assert_eq!(VariantArgs::default().build().unwrap(), None);
    }
}
