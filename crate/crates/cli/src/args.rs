use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "dualformer",
    version,
    about = "Describe, count, run and check dual-level video transformer configurations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Worker threads for the parallel attention paths (results are
    /// bitwise identical for any count).
    #[arg(long, global = true, env = "DFK_THREADS", default_value_t = 1)]
    pub threads: usize,
}

/// A `TxHxW` extent such as `32x224x224`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extent(pub [usize; 3]);

impl FromStr for Extent {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(['x', 'X']).collect();
        if parts.len() != 3 {
            return Err(format!("expected TxHxW, got {s:?}"));
        }
        let mut out = [0; 3];
        for (slot, p) in out.iter_mut().zip(&parts) {
            *slot = p.trim().parse().map_err(|_| format!("bad extent component {p:?} in {s:?}"))?;
            if *slot == 0 {
                return Err(format!("extent {s:?} has a zero axis"));
            }
        }
        Ok(Extent(out))
    }
}

impl fmt::Display for Extent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [t, h, w] = self.0;
        write!(f, "{t}x{h}x{w}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
    Csv,
}

/// Which model to build.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Compiled-in preset: tiny, small, base or micro.
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,

    /// JSON config file; a "base" key starts from a preset.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Clip extent override, `TxHxW`.
    #[arg(long)]
    pub input: Option<Extent>,

    /// Number of output classes.
    #[arg(long)]
    pub classes: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,

    /// Write the report here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-stage maps, windows, pyramids, token and prior counts (default preset: tiny).
    Describe {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Exact parameter count per layer (default preset: tiny).
    Params {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// MACs per layer plus the per-stage formula section (default preset: tiny).
    Flops {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Forward pass on a seeded synthetic clip (default preset: micro).
    /// `--output` receives the logits as a tensor container.
    Forward {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Write the logits tensor container here.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Load parameters from a weight manifest directory instead of
        /// initializing them from the seed.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Test hook: poison the first input element with NaN.
        #[arg(long, hide = true)]
        inject_nan: bool,
    },
    /// Implemented gradients against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Finite-difference step.
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        /// Random coordinates per check.
        #[arg(long, default_value_t = 20)]
        coords: usize,
        #[command(flatten)]
        out: OutputArgs,
        /// Test hook: corrupt every implemented gradient.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Fast paths against the brute-force oracles, plus the residual
    /// identity on the chosen model (default preset: micro).
    OracleCheck {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random instances per suite.
        #[arg(long, default_value_t = 100)]
        cases: usize,
        #[command(flatten)]
        out: OutputArgs,
        /// Test hook: corrupt every fast-path result.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Wall-clock of dual-level against full attention over a ladder of maps.
    Bench {
        /// Comma-separated map extents.
        #[arg(long, value_delimiter = ',', default_value = "4x8x8,8x16x16,8x28x28")]
        ladder: Vec<Extent>,
        /// Channel width.
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 2)]
        heads: usize,
        /// Local window; must divide every rung.
        #[arg(long, default_value = "2x4x4")]
        window: Extent,
        /// Timed runs per rung.
        #[arg(long, default_value_t = 3)]
        repeat: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Replicate 2D kernels of a weight manifest along time.
    Inflate {
        /// Directory holding the input manifest.
        input_dir: PathBuf,
        /// Directory for the inflated manifest.
        output_dir: PathBuf,
        /// Temporal extent of the inflated kernels.
        #[arg(long)]
        t_extent: usize,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extents_parse() {
        assert_eq!("32x224x224".parse::<Extent>().unwrap(), Extent([32, 224, 224]));
        assert!("32x224".parse::<Extent>().is_err());
        assert!("0x4x4".parse::<Extent>().is_err());
        assert!("ax4x4".parse::<Extent>().is_err());
        assert_eq!(Extent([4, 8, 8]).to_string(), "4x8x8");
    }

    #[test]
    fn cli_is_well_formed() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
