use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cpsel::{AggregationSpec, Error};

#[derive(Parser)]
#[command(
    name = "cpsel",
    version,
    about = "Change-point detection with exact selective inference"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Detect a change point in a CSV sequence and test it selectively
    Detect(DetectArgs),
    /// Estimate null false-positive rates over a correlation/rule grid
    SimulateFpr(SimulateFprArgs),
    /// Histogram of null p-values with a Kolmogorov-Smirnov uniformity check
    PvalueHist(PvalueHistArgs),
    /// Conditional power expansion for a detected change
    PowerCurve(PowerCurveArgs),
}

#[derive(Debug, Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Copy, Clone, ValueEnum)]
pub enum AggChoice {
    #[value(name = "l-inf")]
    LInf,
    #[value(name = "l1")]
    L1,
    #[value(name = "top-k")]
    TopK,
    #[value(name = "double-cusum")]
    DoubleCusum,
}

#[derive(Debug, Copy, Clone, ValueEnum)]
pub enum KindChoice {
    Selective,
    Naive,
}

/// Aggregation rule flags shared by every command that runs a detection.
#[derive(Args)]
pub struct AggArgs {
    /// Aggregation rule applied to the sorted CUSUM magnitudes
    #[arg(long, value_enum)]
    pub agg: AggChoice,
    /// Number of leading ranks summed by top-k
    #[arg(long, value_name = "K")]
    pub k: Option<usize>,
    /// Rank-weight exponent of double-cusum (default 0.5)
    #[arg(long, value_name = "PHI")]
    pub phi: Option<f64>,
}

impl AggArgs {
    pub fn to_spec(&self) -> cpsel::Result<AggregationSpec> {
        if self.k.is_some() && !matches!(self.agg, AggChoice::TopK) {
            return Err(Error::InvalidArgument(
                "--k applies only to --agg top-k".into(),
            ));
        }
        if self.phi.is_some() && !matches!(self.agg, AggChoice::DoubleCusum) {
            return Err(Error::InvalidArgument(
                "--phi applies only to --agg double-cusum".into(),
            ));
        }
        Ok(match self.agg {
            AggChoice::LInf => AggregationSpec::LInf,
            AggChoice::L1 => AggregationSpec::L1,
            AggChoice::TopK => {
                let k = self
                    .k
                    .ok_or_else(|| Error::InvalidArgument("--agg top-k requires --k".into()))?;
                AggregationSpec::TopK { k }
            }
            AggChoice::DoubleCusum => AggregationSpec::DoubleCusum {
                phi: self.phi.unwrap_or(0.5),
            },
        })
    }
}

/// Covariance source flags; exactly one of the three sources must be given.
#[derive(Args)]
pub struct CovArgs {
    /// AR(1) correlation of the time covariance
    #[arg(long, value_name = "RHO")]
    pub xi: Option<f64>,
    /// AR(1) correlation of the dimension covariance
    #[arg(long, value_name = "RHO")]
    pub sigma: Option<f64>,
    /// CSV file holding the full time covariance matrix
    #[arg(long, value_name = "PATH", conflicts_with_all = ["xi", "sigma"])]
    pub xi_file: Option<PathBuf>,
    /// CSV file holding the full dimension covariance matrix
    #[arg(long, value_name = "PATH", conflicts_with_all = ["xi", "sigma"])]
    pub sigma_file: Option<PathBuf>,
    /// Change-free control CSV; both covariances are estimated from it
    #[arg(long, value_name = "PATH", conflicts_with_all = ["xi", "sigma", "xi_file", "sigma_file"])]
    pub control_file: Option<PathBuf>,
}

#[derive(Args)]
pub struct DetectArgs {
    /// Input CSV: one row per dimension, one column per time point
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    #[command(flatten)]
    pub agg: AggArgs,
    #[command(flatten)]
    pub cov: CovArgs,
    /// Window half-width: report every window-local estimate instead of a
    /// single change
    #[arg(long, value_name = "H")]
    pub window_h: Option<usize>,
    /// Multiply windowed selective p-values by the number of estimates
    #[arg(long, requires = "window_h")]
    pub bonferroni: bool,
    /// Write the report here instead of stdout
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Output format (detect reports are json)
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Args)]
pub struct SimulateFprArgs {
    /// Grid config JSON (schema in the README)
    #[arg(long, value_name = "PATH")]
    pub grid: PathBuf,
    /// Replace the config seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the table here instead of stdout
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Output format (the table is csv)
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Args)]
pub struct PvalueHistArgs {
    /// Dimensions of the simulated null sequences
    #[arg(long, value_name = "N")]
    pub n_dims: usize,
    /// Time points of the simulated null sequences
    #[arg(long, value_name = "T")]
    pub t_len: usize,
    /// AR(1) correlation of the time covariance
    #[arg(long, value_name = "RHO", default_value_t = 0.0)]
    pub xi: f64,
    /// AR(1) correlation of the dimension covariance
    #[arg(long, value_name = "RHO", default_value_t = 0.0)]
    pub sigma: f64,
    #[command(flatten)]
    pub agg: AggArgs,
    /// Null replicates (at least 50)
    #[arg(long, default_value_t = 1000)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Histogram bin count
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    /// Which p-value stream to bin
    #[arg(long, value_enum, default_value = "selective")]
    pub kind: KindChoice,
    /// Write the histogram here instead of stdout
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Output format
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Args)]
pub struct PowerCurveArgs {
    /// Input CSV: one row per dimension, one column per time point
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    #[command(flatten)]
    pub agg: AggArgs,
    #[command(flatten)]
    pub cov: CovArgs,
    /// Test level the expansion is anchored at
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Largest mean shift on the curve (default: the detected statistic)
    #[arg(long, value_name = "MU")]
    pub mu_max: Option<f64>,
    /// Number of curve steps past zero
    #[arg(long, default_value_t = 50)]
    pub mu_steps: usize,
    /// Write the curve here instead of stdout
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Output format (the curve is csv)
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}
