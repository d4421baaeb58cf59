//! `bbs`: simulate box-ball domain walls, predict their hydrodynamic profiles, solve
//! generalized Gibbs ensembles and compare simulations with predictions.

mod compare;
mod config;
mod output;
mod predict;
mod simulate;
mod tba_cmd;

use bbs_core::BbsError;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "bbs", version, about = "Box-ball system simulations and hydrodynamic predictions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo domain-wall (or homogeneous) runs; writes profile CSVs and metadata.
    Simulate(SimulateArgs),
    /// Plateau tables and broadened profiles of a domain wall, or exact finite-size speeds.
    Predict(PredictArgs),
    /// Generalized Gibbs ensemble: Y-system solution, two-temperature closed forms or series.
    Tba(TbaArgs),
    /// Compares a simulation directory with a prediction file.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Reservoir densities, given as probabilities or fugacities `z = p/(1−p)`.
#[derive(Args, Clone, Debug, Default)]
pub struct DensityArgs {
    /// Ball density of the left half.
    #[arg(long = "pL", conflicts_with = "z_left")]
    pub p_left: Option<f64>,
    /// Fugacity of the left half.
    #[arg(long = "zL")]
    pub z_left: Option<f64>,
    /// Ball density of the right half.
    #[arg(long = "pR", conflicts_with = "z_right")]
    pub p_right: Option<f64>,
    /// Fugacity of the right half.
    #[arg(long = "zR")]
    pub z_right: Option<f64>,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Lattice length.
    #[arg(long = "L")]
    pub len: Option<usize>,
    /// Carrier capacity.
    #[arg(long = "l")]
    pub level: Option<u32>,
    #[command(flatten)]
    pub density: DensityArgs,
    /// Snapshot times, comma separated.
    #[arg(long = "t", value_delimiter = ',')]
    pub times: Vec<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// First site of the right half (default: the middle).
    #[arg(long)]
    pub wall: Option<usize>,
    /// Soliton-density window width; 0 disables soliton densities.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Largest soliton amplitude resolved in windows (default l + 1).
    #[arg(long)]
    pub max_amplitude: Option<usize>,
    /// Restrict the profile output to r in [r-min, r-max).
    #[arg(long, allow_hyphen_values = true)]
    pub r_min: Option<i64>,
    #[arg(long, allow_hyphen_values = true)]
    pub r_max: Option<i64>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "BBS_THREADS")]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Run configuration to reuse (for example the `config` of a previous run's metadata).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long = "l")]
    pub level: Option<u32>,
    #[command(flatten)]
    pub density: DensityArgs,
    /// Times at which broadened profiles are sampled, comma separated.
    #[arg(long = "t", value_delimiter = ',')]
    pub times: Vec<usize>,
    /// Evaluate front widths left of each front instead of right of it.
    #[arg(long)]
    pub width_left: bool,
    /// Exact finite-size speeds and current of one soliton content instead of a domain wall.
    #[arg(long)]
    pub finite: bool,
    /// Ring length for `--finite`.
    #[arg(long = "L")]
    pub len: Option<u64>,
    /// Soliton multiplicities m_1,m_2,… for `--finite`.
    #[arg(long, value_delimiter = ',')]
    pub m: Vec<u64>,
    /// State file (one line of 0/1) for `--finite`.
    #[arg(long)]
    pub state: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Args)]
pub struct TbaArgs {
    /// Inverse temperatures β_1,…,β_s, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub betas: Vec<f64>,
    /// Tail inverse temperature β_∞.
    #[arg(long, allow_hyphen_values = true)]
    pub beta_inf: Option<f64>,
    /// Fugacities z_1,…,z_s,z_∞ (last entry is z_∞) instead of betas.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["betas", "beta_inf"])]
    pub fugacities: Vec<f64>,
    /// Two-temperature parameters instead of betas.
    #[arg(long, requires = "z", conflicts_with_all = ["betas", "fugacities"])]
    pub a: Option<f64>,
    #[arg(long)]
    pub z: Option<f64>,
    /// Number of amplitudes reported for the two-temperature closed forms.
    #[arg(long, default_value_t = 60)]
    pub amplitudes: usize,
    /// Evaluate Q_1 from the fugacity series instead of solving the Y-system.
    #[arg(long)]
    pub series: bool,
    /// Total degree of the series.
    #[arg(long, default_value_t = 10)]
    pub degree: usize,
    /// Largest fugacity accepted by the series evaluation.
    #[arg(long, default_value_t = 1.0)]
    pub guard: f64,
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CompareArgs {
    /// Simulation output directory.
    #[arg(long)]
    pub sim: PathBuf,
    /// Prediction JSON written by `bbs predict`.
    #[arg(long)]
    pub pred: PathBuf,
    /// Largest accepted plateau z-score.
    #[arg(long, default_value_t = 3.0)]
    pub tolerance: f64,
    /// Largest accepted front offset in lattice sites, on top of three standard errors.
    #[arg(long, default_value_t = 2.0)]
    pub position_tolerance: f64,
    /// Compare even if (l, pL, pR) differ between the inputs.
    #[arg(long)]
    pub allow_mismatch: bool,
    /// Machine-readable report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure classes, mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Numerical(anyhow::Error),
    Comparison(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Comparison(_) => 4,
        }
    }
}

impl From<BbsError> for Failure {
    fn from(e: BbsError) -> Self {
        match e {
            BbsError::InvalidParameter(_) | BbsError::Wrapping(_) => Failure::Config(e.into()),
            _ => Failure::Numerical(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<BbsError>() {
            Ok(b) => b.into(),
            Err(e) => Failure::Numerical(e),
        }
    }
}

pub type CmdResult = std::result::Result<(), Failure>;

pub fn config_error(msg: impl std::fmt::Display) -> Failure {
    Failure::Config(anyhow::anyhow!("{msg}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate::run(a),
        Command::Predict(a) => predict::run(a),
        Command::Tba(a) => tba_cmd::run(a),
        Command::Compare(a) => compare::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(e) => eprintln!("configuration error: {e:#}"),
                Failure::Numerical(e) => eprintln!("error: {e:#}"),
                Failure::Comparison(m) => eprintln!("comparison failed: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
