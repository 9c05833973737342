use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use panelvar::imputers::ImputerKind;
use panelvar::PanelFormat;

pub const DEFAULT_SEED: u64 = 20240101;
pub const THREADS_ENV: &str = "PANELVAR_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "panelvar",
    version,
    about = "Standard errors for single-cell counterfactual imputation in panel data",
    args_override_self = true
)]
pub struct Cli {
    /// Worker threads for replications and residual grids. Defaults to the
    /// PANELVAR_THREADS environment variable, else all cores. 1 runs
    /// sequentially.
    #[arg(long, global = true, value_name = "K")]
    pub threads: Option<usize>,

    /// File of `key = value` lines supplying any flag; flags given on the
    /// command line take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Point estimate and the four standard errors for one treated cell.
    Estimate(EstimateArgs),
    /// Placebo study: spread of the imputation error, mean SEs and coverage.
    Placebo(PlaceboArgs),
    /// Power curves over a grid of imposed effects.
    Power(PowerArgs),
    /// Calibrate the realistic DGP and report heteroskedasticity diagnostics.
    DgpFit(DgpFitArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Imputer {
    Twfe,
    Sc,
    Sdid,
}

impl From<Imputer> for ImputerKind {
    fn from(i: Imputer) -> Self {
        match i {
            Imputer::Twfe => ImputerKind::Twfe,
            Imputer::Sc => ImputerKind::Sc,
            Imputer::Sdid => ImputerKind::Sdid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    Wide,
    Long,
}

impl From<InputFormat> for PanelFormat {
    fn from(f: InputFormat) -> Self {
        match f {
            InputFormat::Wide => PanelFormat::Wide,
            InputFormat::Long => PanelFormat::Long,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Divisor {
    #[value(name = "nt-1")]
    NtMinusOne,
    #[value(name = "nt-2")]
    NtMinusTwo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Sampling {
    Uniform,
    Propensity,
}

/// Options shared by every command that reads a panel file.
#[derive(Debug, Clone, Args)]
pub struct PanelInput {
    /// Panel CSV: wide (`unit`, then one column per period) or long
    /// (`unit,period,value`).
    #[arg(long, value_name = "PATH")]
    pub panel: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "wide")]
    pub input_format: InputFormat,

    /// Drop every period after this label.
    #[arg(long, value_name = "PERIOD")]
    pub truncate_at: Option<String>,
}

/// Imputer and estimator tuning.
#[derive(Debug, Clone, Args)]
pub struct Tuning {
    #[arg(long, value_enum, default_value = "sc")]
    pub imputer: Imputer,

    /// Ridge on unit weights: a number, or `auto` (0 for SC, the
    /// first-difference rule for SDID).
    #[arg(long, default_value = "auto")]
    pub ridge: String,

    /// Divisor of the marginal estimator.
    #[arg(long, value_enum, default_value = "nt-1")]
    pub divisor: Divisor,
}

#[derive(Debug, Clone, Args)]
pub struct Output {
    #[arg(long, value_enum, default_value = "csv")]
    pub format: OutputFormat,

    /// Output file; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub input: PanelInput,

    /// Label of the treated unit.
    #[arg(long, value_name = "LABEL")]
    pub treated_unit: Option<String>,

    /// Label of the treated period.
    #[arg(long, value_name = "LABEL")]
    pub treated_period: Option<String>,

    /// Name for the dataset column; defaults to the file stem.
    #[arg(long)]
    pub dataset: Option<String>,

    #[command(flatten)]
    pub tuning: Tuning,

    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").args(["case", "params", "panel"]).multiple(false)))]
pub struct PlaceboArgs {
    /// Stylized design 1-4 (homoskedastic, unit, time, two-way).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub case: Option<u8>,

    /// DGP parameters written by `dgp-fit`.
    #[arg(long, value_name = "PATH")]
    pub params: Option<PathBuf>,

    #[command(flatten)]
    pub input: PanelInput,

    /// Units in a stylized panel.
    #[arg(long, default_value_t = 40)]
    pub n_units: usize,

    /// Periods in a stylized panel.
    #[arg(long, default_value_t = 40)]
    pub n_periods: usize,

    /// Rank of the signal when calibrating on --panel.
    #[arg(long, default_value_t = panelvar::dgp::DEFAULT_RANK)]
    pub rank: usize,

    /// Treated unit label marking assignment when calibrating on --panel.
    #[arg(long, value_name = "LABEL")]
    pub treated_unit: Option<String>,

    #[arg(long, default_value_t = 500)]
    pub reps: usize,

    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,

    /// How the treated cell is drawn; `propensity` needs a realistic DGP.
    #[arg(long, value_enum, default_value = "uniform")]
    pub sampling: Sampling,

    #[command(flatten)]
    pub tuning: Tuning,

    #[command(flatten)]
    pub output: Output,

    /// Per-replication CSV.
    #[arg(long, value_name = "PATH")]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").args(["case", "panel"]).multiple(false)))]
pub struct PowerArgs {
    /// Stylized design 1-4 (homoskedastic, unit, time, two-way).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub case: Option<u8>,

    #[command(flatten)]
    pub input: PanelInput,

    #[arg(long, default_value_t = 40)]
    pub n_units: usize,

    #[arg(long, default_value_t = 40)]
    pub n_periods: usize,

    /// Treated unit for calibrating on --panel; defaults to the last unit.
    #[arg(long, value_name = "LABEL")]
    pub treated_unit: Option<String>,

    /// Treated period for calibrating on --panel; defaults to the last
    /// period.
    #[arg(long, value_name = "LABEL")]
    pub treated_period: Option<String>,

    #[arg(long, default_value_t = 500)]
    pub reps: usize,

    /// Effect grid as lo:hi:n.
    #[arg(long, default_value = "-3:3:25", allow_hyphen_values = true)]
    pub grid: String,

    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,

    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,

    #[command(flatten)]
    pub tuning: Tuning,

    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct DgpFitArgs {
    #[command(flatten)]
    pub input: PanelInput,

    #[arg(long, default_value_t = panelvar::dgp::DEFAULT_RANK)]
    pub rank: usize,

    /// Treated unit; defaults to the last unit.
    #[arg(long, value_name = "LABEL")]
    pub treated_unit: Option<String>,

    /// Treated period; defaults to the last period.
    #[arg(long, value_name = "LABEL")]
    pub treated_period: Option<String>,

    /// Name for the dataset column; defaults to the file stem.
    #[arg(long)]
    pub dataset: Option<String>,

    #[command(flatten)]
    pub tuning: Tuning,

    /// Where to write the DGP parameters (JSON).
    #[arg(long, value_name = "PATH", default_value = "dgp_params.json")]
    pub out: PathBuf,

    /// Format of the diagnostics row printed to stdout.
    #[arg(long, value_enum, default_value = "csv")]
    pub format: OutputFormat,
}
