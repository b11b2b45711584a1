use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "sdcrisk",
    version,
    about = "Disclosure-risk and utility analysis for noisy count tables"
)]
pub struct Cli {
    /// JSON file of flag values keyed by long flag name; command-line flags win.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Worker threads for library parallelism (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a maximum-entropy p-table for the cell-key method.
    Ptable(PtableArgs),
    /// Rank every statistic of a table programme by averaging risk.
    Analyze(AnalyzeArgs),
    /// Simulate attacks on noisy releases
    #[command(subcommand)]
    Attack(AttackCommand),
    /// Small-area distortion estimates
    #[command(subcommand)]
    Utility(UtilityCommand),
    /// Parameter feasibility grids
    #[command(subcommand)]
    Scan(ScanCommand),
    /// Differential-privacy accounting
    #[command(subcommand)]
    Account(AccountCommand),
}

#[derive(Debug, Args, Serialize)]
pub struct PtableArgs {
    /// Target noise variance.
    #[arg(long)]
    pub v: f64,
    /// Noise bound: the table covers -E..E.
    #[arg(long)]
    pub e: u32,
    /// Smallest publishable nonzero count; only 0 is supported.
    #[arg(long, default_value_t = 0)]
    pub js: u32,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SpsnFlag {
    /// Same participants, same noise (default).
    #[arg(long, overrides_with = "no_spsn")]
    pub spsn: bool,
    /// Noise drawn independently per table.
    #[arg(long = "no-spsn", overrides_with = "spsn")]
    pub no_spsn: bool,
}

impl SpsnFlag {
    pub fn enabled(&self) -> bool {
        !self.no_spsn
    }
}

impl Serialize for SpsnFlag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_bool(self.enabled())
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SortKey {
    Ratio,
    T,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    /// Table programme JSON.
    #[arg(long)]
    pub programme: PathBuf,
    #[command(flatten)]
    pub spsn: SpsnFlag,
    /// Cardinality override, e.g. GEO=96 (repeatable).
    #[arg(long, value_name = "ID=CARD")]
    pub geo: Vec<String>,
    #[arg(long, value_enum, default_value_t = SortKey::Ratio)]
    pub sort: SortKey,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum AttackCommand {
    /// Learn the noise bound E from constraint triples (F, M, T).
    BoundDisclosure(BoundArgs),
    /// Recover true values from tuples whose margin residual is extreme.
    Margin(MarginArgs),
    /// Average independent redundant representations to remove noise.
    Averaging(AveragingArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum PTableDist {
    Uniform,
    Ptable,
}

#[derive(Debug, Args, Serialize)]
pub struct BoundArgs {
    #[arg(long, value_enum, default_value_t = PTableDist::Ptable)]
    pub dist: PTableDist,
    #[arg(long)]
    pub e: u32,
    /// Variance of the max-entropy p-table (not used with --dist uniform).
    #[arg(long)]
    pub v: Option<f64>,
    #[arg(long, default_value_t = 0.68)]
    pub alpha: f64,
    /// Monte Carlo streams; 0 reports only the analytic values.
    #[arg(long, default_value_t = 0)]
    pub streams: u64,
    /// Triples per stream (default: the required number m).
    #[arg(long)]
    pub stream_len: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct MarginArgs {
    #[arg(long)]
    pub e: u32,
    /// CSV of published tuples: internal columns followed by the total.
    #[arg(long, conflicts_with = "simulate")]
    pub input: Option<PathBuf>,
    /// Simulate this many noisy tuples instead of reading --input.
    #[arg(long)]
    pub simulate: Option<u64>,
    /// Internal categories per simulated tuple.
    #[arg(long, default_value_t = 2)]
    pub internals: usize,
    /// Variance of the simulated p-table (default: uniform on -E..E).
    #[arg(long)]
    pub v: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    CellKey,
    Laplace,
    Geometric,
    TruncatedLaplace,
}

#[derive(Debug, Args, Serialize)]
pub struct NoiseArgs {
    /// Noise mechanism (default inferred: --e without --epsilon means cell key).
    #[arg(long, value_enum)]
    pub noise: Option<NoiseKind>,
    /// Cell-key variance.
    #[arg(long)]
    pub v: Option<f64>,
    /// Noise bound for cell-key or truncated Laplace noise.
    #[arg(long)]
    pub e: Option<u32>,
    /// Per-count privacy budget for Laplace/geometric noise.
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct AveragingArgs {
    #[command(flatten)]
    pub noise: NoiseArgs,
    /// Synthetic mode: total number of summed noise terms.
    #[arg(long)]
    pub k: Option<u64>,
    /// Synthetic mode: number of averaged representations.
    #[arg(long)]
    pub t: Option<u64>,
    #[arg(long, default_value_t = 1000)]
    pub trials: u64,
    /// Programme mode: table programme JSON.
    #[arg(long, conflicts_with_all = ["k", "t"])]
    pub programme: Option<PathBuf>,
    /// Programme mode: microdata CSV (default: synthetic records).
    #[arg(long, requires = "programme")]
    pub microdata: Option<PathBuf>,
    /// Programme mode: number of synthetic records.
    #[arg(long, default_value_t = 1000)]
    pub records: usize,
    /// Programme mode: target breakdowns, comma separated, or "total".
    #[arg(long, default_value = "total")]
    pub target: String,
    #[command(flatten)]
    pub spsn: SpsnFlag,
    /// Average only the greedy-optimised subset of representations.
    #[arg(long)]
    pub optimize: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum UtilityCommand {
    /// Expected number of Laplace-distorted counts per count bin.
    Estimate(EstimateArgs),
    /// Sample noise for every area and tally distortions.
    Sample(SampleArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct AreaSource {
    /// Area CSV with columns area_id,country,f,m,t.
    #[arg(long, conflicts_with = "synthetic")]
    pub areas: Option<PathBuf>,
    /// Generate this many synthetic areas instead.
    #[arg(long)]
    pub synthetic: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub source: AreaSource,
    #[arg(long)]
    pub epsilon: f64,
    /// Relative error threshold.
    #[arg(long, default_value_t = 0.5)]
    pub re: f64,
    /// Ascending bin edges, comma separated.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0,20,40,60,80,100,200,500"
    )]
    pub bins: Vec<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    #[command(flatten)]
    pub source: AreaSource,
    #[command(flatten)]
    pub noise: NoiseArgs,
    /// Relative error thresholds (repeatable).
    #[arg(long, default_values_t = vec![0.5])]
    pub re: Vec<f64>,
    /// Bin edges for exceeding counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub bins: Vec<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ScanCommand {
    /// Bound-disclosure and averaging constraints over the V-E plane.
    Ve(ScanVeArgs),
    /// Averaging and utility constraints over the per-count budget.
    Eps(ScanEpsArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ScanVeArgs {
    #[arg(long, default_value_t = 0.5)]
    pub v_min: f64,
    #[arg(long, default_value_t = 10.0)]
    pub v_max: f64,
    #[arg(long, default_value_t = 0.5)]
    pub v_step: f64,
    #[arg(long, default_value_t = 1)]
    pub e_min: u32,
    #[arg(long, default_value_t = 10)]
    pub e_max: u32,
    /// Triples available to an attacker (repeatable).
    #[arg(long)]
    pub m_avail: Vec<f64>,
    /// Averaging risk k/t² to evaluate at every point.
    #[arg(long)]
    pub kt2: Option<f64>,
    #[arg(long, default_value_t = 0.68)]
    pub alpha: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ScanEpsArgs {
    #[arg(long, default_value_t = 0.01)]
    pub eps_min: f64,
    #[arg(long, default_value_t = 1.5)]
    pub eps_max: f64,
    #[arg(long, default_value_t = 0.001)]
    pub eps_step: f64,
    /// Averaging risks k/t² (repeatable, at least one).
    #[arg(long, required = true)]
    pub kt2: Vec<f64>,
    /// Tolerated absolute error of a small-area count.
    #[arg(long, default_value_t = 20.0)]
    pub e_alpha: f64,
    /// Outputs per small area that must all stay within E_alpha (repeatable).
    #[arg(long, default_values_t = vec![68.0])]
    pub t_lau: Vec<f64>,
    #[arg(long, default_value_t = 0.68)]
    pub alpha: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum AccountCommand {
    /// Tightest delta of a discrete noise distribution at given epsilons.
    Delta(DeltaArgs),
    /// Global sensitivity of a programme's outputs.
    Sensitivity(SensitivityArgs),
    /// Per-table budget presets and the implied noise.
    Budget(BudgetArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaDist {
    Ptable,
    Uniform,
    Geometric,
}

#[derive(Debug, Args, Serialize)]
pub struct DeltaArgs {
    #[arg(long, value_enum, default_value_t = DeltaDist::Ptable)]
    pub dist: DeltaDist,
    #[arg(long)]
    pub v: Option<f64>,
    #[arg(long)]
    pub e: Option<u32>,
    /// Budget of the truncated geometric noise.
    #[arg(long)]
    pub noise_epsilon: Option<f64>,
    /// Truncation of the geometric noise.
    #[arg(long)]
    pub cutoff: Option<u32>,
    /// Epsilons to evaluate (repeatable).
    #[arg(long, required = true)]
    pub epsilon: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SensitivityArgs {
    #[arg(long)]
    pub programme: PathBuf,
    #[command(flatten)]
    pub spsn: SpsnFlag,
    /// Restrict to these table ids (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub tables: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum BudgetModeArg {
    Rounded,
    Exact,
}

#[derive(Debug, Args, Serialize)]
pub struct BudgetArgs {
    /// Global privacy budget (repeatable).
    #[arg(long = "global", required = true)]
    pub global: Vec<f64>,
    #[arg(long, value_enum, default_value_t = BudgetModeArg::Rounded)]
    pub mode: BudgetModeArg,
    /// Outputs sharing the global budget evenly.
    #[arg(long)]
    pub outputs: Option<u32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
