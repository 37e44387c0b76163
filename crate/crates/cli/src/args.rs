use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "prefrank", version, about = "Rank models from pairwise preference battles")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Master seed for every random stream [default: drawn from system entropy and recorded]
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads [default: available parallelism]
    #[arg(long, global = true)]
    #[serde(skip)]
    pub threads: Option<usize>,

    /// Format of tabular outputs [default: json for rank, csv for the other tables]
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// Config file of flag settings (JSON object or `key = value` lines); command-line flags win [default: none]
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Directory receiving the outputs and manifest.json
    #[arg(long, global = true, default_value = ".")]
    #[serde(skip)]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Fit scores, intervals and approximate ranks for every model
    Rank(RankArgs),
    /// Estimate the win matrix with per-entry intervals
    Winmatrix(WinMatrixArgs),
    /// Plan the next pair assignments of the active sampler
    SamplePlan(SamplePlanArgs),
    /// Flag voters whose votes disagree with the historical pool
    Detect(DetectArgs),
    /// Run a simulation experiment
    #[command(subcommand)]
    Simulate(SimulateCommand),
    /// Refit and rank on growing prefixes of a log
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Rank(_) => "rank",
            Command::Winmatrix(_) => "winmatrix",
            Command::SamplePlan(_) => "sample-plan",
            Command::Detect(_) => "detect",
            Command::Simulate(SimulateCommand::Coverage(_)) => "simulate coverage",
            Command::Simulate(SimulateCommand::Efficiency(_)) => "simulate efficiency",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulateCommand {
    /// Coverage and width of score intervals on synthetic battles
    Coverage(CoverageArgs),
    /// Uniform versus adaptive sampling width curves
    Efficiency(EfficiencyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BothBad {
    Tie,
    Exclude,
}

#[derive(Debug, Args, Serialize)]
pub struct LogInput {
    /// Battle log, one JSON object per line
    pub log: PathBuf,

    /// Model registry (JSON array of ids) fixing index order [default: order of first appearance]
    #[arg(long)]
    pub registry: Option<PathBuf>,

    /// Treatment of "both are bad" votes
    #[arg(long, value_enum, default_value_t = BothBad::Tie)]
    pub both_bad: BothBad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bt,
    Npbt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Interval {
    Sandwich,
    Bootstrap,
    Delta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Multiplicity {
    None,
    Chi2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NpReading {
    PathAverage,
    LiteralOdds,
}

#[derive(Debug, Args, Serialize)]
pub struct RankSettings {
    /// Miscoverage level of the intervals
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,

    /// Score: reweighted Bradley-Terry or the nonparametric score
    #[arg(long, value_enum, default_value_t = Method::Bt)]
    pub method: Method,

    /// Interval construction (npbt always uses the delta method)
    #[arg(long, value_enum, default_value_t = Interval::Sandwich)]
    pub interval: Interval,

    /// Intervals used for ranks: marginal or the simultaneous chi-square set
    #[arg(long, value_enum, default_value_t = Multiplicity::Chi2)]
    pub multiplicity: Multiplicity,

    /// Ridge penalty on the free coefficients; 0 turns on the separation check
    #[arg(long, default_value_t = 1e-6)]
    pub ridge: f64,

    /// Bootstrap replicates
    #[arg(long, default_value_t = 1000)]
    pub boot_reps: usize,

    /// Reading of the nonparametric closed form
    #[arg(long, value_enum, default_value_t = NpReading::PathAverage)]
    pub np_reading: NpReading,

    /// Use the full win-matrix covariance in delta-method intervals [default: off]
    #[arg(long)]
    pub full_covariance: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct RankArgs {
    #[command(flatten)]
    pub input: LogInput,
    #[command(flatten)]
    pub settings: RankSettings,
}

#[derive(Debug, Args, Serialize)]
pub struct WinMatrixArgs {
    #[command(flatten)]
    pub input: LogInput,

    /// Miscoverage level of the per-entry intervals
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceSource {
    Ipw,
    PerVote,
}

#[derive(Debug, Args, Serialize)]
pub struct SamplerSettings {
    /// Mixing weight of the uniform floor
    #[arg(long, default_value_t = 0.05)]
    pub floor: f64,

    /// Round-robin observations per pair before the adaptive rule starts
    #[arg(long, default_value_t = 2)]
    pub warmup_rounds: u64,

    /// Variance driving the allocation rule
    #[arg(long, value_enum, default_value_t = VarianceSource::Ipw)]
    pub variance: VarianceSource,
}

#[derive(Debug, Args, Serialize)]
pub struct SamplePlanArgs {
    #[command(flatten)]
    pub input: LogInput,

    /// Number of assignments to plan
    #[arg(long, default_value_t = 10)]
    pub k: usize,

    #[command(flatten)]
    pub sampler: SamplerSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    Upper,
    Lower,
    Both,
}

#[derive(Debug, Args, Serialize)]
pub struct DetectArgs {
    #[command(flatten)]
    pub input: LogInput,

    /// Secret key seeding the checkpoint schedules [default: none; this or --secret-file is required]
    #[arg(long, conflicts_with = "secret_file")]
    #[serde(skip)]
    pub secret: Option<String>,

    /// File holding the secret key (read as raw bytes) [default: none]
    #[arg(long)]
    pub secret_file: Option<PathBuf>,

    /// Family-wise level across the checkpoints of one voter
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,

    /// Direction of the per-vote test
    #[arg(long, value_enum, default_value_t = Sidedness::Upper)]
    pub sidedness: Sidedness,

    /// Keep each voter's own earlier votes in the reference pool [default: off]
    #[arg(long)]
    pub include_own_votes: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Uniform,
    Adaptive,
}

#[derive(Debug, Args, Serialize)]
pub struct CoverageArgs {
    /// Model counts; several values run a sweep
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub m: Vec<usize>,

    /// Coefficients are drawn from beta(1/gamma, 1/gamma)
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,

    /// Multiplier applied to the coefficient draws
    #[arg(long, default_value_t = 4.0)]
    pub scale: f64,

    /// Battles per trial
    #[arg(long, default_value_t = 20_000)]
    pub t: usize,

    /// Independent trials
    #[arg(long, default_value_t = 200)]
    pub trials: usize,

    /// Miscoverage level
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,

    /// Pair sampling policy
    #[arg(long, value_enum, default_value_t = Sampling::Uniform)]
    pub sampling: Sampling,

    /// Ridge penalty of each fit
    #[arg(long, default_value_t = 1e-6)]
    pub ridge: f64,

    /// Bootstrap replicates per trial [default: no bootstrap]
    #[arg(long)]
    pub bootstrap_reps: Option<usize>,

    #[command(flatten)]
    pub sampler: SamplerSettings,
}

#[derive(Debug, Args, Serialize)]
pub struct EfficiencyArgs {
    /// Model count
    #[arg(long, default_value_t = 20)]
    pub m: usize,

    /// Coefficients are drawn from beta(1/gamma, 1/gamma)
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,

    /// Multiplier applied to the coefficient draws
    #[arg(long, default_value_t = 4.0)]
    pub scale: f64,

    /// Independent ground truths
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,

    /// Miscoverage level
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,

    /// Battles per run
    #[arg(long, default_value_t = 60_000)]
    pub horizon: usize,

    /// Spacing of the win-matrix width curve
    #[arg(long, default_value_t = 500)]
    pub grid_step: usize,

    /// Battle counts at which the Bradley-Terry model is refitted
    #[arg(long, value_delimiter = ',', default_value = "2000,4000,6000,8000,10000,12000,14000,16000,18000,20000")]
    pub checkpoints: Vec<usize>,

    /// Win-matrix width defining samples-to-precision
    #[arg(long, default_value_t = 0.2)]
    pub target_width: f64,

    /// Ridge penalty of each fit
    #[arg(long, default_value_t = 1e-6)]
    pub ridge: f64,

    #[command(flatten)]
    pub sampler: SamplerSettings,
}

#[derive(Debug, Args, Serialize)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub input: LogInput,

    /// Prefix lengths to refit at; values past the end of the log are truncated [default: none; required]
    #[arg(long, value_delimiter = ',', required = true)]
    pub checkpoints: Vec<usize>,

    #[command(flatten)]
    pub settings: RankSettings,
}
