use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub const OUT_ENV: &str = "CONVERSE_BENCH_OUT";

#[derive(Debug, Parser)]
#[command(name = "converse-bench", version, about = "Converse-optimal control benchmarks")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample, validate and export a dataset of fixtures.
    Generate(GenerateArgs),
    /// Re-run the three checks recorded in fixture files.
    Validate(ValidateArgs),
    /// Score a policy against the analytic optimum.
    Eval(EvalArgs),
    /// Dump one trajectory as JSON lines.
    Rollout(RolloutArgs),
    /// Strength × dimension sweep written as CSV matrices.
    Heatmap(HeatmapArgs),
    /// Dump the noise stream of a fixture as JSON lines.
    NoiseDump(NoiseDumpArgs),
    /// Serve a policy over the line-delimited JSON protocol on stdin/stdout.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Dataset configuration (YAML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Generate `--n` instances of this family with default ranges; replaces
    /// the entries of `--config`.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    /// Master seed; overrides the configuration file.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = OUT_ENV)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(required = true)]
    pub fixtures: Vec<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct ProtocolArgs {
    /// Protocol file (YAML); flags below override it.
    #[arg(long = "protocol")]
    pub protocol_file: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub first_trial: Option<u64>,
    #[arg(long)]
    pub noise_seed: Option<u64>,
    #[arg(long)]
    pub schedule_seed: Option<u64>,
    #[arg(long)]
    pub action_bound: Option<f64>,
    #[arg(long)]
    pub resamples: Option<usize>,
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub bootstrap_seed: Option<u64>,
    /// Seconds an external policy may take per query.
    #[arg(long)]
    pub timeout: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub fixture: PathBuf,
    /// oracle | zero | scaled:<κ> | linear:<file> | exec:<command>
    #[arg(long)]
    pub policy: String,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    /// Label for the CSV row; defaults to the fixture file stem.
    #[arg(long)]
    pub experiment: Option<String>,
    #[arg(long, env = OUT_ENV)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    pub fixture: PathBuf,
    #[arg(long, default_value = "oracle")]
    pub policy: String,
    /// Defaults to the fixture's horizon.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub trial: u64,
    #[arg(long)]
    pub noise_seed: Option<u64>,
    #[arg(long)]
    pub schedule_seed: Option<u64>,
    #[arg(long)]
    pub action_bound: Option<f64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(required = true)]
    pub fixtures: Vec<PathBuf>,
    /// Comma-separated control strengths.
    #[arg(long, value_delimiter = ',', required = true)]
    pub strengths: Vec<f64>,
    #[arg(long, default_value = "oracle")]
    pub policy: String,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[arg(long, env = OUT_ENV)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct NoiseDumpArgs {
    pub fixture: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub trials: u64,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub noise_seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    pub fixture: PathBuf,
    /// Built-in policy to serve.
    #[arg(long, default_value = "oracle")]
    pub policy: String,
}
