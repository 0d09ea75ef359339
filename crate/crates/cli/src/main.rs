mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mgcgru::Mode;

#[derive(Parser, Debug)]
#[command(name = "mgcgru", version, about = "Relationship-aware stock movement prediction")]
struct Cli {
    /// Log progress (same as RUST_LOG=info).
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic market with planted lead-lag structure.
    Synth(SynthArgs),
    /// Build adjacency and Laplacian matrices and report densities.
    BuildGraphs(BuildGraphsArgs),
    /// Train a model and write checkpoint, history and manifest.
    Train(TrainArgs),
    /// Score a checkpoint or a predictions file.
    Evaluate(EvaluateArgs),
    /// Train once per lag and tabulate test accuracy and MCC.
    SweepLag(SweepArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Directory holding prices.csv, shareholding.csv, industry.csv and
    /// topicality.csv; individual file flags take precedence.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    /// `date,stock_id,open,high,low,volume,close` rows.
    #[arg(long)]
    pub prices: Option<PathBuf>,
    /// `holder_id,held_id,ratio` rows.
    #[arg(long)]
    pub shareholding: Option<PathBuf>,
    /// `stock_id,industry,registered_capital` rows.
    #[arg(long)]
    pub industry: Option<PathBuf>,
    /// `stock_id,topic` rows.
    #[arg(long)]
    pub topicality: Option<PathBuf>,
    /// Stock ids, one per line, fixing the node order.
    #[arg(long)]
    pub universe: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// key = value file; flags given on the command line override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// single-S, single-I, single-T, multi, dynamic or none [default: multi]
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    /// Days per input window [default: 5]
    #[arg(long)]
    pub lag: Option<usize>,
    /// Graph filter kernel size [default: 1]
    #[arg(long)]
    pub k: Option<usize>,
    /// Adam learning rate [default: 0.01]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Windows per batch [default: 32]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Maximum epochs [default: 200]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Epochs without validation improvement before stopping [default: 10]
    #[arg(long)]
    pub patience: Option<usize>,
    /// Seeds initialization and shuffling [default: 42]
    #[arg(long)]
    pub seed: Option<u64>,
    /// First graph layer width [default: 16]
    #[arg(long)]
    pub c1: Option<usize>,
    /// Second graph layer width [default: 32]
    #[arg(long)]
    pub c: Option<usize>,
    /// GRU hidden width [default: 32]
    #[arg(long)]
    pub h: Option<usize>,
    /// GRU output width [default: 32]
    #[arg(long)]
    pub g: Option<usize>,
    /// Shuffle training batches between epochs.
    #[arg(long)]
    pub shuffle: bool,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Fixture directory to create.
    #[arg(long)]
    pub out: PathBuf,
    /// key = value file with generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// [default: 20]
    #[arg(long)]
    pub n_stocks: Option<usize>,
    /// Business days [default: 1000]
    #[arg(long)]
    pub n_days: Option<usize>,
    /// [default: 4]
    #[arg(long)]
    pub n_industries: Option<usize>,
    /// [default: 1]
    #[arg(long)]
    pub leaders_per_industry: Option<usize>,
    /// Lead strength β [default: 0.8]
    #[arg(long)]
    pub beta: Option<f64>,
    /// Follower noise σ [default: 0.01]
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Leader return volatility [default: 0.02]
    #[arg(long)]
    pub leader_sigma: Option<f64>,
    /// Topics per industry [default: 4]
    #[arg(long)]
    pub topic_count: Option<usize>,
    /// Scramble shareholding and topics so only the industry graph is informative.
    #[arg(long)]
    pub decoy: bool,
    /// [default: 7]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct BuildGraphsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint written by `train`.
    #[arg(long, conflicts_with = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// Score `day,stock_id,probability,label` rows instead of running a model.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Lag of the checkpoint; defaults to the config.txt written next to it.
    #[arg(long)]
    pub lag: Option<usize>,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Only score stocks listed in this file.
    #[arg(long)]
    pub subset: Option<PathBuf>,
    /// Probability above which a prediction counts as up.
    #[arg(long, default_value_t = mgcgru::metrics::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma-separated window lengths.
    #[arg(long, value_delimiter = ',', default_value = "3,5,7,9,11")]
    pub lags: Vec<usize>,
    /// Only score stocks listed in this file.
    #[arg(long)]
    pub subset: Option<PathBuf>,
    /// Probability above which a prediction counts as up.
    #[arg(long, default_value_t = mgcgru::metrics::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Mode to check; all modes when omitted.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    /// Graph filter kernel size.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Seeds the random instance.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Test hook: perturb the analytic gradient of this tensor.
    #[arg(long)]
    pub corrupt_tensor: Option<String>,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: mgcgru::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::BuildGraphs(a) => commands::build_graphs(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::SweepLag(a) => commands::sweep_lag(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
