//! `pooljudge`: evaluate text-to-video runs, pool and resolve extra
//! relevance labels, and analyse what the new labels change.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use pooljudge_core::analysis::{DEFAULT_OVERLAP_DEPTH, DEFAULT_RBO_PERSISTENCE};
use pooljudge_core::metrics::{ZeroPositivePolicy, DEFAULT_KS};
use pooljudge_core::pooling::{DEFAULT_DOUBLE_LABEL_FRACTION, DEFAULT_POOL_DEPTH};
use pooljudge_core::stats::{DEFAULT_RESAMPLES, DEFAULT_SAMPLE_SIZES};
use pooljudge_core::textsim::{DEFAULT_NGRAM, DEFAULT_TOP_K};
use pooljudge_service::DEFAULT_LEASE_SECS;

use output::OutputArgs;

const FORMATS: &str = "\
File formats:
  run        query_id item_id rank score run_tag   (whitespace separated; rank from 1)
  qrels      query_id item_id 0|1 [source]         (source: original | pooled:sysA,sysB | merged)
  queries    query_id<TAB>train|test<TAB>caption
  items      one item id per line
  label log  one JSON object per line: {pair_id, query_id, item_id, rater_id, label, ts}
             (pair_id is query_id::item_id; label relevant, irrelevant or escalated)
Lines starting with # and blank lines are ignored.

Exit status: 0 success, 1 invalid input or arguments, 2 file could not be read or written.";

#[derive(Parser)]
#[command(name = "pooljudge", version, about, after_long_help = FORMATS)]
struct Cli {
    /// Worker threads for parallel work [default: one per core]
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// More log output on stderr (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score runs against one or more relevance files
    Eval(EvalArgs),
    /// Compare a run under original and corrected labels as `A (B + C)`
    Delta(DeltaArgs),
    /// Collect unjudged top-ranked pairs from several runs
    Pool(PoolArgs),
    /// Write the labeling jobs for a pool
    Plan(PlanArgs),
    /// Resolve a label log into relevance judgments by majority vote
    Resolve(ResolveArgs),
    /// Inter-annotator agreement of a label log
    Agreement(AgreementArgs),
    /// Top-of-ranking overlap and rank-biased overlap between runs
    Overlap(OverlapArgs),
    /// Leave-one-system-out scores for pooled labels
    Ablate(AblateArgs),
    /// Positive counts, positive ranks and caption length histograms
    Dist(DistArgs),
    /// Bootstrap deviation of a mean score at several sample sizes
    Bootstrap(BootstrapArgs),
    /// Similarity of test captions to the training captions
    Textsim(TextsimArgs),
    /// Run the annotation HTTP service
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ZeroPositive {
    /// Drop queries without a known positive from the averages
    Exclude,
    /// Keep them with every metric at zero
    Zero,
}

impl From<ZeroPositive> for ZeroPositivePolicy {
    fn from(z: ZeroPositive) -> Self {
        match z {
            ZeroPositive::Exclude => ZeroPositivePolicy::Exclude,
            ZeroPositive::Zero => ZeroPositivePolicy::ScoreZero,
        }
    }
}

#[derive(Args)]
#[command(after_long_help = FORMATS)]
struct EvalArgs {
    /// Run file; repeat for several systems
    #[arg(long, required = true)]
    run: Vec<PathBuf>,
    /// Relevance file; repeated files are merged, relevant labels winning
    #[arg(long, required = true)]
    qrels: Vec<PathBuf>,
    /// Cutoffs, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
    k: Vec<usize>,
    /// Treatment of judged queries with no known positive
    #[arg(long, value_enum, default_value_t = ZeroPositive::Exclude)]
    zero_positive: ZeroPositive,
    /// Renumber rank gaps and ties instead of rejecting the run
    #[arg(long)]
    lenient: bool,
    /// Item list; every ranked and judged item must appear in it
    #[arg(long)]
    items: Option<PathBuf>,
    /// Query file; with --items, ranked and judged queries must appear in it
    #[arg(long, requires = "items")]
    queries: Option<PathBuf>,
    /// Also write per-query scores to <PREFIX>.per_query.csv
    #[arg(long)]
    per_query: bool,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
#[command(after_long_help = FORMATS)]
struct DeltaArgs {
    #[arg(long)]
    run: PathBuf,
    /// Original relevance file(s)
    #[arg(long, required = true)]
    original: Vec<PathBuf>,
    /// Corrected relevance file(s), e.g. the original file plus resolved pool labels
    #[arg(long, required = true)]
    corrected: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
    k: Vec<usize>,
    #[arg(long)]
    lenient: bool,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
#[command(after_long_help = FORMATS)]
struct PoolArgs {
    /// Contributing run; repeat for each system
    #[arg(long, required = true)]
    run: Vec<PathBuf>,
    /// Existing judgments; pairs judged here are left out of the pool
    #[arg(long)]
    seed_qrels: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_POOL_DEPTH)]
    depth: usize,
    #[arg(long)]
    lenient: bool,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct PlanArgs {
    /// Pool JSON written by `pool`
    #[arg(long)]
    pool: PathBuf,
    /// Share of pairs that get a second label
    #[arg(long, default_value_t = DEFAULT_DOUBLE_LABEL_FRACTION)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
#[command(after_long_help = FORMATS)]
struct ResolveArgs {
    /// Label log (JSON lines)
    #[arg(long)]
    log: PathBuf,
    /// Pool JSON; attaches the contributing systems to each resolved label
    #[arg(long)]
    pool: Option<PathBuf>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
#[command(after_long_help = FORMATS)]
struct AgreementArgs {
    #[arg(long)]
    log: PathBuf,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
#[command(after_long_help = FORMATS)]
struct OverlapArgs {
    /// At least two run files
    #[arg(long, required = true)]
    run: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_OVERLAP_DEPTH)]
    depth: usize,
    /// RBO persistence
    #[arg(long, default_value_t = DEFAULT_RBO_PERSISTENCE)]
    p: f64,
    /// Truncated RBO instead of the extrapolated form
    #[arg(long)]
    truncated: bool,
    #[arg(long)]
    lenient: bool,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
#[command(after_long_help = FORMATS)]
struct AblateArgs {
    /// Run file of every pooled system
    #[arg(long, required = true)]
    run: Vec<PathBuf>,
    #[arg(long, required = true)]
    original: Vec<PathBuf>,
    /// Resolved pool labels with per-system attribution
    #[arg(long, required = true)]
    pooled: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 5, 10])]
    k: Vec<usize>,
    /// Only this system [default: every run]
    #[arg(long)]
    system: Option<String>,
    #[arg(long)]
    lenient: bool,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
#[command(after_long_help = FORMATS)]
struct DistArgs {
    #[arg(long, required = true)]
    qrels: Vec<PathBuf>,
    /// Runs whose positive ranks are histogrammed
    #[arg(long)]
    run: Vec<PathBuf>,
    /// Query file; restricts the population to test queries and adds length histograms
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    lenient: bool,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
#[command(after_long_help = FORMATS)]
struct BootstrapArgs {
    /// Per-query scores: one number (or `query_id score`) per line, or CSV with --column
    #[arg(long, conflicts_with_all = ["run", "qrels"], required_unless_present = "run")]
    scores: Option<PathBuf>,
    /// CSV column holding the scores
    #[arg(long, requires = "scores")]
    column: Option<String>,
    /// Score this run instead of reading scores
    #[arg(long, requires = "qrels")]
    run: Option<PathBuf>,
    #[arg(long)]
    qrels: Vec<PathBuf>,
    /// Metric taken per query from the run: C@K, R@K or AP
    #[arg(long, default_value = "C@1")]
    metric: String,
    /// Sample sizes, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SAMPLE_SIZES)]
    n: Vec<usize>,
    /// Resamples per sample size
    #[arg(long, default_value_t = DEFAULT_RESAMPLES)]
    b: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
#[command(after_long_help = FORMATS)]
struct TextsimArgs {
    /// Query file with train and test captions
    #[arg(long)]
    queries: PathBuf,
    /// Character n-gram length
    #[arg(long, default_value_t = DEFAULT_NGRAM)]
    n: usize,
    /// Train neighbours averaged per test caption
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    k: usize,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
#[command(after_long_help = FORMATS)]
struct ServeArgs {
    /// Pool JSON written by `pool`
    #[arg(long)]
    pool: PathBuf,
    /// Query file supplying captions
    #[arg(long)]
    queries: PathBuf,
    /// Runs available to /api/metrics
    #[arg(long)]
    run: Vec<PathBuf>,
    /// Original judgments merged into live metrics
    #[arg(long)]
    original: Vec<PathBuf>,
    /// Append-only label log; replayed on start
    #[arg(long)]
    log: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LEASE_SECS)]
    lease_secs: i64,
    #[arg(long, default_value_t = DEFAULT_DOUBLE_LABEL_FRACTION)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: std::net::SocketAddr,
    /// Media location per item; `{item}` is replaced by the item id
    #[arg(long, default_value = "/media/{item}.mp4")]
    media_uri: String,
    /// Text file with annotation guidelines [default: built-in text]
    #[arg(long)]
    guidelines: Option<PathBuf>,
    #[arg(long)]
    lenient: bool,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    init_logging(cli.verbose);
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::warn!("could not size thread pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Eval(a) => commands::eval(a),
        Command::Delta(a) => commands::delta(a),
        Command::Pool(a) => commands::pool(a),
        Command::Plan(a) => commands::plan(a),
        Command::Resolve(a) => commands::resolve(a),
        Command::Agreement(a) => commands::agreement(a),
        Command::Overlap(a) => commands::overlap(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Dist(a) => commands::dist(a),
        Command::Bootstrap(a) => commands::bootstrap(a),
        Command::Textsim(a) => commands::textsim(a),
        Command::Serve(a) => commands::serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
