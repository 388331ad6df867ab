use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod failure;
mod io;

use failure::Failure;

#[derive(Parser)]
#[command(name = "cabs", version)]
#[command(about = "Clinical abnormality scoring, TIF rewards and report-metric analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct InputOutput {
    /// Input file; `-` reads standard input
    #[arg(long, default_value = "-")]
    pub input: PathBuf,

    /// Output file; standard output when omitted
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct Backend {
    /// Matcher backend: lexical or llm
    #[arg(long, default_value = "lexical")]
    pub matcher: String,

    /// Judge model name for the llm backend
    #[arg(long)]
    pub model: Option<String>,

    /// Chat-completions URL for the llm backend
    #[arg(long)]
    pub endpoint: Option<String>,

    /// Directory for the judge response cache
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,

    /// Cases processed concurrently; output order always follows input order
    #[arg(long, default_value_t = 4)]
    pub jobs: usize,
}

#[derive(Args, Clone)]
pub struct RewardFlags {
    #[arg(long)]
    pub alpha: Option<f64>,

    #[arg(long)]
    pub gamma: Option<f64>,

    /// PPO clip range echoed to trainers
    #[arg(long)]
    pub clip_eps: Option<f64>,

    /// KL penalty weight echoed to trainers
    #[arg(long)]
    pub beta: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Report text JSONL ({case_id, report}) to decomposition JSONL
    Extract {
        #[command(flatten)]
        io: InputOutput,
        #[command(flatten)]
        backend: Backend,
        /// Extractor: rule_based or llm
        #[arg(long, default_value = "rule_based")]
        extractor: String,
    },
    /// Case JSONL to per-case and aggregate metrics (JSON, or CSV for a .csv output)
    Eval {
        #[command(flatten)]
        io: InputOutput,
        #[command(flatten)]
        backend: Backend,
        /// macro or micro
        #[arg(long, default_value = "macro")]
        averaging: String,
    },
    /// Group-request JSONL to rewards and advantages JSONL
    Reward {
        #[command(flatten)]
        io: InputOutput,
        #[command(flatten)]
        backend: Backend,
        #[command(flatten)]
        reward: RewardFlags,
    },
    /// Ground-truth JSONL to variant pools (k = 0..5 edits per base)
    Perturb {
        #[command(flatten)]
        io: InputOutput,
        #[arg(long)]
        seed: u64,
        /// factual or full
        #[arg(long, default_value = "factual")]
        policy: String,
    },
    /// Variant pools to concordance per metric, or a score CSV to a Spearman matrix
    Analyze {
        #[command(flatten)]
        io: InputOutput,
        /// Comma-separated scorer names; all registered scorers when omitted
        #[arg(long, value_delimiter = ',')]
        metrics: Vec<String>,
    },
    /// MCQ generation and scoring
    Mcq {
        #[command(subcommand)]
        action: McqAction,
    },
    /// Run the reward service
    Serve {
        /// TOML config file
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[command(flatten)]
        reward: RewardFlags,
    },
}

#[derive(Subcommand)]
enum McqAction {
    /// Decomposition JSONL to MCQ item JSONL
    Generate {
        #[command(flatten)]
        io: InputOutput,
        #[arg(long)]
        seed: u64,
    },
    /// MCQ items plus predictions ({item_id, answer} JSONL) to subtask accuracies
    Score {
        #[command(flatten)]
        io: InputOutput,
        #[arg(long)]
        predictions: PathBuf,
    },
}

async fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Extract { io, backend, extractor } => commands::extract(&io, &backend, &extractor).await,
        Command::Eval { io, backend, averaging } => commands::eval(&io, &backend, &averaging).await,
        Command::Reward { io, backend, reward } => commands::reward(&io, &backend, &reward).await,
        Command::Perturb { io, seed, policy } => commands::perturb(&io, seed, &policy),
        Command::Analyze { io, metrics } => commands::analyze(&io, &metrics),
        Command::Mcq {
            action: McqAction::Generate { io, seed },
        } => commands::mcq_generate(&io, seed),
        Command::Mcq {
            action: McqAction::Score { io, predictions },
        } => commands::mcq_score(&io, &predictions),
        Command::Serve {
            config,
            bind,
            model,
            endpoint,
            cache_dir,
            reward,
        } => commands::serve(config, bind, model, endpoint, cache_dir, &reward).await,
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .json()
        .with_writer(std::io::stderr)
        .with_max_level(tracing::Level::WARN)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return Failure::usage(None, e.to_string()).report(),
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => return Failure::internal(anyhow::Error::new(e)).report(),
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}
