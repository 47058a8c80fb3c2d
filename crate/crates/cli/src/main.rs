use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod error;
mod manifest;
mod report;
mod svg;

use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "qwem", version, about = "Quadratic word embedding pipelines", args_override_self = true)]
struct Cli {
    /// Worker threads; defaults to every core.
    #[arg(long, global = true, env = "QWEM_THREADS")]
    threads: Option<usize>,

    /// TOML file of flag defaults; explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Count words of a corpus, or generate the planted corpus first.
    Ingest(IngestArgs),
    /// Count skip-gram co-occurrences.
    Stats(StatsArgs),
    /// Build M*, PMI or PPMI from counted statistics.
    Target(TargetArgs),
    /// Top-d spectral factorization of a target.
    Factorize(FactorizeArgs),
    /// Train embeddings with minibatch SGD.
    Train(TrainArgs),
    /// Small-initialization gradient-flow experiment.
    Dynamics(DynamicsArgs),
    /// Analogy, similarity and principal-component benchmarks.
    Eval(EvalArgs),
    /// Task-vector spectra and SNR sweeps.
    Taskvec(TaskvecArgs),
    /// Charts and tables from a run directory.
    Report(ReportArgs),
}

impl Command {
    const NAMES: &'static [&'static str] =
        &["ingest", "stats", "target", "factorize", "train", "dynamics", "eval", "taskvec", "report"];
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct IngestArgs {
    /// Corpus file, one document per line; gzip is detected.
    #[arg(long, required_unless_present = "planted", conflicts_with = "planted")]
    pub corpus: Option<PathBuf>,
    /// Generate the planted-analogy corpus into the output directory.
    #[arg(long)]
    pub planted: bool,
    #[arg(long, default_value_t = 20240601)]
    pub seed: u64,
    /// Vocabulary size; defaults to every distinct word.
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub min_doc_tokens: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OovArg {
    Remove,
    Mask,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Keep the most frequent words; defaults to every distinct word.
    #[arg(long, conflicts_with = "vocab_file")]
    pub vocab: Option<usize>,
    /// Reuse an existing vocabulary.
    #[arg(long)]
    pub vocab_file: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub window: usize,
    #[arg(long, value_enum, default_value_t = OovArg::Remove)]
    pub oov: OovArg,
    #[arg(long, default_value_t = 0)]
    pub min_doc_tokens: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TargetKindArg {
    Mstar,
    Pmi,
    Ppmi,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TargetArgs {
    /// Run directory holding vocab.tsv and corpus.sgs.
    #[arg(long)]
    pub stats: PathBuf,
    #[arg(long, value_enum, default_value_t = TargetKindArg::Mstar)]
    pub kind: TargetKindArg,
    #[arg(long, default_value = "setting1+dynamic_window")]
    pub reweight: String,
    /// Defaults to the stats directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct FactorizeArgs {
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub d: usize,
    /// Defaults to the directory of the target.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LossArg {
    Qwem,
    Sgns,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScheduleArg {
    Constant,
    Step,
    Linear,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InitArg {
    Normal,
    W2v,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SamplingArg {
    Adjusted,
    Raw,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    /// Run directory holding vocab.tsv and corpus.sgs.
    #[arg(long, required_unless_present = "target", conflicts_with = "target")]
    pub stats: Option<PathBuf>,
    /// Train directly against a target matrix in `.mxc` form.
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub d: usize,
    #[arg(long, value_enum, default_value_t = LossArg::Qwem)]
    pub loss: LossArg,
    #[arg(long, default_value = "setting1+dynamic_window")]
    pub reweight: String,
    /// Base learning rate; defaults to 0.5 for QWEM and 0.025 for SGNS.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Step)]
    pub schedule: ScheduleArg,
    /// Final rate of the linear schedule as a fraction of the base rate.
    #[arg(long, default_value_t = 1e-3)]
    pub lr_floor: f64,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 50_000)]
    pub n_pos: usize,
    #[arg(long, default_value_t = 50_000)]
    pub n_neg: usize,
    #[arg(long, value_enum, default_value_t = InitArg::Normal)]
    pub init: InitArg,
    /// Variance of the normal initializer.
    #[arg(long, default_value_t = 1e-6)]
    pub sigma2: f64,
    #[arg(long, value_enum, default_value_t = SamplingArg::Adjusted)]
    pub sampling: SamplingArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of loss probes along the run.
    #[arg(long, default_value_t = 50)]
    pub probes: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DynInitArg {
    Random,
    Aligned,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct DynamicsArgs {
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub d: usize,
    /// Initialization variances, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1e-4, 1e-6, 1e-8])]
    pub sigma2: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = DynInitArg::Random)]
    pub init: DynInitArg,
    #[arg(long, default_value_t = 200)]
    pub grid_points: usize,
    /// Horizon as a multiple of τ_d/τ₁.
    #[arg(long, default_value_t = 2.0)]
    pub horizon: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    Full,
    CandidateOnly,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScoreArg {
    Inner,
    Cosine,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    #[arg(long)]
    pub embedding: PathBuf,
    /// Defaults to vocab.tsv next to the embedding.
    #[arg(long)]
    pub vocab_file: Option<PathBuf>,
    /// Analogy questions in the `questions-words` layout.
    #[arg(long)]
    pub analogies: Option<PathBuf>,
    /// Word-pair similarity ratings.
    #[arg(long)]
    pub similarity: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = NormArg::Both)]
    pub normalization: NormArg,
    #[arg(long, value_enum, default_value_t = ScoreArg::Cosine)]
    pub score: ScoreArg,
    /// Principal components to list neighbours for.
    #[arg(long, default_value_t = 0)]
    pub components: usize,
    #[arg(long, default_value_t = 10)]
    pub top_n: usize,
    /// Defaults to the directory of the embedding.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TaskvecArgs {
    #[arg(long)]
    pub embedding: PathBuf,
    #[arg(long)]
    pub vocab_file: Option<PathBuf>,
    #[arg(long)]
    pub analogies: PathBuf,
    /// Truncation dimensions; defaults to ten even steps up to the full width.
    #[arg(long, value_delimiter = ',')]
    pub d_grid: Vec<usize>,
    #[arg(long, default_value_t = qwem_core::taskvec::DEFAULT_RANK_TOL)]
    pub rank_tol: f64,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct ReportArgs {
    /// Run directory to summarize.
    #[arg(long)]
    pub run: PathBuf,
    /// Defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse(argv: Vec<String>) -> Result<Option<(Cli, Vec<String>)>> {
    let args = config::expand_config(argv, Command::NAMES)?;
    match Cli::try_parse_from(&args) {
        Ok(cli) => Ok(Some((cli, args))),
        Err(e) => clap_outcome(e),
    }
}

fn clap_outcome<T>(e: clap::Error) -> Result<Option<T>> {
    use clap::error::ErrorKind;
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            let _ = e.print();
            Ok(None)
        }
        _ => Err(CliError::usage(e.render().to_string())),
    }
}

fn run(argv: Vec<String>) -> Result<()> {
    let Some((cli, args)) = parse(argv)? else {
        return Ok(());
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be positive"));
        }
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let args = &args[1..];
    match &cli.command {
        Command::Ingest(a) => commands::ingest(a, args),
        Command::Stats(a) => commands::stats(a, args),
        Command::Target(a) => commands::target(a, args),
        Command::Factorize(a) => commands::factorize(a, args),
        Command::Train(a) => commands::train(a, args),
        Command::Dynamics(a) => commands::dynamics(a, args),
        Command::Eval(a) => commands::eval(a, args),
        Command::Taskvec(a) => commands::taskvec(a, args),
        Command::Report(a) => report::report(a, args),
    }
}

fn main() -> ExitCode {
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().trim_end());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
