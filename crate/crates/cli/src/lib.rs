//! Command-line driver for the topic-trend pipeline.

pub mod config;
pub mod error;
pub mod stages;
pub mod stamp;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use topictrend::synth::demo_corpus;

use crate::config::{Config, Overrides};
use crate::error::CliError;
use crate::stages::Context;
use crate::stamp::DirLock;

/// Seed behind the bundled demo corpus.
pub const DEMO_SEED: u64 = 2020;

/// Configuration written next to the demo corpus.
pub const DEMO_CONFIG: &str = r#"# Demo run: about 200 synthetic preprint abstracts over five themes.

[paths]
metadata = "metadata.csv"
bodies = "bodies.jsonl"
ngram_accept = "ngrams.txt"
output_dir = "out"

[ngrams]
min_frequency = 5

[solver]
k = 5
seed = 7

[stability]
k_min = 2
k_max = 8
tau = 5
top_terms = 10

[analysis]
lambda = 0.5
top_m = 10
"#;

#[derive(Debug, Parser)]
#[command(name = "topictrend", version, about = "Topic trends from a dated text corpus")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Override one setting, e.g. `--set solver.k=12`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load metadata and bodies, then filter by language, length and date.
    Ingest,
    /// Tokenize, drop stopwords and lemmatize.
    Preprocess,
    /// Mine phrase candidates or merge accepted phrases.
    #[command(subcommand)]
    Ngrams(NgramsCommand),
    /// Build the vocabulary and the tf-idf matrix.
    Featurize,
    /// Factorize the matrix with the configured k.
    Fit,
    /// Score topic stability across a range of k.
    Stability,
    /// Rank topic terms by relevance.
    Relevance,
    /// Aggregate document mixtures into monthly topic shares.
    Trends,
    /// Collect final outputs and a reproducibility manifest.
    Report,
    /// Every stage in order, skipping those already up to date.
    Run {
        #[arg(long)]
        skip_stability: bool,
    },
    /// Write the bundled demo corpus and configuration.
    Demo {
        #[arg(long, default_value = "demo")]
        dir: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum NgramsCommand {
    /// Write frequent phrase candidates for curation.
    Mine,
    /// Merge phrases from the accept list into single tokens.
    Apply,
}

/// Writes the demo corpus, accept list and configuration into `dir`.
pub fn write_demo(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let demo = demo_corpus(DEMO_SEED);
    for (name, text) in [
        ("metadata.csv", demo.metadata_csv.as_str()),
        ("bodies.jsonl", demo.bodies_jsonl.as_str()),
        ("ngrams.txt", demo.accept_list.as_str()),
        ("config.toml", DEMO_CONFIG),
    ] {
        let path = dir.join(name);
        fs::write(&path, text).map_err(CliError::io(&path))?;
    }
    println!("demo: wrote corpus to {}; run `topictrend --config {}/config.toml run`", dir.display(), dir.display());
    Ok(())
}

fn dispatch(ctx: &Context, command: &Command) -> Result<(), CliError> {
    match command {
        Command::Ingest => stages::cmd_ingest(ctx).map(drop),
        Command::Preprocess => stages::cmd_preprocess(ctx).map(drop),
        Command::Ngrams(NgramsCommand::Mine) => stages::cmd_ngrams_mine(ctx).map(drop),
        Command::Ngrams(NgramsCommand::Apply) => stages::cmd_ngrams_apply(ctx).map(drop),
        Command::Featurize => stages::cmd_featurize(ctx).map(drop),
        Command::Fit => stages::cmd_fit(ctx).map(drop),
        Command::Stability => stages::cmd_stability(ctx).map(drop),
        Command::Relevance => stages::cmd_relevance(ctx).map(drop),
        Command::Trends => stages::cmd_trends(ctx).map(drop),
        Command::Report => stages::cmd_report(ctx).map(drop),
        Command::Run { skip_stability } => stages::run_all(ctx, *skip_stability),
        Command::Demo { .. } => unreachable!("handled before loading configuration"),
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    if let Command::Demo { dir } = &cli.command {
        return write_demo(dir);
    }
    let overrides =
        Overrides { output_dir: cli.output_dir.clone(), seed: cli.seed, workers: cli.workers, set: cli.set.clone() };
    let mut config = Config::load(cli.config.as_deref(), &overrides)?;
    let workers = config.solver.workers;
    // the pool below is the only parallelism knob; solvers run inside it
    config.solver.workers = 0;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    let _lock = DirLock::acquire(&config.paths.output_dir)?;
    pool.install(|| dispatch(&Context::new(config), &cli.command))
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_cli<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
