//! End-to-end experiment harness: corpus generation, training, decoder-only
//! online learning, evaluation and report tables.

pub mod config;
pub mod pipeline;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Core(twinfeed::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use twinfeed::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::MissingInput(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Core(e) => match e {
                E::NonFinite(_) | E::Diverged { .. } | E::NoConvergence { .. } => 4,
                E::BadMagic { .. } | E::Version { .. } | E::Truncated(_) | E::Malformed(_) => 3,
                E::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 3,
                E::Io(_) => 1,
                _ => 2,
            },
            CliError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 3,
            CliError::Io { .. } => 1,
        }
    }
}

impl From<twinfeed::Error> for CliError {
    fn from(e: twinfeed::Error) -> Self {
        CliError::Core(e)
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "twinfeed", version, about = "Digital-twin CSI feedback experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the indoor twin, its RW-proxy, the outdoor twin and the cluster baseline.
    Generate(CommonArgs),
    /// Train one autoencoder per training environment.
    Train(CommonArgs),
    /// Decoder-only online learning on the RW-proxy and antenna-swap subsets.
    Finetune(CommonArgs),
    /// Table II and Table III analogs as CSV.
    Eval(CommonArgs),
    /// Aggregate a completed run directory into summary tables.
    Report(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Experiment config (TOML). Defaults to `<out>/config.toml` when present.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for corpus generation.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Suppress progress messages.
    #[arg(short, long)]
    pub quiet: bool,
}

/// Resolved command context: effective config, run directory, knobs.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub jobs: usize,
    pub quiet: bool,
}

impl Context {
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let fallback = args.out.as_ref().map(|o| o.join(pipeline::CONFIG_FILE)).filter(|p| p.exists());
        let mut cfg = match args.config.as_ref().or(fallback.as_ref()) {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        let out = args
            .out
            .clone()
            .or_else(|| cfg.out.clone())
            .ok_or_else(|| CliError::Config("no run directory: pass --out or set `out` in the config".into()))?;
        if args.jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        Ok(Self { cfg, out, jobs: args.jobs, quiet: args.quiet })
    }

    pub fn log(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => pipeline::generate(&Context::resolve(&a)?),
        Command::Train(a) => pipeline::train(&Context::resolve(&a)?),
        Command::Finetune(a) => pipeline::finetune(&Context::resolve(&a)?),
        Command::Eval(a) => pipeline::eval(&Context::resolve(&a)?),
        Command::Report(a) => report::report(&Context::resolve(&a)?),
    }
}
