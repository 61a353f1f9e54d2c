mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nextpoi_core::config::PipelineConfig;
use tracing_subscriber::EnvFilter;

/// Offline pipeline from raw check-ins to knowledge-augmented prompts, plus
/// evaluation of model predictions.
#[derive(Debug, Parser)]
#[command(name = "nextpoi", version)]
struct Cli {
    /// Pipeline configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Emit progress logs as JSON lines on stderr.
    #[arg(long, global = true)]
    json_logs: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a raw dataset, filter, segment and split it.
    Ingest(commands::IngestArgs),
    /// Build the semantic-ID codebook for the processed catalog.
    BuildSids(commands::BuildSidsArgs),
    /// Run the knowledge agent for every train user.
    GenKnowledge(commands::GenKnowledgeArgs),
    /// Emit prompt records for one split.
    BuildPrompts(commands::BuildPromptsArgs),
    /// Score prediction files against prompt records.
    Evaluate(commands::EvaluateArgs),
    /// Print dataset statistics of processed data.
    Stats(commands::StatsArgs),
    /// Replay recorded agent transcripts and check the output matches.
    ReplayAgent(commands::ReplayArgs),
    /// Draw a seeded random sample of hotspot texts for manual review.
    SampleAudit(commands::SampleAuditArgs),
    /// Write a deterministic synthetic dataset in the Foursquare layout.
    Synth(commands::SynthArgs),
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Backend(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Backend(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Data(e) | Failure::Backend(e) => e,
        }
    }
}

/// Tags an error with its exit class.
pub trait OrFail<T> {
    fn usage(self) -> Result<T, Failure>;
    fn data(self) -> Result<T, Failure>;
    fn backend(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrFail<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }

    fn data(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Data(e.into()))
    }

    fn backend(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Backend(e.into()))
    }
}

fn init_logging(json: bool) {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info"));
    let builder = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr);
    if json {
        builder.json().init();
    } else {
        builder.init();
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.json_logs);
    let cfg = match PipelineConfig::load(cli.config.as_deref(), |k| std::env::var(k).ok()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(a, cfg),
        Command::BuildSids(a) => commands::build_sids(a, cfg),
        Command::GenKnowledge(a) => commands::gen_knowledge(a, cfg),
        Command::BuildPrompts(a) => commands::build_prompts(a, cfg),
        Command::Evaluate(a) => commands::evaluate(a, cfg),
        Command::Stats(a) => commands::stats(a, cfg),
        Command::ReplayAgent(a) => commands::replay_agent(a, cfg),
        Command::SampleAudit(a) => commands::sample_audit(a, cfg),
        Command::Synth(a) => commands::synth(a, cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
