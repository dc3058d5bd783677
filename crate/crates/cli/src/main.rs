use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use docpipe::commands;
use docpipe::config::{Overrides, PipelineConfig};
use docpipe::pipeline::run_pipeline;
use docpipe::serve::ExportServer;
use docpipe_core::store::ReviewDecision;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "docpipe", version, about = "Document to structured record pipeline")]
struct Cli {
    /// Pipeline configuration file.
    #[arg(long, global = true, default_value = "docpipe.json")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fetch every source once and process the new documents.
    Run {
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        replicas: Option<u32>,
        #[arg(long)]
        dedup_threshold: Option<f64>,
    },
    /// Inspect and settle the manual review queue.
    Review {
        #[command(subcommand)]
        action: ReviewAction,
    },
    /// Serve normalized records over HTTP.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
    },
    /// Score predictions against gold annotations.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        /// Predictions as NDJSON; defaults to the store's normalized records.
        #[arg(long)]
        pred: Option<PathBuf>,
    },
    /// Manage the source registry.
    Ingest {
        #[command(subcommand)]
        action: IngestAction,
    },
}

#[derive(Subcommand)]
enum ReviewAction {
    List,
    Approve {
        id: String,
        #[arg(long)]
        note: Option<String>,
    },
    Reject {
        id: String,
        #[arg(long)]
        note: Option<String>,
    },
}

#[derive(Subcommand)]
enum IngestAction {
    AddSource {
        #[arg(long)]
        file: PathBuf,
    },
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable output"));
}

fn fatal(message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(1)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut config = match PipelineConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => return fatal(e),
    };
    match cli.command {
        Command::Run {
            workers,
            replicas,
            dedup_threshold,
        } => {
            config.apply(&Overrides {
                workers,
                replicas,
                dedup_threshold,
            });
            match run_pipeline(&config) {
                Ok(stats) => {
                    print_json(&stats);
                    if stats.has_failures() {
                        ExitCode::from(2)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => fatal(e),
            }
        }
        Command::Review { action } => {
            let result = match action {
                ReviewAction::List => commands::review_list(&config).map(|items| print_json(&items)),
                ReviewAction::Approve { id, note } => {
                    commands::review_resolve(&config, &id, ReviewDecision::Approved, note).map(|i| print_json(&i))
                }
                ReviewAction::Reject { id, note } => {
                    commands::review_resolve(&config, &id, ReviewDecision::Rejected, note).map(|i| print_json(&i))
                }
            };
            result.map_or_else(fatal, |_| ExitCode::SUCCESS)
        }
        Command::Serve { port, bind } => match ExportServer::start(config.store_root.clone(), &format!("{bind}:{port}")) {
            Ok(server) => {
                log::info!("serving {} on http://{}", config.store_root.display(), server.addr());
                server.wait();
                ExitCode::SUCCESS
            }
            Err(e) => fatal(e),
        },
        Command::Eval { gold, pred } => commands::eval(&config, &gold, pred.as_deref())
            .map(|r| print_json(&r))
            .map_or_else(fatal, |_| ExitCode::SUCCESS),
        Command::Ingest {
            action: IngestAction::AddSource { file },
        } => commands::add_source(&config, &file)
            .map(|s| print_json(&s))
            .map_or_else(fatal, |_| ExitCode::SUCCESS),
    }
}
