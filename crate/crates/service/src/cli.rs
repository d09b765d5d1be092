//! `datadoc` command line.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use datadoc_core::completeness::CompletenessReport;
use datadoc_core::dimensions::{Dimension, DimensionRecord};
use datadoc_core::eval::{self, CellScore, EvalVerdict, VerdictStore};
use datadoc_core::ingest::ParsedTable;
use datadoc_core::RawInput;
use serde::{Deserialize, Serialize};

use crate::config::ServiceConfig;
use crate::service::{AnalyzeRequest, Service};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FATAL: u8 = 1;
pub const EXIT_PARTIAL: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "datadoc", version, about = "Extract documentation dimensions from dataset papers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract one or all dimensions and write records plus a completeness report.
    Analyze(AnalyzeArgs),
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured listen address.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Evaluation harness.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Remove expired document-cache entries.
    Evict {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Plain-text documentation.
    #[arg(long)]
    pub input: PathBuf,
    /// JSON array of tables (`caption`, `rows`).
    #[arg(long)]
    pub tables: Option<PathBuf>,
    /// A dimension name, or `all`.
    #[arg(long)]
    pub dimension: String,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SummaryFormat {
    Json,
    Table,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Aggregate verdicts (JSON lines) or cell scores (JSON array) into per-model accuracies.
    Summarize {
        #[arg(long, conflicts_with = "cells", required_unless_present = "cells")]
        verdicts: Option<PathBuf>,
        #[arg(long)]
        cells: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: SummaryFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inter-annotator agreement per sub-dimension.
    Agreement {
        #[arg(long)]
        verdicts: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Append one verdict to a store.
    Record {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        doi: String,
        #[arg(long)]
        dimension: String,
        #[arg(long)]
        subdimension: String,
        #[arg(long)]
        model: String,
        #[arg(long)]
        annotator: String,
        /// correct, incorrect_faithful or incorrect_unfaithful.
        #[arg(long)]
        verdict: String,
    },
    /// Validate a ground-truth CSV or JSON file.
    CheckGroundTruth {
        #[arg(long)]
        file: PathBuf,
    },
}

/// File written by `analyze`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeOutput {
    pub document_id: String,
    pub records: Vec<DimensionRecord>,
    pub report: CompletenessReport,
}

pub fn parse_dimensions(arg: &str) -> Result<Vec<Dimension>, String> {
    if arg.trim().eq_ignore_ascii_case("all") {
        return Ok(Dimension::ALL.to_vec());
    }
    arg.parse::<Dimension>().map(|d| vec![d]).map_err(|e| e.to_string())
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn write(path: Option<&Path>, text: &str) -> Result<(), String> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("cannot write {}: {e}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("output types serialize");
    text.push('\n');
    text
}

/// Runs `analyze`, returning the output and whether any record is partial.
pub fn analyze(args: &AnalyzeArgs) -> Result<(AnalyzeOutput, bool), String> {
    let dimensions = parse_dimensions(&args.dimension)?;
    let text = read(&args.input)?;
    let tables: Vec<ParsedTable> = match &args.tables {
        Some(path) => serde_json::from_str(&read(path)?).map_err(|e| format!("invalid tables file {}: {e}", path.display()))?,
        None => Vec::new(),
    };
    let config = ServiceConfig::load(&args.config).map_err(|e| e.to_string())?;
    let service = Service::from_config(&config).map_err(|e| e.to_string())?;
    let ingested = service.ingest(&RawInput { text, tables }).map_err(|e| e.to_string())?;
    let document_id = ingested.prepared.document.id.clone();
    let request = AnalyzeRequest { document_id: Some(document_id.clone()), text: None, tables: None };

    let records: Vec<DimensionRecord> = std::thread::scope(|scope| {
        let handles: Vec<_> =
            dimensions.iter().map(|d| scope.spawn(|| service.analyze(*d, &request).map(|r| r.record))).collect();
        handles.into_iter().map(|h| h.join().expect("analysis thread panicked")).collect::<Result<_, _>>()
    })
    .map_err(|e| e.to_string())?;
    let partial = records.iter().any(DimensionRecord::is_partial);
    let report = service.assess(&records).map_err(|e| e.to_string())?;
    Ok((AnalyzeOutput { document_id, records, report }, partial))
}

fn eval_command(command: &EvalCommand) -> Result<(), String> {
    match command {
        EvalCommand::Summarize { verdicts, cells, format, out } => {
            let summary = match (verdicts, cells) {
                (Some(path), _) => eval::summarize(&eval::load_verdicts(path).map_err(|e| e.to_string())?),
                (None, Some(path)) => {
                    let cells: Vec<CellScore> = serde_json::from_str(&read(path)?)
                        .map_err(|e| format!("invalid cells file {}: {e}", path.display()))?;
                    eval::aggregate(&cells)
                }
                (None, None) => unreachable!("clap requires one input"),
            }
            .map_err(|e| e.to_string())?;
            let text = match format {
                SummaryFormat::Json => to_json(&summary),
                SummaryFormat::Table => summary.to_table(),
            };
            write(out.as_deref(), &text)
        }
        EvalCommand::Agreement { verdicts, out } => {
            let report = eval::agreement(&eval::load_verdicts(verdicts).map_err(|e| e.to_string())?);
            write(out.as_deref(), &to_json(&report))
        }
        EvalCommand::Record { store, doi, dimension, subdimension, model, annotator, verdict } => {
            let verdict = EvalVerdict::parse(doi, dimension, subdimension, model, annotator, verdict)
                .map_err(|e| e.to_string())?;
            let mut store = VerdictStore::open(store).map_err(|e| e.to_string())?;
            store.record(verdict).map_err(|e| e.to_string())?;
            Ok(())
        }
        EvalCommand::CheckGroundTruth { file } => {
            let rows = eval::load_ground_truth(file).map_err(|e| e.to_string())?;
            println!("{} rows", rows.len());
            Ok(())
        }
    }
}

async fn serve(config: Option<&Path>, listen: Option<&str>) -> Result<(), String> {
    let config = match config {
        Some(path) => ServiceConfig::load(path).map_err(|e| e.to_string())?,
        None => {
            let mut config = ServiceConfig::default();
            config.apply_env(|name| std::env::var(name).ok()).map_err(|e| e.to_string())?;
            config
        }
    };
    let service = Arc::new(Service::from_config(&config).map_err(|e| e.to_string())?);
    let addr = listen.unwrap_or(&config.listen);
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| format!("cannot listen on {addr}: {e}"))?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, crate::api::router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| e.to_string())
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> u8 {
    let result = match &cli.command {
        Command::Analyze(args) => match analyze(args) {
            Ok((output, partial)) => match write(Some(&args.out), &to_json(&output)) {
                Ok(()) if partial => {
                    eprintln!("warning: some dimensions were only partially extracted");
                    return EXIT_PARTIAL;
                }
                other => other,
            },
            Err(e) => Err(e),
        },
        Command::Serve { config, listen } => tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .map_err(|e| e.to_string())
            .and_then(|rt| rt.block_on(serve(config.as_deref(), listen.as_deref()))),
        Command::Eval(command) => eval_command(command),
        Command::Evict { config } => ServiceConfig::load(config)
            .map_err(|e| e.to_string())
            .and_then(|c| c.cache().map_err(|e| e.to_string()))
            .and_then(|cache| cache.evict_expired().map_err(|e| e.to_string()))
            .map(|n| println!("removed {n} expired entries")),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(message) => {
            eprintln!("error: {message}");
            EXIT_FATAL
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_line_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn dimension_argument() {
        assert_eq!(parse_dimensions("all").unwrap().len(), 7);
        assert_eq!(parse_dimensions("gathering").unwrap(), vec![Dimension::Gathering]);
        assert!(parse_dimensions("provenance").unwrap_err().contains("social_concerns"));
    }

    #[test]
    fn summarize_needs_exactly_one_input() {
        assert!(Cli::try_parse_from(["datadoc", "eval", "summarize"]).is_err());
        assert!(Cli::try_parse_from(["datadoc", "eval", "summarize", "--verdicts", "a", "--cells", "b"]).is_err());
        assert!(Cli::try_parse_from(["datadoc", "eval", "summarize", "--cells", "b", "--format", "table"]).is_ok());
    }
}
