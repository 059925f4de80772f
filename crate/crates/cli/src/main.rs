use std::io::{self, Write};
use std::net::IpAddr;
use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use granttrend_cli::commands::{cmd_feed_manifest, cmd_index_rebuild, cmd_ingest, cmd_query};
use granttrend_cli::serve::cmd_serve;
use granttrend_cli::{CliError, Overrides, QueryFormat, Settings};
use granttrend_core::Source;

/// Grant and publication trend analytics.
///
/// Exit status: 0 on success, 1 for bad input (malformed feed, empty query,
/// invalid config), 2 for I/O, lock or store corruption errors.
#[derive(Debug, Parser)]
#[command(name = "granttrend", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML file with the same keys as the flags.
    #[arg(long, global = true, env = "GRANTTREND_CONFIG")]
    config: Option<PathBuf>,
    /// Directory holding the store and index [default: ./data].
    #[arg(long, global = true, env = "GRANTTREND_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// JSON object mapping ISO 4217 codes to USD per unit.
    #[arg(long = "rates", global = true, env = "GRANTTREND_RATE_TABLE")]
    rate_table: Option<PathBuf>,
    /// Consecutive increases that mark a trend onset [default: 3].
    #[arg(long, global = true, env = "GRANTTREND_TREND_K")]
    trend_k: Option<NonZeroUsize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Merge a canonical NDJSON feed into the store.
    Ingest {
        #[arg(long, value_parser = parse_source)]
        source: Source,
        #[arg(long)]
        input: PathBuf,
        /// Feed manifest to verify the input against before ingesting.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Print the KPI summary for a search term.
    Query {
        term: String,
        #[arg(long, value_enum, default_value_t = Format::Row)]
        format: Format,
    },
    /// Index maintenance.
    Index {
        #[command(subcommand)]
        command: IndexCommand,
    },
    /// Serve the HTTP API until interrupted. SIGHUP reloads the store.
    Serve {
        /// [default: 8080]
        #[arg(long, env = "GRANTTREND_PORT")]
        port: Option<u16>,
        /// [default: 127.0.0.1]
        #[arg(long, env = "GRANTTREND_BIND")]
        bind: Option<IpAddr>,
        /// Require `Authorization: Bearer <token>` on every request.
        #[arg(long, env = "GRANTTREND_API_TOKEN", hide_env_values = true)]
        token: Option<String>,
    },
    /// Print a manifest (record count and checksum) for a feed file.
    FeedManifest {
        #[arg(long, value_parser = parse_source)]
        source: Source,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        feed_id: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
enum IndexCommand {
    /// Rebuild the index from the store and atomically replace it.
    Rebuild,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Row,
    Json,
}

fn parse_source(s: &str) -> Result<Source, String> {
    s.parse::<Source>().map_err(|e| e.to_string())
}

/// Print a line, treating a closed stdout (e.g. piped into `head`) as done.
fn emit(text: &str) {
    let mut out = io::stdout().lock();
    if let Err(e) = writeln!(out, "{text}").and_then(|()| out.flush()) {
        if e.kind() != io::ErrorKind::BrokenPipe {
            eprintln!("error: writing output: {e}");
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut overrides = Overrides {
        config: cli.global.config,
        data_dir: cli.global.data_dir,
        rate_table: cli.global.rate_table,
        trend_k: cli.global.trend_k,
        ..Overrides::default()
    };
    if let Command::Serve { port, bind, token } = &cli.command {
        overrides.port = *port;
        overrides.bind = *bind;
        overrides.api_token = token.clone();
    }
    let settings = Settings::resolve(overrides)?;
    match cli.command {
        Command::Ingest { source, input, manifest } => {
            let report = cmd_ingest(&settings, source, &input, manifest.as_deref())?;
            if report.dangling_links > 0 {
                eprintln!("note: {} link records point at unknown entities", report.dangling_links);
            }
            emit(&report.to_string());
        }
        Command::Query { term, format } => {
            let format = match format {
                Format::Row => QueryFormat::Row,
                Format::Json => QueryFormat::Json,
            };
            emit(&cmd_query(&settings, &term, format)?);
        }
        Command::Index {
            command: IndexCommand::Rebuild,
        } => emit(&cmd_index_rebuild(&settings)?.to_string()),
        Command::Serve { .. } => cmd_serve(&settings)?,
        Command::FeedManifest { source, input, feed_id } => {
            emit(&cmd_feed_manifest(source, &input, feed_id.as_deref())?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage mistakes are input errors; --help and --version succeed.
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
