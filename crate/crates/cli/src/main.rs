//! `routegraph` command-line tool.

mod app;
mod commands;
mod config;
mod error;
mod net;
mod serve;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use routegraph::Micros;
use serde_json::Value;

use crate::app::App;
use crate::config::{CliConfig, REGISTRY_ENV, WALLET_ENV};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "routegraph", version, about = "Capture, share and resolve web API routes")]
struct Cli {
    /// Registry directory or http(s) URL.
    #[arg(long, global = true, env = REGISTRY_ENV)]
    registry: Option<String>,
    /// Wallet file used to sign payments.
    #[arg(long, global = true, env = WALLET_ENV)]
    wallet: Option<PathBuf>,
    /// Config file, replacing the default location.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Fixed current time in Unix milliseconds; the clock is virtual from there.
    #[arg(long, global = true)]
    now: Option<i64>,
    /// Seed for payment nonces. Predictable nonces: for tests and replays only.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Indented output.
    #[arg(long, global = true)]
    pretty: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a HAR file and show which entries are API traffic.
    Ingest { har: PathBuf },
    /// Turn a HAR file into a skill directory.
    Distill {
        har: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Publish a skill directory to the registry.
    Publish { skill_dir: PathBuf },
    /// Ranked registry search (paid).
    Search {
        query: String,
        #[arg(short, long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        domain: Option<String>,
        /// Refuse charges above this many micro-dollars.
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Buy a skill from the registry.
    Install {
        record_id: String,
        /// Also write the package as a skill directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Resolve an intent through cache, registry and discovery.
    Resolve {
        intent: String,
        #[arg(long)]
        domain: Option<String>,
        /// Intent parameter, `name=value`. Repeatable.
        #[arg(long = "param", value_parser = parse_kv)]
        params: Vec<(String, String)>,
        /// Simulated sites to browse and call instead of the live web.
        #[arg(long)]
        sites: Option<PathBuf>,
    },
    /// Probe registry endpoints and update trust signals.
    Verify {
        /// Run a single pass (the only mode; long-running checks live in `serve`).
        #[arg(long)]
        once: bool,
        #[arg(long)]
        sites: Option<PathBuf>,
    },
    /// Ledger balances, or one party's entries.
    Ledger {
        #[arg(long)]
        party: Option<String>,
    },
    /// Run an agent fleet simulation.
    Simulate {
        fleet_config: PathBuf,
        /// Also write per-step records as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Per-site latency comparison of browser, cached and graph paths.
    Bench {
        simnet_config: PathBuf,
        #[arg(long)]
        sequential: bool,
    },
    /// Serve the registry and agent HTTP APIs.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8402")]
        addr: String,
        /// Skip the background verifier.
        #[arg(long)]
        no_verify: bool,
    },
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .filter(|(k, _)| !k.is_empty())
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .ok_or_else(|| format!("expected name=value, got {s:?}"))
}

fn emit(v: &Value, pretty: bool) {
    let text = if pretty { serde_json::to_string_pretty(v) } else { serde_json::to_string(v) };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", text.expect("json values serialize"));
    let _ = out.flush();
}

fn run(cli: Cli) -> Result<Option<Value>, CliError> {
    let file = config::load_file(cli.config.as_deref())?;
    let cfg = CliConfig::resolve(file, cli.registry.as_deref(), cli.wallet.as_deref())?;
    let app = App { cfg, now: cli.now, seed: cli.seed };
    let value = match cli.command {
        Command::Ingest { har } => commands::ingest(&har)?,
        Command::Distill { har, out } => commands::distill_cmd(&app, &har, &out)?,
        Command::Publish { skill_dir } => commands::publish(&app, &skill_dir)?,
        Command::Search { query, k, domain, budget } => {
            commands::search(&app, &query, k, domain.as_deref(), budget.map(Micros))?
        }
        Command::Install { record_id, out, budget } => {
            commands::install(&app, &record_id, out.as_deref(), budget.map(Micros))?
        }
        Command::Resolve { intent, domain, params, sites } => {
            commands::resolve(&app, &intent, domain.as_deref(), &params, sites.as_deref())?
        }
        Command::Verify { once, sites } => {
            if !once {
                return Err(CliError::Usage("verify runs one pass; pass --once (use serve for periodic checks)".into()));
            }
            commands::verify(&app, sites.as_deref())?
        }
        Command::Ledger { party } => commands::ledger(&app, party.as_deref())?,
        Command::Simulate { fleet_config, csv } => commands::simulate(&fleet_config, csv.as_deref())?,
        Command::Bench { simnet_config, sequential } => commands::bench(&simnet_config, sequential)?,
        Command::Serve { addr, no_verify } => {
            serve::serve(&app, &addr, !no_verify, |v| emit(v, cli.pretty))?;
            return Ok(None);
        }
    };
    Ok(Some(value))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pretty = cli.pretty;
    match run(cli) {
        Ok(Some(v)) => {
            emit(&v, pretty);
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
