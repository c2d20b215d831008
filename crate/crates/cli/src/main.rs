use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};
use trialflow_service::store::{DATA_DIR_ENV, DEFAULT_DATA_DIR};
use trialflow_service::{run_script, ExportKind, Script, ScriptError, SessionId, SessionStore};

#[derive(Parser)]
#[command(name = "trialflow", version, about = "Build and analyze influence diagrams for two-arm randomized trials")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a directive script, persist the session and write the inference report.
    Analyze {
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, env = DATA_DIR_ENV, default_value = DEFAULT_DATA_DIR)]
        data: PathBuf,
    },
    /// Check that a script parses and every step is accepted.
    Validate {
        #[arg(long)]
        script: PathBuf,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, env = DATA_DIR_ENV, default_value = DEFAULT_DATA_DIR)]
        data: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
    /// Print an export of a stored session.
    Export {
        #[arg(long)]
        session: String,
        #[arg(long)]
        kind: String,
        #[arg(long, env = DATA_DIR_ENV, default_value = DEFAULT_DATA_DIR)]
        data: PathBuf,
    },
}

fn script_failure(e: &ScriptError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Cmd::Analyze { script, out, seed, data } => {
            let script = match Script::read(&script) {
                Ok(s) => s,
                Err(e) => return Ok(script_failure(&e)),
            };
            let store = SessionStore::open(&data).map_err(anyhow::Error::msg)?;
            let analysis = match run_script(&script, &store, seed) {
                Ok(a) => a,
                Err(e) => return Ok(script_failure(&e)),
            };
            std::fs::write(&out, analysis.report.to_json()).with_context(|| format!("writing {}", out.display()))?;
            eprintln!("session {} stored under {}", analysis.session, data.display());
            if analysis.exit_code() != 0 {
                eprintln!(
                    "error: optimizer did not converge (gradient max norm {:.3e})",
                    analysis.report.gradient_max_norm
                );
            }
            Ok(ExitCode::from(analysis.exit_code() as u8))
        }
        Cmd::Validate { script } => {
            let session = match Script::read(&script).and_then(|s| s.execute()) {
                Ok(s) => s,
                Err(e) => return Ok(script_failure(&e)),
            };
            println!(
                "ok: {} accepted commands, status {:?}, {} pending priors",
                session.log().len(),
                session.status(),
                session.pending_priors().len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Serve { port, data, host } => {
            let store = Arc::new(SessionStore::open(&data).map_err(anyhow::Error::msg)?);
            let addr = SocketAddr::new(host, port);
            eprintln!("listening on http://{addr}, data in {}", data.display());
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(trialflow_service::http::serve(store, addr))?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Export { session, kind, data } => {
            let store = SessionStore::open(&data).map_err(anyhow::Error::msg)?;
            let result = SessionId::parse(&session)
                .and_then(|id| kind.parse::<ExportKind>().map(|k| (id, k)))
                .and_then(|(id, k)| store.export(&id, k));
            match result {
                Ok(text) => {
                    print!("{text}");
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    Ok(ExitCode::FAILURE)
                }
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
