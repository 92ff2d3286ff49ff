use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gdm_cli::script::{SessionScript, EXIT_ENGINE_ERROR, EXIT_SCRIPT_ERROR};
use gdm_cli::{render_descriptor, render_policy_line};
use gdm_core::engine::{read_collaborations, Engine, EngineConfig};
use gdm_core::notation::{parse, RelationshipRegistry};
use gdm_core::policy::PolicyRepository;
use gdm_core::summary::Summary;
use gdm_core::CollaborationId;
use gdm_server::ServerConfig;

#[derive(Parser)]
#[command(name = "gdm", version, about = "Group decision-making engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the HTTP API.
    Serve {
        /// Configuration file; defaults to $GDM_CONFIG.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a session script against an embedded engine and print its summary.
    Run {
        script: PathBuf,
        /// Keep the event log in this file instead of memory.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Inspect the decision policies.
    Policies {
        #[command(subcommand)]
        action: PolicyAction,
    },
    /// Print the summary of a collaboration recorded in a log.
    Summary {
        id: String,
        #[arg(long)]
        log: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Check a correspondence expression and print its canonical form.
    Parse {
        expr: String,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum PolicyAction {
    List {
        #[arg(long)]
        json: bool,
    },
    Describe {
        name: String,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Md,
}

fn render(summary: &Summary, format: Format) -> Result<String, String> {
    match format {
        Format::Json => Ok(summary.to_json()),
        Format::Csv => summary.to_csv().map_err(|e| e.to_string()),
        Format::Md => Ok(summary.to_markdown()),
    }
}

fn fail(code: i32, message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code as u8)
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn run(script: PathBuf, log: Option<PathBuf>, format: Format) -> ExitCode {
    let text = match std::fs::read_to_string(&script) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_SCRIPT_ERROR, format!("{}: {e}", script.display())),
    };
    let script = match SessionScript::parse(&text) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_SCRIPT_ERROR, e),
    };
    let config = EngineConfig {
        snapshot_every: None,
        ..EngineConfig::default()
    };
    let engine = match &log {
        Some(path) => match Engine::open(path, script.clock(), config) {
            Ok(e) => e,
            Err(e) => return fail(EXIT_ENGINE_ERROR, e),
        },
        None => Engine::in_memory(script.clock(), config),
    };
    let report = script.run(&engine);
    if let Some(id) = &report.collaboration_id {
        eprintln!("collaboration {id}");
    }
    if let Some(summary) = &report.summary {
        match render(summary, format) {
            Ok(text) => print!("{text}"),
            Err(e) => return fail(EXIT_ENGINE_ERROR, e),
        }
    }
    if let Some(e) = &report.error {
        eprintln!("error: {e}");
    }
    ExitCode::from(report.exit_code as u8)
}

fn summary(id: String, log: PathBuf, format: Format) -> ExitCode {
    let (collabs, corruption) = match read_collaborations(&log) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_ENGINE_ERROR, e),
    };
    if let Some(e) = corruption {
        eprintln!("warning: {e}");
    }
    let Some(c) = collabs.get(&CollaborationId::from(id.as_str())) else {
        return fail(EXIT_ENGINE_ERROR, format!("unknown collaboration {id}"));
    };
    match render(&Summary::of(c), format) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(EXIT_ENGINE_ERROR, e),
    }
}

fn policies(action: PolicyAction) -> ExitCode {
    let repo = PolicyRepository::default();
    match action {
        PolicyAction::List { json } => {
            let list = repo.list();
            if json {
                println!("{}", to_json(&list));
            } else {
                for p in &list {
                    println!("{}", render_policy_line(p));
                }
            }
            ExitCode::SUCCESS
        }
        PolicyAction::Describe { name, json } => match repo.get(&name) {
            Ok(p) if json => {
                println!("{}", to_json(&p));
                ExitCode::SUCCESS
            }
            Ok(p) => {
                print!("{}", render_descriptor(&p.descriptor));
                ExitCode::SUCCESS
            }
            Err(e) => fail(1, e),
        },
    }
}

fn parse_expr(expr: String, json: bool) -> ExitCode {
    match parse(&expr, &RelationshipRegistry::default()) {
        Ok(c) if json => {
            println!("{}", to_json(&c));
            ExitCode::SUCCESS
        }
        Ok(c) => {
            println!("{c}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(1, format!("{}: {e}", e.code())),
    }
}

fn serve(config: Option<PathBuf>) -> ExitCode {
    let config = match config {
        Some(path) => ServerConfig::load(&path),
        None => ServerConfig::from_env(),
    };
    let config = match config {
        Ok(c) => c,
        Err(e) => return fail(1, e),
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => return fail(1, e),
    };
    match runtime.block_on(gdm_server::serve(config)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(1, e),
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Serve { config } => serve(config),
        Command::Run { script, log, format } => run(script, log, format),
        Command::Policies { action } => policies(action),
        Command::Summary { id, log, format } => summary(id, log, format),
        Command::Parse { expr, json } => parse_expr(expr, json),
    }
}
