use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use smaad::agency::{Engine, EngineConfig, Scheduler};
use smaad::casebase::{CaseBase, CaseProfile, SimilarityWeights};
use smaad::domain::{DomainPack, BUILTIN_PACK_ID};
use smaad::headless::{load_scenario, run_scenario, RunOptions};
use smaad::lint::{lint_files, lint_pack};
use smaad::memory::FindingValue;
use smaad::service::{self, AppState, ServiceConfig};

#[derive(Parser)]
#[command(name = "smaad", version, about = "Supervised multi-agent clinical decision support")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scripted scenario without a user and write its trace.
    Run(RunArgs),
    /// Check a knowledge pack for load errors, ambiguous guards, unreachable
    /// diagnoses and table inconsistencies.
    Lint {
        /// Pack directory, or the id of the built-in pack.
        #[arg(long, default_value = BUILTIN_PACK_ID)]
        pack: String,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Inspect a case base.
    Cases {
        #[command(subcommand)]
        command: CasesCommand,
    },
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Pack directory, or the id of the built-in pack.
    #[arg(long, default_value = BUILTIN_PACK_ID)]
    pack: String,
    #[arg(long)]
    scenario: PathBuf,
    /// Trace output file; stdout when omitted.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Case base directory; cases are retained there on completion.
    #[arg(long)]
    base: Option<PathBuf>,
    #[arg(long)]
    no_timestamps: bool,
    /// Recorded in the trace. Runs are deterministic without it.
    #[arg(long)]
    seed: Option<u64>,
    /// Run agents of a round on separate threads.
    #[arg(long)]
    threaded: bool,
    /// Number of similar prior cases listed in the trace.
    #[arg(long, default_value_t = 5)]
    similar: usize,
}

#[derive(Subcommand)]
enum CasesCommand {
    /// Case counts per keyword and diagnosis.
    Stats {
        #[arg(long)]
        base: PathBuf,
    },
    /// Rank the cases most similar to a findings file.
    Query {
        #[arg(long)]
        base: PathBuf,
        /// JSON object of sign to value, or a scenario file.
        #[arg(long)]
        findings: PathBuf,
        #[arg(short, default_value_t = 5)]
        k: usize,
        /// Pack whose sign categories weigh the findings.
        #[arg(long, default_value = BUILTIN_PACK_ID)]
        pack: String,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Pack directories or built-in pack ids; the built-in pack by default.
    #[arg(long)]
    pack: Vec<String>,
    /// Case base directory; in memory when omitted.
    #[arg(long)]
    base: Option<PathBuf>,
    /// Session journal directory; sessions are not persisted when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Milliseconds between deadline checks.
    #[arg(long, default_value_t = 1000)]
    tick_ms: u64,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn open_base(dir: Option<&Path>) -> Result<CaseBase, String> {
    match dir {
        Some(dir) => CaseBase::open(dir).map_err(|e| e.to_string()),
        None => Ok(CaseBase::in_memory()),
    }
}

fn execute(command: Command) -> Result<ExitCode, String> {
    match command {
        Command::Run(args) => run(args),
        Command::Lint { pack, json } => {
            let report = if pack == BUILTIN_PACK_ID && !Path::new(&pack).is_dir() {
                lint_files(DomainPack::builtin().files())
            } else {
                lint_pack(&pack)
            };
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                for violation in &report.violations {
                    println!("{violation}");
                }
                eprintln!("{} violation(s)", report.violations.len());
            }
            Ok(if report.is_clean() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Cases {
            command: CasesCommand::Stats { base },
        } => {
            let base = open_base(Some(&base))?;
            println!(
                "{}",
                serde_json::to_string_pretty(&base.stats()).expect("stats serialize")
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Cases {
            command:
                CasesCommand::Query {
                    base,
                    findings,
                    k,
                    pack,
                },
        } => {
            if k == 0 {
                return Err("-k must be at least 1".into());
            }
            let pack = DomainPack::resolve(&pack).map_err(|e| e.to_string())?;
            let mut base = open_base(Some(&base))?;
            base.set_sign_categories(pack.sign_categories());
            let findings = read_findings(&findings)?;
            let query = CaseProfile::new(findings, pack.manifest.keywords.iter().cloned());
            let ranked: Vec<Value> = base
                .retrieve(&query, k, &SimilarityWeights::default())
                .into_iter()
                .map(|(case, score)| serde_json::json!({ "case_id": case.id, "score": score, "result": case.result }))
                .collect();
            println!("{}", serde_json::to_string_pretty(&ranked).expect("ranking serializes"));
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve(args) => serve(args),
    }
}

fn run(args: RunArgs) -> Result<ExitCode, String> {
    let pack = DomainPack::resolve(&args.pack).map_err(|e| e.to_string())?;
    let scenario = load_scenario(&args.scenario).map_err(|e| e.to_string())?;
    let config = EngineConfig {
        scheduler: if args.threaded {
            Scheduler::Threaded
        } else {
            Scheduler::Cooperative
        },
        ..EngineConfig::default()
    };
    let engine = Engine::new(Arc::new(pack))
        .with_cases(open_base(args.base.as_deref())?.shared())
        .with_config(config);
    let options = RunOptions {
        no_timestamps: args.no_timestamps,
        seed: args.seed,
        similar_cases: args.similar,
    };
    let run = run_scenario(&engine, &scenario, &options).map_err(|e| e.to_string())?;
    let json = run.trace.to_json();
    match &args.trace {
        Some(path) => std::fs::write(path, json).map_err(|e| format!("{}: {e}", path.display()))?,
        None => print!("{json}"),
    }
    eprintln!("{}: {:?}", scenario.id, run.trace.outcome);
    Ok(run.trace.outcome.into())
}

fn read_findings(path: &Path) -> Result<BTreeMap<String, FindingValue>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut value: Value = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Some(findings) = value.get_mut("findings") {
        value = findings.take();
    }
    serde_json::from_value(value).map_err(|e| format!("{}: {e}", path.display()))
}

fn serve(args: ServeArgs) -> Result<ExitCode, String> {
    let packs = if args.pack.is_empty() {
        vec![DomainPack::builtin()]
    } else {
        args.pack
            .iter()
            .map(|p| DomainPack::resolve(p).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?
    };
    let cases = open_base(args.base.as_deref())?.shared();
    let config = ServiceConfig {
        data_dir: args.data,
        wall_clock: true,
    };
    let state = Arc::new(AppState::new(packs, cases, &config).map_err(|e| e.to_string())?);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    runtime
        .block_on(service::serve(
            args.addr,
            state,
            Duration::from_millis(args.tick_ms.max(1)),
        ))
        .map_err(|e| e.to_string())?;
    Ok(ExitCode::SUCCESS)
}
