use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mico_cli::stages::{self, EvaluateArgs, ReportFormat};
use mico_cli::{resolve_config, BackendKind, CliError, RunConfig, Workdir};

#[derive(Parser)]
#[command(name = "mico", version, about = "Scenario-mined, context-composed VM placement policies")]
struct Cli {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set general.k=4`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Shorthand for `--set paths.work_dir=DIR`.
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    /// Shorthand for `--set llm.backend=...`.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective configuration.
    Config,
    /// Convert a raw trace into the canonical run trace.
    Ingest { trace: PathBuf },
    /// Generate a synthetic trace with one type mix per scenario.
    Synth {
        /// Creates per segment.
        #[arg(long, default_value_t = 1000)]
        creates: usize,
        /// Mean VM lifetime in creates.
        #[arg(long, default_value_t = 350.0)]
        lifetime_mean: f64,
        /// TOML mixture schedule replacing the built-in segments.
        #[arg(long)]
        schedule: Option<PathBuf>,
    },
    /// Cut the trace into scenarios.
    Split,
    /// Evolve one priority policy per scenario.
    Mine,
    /// Score every option on every scenario and keep the robust ones.
    Prune {
        /// Use a saved score matrix instead of re-scoring.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Evolve the master selector over the retained options.
    Compose,
    /// Run every algorithm on each scenario's held-out window.
    Evaluate {
        /// Require the composed master.
        #[arg(long)]
        hier: bool,
        /// Write replay logs under logs/.
        #[arg(long)]
        record: bool,
        /// Run the exact search even above the desk-scale guard.
        #[arg(long)]
        exact: bool,
    },
    /// Exact offline optimum of one scenario's held-out window.
    Oracle {
        #[arg(long)]
        scenario: usize,
        #[arg(long)]
        exact: bool,
    },
    /// Re-execute a replay log and check every step.
    Replay {
        log: PathBuf,
        /// Expected scheduled length.
        #[arg(long)]
        expect: Option<usize>,
    },
    /// Print the last evaluation.
    Report {
        #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
        format: ReportFormat,
    },
    /// split, mine, prune, compose and evaluate in order.
    Run,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Config => "config",
            Command::Ingest { .. } => "ingest",
            Command::Synth { .. } => "synth",
            Command::Split => "split",
            Command::Mine => "mine",
            Command::Prune { .. } => "prune",
            Command::Compose => "compose",
            Command::Evaluate { .. } => "evaluate",
            Command::Oracle { .. } => "oracle",
            Command::Replay { .. } => "replay",
            Command::Report { .. } => "report",
            Command::Run => "run",
        }
    }
}

fn config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut overrides = cli.overrides.clone();
    if let Some(dir) = &cli.work_dir {
        overrides.push(format!("paths.work_dir={}", toml::Value::String(dir.display().to_string())));
    }
    if let Some(b) = cli.backend {
        overrides.push(format!("llm.backend={}", if b == BackendKind::Remote { "remote" } else { "mock" }));
    }
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    resolve_config(cli.config.as_deref(), &overrides)
}

fn execute(cli: &Cli) -> Result<String, CliError> {
    let cfg = config(cli)?;
    if let Command::Replay { log, expect } = &cli.command {
        return stages::replay_log(log, *expect);
    }
    if let Command::Config = cli.command {
        return Ok(cfg.to_toml());
    }
    let wd = Workdir::open(&cfg.paths.work_dir)?;
    match &cli.command {
        Command::Ingest { trace } => stages::ingest(&cfg, &wd, trace),
        Command::Synth { creates, lifetime_mean, schedule } => {
            stages::synth(&cfg, &wd, *creates, *lifetime_mean, schedule.as_deref())
        }
        Command::Split => stages::split(&cfg, &wd),
        Command::Mine => stages::mine(&cfg, &wd),
        Command::Prune { scores } => stages::prune_stage(&cfg, &wd, scores.as_deref()),
        Command::Compose => stages::compose(&cfg, &wd),
        Command::Evaluate { hier, record, exact } => {
            let args = EvaluateArgs { hier: *hier, record: *record, exact: *exact };
            stages::evaluate(&cfg, &wd, &args).map(|b| b.to_text())
        }
        Command::Oracle { scenario, exact } => stages::oracle(&cfg, &wd, *scenario, *exact)
            .map(|r| serde_json::to_string_pretty(&r).expect("oracle result serialises")),
        Command::Report { format } => stages::report(&wd, *format),
        Command::Run => {
            let mut out = stages::split(&cfg, &wd)?;
            out += &stages::mine(&cfg, &wd)?;
            out += &stages::prune_stage(&cfg, &wd, None)?;
            out.push('\n');
            out += &stages::compose(&cfg, &wd)?;
            out.push_str("\n\n");
            let args = EvaluateArgs { hier: true, record: false, exact: false };
            out += &stages::evaluate(&cfg, &wd, &args)?.to_text();
            Ok(out)
        }
        Command::Config | Command::Replay { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(out) => {
            print!("{out}");
            if !out.ends_with('\n') {
                println!();
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.record(cli.command.name()));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
