//! One function per CLI stage. Each returns a short human-readable summary;
//! artifacts go to the [`Workdir`].

use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use mico_core::heuristics::{Baseline, Lifetimes};
use mico_core::metrics::code_valid_ratio;
use mico_core::oracle::{offline_optimal, OracleError, OracleLimits, OracleResult};
use mico_core::sim::{replay, run_episode_with, ClusterSpec, EpisodeOptions, EpisodeResult, ReplayLog};
use mico_core::trace::{
    generate_scenarios, parse_trace, synth_workload, write_canonical, Lifetime, MixtureSchedule, Request, Scenario,
    Segment,
};
use mico_core::Scored;
use mico_engine::report::{AlgorithmRow, BoxSeries, BoxStats, Bound, HierSummary, PerformanceTable, ReportBundle};
use mico_engine::{
    all_training_starts, build_score_matrix, learn_master, mine_options, prune, run_hierarchical, test_start,
    ComposedMaster, EngineError, MiningReport, OptionLibrary, PruneConfig, ScoreMatrix,
};
use mico_llm::{Gateway, MockBackend, RemoteBackend};
use mico_policy::{CompiledPolicy, PolicyArtifact, Sandbox};
use serde::{Deserialize, Serialize};

use crate::config::{BackendKind, RunConfig};
use crate::workdir::{self, Workdir};
use crate::CliError;

/// Options retained by pruning, with the rule that retained them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneRecord {
    pub rule: PruneConfig,
    /// 1-based option numbers.
    pub kept: Vec<usize>,
    pub library: OptionLibrary,
}

/// Type mixes cycled through by `synth`, one per scenario.
pub const SYNTH_MIXTURES: [[f64; 5]; 6] = [
    [0.8, 0.2, 0.0, 0.0, 0.0],
    [0.5, 0.4, 0.1, 0.0, 0.0],
    [0.1, 0.5, 0.3, 0.1, 0.0],
    [0.0, 0.2, 0.6, 0.2, 0.0],
    [0.2, 0.2, 0.2, 0.2, 0.2],
    [0.0, 0.0, 0.2, 0.4, 0.4],
];

pub fn gateway(cfg: &RunConfig, tokens: u32, wd: &Workdir) -> Result<Gateway, CliError> {
    let sampler = cfg.sampler(tokens);
    let g = match cfg.llm.backend {
        BackendKind::Mock => Gateway::new(MockBackend::new(cfg.seed), sampler)?,
        BackendKind::Remote => {
            Gateway::new(RemoteBackend::from_env(Duration::from_millis(cfg.llm.timeout_ms))?, sampler)?
        }
    };
    let g = g.with_concurrency(cfg.llm.concurrency.max(1));
    Ok(if cfg.llm.transcripts { g.with_transcripts(wd.path("transcripts")) } else { g })
}

fn write_trace(wd: &Workdir, seq: &mico_core::RequestSequence) -> Result<(), CliError> {
    let mut buf = Vec::new();
    write_canonical(seq, &mut buf)?;
    wd.write_text(workdir::TRACE, &String::from_utf8(buf).expect("csv output is utf-8"))?;
    Ok(())
}

pub fn ingest(cfg: &RunConfig, wd: &Workdir, input: &Path) -> Result<String, CliError> {
    let seq = parse_trace(input, &cfg.trace.mapping)?;
    write_trace(wd, &seq)?;
    Ok(format!("ingested {} requests ({} creates) into {}", seq.len(), seq.creates(), wd.path(workdir::TRACE).display()))
}

pub fn synth(
    cfg: &RunConfig,
    wd: &Workdir,
    creates: usize,
    lifetime_mean: f64,
    schedule: Option<&Path>,
) -> Result<String, CliError> {
    let spec = match schedule {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            toml::from_str::<MixtureSchedule>(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => MixtureSchedule::new(
            (0..cfg.general.k)
                .map(|i| Segment {
                    creates,
                    mixture: SYNTH_MIXTURES[i % SYNTH_MIXTURES.len()],
                    lifetime: Lifetime::Exponential { mean: lifetime_mean },
                })
                .collect(),
        ),
    };
    let seq = synth_workload(&spec, cfg.seed)?;
    write_trace(wd, &seq)?;
    Ok(format!("wrote {} requests ({} creates) to {}", seq.len(), seq.creates(), wd.path(workdir::TRACE).display()))
}

pub fn split(cfg: &RunConfig, wd: &Workdir) -> Result<String, CliError> {
    let seq = wd.load_trace()?;
    let scenarios = generate_scenarios(&seq, cfg.window())?;
    let mut out = format!("{} scenarios\n", scenarios.len());
    for s in &scenarios {
        let test = test_start(s, cfg.split())?;
        let _ = writeln!(out, "S{}: requests {}..{} ({} creates), test offset {}", s.index, s.range.start, s.range.end, s.creates(), test);
    }
    wd.write_json(workdir::SCENARIOS, &scenarios)?;
    Ok(out)
}

fn scenarios(wd: &Workdir) -> Result<Vec<Scenario>, CliError> {
    wd.read_json(workdir::SCENARIOS, "split")
}

fn store_population(wd: &Workdir, artifacts: impl IntoIterator<Item = PolicyArtifact>) -> Result<(), CliError> {
    let all: Vec<PolicyArtifact> = artifacts.into_iter().collect();
    wd.store()?.put_all(&all)?;
    Ok(())
}

pub fn mine(cfg: &RunConfig, wd: &Workdir) -> Result<String, CliError> {
    let scenarios = scenarios(wd)?;
    let mcfg = cfg.miner_config()?;
    let g = gateway(cfg, cfg.miner.tokens, wd)?;
    let report = match mine_options(&scenarios, &cfg.cluster(), &g, &Sandbox::default(), &mcfg) {
        Ok(r) => r,
        Err(EngineError::PartialLibrary(r)) => {
            wd.write_json(workdir::MINING, &r)?;
            store_population(wd, r.mined.iter().flat_map(|m| m.population.artifacts()))?;
            return Err(EngineError::PartialLibrary(r).into());
        }
        Err(e) => return Err(e.into()),
    };
    store_population(wd, report.mined.iter().flat_map(|m| m.population.artifacts()))?;
    wd.write_json(workdir::MINING, &report)?;
    wd.write_json(workdir::OPTIONS, &report.library)?;
    let mut out = format!("mined {} options\n", report.library.len());
    for m in &report.mined {
        let _ = writeln!(
            out,
            "S{}: best J {:.3} ({} of {} samples valid), option {}",
            m.option.scenario,
            m.ledger.best_j.last().copied().unwrap_or(f64::NAN),
            m.ledger.valid(),
            m.ledger.sampled(),
            m.option.policy.id
        );
    }
    Ok(out)
}

pub fn prune_stage(cfg: &RunConfig, wd: &Workdir, scores: Option<&Path>) -> Result<String, CliError> {
    let library: OptionLibrary = wd.read_json(workdir::OPTIONS, "mine")?;
    let matrix = match scores {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            ScoreMatrix::from_text(&text)?
        }
        None => build_score_matrix(&library, &scenarios(wd)?, &cfg.cluster(), &cfg.miner_config()?, &Sandbox::default())?,
    };
    if matrix.k() != library.len() {
        return Err(CliError::Usage(format!("score matrix is {0}x{0} but the library has {1} options", matrix.k(), library.len())));
    }
    wd.write_text(workdir::SCORES, &matrix.to_text())?;
    let keep = prune(&matrix, &cfg.prune)?;
    let record = PruneRecord {
        rule: cfg.prune,
        kept: keep.iter().map(|k| k + 1).collect(),
        library: library.subset(&keep),
    };
    wd.write_json(workdir::PRUNED, &record)?;
    Ok(format!("kept options {:?} of {}", record.kept, library.len()))
}

pub fn compose(cfg: &RunConfig, wd: &Workdir) -> Result<String, CliError> {
    let pruned: PruneRecord = wd.read_json(workdir::PRUNED, "prune")?;
    let seq = wd.load_trace()?;
    let scenarios = scenarios(wd)?;
    let starts = all_training_starts(&scenarios, cfg.split())?;
    let g = gateway(cfg, cfg.composer.tokens, wd)?;
    let composed = learn_master(
        &pruned.library.options,
        seq.requests(),
        &starts,
        &cfg.cluster(),
        &g,
        &Sandbox::default(),
        &cfg.composer_config()?,
    )?;
    store_population(wd, composed.population.artifacts())?;
    wd.write_json(workdir::COMPOSITION, &composed)?;
    Ok(format!(
        "master selector {} over {} options, J {:.3} ({} of {} samples valid)",
        composed.master.selector.id,
        pruned.library.len(),
        composed.ledger.best_j.last().copied().unwrap_or(f64::NAN),
        composed.ledger.valid(),
        composed.ledger.sampled()
    ))
}

fn oracle_limits(cfg: &RunConfig, exact: bool) -> OracleLimits {
    OracleLimits {
        max_nodes: cfg.oracle.max_nodes,
        max_time: cfg.oracle.max_seconds.map(Duration::from_secs),
        allow_large: exact,
        parallelism: cfg.parallelism(),
    }
}

/// Offline reference for one test window: a proven optimum when the search
/// closes, otherwise the best length seen by the search or any algorithm.
fn offline_bound(
    cluster: &ClusterSpec,
    window: &[Request],
    limits: &OracleLimits,
    best_online: usize,
) -> Result<(f64, Bound), CliError> {
    match offline_optimal(cluster, window, limits) {
        Ok(r) if r.proven => Ok((r.optimal_length as f64, Bound::Optimal)),
        Ok(r) | Err(OracleError::BudgetExhausted(r)) => {
            Ok((r.optimal_length.max(best_online) as f64, Bound::BestFound))
        }
        Err(OracleError::InstanceTooLarge { .. }) => Ok((best_online as f64, Bound::BestFound)),
        Err(e) => Err(e.into()),
    }
}

enum Algo {
    Baseline(Baseline),
    Option(Scored<CompiledPolicy>),
    Master(mico_engine::HierPolicy),
}

struct Cell {
    length: usize,
    log: Option<ReplayLog>,
    hier: Option<HierSummary>,
}

fn run_algo(algo: &Algo, cfg: &RunConfig, requests: &[Request], start: usize, record: bool) -> Result<Cell, CliError> {
    let cluster = cfg.cluster();
    let opts = EpisodeOptions { record, ..Default::default() };
    let flat = |r: EpisodeResult| Cell { length: r.scheduled_length, log: r.trajectory, hier: None };
    Ok(match algo {
        Algo::Baseline(b) => flat(run_episode_with(b, &cluster, requests, start, opts)?),
        Algo::Option(p) => flat(run_episode_with(p, &cluster, requests, start, opts)?),
        Algo::Master(h) => {
            let exec = mico_engine::ExecConfig { record, ..cfg.exec() };
            let (r, trace) = run_hierarchical(&h.selector, &h.options, &cluster, requests, start, &exec)?;
            Cell { length: r.scheduled_length, log: r.trajectory, hier: Some(HierSummary::of(start, &trace)) }
        }
    })
}

fn slug(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' }).collect()
}

pub struct EvaluateArgs {
    /// Fail unless a composed master exists.
    pub hier: bool,
    pub record: bool,
    /// Lift the desk-scale guard on the offline search.
    pub exact: bool,
}

pub fn evaluate(cfg: &RunConfig, wd: &Workdir, args: &EvaluateArgs) -> Result<ReportBundle, CliError> {
    let seq = wd.load_trace()?;
    let requests = seq.requests();
    let scenarios = scenarios(wd)?;
    let sandbox = Sandbox::default();

    let mut algos: Vec<(String, Algo)> = vec![
        ("Best-Fit".into(), Algo::Baseline(Baseline::BestFit)),
        ("First-Fit".into(), Algo::Baseline(Baseline::FirstFit)),
        ("Hindsight".into(), Algo::Baseline(Baseline::Hindsight(Lifetimes::from_sequence(requests)))),
    ];
    let mut mining: Option<MiningReport> = None;
    if wd.exists(workdir::OPTIONS) {
        let library: OptionLibrary = wd.read_json(workdir::OPTIONS, "mine")?;
        for (def, p) in library.options.iter().zip(library.compile(&sandbox)?) {
            algos.push((format!("Policy{}", def.scenario), Algo::Option(p)));
        }
        mining = Some(wd.read_json(workdir::MINING, "mine")?);
    }
    let mut composed: Option<ComposedMaster> = None;
    if args.hier || wd.exists(workdir::COMPOSITION) {
        let c: ComposedMaster = wd.read_json(workdir::COMPOSITION, "compose")?;
        algos.push(("MiCo".into(), Algo::Master(c.master.compile(&sandbox)?)));
        composed = Some(c);
    }

    let split = cfg.split();
    let limits = oracle_limits(cfg, args.exact);
    let per_scenario = cfg.parallelism().try_map(&scenarios, |s| -> Result<_, CliError> {
        let start = s.range.start + test_start(s, split)?;
        let window = &requests[..s.range.end];
        let cells = algos
            .iter()
            .map(|(_, a)| run_algo(a, cfg, window, start, args.record))
            .collect::<Result<Vec<_>, _>>()?;
        let best = cells.iter().map(|c| c.length).max().unwrap_or(0);
        let bound = offline_bound(&cfg.cluster(), &requests[start..s.range.end], &limits, best)?;
        Ok((cells, bound))
    })?;

    let k = scenarios.len();
    let mut table = PerformanceTable {
        offline: per_scenario.iter().map(|(_, b)| b.0).collect(),
        bounds: per_scenario.iter().map(|(_, b)| b.1).collect(),
        rows: algos.iter().map(|(name, _)| AlgorithmRow { name: name.clone(), online: Vec::with_capacity(k) }).collect(),
    };
    let mut hierarchy = Vec::new();
    for (j, (cells, _)) in per_scenario.into_iter().enumerate() {
        for (i, cell) in cells.into_iter().enumerate() {
            table.rows[i].online.push(cell.length as f64);
            hierarchy.extend(cell.hier);
            if let Some(log) = cell.log {
                wd.write_text(&format!("logs/{}-s{}.log", slug(&algos[i].0), j + 1), &log.to_text())?;
            }
        }
    }
    let boxplot = table
        .rows
        .iter()
        .map(|r| BoxSeries { algorithm: r.name.clone(), lengths: r.online.clone(), stats: BoxStats::of(&r.online) })
        .collect();

    let ledgers = mining.iter().flat_map(|m| m.ledgers()).chain(composed.iter().map(|c| &c.ledger));
    let (valid, total) = ledgers.fold((0, 0), |(v, t), l| (v + l.valid(), t + l.sampled()));
    let bundle = ReportBundle {
        table,
        code_valid_ratio: (total > 0).then(|| code_valid_ratio(valid, total)).transpose()?,
        valid_samples: valid,
        total_samples: total,
        boxplot,
        hierarchy,
    };
    write_report(wd, &bundle)?;
    Ok(bundle)
}

fn hierarchy_tsv(bundle: &ReportBundle) -> String {
    let mut out = String::from("start\tsegments\tdistinct_options\tscheduled_length\tmean_duration\n");
    for h in &bundle.hierarchy {
        let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", h.start, h.segments, h.distinct_options, h.scheduled_length, h.mean_duration);
    }
    out
}

pub fn write_report(wd: &Workdir, bundle: &ReportBundle) -> Result<(), CliError> {
    wd.write_json(workdir::REPORT, bundle)?;
    wd.write_text("report.txt", &bundle.to_text())?;
    wd.write_text("bars.tsv", &bundle.table.bars_tsv())?;
    wd.write_text("boxplot.tsv", &bundle.boxplot_tsv())?;
    wd.write_text("hierarchy.tsv", &hierarchy_tsv(bundle))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Table,
    Json,
    Bars,
    Boxplot,
}

pub fn report(wd: &Workdir, format: ReportFormat) -> Result<String, CliError> {
    let bundle: ReportBundle = wd.read_json(workdir::REPORT, "evaluate")?;
    Ok(match format {
        ReportFormat::Table => bundle.to_text(),
        ReportFormat::Json => serde_json::to_string_pretty(&bundle).expect("report serialises") + "\n",
        ReportFormat::Bars => bundle.table.bars_tsv(),
        ReportFormat::Boxplot => bundle.boxplot_tsv(),
    })
}

pub fn oracle(cfg: &RunConfig, wd: &Workdir, scenario: usize, exact: bool) -> Result<OracleResult, CliError> {
    let seq = wd.load_trace()?;
    let scenarios = scenarios(wd)?;
    let s = scenarios
        .iter()
        .find(|s| s.index == scenario)
        .ok_or_else(|| CliError::Usage(format!("no scenario {scenario}; have 1..={}", scenarios.len())))?;
    let start = s.range.start + test_start(s, cfg.split())?;
    Ok(offline_optimal(&cfg.cluster(), &seq.requests()[start..s.range.end], &oracle_limits(cfg, exact))?)
}

/// Re-executes a logged episode; with `expect`, also checks its length.
pub fn replay_log(path: &Path, expect: Option<usize>) -> Result<String, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let log = ReplayLog::parse(&text)?;
    let r = replay(&log)?;
    if let Some(want) = expect {
        if want != r.scheduled_length {
            return Err(CliError::Mismatch(format!("replayed scheduled length {} != expected {want}", r.scheduled_length)));
        }
    }
    Ok(format!("replayed {} steps: scheduled length {}, failed {}", r.steps, r.scheduled_length, r.failed))
}
