use std::fmt::Write as _;

use thiserror::Error;

use super::{Action, ClusterSpec, EpisodeResult, SimError, SimState, StepOutcome};
use crate::trace::{Op, Request, VmId};

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("step {step} diverged: logged {logged}, replayed {replayed}")]
    Mismatch { step: usize, logged: String, replayed: String },
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayRecord {
    pub step: usize,
    pub request: Request,
    pub action: Action,
    pub reward: f64,
    pub terminal: bool,
}

/// Per-episode, append-only log of consumed events and decisions.
///
/// The text form is one tab-separated record per line:
/// `step  c|d  vm  demand  time  action  reward  terminal`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayLog {
    pub cluster: ClusterSpec,
    pub start: usize,
    pub records: Vec<ReplayRecord>,
}

const MAGIC: &str = "# mico-replay v1";

fn join(v: &[u64]) -> String {
    v.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
}

fn split_u64(s: &str) -> Option<Vec<u64>> {
    if s.is_empty() {
        return Some(Vec::new());
    }
    s.split(',').map(|x| x.parse().ok()).collect()
}

impl ReplayLog {
    pub fn new(cluster: &ClusterSpec, start: usize) -> Self {
        Self { cluster: cluster.clone(), start, records: Vec::new() }
    }

    pub fn push(&mut self, step: usize, request: Request, action: Action, outcome: &StepOutcome) {
        self.records.push(ReplayRecord { step, request, action, reward: outcome.reward, terminal: outcome.terminal });
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let caps: Vec<String> = self.cluster.capacities.iter().map(|c| join(c)).collect();
        writeln!(out, "{MAGIC}").unwrap();
        writeln!(out, "# capacities {}", caps.join(";")).unwrap();
        writeln!(out, "# start {}", self.start).unwrap();
        for r in &self.records {
            let action = match r.action {
                Action::Place(i) => format!("place:{i}"),
                Action::Reject => "reject".into(),
                Action::NoOp => "noop".into(),
            };
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.step,
                if r.request.is_create() { 'c' } else { 'd' },
                r.request.vm_id,
                join(&r.request.demand),
                r.request.time,
                action,
                r.reward,
                u8::from(r.terminal),
            )
            .unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ReplayError> {
        let err = |line: usize, reason: &str| ReplayError::Parse { line, reason: reason.to_owned() };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        if lines.next().map(|(_, l)| l) != Some(MAGIC) {
            return Err(err(1, "missing header"));
        }
        let (n, caps) = lines.next().ok_or_else(|| err(2, "missing capacities"))?;
        let caps = caps.strip_prefix("# capacities ").ok_or_else(|| err(n, "missing capacities"))?;
        let capacities = caps
            .split(';')
            .map(split_u64)
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| err(n, "bad capacities"))?;
        let cluster = ClusterSpec::new(capacities)?;
        let (n, start) = lines.next().ok_or_else(|| err(3, "missing start"))?;
        let start = start
            .strip_prefix("# start ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(n, "bad start"))?;

        let mut records = Vec::new();
        for (n, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 8 {
                return Err(err(n, "expected 8 fields"));
            }
            let op = match f[1] {
                "c" => Op::Create,
                "d" => Op::Delete,
                _ => return Err(err(n, "bad event kind")),
            };
            let action = match f[5] {
                "reject" => Action::Reject,
                "noop" => Action::NoOp,
                a => Action::Place(
                    a.strip_prefix("place:").and_then(|i| i.parse().ok()).ok_or_else(|| err(n, "bad action"))?,
                ),
            };
            records.push(ReplayRecord {
                step: f[0].parse().map_err(|_| err(n, "bad step"))?,
                request: Request {
                    vm_id: VmId(f[2].parse().map_err(|_| err(n, "bad vm id"))?),
                    demand: split_u64(f[3]).ok_or_else(|| err(n, "bad demand"))?,
                    op,
                    time: f[4].parse().map_err(|_| err(n, "bad time"))?,
                },
                action,
                reward: f[6].parse().map_err(|_| err(n, "bad reward"))?,
                terminal: match f[7] {
                    "0" => false,
                    "1" => true,
                    _ => return Err(err(n, "bad terminal flag")),
                },
            });
        }
        Ok(Self { cluster, start, records })
    }
}

/// Re-executes the logged actions on a fresh environment and checks every
/// outcome against the log.
pub fn replay(log: &ReplayLog) -> Result<EpisodeResult, ReplayError> {
    let requests: Vec<Request> = log.records.iter().map(|r| r.request.clone()).collect();
    let mut state = SimState::new(&log.cluster, &requests, 0)?;
    let mut reward = 0.0;
    for (step, rec) in log.records.iter().enumerate() {
        let out = state.step(rec.action)?;
        if rec.step != step || out.reward.to_bits() != rec.reward.to_bits() || out.terminal != rec.terminal {
            return Err(ReplayError::Mismatch {
                step,
                logged: format!("{} reward {} terminal {}", rec.step, rec.reward, rec.terminal),
                replayed: format!("{step} reward {} terminal {}", out.reward, out.terminal),
            });
        }
        reward += out.reward;
    }
    Ok(EpisodeResult {
        scheduled_length: state.placed(),
        steps: state.steps(),
        reward,
        failed: state.is_terminal(),
        trajectory: Some(log.clone()),
    })
}
