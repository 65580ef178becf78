use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{Request, RequestSequence, TraceError};

/// How the timeline is cut into scenarios.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    /// `W` requests per scenario; the last one may be shorter.
    Count(usize),
    /// `W` trace time units per scenario, measured from the first timestamp.
    /// Windows with no requests are dropped.
    Time(u64),
    /// `K` slices whose lengths differ by at most one request.
    Equal(usize),
}

impl Default for Window {
    fn default() -> Self {
        Window::Equal(6)
    }
}

/// A contiguous slice of a request stream.
///
/// A slice is not necessarily a well-formed sequence on its own (it may
/// delete VMs created before it starts), so it keeps raw requests.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    /// 1-based.
    pub index: usize,
    /// Position of the slice inside the parent sequence.
    pub range: Range<usize>,
    pub window: Window,
    pub requests: Vec<Request>,
}

impl Scenario {
    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn creates(&self) -> usize {
        self.requests.iter().filter(|r| r.is_create()).count()
    }

    /// A scenario spanning the whole sequence.
    pub fn whole(seq: &RequestSequence) -> Self {
        Self {
            index: 1,
            range: 0..seq.len(),
            window: Window::Count(seq.len().max(1)),
            requests: seq.requests().to_vec(),
        }
    }
}

fn from_ranges(seq: &RequestSequence, window: Window, ranges: Vec<Range<usize>>) -> Vec<Scenario> {
    ranges
        .into_iter()
        .enumerate()
        .map(|(i, range)| Scenario {
            index: i + 1,
            requests: seq[range.clone()].to_vec(),
            range,
            window,
        })
        .collect()
}

pub fn generate_scenarios(seq: &RequestSequence, window: Window) -> Result<Vec<Scenario>, TraceError> {
    if seq.is_empty() {
        return Err(TraceError::EmptySequence);
    }
    let t = seq.len();
    let ranges: Vec<Range<usize>> = match window {
        Window::Count(0) | Window::Time(0) | Window::Equal(0) => return Err(TraceError::InvalidWindow),
        Window::Count(w) => (0..t).step_by(w).map(|s| s..(s + w).min(t)).collect(),
        Window::Equal(k) => {
            let k = k.min(t);
            (0..k).map(|i| i * t / k..(i + 1) * t / k).collect()
        }
        Window::Time(w) => {
            let t0 = seq[0].time;
            let mut ranges = Vec::new();
            let mut start = 0;
            for i in 1..t {
                if (seq[i].time - t0) / w != (seq[i - 1].time - t0) / w {
                    ranges.push(start..i);
                    start = i;
                }
            }
            ranges.push(start..t);
            ranges
        }
    };
    Ok(from_ranges(seq, window, ranges))
}

/// Balanced partition into `k` equal-length scenarios.
pub fn split_equal(seq: &RequestSequence, k: usize) -> Result<Vec<Scenario>, TraceError> {
    generate_scenarios(seq, Window::Equal(k))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Evenly spaced starting points per scenario; all but the last are
    /// training starts.
    pub n_starts: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { n_starts: 6 }
    }
}

/// Starting offsets relative to the scenario's first request.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitOffsets {
    pub train: Vec<usize>,
    pub test: usize,
}

impl SplitOffsets {
    pub fn all(&self) -> impl Iterator<Item = usize> + '_ {
        self.train.iter().copied().chain(std::iter::once(self.test))
    }
}

pub fn split_train_test(scenario: &Scenario, spec: SplitSpec) -> Result<SplitOffsets, TraceError> {
    let n = spec.n_starts;
    let len = scenario.len();
    if n == 0 {
        return Err(TraceError::InvalidWindow);
    }
    if len < n {
        return Err(TraceError::ScenarioTooShort { len, n_starts: n });
    }
    let mut offsets: Vec<usize> = (0..n).map(|i| i * len / n).collect();
    let test = offsets.pop().unwrap_or(0);
    Ok(SplitOffsets { train: offsets, test })
}
