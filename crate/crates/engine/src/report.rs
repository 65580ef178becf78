use std::fmt::Write as _;

use mico_core::metrics::{format_percent, mean_ratio, performance_ratio, MetricError};
use serde::{Deserialize, Serialize};

use crate::exec::HierTrace;

/// Where the offline reference of a column comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    /// Exact offline optimum.
    Optimal,
    /// Best length any evaluated algorithm reached; ratios are then upper bounds.
    BestFound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmRow {
    pub name: String,
    /// Mean online scheduled length per scenario.
    pub online: Vec<f64>,
}

/// Algorithms by scenarios, as performance ratios against the offline column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerformanceTable {
    pub offline: Vec<f64>,
    pub bounds: Vec<Bound>,
    pub rows: Vec<AlgorithmRow>,
}

impl PerformanceTable {
    pub fn ratio(&self, row: usize, j: usize) -> Result<f64, MetricError> {
        performance_ratio(self.rows[row].online[j], self.offline[j])
    }

    /// Sum of online over sum of offline across scenarios.
    pub fn mean(&self, row: usize) -> Result<f64, MetricError> {
        mean_ratio(&self.rows[row].online, &self.offline)
    }

    pub fn to_table(&self) -> String {
        let k = self.offline.len();
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(9).max(9);
        let mut out = format!("{:<width$}", "Algorithm");
        for j in 0..k {
            let mark = if self.bounds.get(j) == Some(&Bound::BestFound) { "*" } else { "" };
            let _ = write!(out, " | {:>7}", format!("S{}{mark}", j + 1));
        }
        out.push_str(" |    Mean\n");
        let _ = writeln!(out, "{}", "-".repeat(width + 10 * (k + 1)));
        for (i, r) in self.rows.iter().enumerate() {
            let _ = write!(out, "{:<width$}", r.name);
            for j in 0..k {
                let cell = self.ratio(i, j).map(format_percent).unwrap_or_else(|_| "n/a".into());
                let _ = write!(out, " | {cell:>7}");
            }
            let mean = self.mean(i).map(format_percent).unwrap_or_else(|_| "n/a".into());
            let _ = writeln!(out, " | {mean:>7}");
        }
        if self.bounds.contains(&Bound::BestFound) {
            out.push_str("* offline column is the best length found, not a proven optimum\n");
        }
        out
    }
}

impl PerformanceTable {
    /// Per-scenario performance ratios as tab-separated text, one row per
    /// algorithm; `nan` where the ratio is undefined.
    pub fn bars_tsv(&self) -> String {
        let mut out = String::from("algorithm");
        for j in 0..self.offline.len() {
            let _ = write!(out, "\tS{}", j + 1);
        }
        out.push_str("\tmean\n");
        for (i, r) in self.rows.iter().enumerate() {
            out.push_str(&r.name);
            for j in 0..self.offline.len() {
                let _ = write!(out, "\t{}", self.ratio(i, j).unwrap_or(f64::NAN));
            }
            let _ = writeln!(out, "\t{}", self.mean(i).unwrap_or(f64::NAN));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxStats {
    /// Linear-interpolated quartiles; `None` for no samples.
    pub fn of(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut v = samples.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Self { min: v[0], q1: q(0.25), median: q(0.5), q3: q(0.75), max: v[v.len() - 1] })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxSeries {
    pub algorithm: String,
    pub lengths: Vec<f64>,
    pub stats: Option<BoxStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierSummary {
    pub start: usize,
    pub segments: usize,
    pub distinct_options: usize,
    pub scheduled_length: usize,
    pub mean_duration: f64,
}

impl HierSummary {
    pub fn of(start: usize, t: &HierTrace) -> Self {
        let n = t.segments.len();
        Self {
            start,
            segments: n,
            distinct_options: t.distinct_options(),
            scheduled_length: t.scheduled_length,
            mean_duration: if n == 0 { 0.0 } else { t.segments.iter().map(|s| s.duration).sum::<usize>() as f64 / n as f64 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub table: PerformanceTable,
    /// Percentage, when any samples were generated.
    pub code_valid_ratio: Option<f64>,
    pub valid_samples: usize,
    pub total_samples: usize,
    pub boxplot: Vec<BoxSeries>,
    pub hierarchy: Vec<HierSummary>,
}

impl ReportBundle {
    pub fn to_text(&self) -> String {
        let mut out = self.table.to_table();
        match self.code_valid_ratio {
            Some(r) => {
                let _ = writeln!(out, "\nCode valid ratio: {} ({} of {})", format_percent(r), self.valid_samples, self.total_samples);
            }
            None => out.push_str("\nCode valid ratio: n/a (no generated samples)\n"),
        }
        out
    }

    /// Box-plot quantiles as tab-separated text for external plotting.
    pub fn boxplot_tsv(&self) -> String {
        let mut out = String::from("algorithm\tmin\tq1\tmedian\tq3\tmax\n");
        for s in &self.boxplot {
            if let Some(b) = s.stats {
                let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}\t{}", s.algorithm, b.min, b.q1, b.median, b.q3, b.max);
            }
        }
        out
    }
}
