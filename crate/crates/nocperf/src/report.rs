//! CSV and JSON report emission for the CLI.
//!
//! CSV is long-format (one observation per row) so the files drop
//! straight into plotting tools. Float fields print with six decimals,
//! which keeps reruns byte-identical.

use serde::Serialize;

use crate::network::{NetworkSolution, QueueGraph};
use crate::sim::SimReport;

fn f(x: f64) -> String {
    format!("{x:.6}")
}

fn opt(x: Option<f64>) -> String {
    x.map(f).unwrap_or_default()
}

/// One line of the comparison table. Unstable grid points keep their
/// row with empty value columns so the grid shape is preserved.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub topology: String,
    pub burst_prob: f64,
    pub rate: f64,
    pub analytic: Option<f64>,
    pub simulated: Option<f64>,
    /// |analytic − simulated| / simulated × 100.
    pub error_pct: Option<f64>,
    pub baseline: Option<f64>,
    pub baseline_error_pct: Option<f64>,
}

impl ComparisonRow {
    pub fn compute_errors(&mut self) {
        let err = |a: Option<f64>, s: Option<f64>| match (a, s) {
            (Some(a), Some(s)) if s != 0.0 => Some((a - s).abs() / s * 100.0),
            _ => None,
        };
        self.error_pct = err(self.analytic, self.simulated);
        self.baseline_error_pct = err(self.baseline, self.simulated);
    }
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(
        "topology,burst_prob,rate,analytic_latency,simulated_latency,error_pct,baseline_latency,baseline_error_pct\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.topology,
            f(r.burst_prob),
            f(r.rate),
            opt(r.analytic),
            opt(r.simulated),
            opt(r.error_pct),
            opt(r.baseline),
            opt(r.baseline_error_pct),
        ));
    }
    out
}

/// One sweep observation; `latency` is the analytic rate-weighted mean.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub topology: String,
    pub burst_prob: f64,
    pub rate: f64,
    pub latency: Option<f64>,
    /// "ok" or the failure kind ("instability", "non-convergence").
    pub status: String,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("topology,burst_prob,rate,mean_latency,status\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.topology,
            f(r.burst_prob),
            f(r.rate),
            opt(r.latency),
            r.status
        ));
    }
    out
}

/// Per-flow and per-queue analytic results plus solve wall time.
#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeReport {
    pub mean_latency: f64,
    pub wall_time_ms: f64,
    pub iterations: usize,
    pub flows: Vec<FlowRow>,
    pub queues: Vec<QueueRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowRow {
    pub source: usize,
    pub destination: usize,
    pub hops: usize,
    pub rate: f64,
    pub latency: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueueRow {
    pub label: String,
    pub rate: f64,
    pub waiting: f64,
}

pub fn analyze_report(
    graph: &QueueGraph,
    solution: &NetworkSolution,
    wall_time_ms: f64,
) -> AnalyzeReport {
    AnalyzeReport {
        mean_latency: solution.mean_latency,
        wall_time_ms,
        iterations: solution.iterations,
        flows: solution
            .flow_latencies
            .iter()
            .zip(&graph.flows)
            .map(|(l, fl)| FlowRow {
                source: l.source,
                destination: l.destination,
                hops: l.hops,
                rate: fl.arrival.rate,
                latency: l.latency,
            })
            .collect(),
        queues: solution
            .queue_waits
            .iter()
            .map(|q| QueueRow { label: q.label.clone(), rate: q.rate, waiting: q.waiting })
            .collect(),
    }
}

pub fn analyze_csv(report: &AnalyzeReport) -> String {
    let mut out = String::from("record,source,destination,label,rate,value\n");
    for fl in &report.flows {
        out.push_str(&format!(
            "flow_latency,{},{},,{},{}\n",
            fl.source,
            fl.destination,
            f(fl.rate),
            f(fl.latency)
        ));
    }
    for q in &report.queues {
        out.push_str(&format!("queue_wait,,,{},{},{}\n", q.label, f(q.rate), f(q.waiting)));
    }
    out.push_str(&format!("mean_latency,,,,,{}\n", f(report.mean_latency)));
    out
}

pub fn simulate_csv(report: &SimReport) -> String {
    let mut out = String::from("record,source,destination,label,value\n");
    for fl in &report.flows {
        out.push_str(&format!(
            "flow_latency,{},{},,{}\n",
            fl.source,
            fl.destination,
            f(fl.mean_latency)
        ));
    }
    for q in &report.queues {
        out.push_str(&format!("queue_wait,,,{},{}\n", q.label, f(q.mean_wait)));
    }
    out.push_str(&format!("mean_latency,,,,{}\n", f(report.mean_latency)));
    out
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serialization");
    s.push('\n');
    s
}
