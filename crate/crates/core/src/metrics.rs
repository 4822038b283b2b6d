//! Run metrics and their serialized forms.
//!
//! One [`MetricsRecord`] is captured per recording stride; a run's
//! records form a [`MetricsSeries`] that can be written as CSV or JSON
//! with identical field names. All floating-point values are formatted
//! with Rust's shortest-roundtrip representation, so equal runs produce
//! byte-identical files — the determinism guarantee leans on this.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::ControlDecision;
use crate::network::NetworkGraph;

/// Network-wide measurements at one instant.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub time: f64,
    /// Vehicles anywhere in the network, source queues included.
    pub total_vehicles: f64,
    pub source_queue_total: f64,
    /// Rate of vehicles leaving the network (veh/s) during the last step.
    pub throughput: f64,
    /// Seconds of delay accrued per second (veh·s/s).
    pub delay_rate: f64,
    /// Most recent energy sample (held between energy strides).
    pub lyapunov_v: f64,
    /// Active phase ids, `;`-separated in node order.
    pub active_phases: String,
}

pub const CSV_HEADER: &str =
    "time,total_vehicles,source_queue_total,throughput,delay_rate,lyapunov_v,active_phases";

impl MetricsRecord {
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.time,
            self.total_vehicles,
            self.source_queue_total,
            self.throughput,
            self.delay_rate,
            self.lyapunov_v,
            self.active_phases
        )
    }
}

/// All records of one run, in time order.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MetricsSeries {
    pub rows: Vec<MetricsRecord>,
}

impl MetricsSeries {
    pub fn push(&mut self, r: MetricsRecord) {
        self.rows.push(r);
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.rows).expect("metrics rows serialize")
    }

    pub fn write_csv(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.to_csv_string())
    }

    pub fn write_json(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.to_json_string())
    }

    pub fn last(&self) -> Option<&MetricsRecord> {
        self.rows.last()
    }
}

/// Tidy long-format plot data for any number of runs: one row per
/// (run, time, metric) with the same metric names as the CSV columns.
pub fn plot_data(runs: &[(&str, &MetricsSeries)]) -> String {
    let mut out = String::from("run,t,metric,value\n");
    for (id, series) in runs {
        for r in &series.rows {
            for (name, v) in [
                ("total_vehicles", r.total_vehicles),
                ("source_queue_total", r.source_queue_total),
                ("throughput", r.throughput),
                ("delay_rate", r.delay_rate),
                ("lyapunov_v", r.lyapunov_v),
            ] {
                out.push_str(&format!("{id},{},{name},{v}\n", r.time));
            }
        }
    }
    out
}

/// Decision audit log: when each node decided, every candidate's score,
/// what was chosen, and whether randomization broke a tie.
pub fn decisions_csv(graph: &NetworkGraph, decisions: &[ControlDecision]) -> String {
    let mut out = String::from("time,node,scores,chosen,tie\n");
    for d in decisions {
        let scores = d
            .scores
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            d.time,
            graph.node(d.node).id,
            scores,
            d.chosen,
            d.tie
        ));
    }
    out
}
