//! Plan evaluation: the analytic makespan, a request-level queue simulation
//! and the ablation baselines a plan is compared against.

mod baselines;
mod events;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::costmodel::ThroughputTable;
use crate::error::Result;
use crate::solver::{makespan_of, Plan};
use crate::workload::DemandMatrix;

pub use baselines::{baseline, round_robin_assignment, uniform_composition_counts, BaselineKind};
pub use events::{simulate_events, Dispatch};

/// Latency at p5, p10, …, p100, in rank order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Percentiles(pub Vec<(u32, f64)>);

impl Percentiles {
    pub const RANKS: [u32; 20] = [5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 55, 60, 65, 70, 75, 80, 85, 90, 95, 100];

    /// Nearest-rank percentiles of `values` (need not be sorted).
    pub fn of(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        Percentiles(
            Self::RANKS
                .iter()
                .map(|&p| {
                    if n == 0 {
                        return (p, 0.0);
                    }
                    let rank = ((p as f64 / 100.0) * n as f64).ceil().max(1.0) as usize;
                    (p, sorted[rank.min(n) - 1])
                })
                .collect(),
        )
    }

    pub fn get(&self, rank: u32) -> Option<f64> {
        self.0.iter().find(|(p, _)| *p == rank).map(|(_, v)| *v)
    }
}

impl Serialize for Percentiles {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (p, v) in &self.0 {
            map.serialize_entry(&format!("p{p}"), v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Percentiles {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Percentiles;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a map from `pN` to seconds")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> std::result::Result<Percentiles, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = access.next_entry::<String, f64>()? {
                    let rank = k
                        .strip_prefix('p')
                        .and_then(|r| r.parse().ok())
                        .ok_or_else(|| serde::de::Error::custom(format!("bad percentile key `{k}`")))?;
                    out.push((rank, v));
                }
                out.sort_by_key(|(p, _)| *p);
                Ok(Percentiles(out))
            }
        }
        deserializer.deserialize_map(V)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    /// Last completion minus first arrival, seconds.
    pub makespan: f64,
    /// Requests per second over the makespan.
    pub throughput: f64,
    pub latency_percentiles: Percentiles,
    pub per_replica_utilization: BTreeMap<String, f64>,
    /// Rental cost of the plan over the makespan.
    pub total_cost_for_run: f64,
    pub requests: usize,
}

impl SimReport {
    /// Aligned two-column text rendering.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![
            ("requests".into(), self.requests.to_string()),
            ("makespan_s".into(), format!("{:.3}", self.makespan)),
            ("throughput_rps".into(), format!("{:.4}", self.throughput)),
            ("total_cost_for_run_usd".into(), format!("{:.4}", self.total_cost_for_run)),
        ];
        for (p, v) in &self.latency_percentiles.0 {
            rows.push((format!("latency_p{p}_s"), format!("{v:.3}")));
        }
        for (r, u) in &self.per_replica_utilization {
            rows.push((format!("utilization {r}"), format!("{u:.3}")));
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v:>12}");
        }
        out
    }
}

/// One simulated request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub arrival_s: f64,
    pub start_s: f64,
    pub end_s: f64,
    pub replica_id: String,
    pub class_id: u32,
}

pub fn completions_csv(completions: &[Completion]) -> String {
    let mut out = String::from("arrival_s,start_s,end_s,replica_id,class_id\n");
    for c in completions {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            c.arrival_s, c.start_s, c.end_s, c.replica_id, c.class_id
        );
    }
    out
}

/// Makespan of the plan's assignment computed from the table.
pub fn evaluate_analytic(plan: &Plan, table: &ThroughputTable, demand: &DemandMatrix) -> Result<f64> {
    makespan_of(plan, table, demand)
}

#[cfg(test)]
mod tests;
