use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::Availability;
use crate::configspace::Configuration;
use crate::costmodel::ThroughputTable;
use crate::error::{Error, Result};
use crate::workload::DemandMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub config_id: String,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentEntry {
    pub config_id: String,
    pub model: String,
    pub workload_id: u32,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub mode: String,
    /// Relative gap between the returned makespan and the best proven bound.
    pub gap: f64,
    pub evaluated_nodes: u64,
    #[serde(default)]
    pub lp_solves: u64,
    pub wall_s: f64,
}

impl Default for SolverStats {
    fn default() -> Self {
        SolverStats {
            mode: "none".into(),
            gap: 0.0,
            evaluated_nodes: 0,
            lp_solves: 0,
            wall_s: 0.0,
        }
    }
}

/// A serving plan: how many copies of each configuration to run and what
/// share of every demanded class each configuration serves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    #[serde(rename = "makespan_s")]
    pub makespan: f64,
    #[serde(rename = "total_cost_per_h")]
    pub total_cost: f64,
    pub activations: Vec<Activation>,
    pub assignment: Vec<AssignmentEntry>,
    pub gpu_usage: BTreeMap<String, u32>,
    pub solver: SolverStats,
}

impl Plan {
    pub fn activation(&self, config_id: &str) -> u32 {
        self.activations
            .iter()
            .find(|a| a.config_id == config_id)
            .map(|a| a.count)
            .unwrap_or(0)
    }

    pub fn activation_map(&self) -> BTreeMap<String, u32> {
        self.activations.iter().map(|a| (a.config_id.clone(), a.count)).collect()
    }

    pub fn fraction(&self, config_id: &str, model: &str, workload: u32) -> f64 {
        self.assignment
            .iter()
            .filter(|e| e.config_id == config_id && e.model == model && e.workload_id == workload)
            .map(|e| e.fraction)
            .sum()
    }

    /// Requests per second over the whole run.
    pub fn throughput(&self, demand: &DemandMatrix) -> f64 {
        if self.makespan > 0.0 {
            demand.total() / self.makespan
        } else {
            0.0
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plans serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("plan", &e))
    }
}

/// `max_c Σ_w x·f / (y·h)` for the plan's activations and assignment.
pub fn makespan_of(plan: &Plan, table: &ThroughputTable, demand: &DemandMatrix) -> Result<f64> {
    let mut per_config: BTreeMap<&str, f64> = BTreeMap::new();
    for e in &plan.assignment {
        if e.fraction <= 0.0 {
            continue;
        }
        let y = plan.activation(&e.config_id);
        if y == 0 {
            return Err(Error::Input(format!(
                "assignment routes work to inactive configuration `{}`",
                e.config_id
            )));
        }
        let h = table.rate(&e.config_id, e.workload_id).ok_or_else(|| Error::MissingRate {
            config: e.config_id.clone(),
            workload: e.workload_id,
        })?;
        let f = demand.get(&e.model, e.workload_id);
        *per_config.entry(&e.config_id).or_insert(0.0) += e.fraction * f / (y as f64 * h);
    }
    Ok(per_config.values().copied().fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Assignment { model: String, workload: u32, sum: f64 },
    FractionRange { config: String, value: f64 },
    Coupling { config: String },
    UnknownConfig { config: String },
    MissingRate { config: String, workload: u32 },
    Makespan { config: String, time: f64, reported: f64 },
    Budget { cost: f64, budget: f64 },
    Availability { gpu_type: String, used: u32, available: u32 },
    ReportedCost { reported: f64, actual: f64 },
    ReportedUsage { gpu_type: String, reported: u32, actual: u32 },
}

/// Recomputes every plan constraint from first principles and lists what
/// does not hold. `tol` is relative.
pub fn check_plan(
    plan: &Plan,
    configs: &[Configuration],
    table: &ThroughputTable,
    demand: &DemandMatrix,
    budget: f64,
    availability: &Availability,
    tol: f64,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let by_id: BTreeMap<&str, &Configuration> = configs.iter().map(|c| (c.id.as_str(), c)).collect();
    let active = plan.activation_map();

    let mut sums: BTreeMap<(String, u32), f64> = BTreeMap::new();
    let mut times: BTreeMap<String, f64> = BTreeMap::new();
    for e in &plan.assignment {
        if !(-tol..=1.0 + tol).contains(&e.fraction) || !e.fraction.is_finite() {
            out.push(Violation::FractionRange {
                config: e.config_id.clone(),
                value: e.fraction,
            });
        }
        *sums.entry((e.model.clone(), e.workload_id)).or_insert(0.0) += e.fraction;
        if e.fraction <= 0.0 {
            continue;
        }
        let y = active.get(&e.config_id).copied().unwrap_or(0);
        if y == 0 {
            out.push(Violation::Coupling {
                config: e.config_id.clone(),
            });
            continue;
        }
        match by_id.get(e.config_id.as_str()) {
            Some(c) if c.model == e.model => {}
            _ => out.push(Violation::UnknownConfig {
                config: e.config_id.clone(),
            }),
        }
        match table.rate(&e.config_id, e.workload_id) {
            Some(h) if h > 0.0 => {
                let f = demand.get(&e.model, e.workload_id);
                *times.entry(e.config_id.clone()).or_insert(0.0) += e.fraction * f / (y as f64 * h);
            }
            _ => out.push(Violation::MissingRate {
                config: e.config_id.clone(),
                workload: e.workload_id,
            }),
        }
    }
    for (key, _) in demand.positive() {
        let sum = sums.get(&(key.model.clone(), key.workload)).copied().unwrap_or(0.0);
        if (sum - 1.0).abs() > tol {
            out.push(Violation::Assignment {
                model: key.model.clone(),
                workload: key.workload,
                sum,
            });
        }
    }
    for (config, time) in times {
        if time > plan.makespan * (1.0 + tol) + tol {
            out.push(Violation::Makespan {
                config,
                time,
                reported: plan.makespan,
            });
        }
    }

    let mut cost = 0.0;
    let mut usage: BTreeMap<String, u32> = BTreeMap::new();
    for (id, &y) in &active {
        match by_id.get(id.as_str()) {
            Some(c) => {
                cost += y as f64 * c.cost;
                for (t, &d) in &c.gpu_counts {
                    *usage.entry(t.clone()).or_insert(0) += d * y;
                }
            }
            None => out.push(Violation::UnknownConfig { config: id.clone() }),
        }
    }
    if cost > budget * (1.0 + tol) + tol {
        out.push(Violation::Budget { cost, budget });
    }
    if (cost - plan.total_cost).abs() > tol * cost.max(1.0) {
        out.push(Violation::ReportedCost {
            reported: plan.total_cost,
            actual: cost,
        });
    }
    for (t, &used) in &usage {
        let available = availability.get(t);
        if used > available {
            out.push(Violation::Availability {
                gpu_type: t.clone(),
                used,
                available,
            });
        }
    }
    let types: std::collections::BTreeSet<&String> = usage.keys().chain(plan.gpu_usage.keys()).collect();
    for t in types {
        let actual = usage.get(t).copied().unwrap_or(0);
        let reported = plan.gpu_usage.get(t).copied().unwrap_or(0);
        if actual != reported {
            out.push(Violation::ReportedUsage {
                gpu_type: t.clone(),
                reported,
                actual,
            });
        }
    }
    out
}
