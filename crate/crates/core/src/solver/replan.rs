//! Re-solving after demand shifts or GPU availability drops, starting from
//! what survives of the previous plan.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::catalog::Availability;
use crate::configspace::Configuration;
use crate::costmodel::ThroughputTable;
use crate::error::Result;
use crate::workload::DemandMatrix;

use super::bnb::Evaluator;
use super::instance::Instance;
use super::{prepare_instance, solve_instance, Activation, Counters, Plan, SolverOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    /// Copies started, per configuration.
    pub added: Vec<Activation>,
    /// Copies stopped, per configuration.
    pub removed: Vec<Activation>,
    /// What the previous deployment still delivers under the new inputs,
    /// after dropping copies the new availability no longer allows.
    pub throughput_before: f64,
    pub throughput_after: f64,
    pub makespan_before: Option<f64>,
    pub makespan_after: f64,
}

/// Previous activations trimmed to the new budget and availability by
/// dropping copies of the most expensive configurations first.
fn survivors(inst: &Instance, previous: &Plan) -> Vec<u32> {
    let mut y = inst.vector_from(previous.activations.iter().map(|a| (a.config_id.as_str(), a.count)));
    for &c in &inst.order {
        while y[c] > 0 && !inst.fits(&y) {
            y[c] -= 1;
        }
    }
    y
}

pub fn replan(
    previous: &Plan,
    configs: &[Configuration],
    table: &ThroughputTable,
    demand: &DemandMatrix,
    budget: f64,
    availability: &Availability,
    options: &SolverOptions,
) -> Result<(Plan, DeltaReport)> {
    let full = Instance::new(configs, table, demand, budget, availability)?;
    let kept = survivors(&full, previous);
    let mut counters = Counters::default();
    let degraded = Evaluator::new(&full, options.granularity).evaluate(&kept, f64::INFINITY, &mut counters);

    let inst = prepare_instance(configs, table, demand, budget, availability, options)?;
    let seed = inst.vector_from(full.activation_map(&kept).iter().map(|(id, &n)| (id.as_str(), n)));
    let plan = solve_instance(&inst, options, inst.covers(&seed).then_some(seed))?;

    let before = previous.activation_map();
    let after = plan.activation_map();
    let ids: BTreeSet<&String> = before.keys().chain(after.keys()).collect();
    let mut added = Vec::new();
    let mut removed = Vec::new();
    for id in ids {
        let b = before.get(id).copied().unwrap_or(0);
        let a = after.get(id).copied().unwrap_or(0);
        if a > b {
            added.push(Activation {
                config_id: id.clone(),
                count: a - b,
            });
        } else if b > a {
            removed.push(Activation {
                config_id: id.clone(),
                count: b - a,
            });
        }
    }
    let total = demand.total();
    let report = DeltaReport {
        added,
        removed,
        throughput_before: degraded.as_ref().map_or(0.0, |l| total / l.t),
        throughput_after: plan.throughput(demand),
        makespan_before: degraded.map(|l| l.t),
        makespan_after: plan.makespan,
    };
    Ok((plan, report))
}
