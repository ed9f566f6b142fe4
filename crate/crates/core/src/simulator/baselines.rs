use std::fmt;
use std::str::FromStr;

use crate::catalog::{Availability, GpuCatalog};
use crate::configspace::Configuration;
use crate::costmodel::ThroughputTable;
use crate::error::{Error, Infeasibility, Result};
use crate::pipeline::{Candidates, PlanningInputs};
use crate::solver::{makespan_of, AssignmentEntry, Granularity, Plan};
use crate::workload::{apportion, DemandMatrix};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BaselineKind {
    /// Equal spend on every GPU type, then the usual solve.
    UniformComposition,
    /// Every stage uses a whole machine's worth of TP.
    UniformDeployment,
    /// The optimized activations with each class split evenly over replicas.
    RoundRobin,
    /// One GPU type only, rented as far as the budget allows.
    Homogeneous(String),
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineKind::UniformComposition => f.write_str("uniform_composition"),
            BaselineKind::UniformDeployment => f.write_str("uniform_deployment"),
            BaselineKind::RoundRobin => f.write_str("round_robin_assignment"),
            BaselineKind::Homogeneous(t) => write!(f, "homogeneous:{t}"),
        }
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform_composition" => Ok(BaselineKind::UniformComposition),
            "uniform_deployment" => Ok(BaselineKind::UniformDeployment),
            "round_robin" | "round_robin_assignment" => Ok(BaselineKind::RoundRobin),
            _ => match s.strip_prefix("homogeneous:").or_else(|| s.strip_prefix("homogeneous(").and_then(|r| r.strip_suffix(')'))) {
                Some(t) if !t.is_empty() => Ok(BaselineKind::Homogeneous(t.to_string())),
                _ => Err(Error::unknown("baseline", s)),
            },
        }
    }
}

/// GPU counts from spending the budget evenly over the available types;
/// what no type's share can use goes to the cheapest types with room left.
pub fn uniform_composition_counts(catalog: &GpuCatalog, availability: &Availability, budget: f64) -> Availability {
    let types: Vec<_> = catalog.types().iter().filter(|t| availability.get(&t.name) > 0).collect();
    let mut counts = Availability::default();
    if types.is_empty() {
        return counts;
    }
    let share = budget / types.len() as f64;
    let mut spent = 0.0;
    for t in &types {
        let n = ((share + 1e-9) / t.price).floor().min(availability.get(&t.name) as f64) as u32;
        counts.set(&t.name, n);
        spent += n as f64 * t.price;
    }
    let mut by_price = types.clone();
    by_price.sort_by(|a, b| a.price.total_cmp(&b.price).then_with(|| a.name.cmp(&b.name)));
    for t in by_price {
        while counts.get(&t.name) < availability.get(&t.name) && spent + t.price <= budget + 1e-9 {
            counts.set(&t.name, counts.get(&t.name) + 1);
            spent += t.price;
        }
    }
    counts
}

fn tagged(mut plan: Plan, kind: &BaselineKind) -> Plan {
    plan.solver.mode = kind.to_string();
    plan
}

/// Replaces the plan's assignment with an even split of every class over
/// the replicas able to serve it; in whole-request mode the split is
/// rounded to whole requests by largest remainder.
pub fn round_robin_assignment(
    plan: &Plan,
    configs: &[Configuration],
    table: &ThroughputTable,
    demand: &DemandMatrix,
    granularity: Granularity,
) -> Result<Plan> {
    let mut assignment = Vec::new();
    for (key, f) in demand.positive() {
        let servers: Vec<(&str, u32)> = plan
            .activations
            .iter()
            .filter(|a| a.count > 0 && table.rate(&a.config_id, key.workload).is_some())
            .filter(|a| configs.iter().any(|c| c.id == a.config_id && c.model == key.model))
            .map(|a| (a.config_id.as_str(), a.count))
            .collect();
        if servers.is_empty() {
            return Err(Error::Unservable {
                model: key.model.clone(),
                workload: key.workload,
            });
        }
        let weights: Vec<f64> = servers.iter().map(|(_, y)| *y as f64).collect();
        let total: f64 = weights.iter().sum();
        let fractions: Vec<f64> = match granularity {
            Granularity::Fluid => weights.iter().map(|w| w / total).collect(),
            Granularity::WholeRequests => apportion(f.round() as u64, &weights)
                .into_iter()
                .map(|n| n as f64 / f)
                .collect(),
        };
        for ((id, _), fraction) in servers.into_iter().zip(fractions) {
            if fraction > 0.0 {
                assignment.push(AssignmentEntry {
                    config_id: id.to_string(),
                    model: key.model.clone(),
                    workload_id: key.workload,
                    fraction,
                });
            }
        }
    }
    let mut out = plan.clone();
    out.assignment = assignment;
    out.makespan = makespan_of(&out, table, demand)?;
    Ok(tagged(out, &BaselineKind::RoundRobin))
}

fn full_machine_tp(inputs: &PlanningInputs, c: &Configuration) -> bool {
    c.stages.iter().all(|s| {
        inputs
            .catalog
            .get(&s.gpu_type)
            .is_some_and(|t| s.tp_degree == t.gpus_per_machine.min(inputs.max_gpus_per_replica))
    })
}

/// Plan for one baseline kind. `optimized` is reused by the round-robin
/// baseline when given; otherwise the optimized plan is solved first.
pub fn baseline(inputs: &PlanningInputs, kind: &BaselineKind, optimized: Option<(&Plan, &Candidates)>) -> Result<Plan> {
    match kind {
        BaselineKind::UniformComposition => {
            let counts = uniform_composition_counts(&inputs.catalog, &inputs.availability, inputs.budget);
            let cands = inputs.candidates_for(&counts)?;
            inputs
                .solve_candidates(&cands, &counts, &inputs.options)
                .map(|p| tagged(p, kind))
        }
        BaselineKind::UniformDeployment => {
            let mut cands = inputs.candidates()?;
            cands.configs.retain(|c| full_machine_tp(inputs, c));
            inputs
                .solve_candidates(&cands, &inputs.availability, &inputs.options)
                .map(|p| tagged(p, kind))
        }
        BaselineKind::RoundRobin => {
            let owned;
            let (plan, cands) = match optimized {
                Some(pair) => pair,
                None => {
                    owned = inputs.plan()?;
                    (&owned.0, &owned.1)
                }
            };
            round_robin_assignment(plan, &cands.configs, &cands.table, &inputs.demand, inputs.options.granularity)
        }
        BaselineKind::Homogeneous(name) => {
            let t = inputs.catalog.require(name)?;
            let n = ((inputs.budget + 1e-9) / t.price).floor() as u32;
            if n == 0 {
                return Err(Error::Infeasible(Infeasibility::BudgetBelowCheapest {
                    cheapest: t.price,
                    budget: inputs.budget,
                }));
            }
            let only = Availability::from_pairs([(name.as_str(), n)]);
            let cands = inputs.candidates_for(&only)?;
            inputs
                .solve_candidates(&cands, &only, &inputs.options)
                .map(|p| tagged(p, kind))
        }
    }
}
