//! Plan search: exact branch-and-bound over activation counts, binary
//! search on the makespan with feasibility checks, and the helpers they
//! share (bounds, warm start, knapsack-style packing, replanning).

mod bnb;
pub mod inner;
pub mod instance;
mod knapsack;
pub mod plan;
mod replan;
mod search;
mod warm;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::catalog::Availability;
use crate::configspace::Configuration;
use crate::costmodel::ThroughputTable;
use crate::error::{Error, Infeasibility, Result};
use crate::workload::DemandMatrix;

pub use inner::{config_times, inner_assign, proportional_assign};
pub use instance::Instance;
pub use plan::{check_plan, makespan_of, Activation, AssignmentEntry, Plan, SolverStats, Violation};
pub use replan::{replan, DeltaReport};
pub use search::{binary_search_on_t, feasibility_check, makespan_bounds};
pub use warm::warm_start;

use bnb::{Evaluator, Leaf, SearchSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Exact,
    BinarySearch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeasibilityMode {
    #[default]
    ExactLp,
    KnapsackGreedy,
}

/// Whether each configuration must receive a whole number of requests of
/// every class or any real share.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    WholeRequests,
    Fluid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub mode: Mode,
    /// Binary search stops once the bracket is at most this many seconds wide.
    pub tolerance: f64,
    /// Seconds; the best plan found so far is returned with its gap.
    pub wall_clock_limit: Option<f64>,
    pub enable_pruning: bool,
    pub enable_warm_start: bool,
    pub enable_lower_bound_stop: bool,
    pub feasibility_mode: FeasibilityMode,
    pub granularity: Granularity,
    /// GB a replica of each model needs; weights the warm-start budget split.
    pub model_memory: BTreeMap<String, f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            mode: Mode::Exact,
            tolerance: 1.0,
            wall_clock_limit: None,
            enable_pruning: true,
            enable_warm_start: true,
            enable_lower_bound_stop: true,
            feasibility_mode: FeasibilityMode::ExactLp,
            granularity: Granularity::WholeRequests,
            model_memory: BTreeMap::new(),
        }
    }
}

impl SolverOptions {
    pub fn fluid() -> Self {
        SolverOptions {
            granularity: Granularity::Fluid,
            ..Self::default()
        }
    }

    fn deadline(&self, start: Instant) -> Option<Instant> {
        self.wall_clock_limit
            .filter(|s| s.is_finite() && *s >= 0.0)
            .map(|s| start + Duration::from_secs_f64(s))
    }
}

/// Work done by a search.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Counters {
    /// Branch-and-bound nodes whose relaxation was solved.
    pub nodes: u64,
    /// Distinct activation vectors whose exact assignment was computed.
    pub leaves: u64,
    pub lp_solves: u64,
    /// Smallest open bound of any whole-request assignment search that hit
    /// its node budget.
    pub unresolved_bound: Option<f64>,
}

impl Counters {
    pub fn evaluated(&self) -> u64 {
        self.nodes + self.leaves
    }
}

pub(crate) fn check_integral(inst: &Instance) -> Result<()> {
    for (k, &f) in inst.keys.iter().zip(&inst.demand) {
        if (f - f.round()).abs() > 1e-9 {
            return Err(Error::NonIntegralDemand {
                model: k.model.clone(),
                workload: k.workload,
                count: f,
            });
        }
    }
    Ok(())
}

/// Builds the solver instance, applying the integrality check and
/// dominance pruning the options ask for.
pub fn prepare_instance(
    configs: &[Configuration],
    table: &ThroughputTable,
    demand: &DemandMatrix,
    budget: f64,
    availability: &Availability,
    options: &SolverOptions,
) -> Result<Instance> {
    let mut inst = Instance::new(configs, table, demand, budget, availability)?;
    if options.granularity == Granularity::WholeRequests {
        check_integral(&inst)?;
    }
    if options.enable_pruning {
        inst.prune_dominated();
    }
    Ok(inst)
}

pub(crate) fn build_plan(inst: &Instance, leaf: &Leaf, mode: &str, counters: &Counters, gap: f64, start: Instant) -> Plan {
    let activations = inst
        .activation_map(&leaf.y)
        .into_iter()
        .map(|(config_id, count)| Activation { config_id, count })
        .collect();
    let gpu_usage = inst
        .types
        .iter()
        .zip(inst.usage_of(&leaf.y))
        .filter(|(_, u)| *u > 0)
        .map(|(t, u)| (t.clone(), u))
        .collect();
    Plan {
        makespan: leaf.t,
        total_cost: leaf.cost,
        activations,
        assignment: inner::entries(inst, &leaf.x),
        gpu_usage,
        solver: SolverStats {
            mode: mode.to_string(),
            gap: counters
                .unresolved_bound
                .map_or(gap, |b| gap.max((leaf.t - b) / leaf.t))
                .max(0.0),
            evaluated_nodes: counters.evaluated(),
            lp_solves: counters.lp_solves,
            wall_s: start.elapsed().as_secs_f64(),
        },
    }
}

/// Solves with the method the options select.
pub fn solve(
    configs: &[Configuration],
    table: &ThroughputTable,
    demand: &DemandMatrix,
    budget: f64,
    availability: &Availability,
    options: &SolverOptions,
) -> Result<Plan> {
    let inst = prepare_instance(configs, table, demand, budget, availability, options)?;
    solve_instance(&inst, options, None)
}

pub(crate) fn solve_instance(inst: &Instance, options: &SolverOptions, seed: Option<Vec<u32>>) -> Result<Plan> {
    match options.mode {
        Mode::Exact => exact_on(inst, options, seed),
        Mode::BinarySearch => search::binary_search_on(inst, options, seed),
    }
}

/// Exact branch-and-bound, regardless of the mode in `options`.
pub fn solve_exact(
    configs: &[Configuration],
    table: &ThroughputTable,
    demand: &DemandMatrix,
    budget: f64,
    availability: &Availability,
    options: &SolverOptions,
) -> Result<Plan> {
    let inst = prepare_instance(configs, table, demand, budget, availability, options)?;
    exact_on(&inst, options, None)
}

pub(crate) fn exact_on(inst: &Instance, options: &SolverOptions, seed: Option<Vec<u32>>) -> Result<Plan> {
    let start = Instant::now();
    let mut counters = Counters::default();
    let lower = search::lower_bound(inst);
    let seed = seed.or_else(|| {
        options
            .enable_warm_start
            .then(|| warm::warm_vector(inst, &options.model_memory))
            .flatten()
    });
    let spec = SearchSpec {
        granularity: options.granularity,
        cutoff: None,
        stop_at: options.enable_lower_bound_stop.then_some(lower * (1.0 + 1e-3)),
        deadline: options.deadline(start),
        seed,
        bounds: None,
        rounding: true,
    };
    let mut eval = Evaluator::new(inst, options.granularity);
    let result = bnb::branch_and_bound(inst, &spec, &mut eval, &mut counters);
    let Some(best) = result.best else {
        return Err(if result.exhausted {
            Error::Infeasible(Infeasibility::Coverage)
        } else {
            Error::Input("wall-clock limit reached before any plan was found".into())
        });
    };
    let gap = if result.exhausted {
        0.0
    } else if result.stopped {
        (best.t - lower) / best.t
    } else {
        (best.t - result.open_bound.min(best.t)) / best.t
    };
    Ok(build_plan(inst, &best, "exact", &counters, gap, start))
}

/// Joint plan for several models sharing budget and availability.
pub fn solve_multi_model(
    per_model: &BTreeMap<String, Vec<Configuration>>,
    table: &ThroughputTable,
    demand: &DemandMatrix,
    budget: f64,
    availability: &Availability,
    options: &SolverOptions,
) -> Result<Plan> {
    let configs: Vec<Configuration> = per_model.values().flatten().cloned().collect();
    solve(&configs, table, demand, budget, availability, options)
}

#[cfg(test)]
mod tests;
