//! Makespan bounds, feasibility checks and binary search on the makespan.

use std::time::Instant;

use crate::catalog::Availability;
use crate::configspace::Configuration;
use crate::costmodel::ThroughputTable;
use crate::error::{Error, Infeasibility, Result};
use crate::workload::DemandMatrix;

use super::bnb::{self, Evaluator, Leaf, SearchSpec};
use super::instance::Instance;
use super::{build_plan, knapsack, prepare_instance, warm, Counters, FeasibilityMode, Plan, SolverOptions};

/// `max_k f_k / H_k`, where `H_k` is the rate the whole availability (or the
/// whole budget) could reach on key `k` if it served nothing else.
pub(crate) fn lower_bound(inst: &Instance) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..inst.num_keys() {
        let mut by_avail = 0.0;
        for (n, &a) in inst.avail.iter().enumerate() {
            let best_per_gpu = (0..inst.num_configs())
                .filter(|&c| inst.usage[c][n] > 0)
                .filter_map(|c| {
                    let gpus: u32 = inst.usage[c].iter().sum();
                    inst.rates[c][k].map(|h| h / gpus as f64)
                })
                .fold(0.0, f64::max);
            by_avail += a as f64 * best_per_gpu;
        }
        let by_budget = (0..inst.num_configs())
            .filter_map(|c| inst.rates[c][k].map(|h| inst.budget * h / inst.configs[c].cost))
            .fold(0.0, f64::max);
        let h = by_avail.min(by_budget);
        worst = worst.max(if h > 0.0 { inst.demand[k] / h } else { f64::INFINITY });
    }
    worst
}

/// A feasible plan used as the upper end of the search: the cheapest single
/// configuration serving every key, else a greedy cover, else the first plan
/// an exhaustive search finds.
pub(crate) fn upper_plan(inst: &Instance, eval: &mut Evaluator<'_>, counters: &mut Counters) -> Option<Leaf> {
    let n = inst.num_configs();
    let mut singles: Vec<usize> = (0..n)
        .filter(|&c| inst.rates[c].iter().all(Option::is_some))
        .collect();
    singles.sort_by(|&a, &b| {
        inst.configs[a]
            .cost
            .total_cmp(&inst.configs[b].cost)
            .then_with(|| inst.configs[a].id.cmp(&inst.configs[b].id))
    });
    for c in singles {
        let mut y = vec![0; n];
        y[c] = 1;
        if let Some(leaf) = eval.evaluate(&y, f64::INFINITY, counters) {
            return Some(leaf);
        }
    }

    let mut y = vec![0u32; n];
    for k in 0..inst.num_keys() {
        if (0..n).any(|c| y[c] > 0 && inst.rates[c][k].is_some()) {
            continue;
        }
        let pick = (0..n)
            .filter(|&c| inst.rates[c][k].is_some())
            .filter(|&c| {
                let mut t = y.clone();
                t[c] += 1;
                inst.fits(&t)
            })
            .min_by(|&a, &b| {
                let served = |c: usize| inst.rates[c].iter().filter(|r| r.is_some()).count();
                inst.configs[a]
                    .cost
                    .total_cmp(&inst.configs[b].cost)
                    .then(served(b).cmp(&served(a)))
                    .then_with(|| inst.configs[a].id.cmp(&inst.configs[b].id))
            });
        match pick {
            Some(c) => y[c] += 1,
            None => break,
        }
    }
    if let Some(leaf) = eval.evaluate(&y, f64::INFINITY, counters) {
        return Some(leaf);
    }

    let spec = SearchSpec {
        granularity: eval.granularity,
        cutoff: Some(f64::INFINITY),
        ..SearchSpec::default()
    };
    bnb::branch_and_bound(inst, &spec, eval, counters).best
}

/// Sound bounds `T̲ ≤ T* ≤ T̄` on the optimal makespan.
pub fn makespan_bounds(
    configs: &[Configuration],
    table: &ThroughputTable,
    demand: &DemandMatrix,
    budget: f64,
    availability: &Availability,
    options: &SolverOptions,
) -> Result<(f64, f64)> {
    let inst = prepare_instance(configs, table, demand, budget, availability, options)?;
    let mut counters = Counters::default();
    let mut eval = Evaluator::new(&inst, options.granularity);
    let upper = upper_plan(&inst, &mut eval, &mut counters).ok_or(Error::Infeasible(Infeasibility::Coverage))?;
    Ok((lower_bound(&inst), upper.t))
}

/// A plan with makespan at most `t_hat`, or a value the optimum is known
/// to reach (just `t_hat` when nothing stronger was proven).
pub(crate) fn feasible_at(
    inst: &Instance,
    t_hat: f64,
    mode: FeasibilityMode,
    rounding: bool,
    eval: &mut Evaluator<'_>,
    counters: &mut Counters,
    deadline: Option<Instant>,
) -> std::result::Result<Leaf, f64> {
    if !(t_hat > 0.0) {
        return Err(t_hat.max(0.0));
    }
    match mode {
        FeasibilityMode::ExactLp => {
            let spec = SearchSpec {
                granularity: eval.granularity,
                cutoff: Some(t_hat),
                deadline,
                rounding,
                ..SearchSpec::default()
            };
            let r = bnb::branch_and_bound(inst, &spec, eval, counters);
            match r.best {
                Some(leaf) => Ok(leaf),
                None if r.exhausted => Err(r.pruned_bound.max(t_hat)),
                None => Err(t_hat),
            }
        }
        FeasibilityMode::KnapsackGreedy => knapsack::pack(inst, t_hat, eval, counters).ok_or(t_hat),
    }
}

/// A plan with makespan at most `t_hat`, or `None`.
pub fn feasibility_check(
    t_hat: f64,
    configs: &[Configuration],
    table: &ThroughputTable,
    demand: &DemandMatrix,
    budget: f64,
    availability: &Availability,
    options: &SolverOptions,
) -> Result<Option<Plan>> {
    let start = Instant::now();
    let inst = prepare_instance(configs, table, demand, budget, availability, options)?;
    let mut counters = Counters::default();
    let mut eval = Evaluator::new(&inst, options.granularity);
    let leaf = feasible_at(
        &inst,
        t_hat,
        options.feasibility_mode,
        true,
        &mut eval,
        &mut counters,
        options.deadline(start),
    )
    .ok();
    Ok(leaf.map(|l| build_plan(&inst, &l, "feasibility", &counters, 0.0, start)))
}

/// Bisects `[T̲, T̄]` with feasibility checks until the bracket is at most
/// `options.tolerance` wide.
pub fn binary_search_on_t(
    configs: &[Configuration],
    table: &ThroughputTable,
    demand: &DemandMatrix,
    budget: f64,
    availability: &Availability,
    options: &SolverOptions,
) -> Result<Plan> {
    let inst = prepare_instance(configs, table, demand, budget, availability, options)?;
    binary_search_on(&inst, options, None)
}

pub(crate) fn binary_search_on(inst: &Instance, options: &SolverOptions, seed: Option<Vec<u32>>) -> Result<Plan> {
    let start = Instant::now();
    let deadline = options.deadline(start);
    let mut counters = Counters::default();
    let mut eval = Evaluator::new(inst, options.granularity);
    let formula_lower = lower_bound(inst);

    let seed = seed.or_else(|| {
        options
            .enable_warm_start
            .then(|| warm::warm_vector(inst, &options.model_memory))
            .flatten()
    });
    let warm = seed.and_then(|y| eval.evaluate(&y, f64::INFINITY, &mut counters));
    let mut best = match warm {
        Some(leaf) => leaf,
        None => upper_plan(inst, &mut eval, &mut counters).ok_or(Error::Infeasible(Infeasibility::Coverage))?,
    };
    // The root relaxation is a bound at least as good as any single-key one.
    let root = eval
        .relax_node(&vec![0; inst.num_configs()], &inst.max_copies, &mut counters)
        .map(|(t, _)| t);
    let mut lo = formula_lower.max(root.unwrap_or(0.0)).min(best.t);
    let stop_at = options.enable_lower_bound_stop.then_some(formula_lower * (1.0 + 1e-3));
    let tolerance = options.tolerance.max(0.0);
    let mut timed_out = false;
    let mut optimistic = false;
    loop {
        // A zero tolerance still needs a strict improvement per probe.
        let step = tolerance.max(best.t * 1e-9);
        if best.t - lo <= step || stop_at.is_some_and(|s| best.t <= s) {
            break;
        }
        if deadline.is_some_and(|d| Instant::now() >= d) {
            timed_out = true;
            break;
        }
        // Near the end, ask directly whether the incumbent can be beaten by
        // more than the tolerance. That probe usually has to prove
        // infeasibility, where rounded candidates are wasted work.
        let bisect = best.t - lo > 2.0 * step;
        let mid = if !bisect {
            best.t - step
        } else if optimistic {
            // The bound just proven is often attained; check that first.
            lo + step
        } else {
            0.5 * (lo + best.t)
        };
        optimistic = false;
        match feasible_at(inst, mid, options.feasibility_mode, bisect, &mut eval, &mut counters, deadline) {
            Ok(leaf) if leaf.t < best.t => {
                debug_assert!(leaf.t <= mid * (1.0 + 1e-9), "feasible plan above the target");
                best = leaf;
            }
            // Within rounding of the incumbent: the bracket is closed.
            Ok(_) => {
                lo = lo.max(mid.min(best.t));
                if !bisect {
                    break;
                }
            }
            Err(proven) => {
                optimistic = proven > mid * (1.0 + 1e-9);
                lo = lo.max(proven.min(best.t));
                if !bisect {
                    break;
                }
            }
        }
    }
    let gap = if timed_out || options.feasibility_mode == FeasibilityMode::ExactLp {
        (best.t - lo) / best.t
    } else {
        0.0
    };
    Ok(build_plan(inst, &best, "binary_search", &counters, gap, start))
}
