//! Assignment of demand to a fixed set of activated configurations.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use crate::configspace::Configuration;
use crate::costmodel::ThroughputTable;
use crate::error::{Error, Result};
use crate::lp::{LinearProgram, Relation};
use crate::workload::DemandMatrix;

use super::instance::Instance;
use super::plan::AssignmentEntry;
use super::{Counters, Granularity};

const FRACTION_EPS: f64 = 1e-12;
const INTEGRAL_EPS: f64 = 1e-6;
/// Node budget of the whole-request search for one activation vector. A
/// search cut short leaves its open bound in `Counters::unresolved_bound`.
const WHOLE_NODE_LIMIT: u64 = 300;

/// Fractions `x[c][k]` and the makespan they produce.
#[derive(Debug, Clone)]
pub(crate) struct Assignment {
    pub t: f64,
    pub x: Vec<Vec<f64>>,
}

/// `max_c Σ_k x·f / (y·h)`.
pub(crate) fn makespan(inst: &Instance, y: &[u32], x: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (c, row) in x.iter().enumerate() {
        if y[c] == 0 {
            continue;
        }
        let mut t = 0.0;
        for (k, &xf) in row.iter().enumerate() {
            if xf > 0.0 {
                let h = inst.rates[c][k].expect("assigned pairs have rates");
                t += xf * inst.demand[k] / (y[c] as f64 * h);
            }
        }
        worst = worst.max(t);
    }
    worst
}

fn pairs(inst: &Instance, y: &[u32]) -> Vec<(usize, usize)> {
    let mut p = Vec::new();
    for c in 0..inst.num_configs() {
        if y[c] == 0 {
            continue;
        }
        for k in 0..inst.num_keys() {
            if inst.rates[c][k].is_some() {
                p.push((c, k));
            }
        }
    }
    p
}

/// Optimal fractional assignment for fixed activations, or `None` when some
/// key has no active configuration able to serve it.
pub(crate) fn fluid(inst: &Instance, y: &[u32], counters: &mut Counters) -> Option<Assignment> {
    if !inst.covers(y) {
        return None;
    }
    let pairs = pairs(inst, y);
    let scale = inst.demand.iter().copied().fold(0.0, f64::max);
    let mut lp = LinearProgram::new();
    let theta = lp.add_var(0.0, None);
    lp.set_objective(theta, 1.0);
    let vars: Vec<usize> = pairs.iter().map(|_| lp.add_var(0.0, None)).collect();
    for k in 0..inst.num_keys() {
        let mut row: Vec<(usize, f64)> = pairs
            .iter()
            .zip(&vars)
            .filter(|((_, pk), _)| *pk == k)
            .map(|(_, &v)| (v, 1.0))
            .collect();
        row.push((theta, -1.0));
        lp.add_constraint(row, Relation::Eq, 0.0);
    }
    for c in 0..inst.num_configs() {
        if y[c] == 0 {
            continue;
        }
        let row: Vec<(usize, f64)> = pairs
            .iter()
            .zip(&vars)
            .filter(|((pc, _), _)| *pc == c)
            .map(|(&(_, k), &v)| (v, inst.demand[k] / scale / (inst.rates[c][k].unwrap() * y[c] as f64)))
            .collect();
        lp.add_constraint(row, Relation::Le, 1.0);
    }
    counters.lp_solves += 1;
    let sol = lp.maximize().optimal()?;
    let th = sol.values[theta];
    if !(th > 1e-15) {
        return None;
    }
    let mut x = vec![vec![0.0; inst.num_keys()]; inst.num_configs()];
    for (&(c, k), &v) in pairs.iter().zip(&vars) {
        x[c][k] = sol.values[v] / th;
    }
    normalize(&mut x);
    let t = makespan(inst, y, &x);
    Some(Assignment { t, x })
}

/// Drops negligible fractions and rescales every key to sum to one.
fn normalize(x: &mut [Vec<f64>]) {
    let keys = x.first().map_or(0, Vec::len);
    for k in 0..keys {
        let mut sum = 0.0;
        for row in x.iter_mut() {
            if row[k] < FRACTION_EPS {
                row[k] = 0.0;
            }
            sum += row[k];
        }
        if sum > 0.0 {
            for row in x.iter_mut() {
                row[k] /= sum;
            }
        }
    }
}

/// Optimal assignment of whole requests for fixed activations: every
/// configuration receives an integral number of requests of each class.
/// `None` when some key cannot be served. Subtrees whose bound exceeds
/// `cutoff` are skipped, so a result above `cutoff` is feasible but not
/// necessarily optimal.
pub(crate) fn whole(inst: &Instance, y: &[u32], cutoff: f64, counters: &mut Counters) -> Option<Assignment> {
    let root = fluid(inst, y, counters)?;
    let pairs = pairs(inst, y);
    let cost: Vec<f64> = pairs
        .iter()
        .map(|&(c, k)| 1.0 / (inst.rates[c][k].unwrap() * y[c] as f64))
        .collect();
    let counts_from = |x: &[Vec<f64>]| -> Vec<f64> { pairs.iter().map(|&(c, k)| x[c][k] * inst.demand[k]).collect() };

    let mut best = round_counts(inst, &pairs, &cost, &counts_from(&root.x));
    let mut best_t = loads_max(inst, &pairs, &cost, &best);
    let lower = root.t;
    if best_t <= lower * (1.0 + 1e-9) || lower > cutoff * (1.0 + 1e-9) {
        return Some(to_assignment(inst, y, &pairs, &best));
    }

    let mut heap = BinaryHeap::new();
    heap.push(WholeNode {
        bound: lower,
        lo: vec![0.0; pairs.len()],
        hi: pairs.iter().map(|&(_, k)| inst.demand[k]).collect(),
        n: counts_from(&root.x),
    });
    let mut explored = 0u64;
    while let Some(node) = heap.pop() {
        if node.bound >= best_t * (1.0 - 1e-9) || node.bound > cutoff * (1.0 + 1e-9) {
            break;
        }
        explored += 1;
        if explored > WHOLE_NODE_LIMIT {
            counters.unresolved_bound = Some(counters.unresolved_bound.map_or(node.bound, |b| b.min(node.bound)));
            break;
        }
        if let Some(cand) = round_counts_within(inst, &pairs, &cost, &node.n, &node.lo, &node.hi) {
            let t = loads_max(inst, &pairs, &cost, &cand);
            if t < best_t * (1.0 - 1e-12) {
                best_t = t;
                best = cand;
            }
        }
        let frac = node
            .n
            .iter()
            .enumerate()
            .map(|(i, v)| (i, (v - v.round()).abs()))
            .filter(|(_, d)| *d > INTEGRAL_EPS)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        let Some((i, _)) = frac else { continue };
        let v = node.n[i];
        let mut down_hi = node.hi.clone();
        down_hi[i] = v.floor();
        let mut up_lo = node.lo.clone();
        up_lo[i] = v.ceil();
        for (lo, hi) in [(node.lo.clone(), down_hi), (up_lo, node.hi.clone())] {
            if let Some((bound, n)) = whole_relaxation(inst, &pairs, &cost, &lo, &hi, counters) {
                if bound < best_t * (1.0 - 1e-9) {
                    heap.push(WholeNode { bound, lo, hi, n });
                }
            }
        }
    }
    Some(to_assignment(inst, y, &pairs, &best))
}

/// Open box of the whole-request search, ordered so the heap pops the
/// smallest bound first.
struct WholeNode {
    bound: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
    n: Vec<f64>,
}

impl PartialEq for WholeNode {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for WholeNode {}

impl PartialOrd for WholeNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for WholeNode {
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound)
    }
}

fn loads_max(inst: &Instance, pairs: &[(usize, usize)], cost: &[f64], n: &[f64]) -> f64 {
    let mut loads = vec![0.0; inst.num_configs()];
    for ((&(c, _), &w), &v) in pairs.iter().zip(cost).zip(n) {
        loads[c] += v * w;
    }
    loads.into_iter().fold(0.0, f64::max)
}

fn to_assignment(inst: &Instance, y: &[u32], pairs: &[(usize, usize)], n: &[f64]) -> Assignment {
    let mut x = vec![vec![0.0; inst.num_keys()]; inst.num_configs()];
    for (&(c, k), &v) in pairs.iter().zip(n) {
        x[c][k] = v / inst.demand[k];
    }
    let t = makespan(inst, y, &x);
    Assignment { t, x }
}

/// Min-makespan LP over request counts with per-pair bounds.
fn whole_relaxation(
    inst: &Instance,
    pairs: &[(usize, usize)],
    cost: &[f64],
    lo: &[f64],
    hi: &[f64],
    counters: &mut Counters,
) -> Option<(f64, Vec<f64>)> {
    if lo.iter().zip(hi).any(|(l, h)| l > h) {
        return None;
    }
    let mut lp = LinearProgram::new();
    let t = lp.add_var(0.0, None);
    lp.set_objective(t, -1.0);
    let vars: Vec<usize> = lo.iter().zip(hi).map(|(&l, &h)| lp.add_var(l, Some(h))).collect();
    for k in 0..inst.num_keys() {
        let row: Vec<(usize, f64)> = pairs
            .iter()
            .zip(&vars)
            .filter(|((_, pk), _)| *pk == k)
            .map(|(_, &v)| (v, 1.0))
            .collect();
        lp.add_constraint(row, Relation::Eq, inst.demand[k]);
    }
    for c in 0..inst.num_configs() {
        let mut row: Vec<(usize, f64)> = pairs
            .iter()
            .zip(&vars)
            .zip(cost)
            .filter(|((&(pc, _), _), _)| pc == c)
            .map(|((_, &v), &w)| (v, w))
            .collect();
        if row.is_empty() {
            continue;
        }
        row.push((t, -1.0));
        lp.add_constraint(row, Relation::Le, 0.0);
    }
    counters.lp_solves += 1;
    let sol = lp.maximize().optimal()?;
    Some((sol.values[t], vars.iter().map(|&v| sol.values[v]).collect()))
}

fn round_counts(inst: &Instance, pairs: &[(usize, usize)], cost: &[f64], n: &[f64]) -> Vec<f64> {
    let lo = vec![0.0; pairs.len()];
    let hi: Vec<f64> = pairs.iter().map(|&(_, k)| inst.demand[k]).collect();
    round_counts_within(inst, pairs, cost, n, &lo, &hi).expect("unbounded rounding always succeeds")
}

/// Floors every count, then hands out the missing requests of each key one
/// at a time to whichever allowed configuration ends up least loaded.
fn round_counts_within(
    inst: &Instance,
    pairs: &[(usize, usize)],
    cost: &[f64],
    n: &[f64],
    lo: &[f64],
    hi: &[f64],
) -> Option<Vec<f64>> {
    let mut out: Vec<f64> = n
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(v, (l, h))| (v + INTEGRAL_EPS).floor().clamp(*l, *h))
        .collect();
    let mut loads = vec![0.0; inst.num_configs()];
    for ((&(c, _), &w), &v) in pairs.iter().zip(cost).zip(&out) {
        loads[c] += v * w;
    }
    for k in 0..inst.num_keys() {
        let idx: Vec<usize> = (0..pairs.len()).filter(|&i| pairs[i].1 == k).collect();
        let mut missing = inst.demand[k] - idx.iter().map(|&i| out[i]).sum::<f64>();
        if missing < -0.5 {
            return None;
        }
        while missing > 0.5 {
            let pick = idx
                .iter()
                .copied()
                .filter(|&i| out[i] + 1.0 <= hi[i] + INTEGRAL_EPS)
                .min_by(|&a, &b| {
                    let la = loads[pairs[a].0] + cost[a];
                    let lb = loads[pairs[b].0] + cost[b];
                    la.total_cmp(&lb).then(a.cmp(&b))
                })?;
            out[pick] += 1.0;
            loads[pairs[pick].0] += cost[pick];
            missing -= 1.0;
        }
    }
    Some(out)
}

/// Dispatches on granularity. The fluid solution is always exact; see
/// [`whole`] for the meaning of `cutoff`.
pub(crate) fn assign(
    inst: &Instance,
    y: &[u32],
    granularity: Granularity,
    cutoff: f64,
    counters: &mut Counters,
) -> Option<Assignment> {
    match granularity {
        Granularity::Fluid => fluid(inst, y, counters),
        Granularity::WholeRequests => whole(inst, y, cutoff, counters),
    }
}

/// Instance over exactly the given active configurations, without any
/// budget or availability limits.
fn active_instance(
    active: &[(&Configuration, u32)],
    table: &ThroughputTable,
    demand: &DemandMatrix,
) -> Result<(Instance, Vec<u32>)> {
    let keys: Vec<_> = demand.positive().map(|(k, _)| k.clone()).collect();
    if keys.is_empty() {
        return Err(Error::Input("demand has no positive entry".into()));
    }
    let active: Vec<&(&Configuration, u32)> = active.iter().filter(|(_, n)| *n > 0).collect();
    let mut types: Vec<String> = active.iter().flat_map(|(c, _)| c.gpu_counts.keys().cloned()).collect();
    types.sort();
    types.dedup();
    let rates: Vec<Vec<Option<f64>>> = active
        .iter()
        .map(|(c, _)| {
            keys.iter()
                .map(|k| {
                    if k.model == c.model {
                        table.rate(&c.id, k.workload).filter(|r| *r > 0.0)
                    } else {
                        None
                    }
                })
                .collect()
        })
        .collect();
    for (ki, key) in keys.iter().enumerate() {
        if !rates.iter().any(|r| r[ki].is_some()) {
            return Err(Error::Unservable {
                model: key.model.clone(),
                workload: key.workload,
            });
        }
    }
    let y: Vec<u32> = active.iter().map(|(_, n)| *n).collect();
    let inst = Instance {
        configs: active.iter().map(|(c, _)| (*c).clone()).collect(),
        demand: keys.iter().map(|k| demand.get(&k.model, k.workload)).collect(),
        keys,
        rates,
        budget: f64::INFINITY,
        usage: active
            .iter()
            .map(|(c, _)| types.iter().map(|t| c.gpu_counts.get(t).copied().unwrap_or(0)).collect())
            .collect(),
        avail: vec![u32::MAX; types.len()],
        types,
        max_copies: y.clone(),
        order: (0..active.len()).collect(),
    };
    Ok((inst, y))
}

pub(crate) fn entries(inst: &Instance, x: &[Vec<f64>]) -> Vec<AssignmentEntry> {
    let mut out = Vec::new();
    for (c, row) in x.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            if v > 0.0 {
                out.push(AssignmentEntry {
                    config_id: inst.configs[c].id.clone(),
                    model: inst.keys[k].model.clone(),
                    workload_id: inst.keys[k].workload,
                    fraction: v,
                });
            }
        }
    }
    out.sort_by(|a, b| {
        (&a.config_id, &a.model, a.workload_id).cmp(&(&b.config_id, &b.model, b.workload_id))
    });
    out
}

/// Minimum-makespan assignment for fixed activations.
pub fn inner_assign(
    active: &[(&Configuration, u32)],
    table: &ThroughputTable,
    demand: &DemandMatrix,
    granularity: Granularity,
) -> Result<(Vec<AssignmentEntry>, f64)> {
    let (inst, y) = active_instance(active, table, demand)?;
    if granularity == Granularity::WholeRequests {
        super::check_integral(&inst)?;
    }
    let mut counters = Counters::default();
    let a = assign(&inst, &y, granularity, f64::INFINITY, &mut counters)
        .ok_or_else(|| Error::Input("assignment linear program failed".into()))?;
    Ok((entries(&inst, &a.x), a.t))
}

/// Splits each class across active configurations in proportion to
/// `y_c · h_{c,w}`.
pub fn proportional_assign(
    active: &[(&Configuration, u32)],
    table: &ThroughputTable,
    demand: &DemandMatrix,
) -> Result<(Vec<AssignmentEntry>, f64)> {
    let (inst, y) = active_instance(active, table, demand)?;
    let mut x = vec![vec![0.0; inst.num_keys()]; inst.num_configs()];
    for k in 0..inst.num_keys() {
        let total: f64 = (0..inst.num_configs())
            .filter_map(|c| inst.rates[c][k].map(|h| h * y[c] as f64))
            .sum();
        for c in 0..inst.num_configs() {
            if let Some(h) = inst.rates[c][k] {
                x[c][k] = h * y[c] as f64 / total;
            }
        }
    }
    let t = makespan(&inst, &y, &x);
    Ok((entries(&inst, &x), t))
}

/// Per-configuration busy time `Σ_w x·f / (y·h)`.
pub fn config_times(
    active: &BTreeMap<String, u32>,
    assignment: &[AssignmentEntry],
    table: &ThroughputTable,
    demand: &DemandMatrix,
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for e in assignment {
        if e.fraction <= 0.0 {
            continue;
        }
        let y = active.get(&e.config_id).copied().unwrap_or(0);
        if y == 0 {
            return Err(Error::Input(format!("`{}` has work but no copies", e.config_id)));
        }
        let h = table.rate(&e.config_id, e.workload_id).ok_or_else(|| Error::MissingRate {
            config: e.config_id.clone(),
            workload: e.workload_id,
        })?;
        *out.entry(e.config_id.clone()).or_insert(0.0) += e.fraction * demand.get(&e.model, e.workload_id) / (y as f64 * h);
    }
    Ok(out)
}
