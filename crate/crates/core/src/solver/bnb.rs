//! Branch-and-bound over activation counts.
//!
//! With `θ = 1/T` the planning problem becomes linear: maximize `θ` subject
//! to `Σ_c r_{c,k} = θ·f_k`, `Σ_k r_{c,k}/h_{c,k} ≤ y_c`, budget and
//! availability. Relaxing integrality of `y` gives a lower bound on the
//! makespan of every activation vector inside a node's box.

use std::collections::HashMap;
use std::time::Instant;

use crate::lp::{LinearProgram, Relation};

use super::inner::{self, Assignment};
use super::instance::Instance;
use super::{Counters, Granularity};

const INT_EPS: f64 = 1e-6;
const REL_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
pub(crate) struct Leaf {
    pub y: Vec<u32>,
    pub t: f64,
    pub cost: f64,
    pub gpus: u32,
    pub x: Vec<Vec<f64>>,
}

impl Leaf {
    /// Lower makespan, then lower cost, then fewer GPUs, then the
    /// lexicographically smaller activation vector.
    pub fn better_than(&self, other: &Leaf) -> bool {
        if self.t < other.t * (1.0 - REL_EPS) {
            return true;
        }
        if self.t > other.t * (1.0 + REL_EPS) {
            return false;
        }
        if (self.cost - other.cost).abs() > 1e-9 {
            return self.cost < other.cost;
        }
        if self.gpus != other.gpus {
            return self.gpus < other.gpus;
        }
        self.y < other.y
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SearchSpec {
    pub granularity: Granularity,
    /// Stop at the first plan with makespan at most this value and never
    /// explore nodes whose bound exceeds it.
    pub cutoff: Option<f64>,
    /// Accept the incumbent once its makespan is at most this value.
    pub stop_at: Option<f64>,
    pub deadline: Option<Instant>,
    pub seed: Option<Vec<u32>>,
    /// Box to search instead of `[0, max_copies]`.
    pub bounds: Option<(Vec<u32>, Vec<u32>)>,
    /// Round each fractional relaxation to a candidate plan.
    pub rounding: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct SearchResult {
    pub best: Option<Leaf>,
    /// Every node was explored or pruned.
    pub exhausted: bool,
    /// A cutoff or stop rule ended the search.
    pub stopped: bool,
    /// Smallest makespan bound among unexplored nodes.
    pub open_bound: f64,
    /// Smallest bound among nodes discarded for exceeding the cutoff. When
    /// a cutoff search comes back empty the optimum is at least this.
    pub pruned_bound: f64,
}

impl Default for SearchSpec {
    fn default() -> Self {
        SearchSpec {
            granularity: Granularity::default(),
            cutoff: None,
            stop_at: None,
            deadline: None,
            seed: None,
            bounds: None,
            rounding: true,
        }
    }
}

struct Node {
    lb: Vec<u32>,
    ub: Vec<u32>,
    bound: f64,
}

type Relaxation = Option<(f64, Vec<f64>)>;

pub(crate) struct Evaluator<'a> {
    pub inst: &'a Instance,
    pub granularity: Granularity,
    cache: HashMap<Vec<u32>, (Option<Leaf>, f64)>,
    relaxations: HashMap<(Vec<u32>, Vec<u32>), Relaxation>,
}

impl<'a> Evaluator<'a> {
    pub fn new(inst: &'a Instance, granularity: Granularity) -> Self {
        Evaluator {
            inst,
            granularity,
            cache: HashMap::new(),
            relaxations: HashMap::new(),
        }
    }

    /// Relaxation of a box, solved once however many searches visit it.
    pub fn relax_node(&mut self, lb: &[u32], ub: &[u32], counters: &mut Counters) -> Relaxation {
        let key = (lb.to_vec(), ub.to_vec());
        if let Some(hit) = self.relaxations.get(&key) {
            return hit.clone();
        }
        counters.nodes += 1;
        let r = relax(self.inst, lb, ub, counters);
        self.relaxations.insert(key, r.clone());
        r
    }

    /// Makespan of one activation vector, with configurations that end up
    /// without work switched off. The value is exact whenever it is at most
    /// `cutoff`; above it the leaf is only known not to reach `cutoff`.
    pub fn evaluate(&mut self, y: &[u32], cutoff: f64, counters: &mut Counters) -> Option<Leaf> {
        let inst = self.inst;
        if !inst.fits(y) || !inst.covers(y) {
            return None;
        }
        match self.cache.get(y) {
            Some((hit, used)) => {
                let exact = hit.as_ref().is_none_or(|l| l.t <= *used);
                if exact || cutoff <= *used {
                    return hit.clone();
                }
            }
            None => counters.leaves += 1,
        }
        let leaf = inner::assign(inst, y, self.granularity, cutoff, counters).map(|a| self.leaf(y, a));
        self.cache.insert(y.to_vec(), (leaf.clone(), cutoff));
        leaf
    }

    fn leaf(&self, y: &[u32], a: Assignment) -> Leaf {
        let mut y = y.to_vec();
        for (c, row) in a.x.iter().enumerate() {
            if y[c] > 0 && row.iter().all(|&v| v == 0.0) {
                y[c] = 0;
            }
        }
        Leaf {
            cost: self.inst.cost(&y),
            gpus: self.inst.gpus(&y),
            t: a.t,
            x: a.x,
            y,
        }
    }
}

/// Largest `θ` (as a makespan `1/θ`) over the relaxed box, with the
/// relaxed activation values. `None` when no point of the box serves all keys.
pub(crate) fn relax(inst: &Instance, lb: &[u32], ub: &[u32], counters: &mut Counters) -> Option<(f64, Vec<f64>)> {
    let n = inst.num_configs();
    let scale = inst.demand.iter().copied().fold(0.0, f64::max);
    let mut lp = LinearProgram::new();
    let theta = lp.add_var(0.0, None);
    lp.set_objective(theta, 1.0);
    let yv: Vec<Option<usize>> = (0..n)
        .map(|c| (ub[c] > 0).then(|| lp.add_var(lb[c] as f64, Some(ub[c] as f64))))
        .collect();
    let mut per_key: Vec<Vec<(usize, f64)>> = vec![Vec::new(); inst.num_keys()];
    for c in 0..n {
        let Some(y) = yv[c] else { continue };
        let mut cap_row = Vec::new();
        for k in 0..inst.num_keys() {
            if let Some(h) = inst.rates[c][k] {
                let s = lp.add_var(0.0, None);
                per_key[k].push((s, 1.0));
                cap_row.push((s, inst.demand[k] / scale / h));
            }
        }
        cap_row.push((y, -1.0));
        lp.add_constraint(cap_row, Relation::Le, 0.0);
    }
    for mut row in per_key {
        if row.is_empty() {
            return None;
        }
        row.push((theta, -1.0));
        lp.add_constraint(row, Relation::Eq, 0.0);
    }
    let budget_row: Vec<(usize, f64)> = (0..n)
        .filter_map(|c| yv[c].map(|v| (v, inst.configs[c].cost)))
        .collect();
    lp.add_constraint(budget_row, Relation::Le, inst.budget);
    for t in 0..inst.types.len() {
        let row: Vec<(usize, f64)> = (0..n)
            .filter_map(|c| yv[c].filter(|_| inst.usage[c][t] > 0).map(|v| (v, inst.usage[c][t] as f64)))
            .collect();
        if !row.is_empty() {
            lp.add_constraint(row, Relation::Le, inst.avail[t] as f64);
        }
    }
    counters.lp_solves += 1;
    let sol = lp.maximize().optimal()?;
    let th = sol.values[theta];
    if !(th > 1e-12) {
        return None;
    }
    let ys = (0..n).map(|c| yv[c].map_or(0.0, |v| sol.values[v])).collect();
    Some((scale / th, ys))
}

pub(crate) fn branch_and_bound(
    inst: &Instance,
    spec: &SearchSpec,
    eval: &mut Evaluator<'_>,
    counters: &mut Counters,
) -> SearchResult {
    let n = inst.num_configs();
    let mut best: Option<Leaf> = None;
    let (lb0, ub0) = spec
        .bounds
        .clone()
        .unwrap_or_else(|| (vec![0; n], inst.max_copies.clone()));
    let within_cutoff = |t: f64| spec.cutoff.is_none_or(|cut| t <= cut * (1.0 + REL_EPS));

    // Returns true when the search can stop.
    let offer = |leaf: Option<Leaf>, best: &mut Option<Leaf>| -> bool {
        let Some(leaf) = leaf else { return false };
        if spec.cutoff.is_some() {
            if within_cutoff(leaf.t) {
                *best = Some(leaf);
                return true;
            }
            return false;
        }
        if best.as_ref().is_none_or(|b| leaf.better_than(b)) {
            *best = Some(leaf);
        }
        matches!((&spec.stop_at, best.as_ref()), (Some(s), Some(b)) if b.t <= *s)
    };

    // Leaves need an exact value only when they might replace the incumbent.
    let leaf_cutoff = |best: &Option<Leaf>| -> f64 {
        let inc = best.as_ref().map_or(f64::INFINITY, |b| b.t * (1.0 + REL_EPS));
        spec.cutoff.map_or(inc, |c| inc.min(c * (1.0 + REL_EPS)))
    };

    if let Some(seed) = &spec.seed {
        let leaf = eval.evaluate(seed, leaf_cutoff(&best), counters);
        if offer(leaf, &mut best) {
            return SearchResult {
                best,
                exhausted: false,
                stopped: true,
                open_bound: f64::INFINITY,
                pruned_bound: f64::INFINITY,
            };
        }
    }

    let mut stack = vec![Node {
        lb: lb0,
        ub: ub0,
        bound: 0.0,
    }];
    let mut stopped = false;
    let mut pruned_bound = f64::INFINITY;
    while let Some(node) = stack.pop() {
        if spec.deadline.is_some_and(|d| Instant::now() >= d) {
            stack.push(node);
            break;
        }
        let Some((t_lp, ys)) = eval.relax_node(&node.lb, &node.ub, counters) else {
            continue;
        };
        if !within_cutoff(t_lp) {
            pruned_bound = pruned_bound.min(t_lp);
            continue;
        }
        if let Some(b) = &best {
            let min_cost: f64 = node.lb.iter().zip(&inst.configs).map(|(&l, c)| l as f64 * c.cost).sum();
            if t_lp > b.t * (1.0 + REL_EPS) || (t_lp >= b.t * (1.0 - REL_EPS) && min_cost >= b.cost - 1e-9) {
                continue;
            }
        }
        let fractional = inst
            .order
            .iter()
            .copied()
            .find(|&c| (ys[c] - ys[c].round()).abs() > INT_EPS);

        if let Some(c) = fractional {
            if spec.rounding {
                let up: Vec<u32> = (0..n)
                    .map(|i| ((ys[i] - INT_EPS).ceil().max(0.0) as u32).clamp(node.lb[i], node.ub[i]))
                    .collect();
                let candidate = if inst.fits(&up) {
                    up
                } else {
                    (0..n)
                        .map(|i| ((ys[i] + INT_EPS).floor() as u32).clamp(node.lb[i], node.ub[i]))
                        .collect()
                };
                let leaf = eval.evaluate(&candidate, leaf_cutoff(&best), counters);
                if offer(leaf, &mut best) {
                    stopped = true;
                    break;
                }
            }
            let v = ys[c];
            let mut down = Node {
                lb: node.lb.clone(),
                ub: node.ub.clone(),
                bound: t_lp,
            };
            down.ub[c] = v.floor() as u32;
            let mut upn = node;
            upn.lb[c] = v.ceil() as u32;
            upn.bound = t_lp;
            stack.push(down);
            stack.push(upn);
            continue;
        }

        let y: Vec<u32> = ys.iter().map(|v| v.round().max(0.0) as u32).collect();
        let leaf = eval.evaluate(&y, leaf_cutoff(&best), counters);
        let leaf_t = leaf.as_ref().map(|l| l.t);
        if offer(leaf, &mut best) {
            stopped = true;
            break;
        }
        let solved = match spec.granularity {
            Granularity::Fluid => true,
            Granularity::WholeRequests => leaf_t.is_some_and(|t| t <= t_lp * (1.0 + REL_EPS)),
        };
        if solved {
            continue;
        }
        // The relaxation is integral but whole-request rounding costs more
        // than the bound: split the box around the relaxed point.
        let Some(c) = inst.order.iter().copied().find(|&c| node.lb[c] < node.ub[c]) else {
            if let Some(t) = leaf_t {
                pruned_bound = pruned_bound.min(t);
            }
            continue;
        };
        let v = y[c].clamp(node.lb[c], node.ub[c]);
        if v > node.lb[c] {
            let mut low = Node {
                lb: node.lb.clone(),
                ub: node.ub.clone(),
                bound: t_lp,
            };
            low.ub[c] = v - 1;
            stack.push(low);
        }
        if v < node.ub[c] {
            let mut high = Node {
                lb: node.lb.clone(),
                ub: node.ub.clone(),
                bound: t_lp,
            };
            high.lb[c] = v + 1;
            stack.push(high);
        }
        let mut eq = node;
        eq.lb[c] = v;
        eq.ub[c] = v;
        eq.bound = t_lp;
        stack.push(eq);
    }
    let open_bound = if stopped || stack.is_empty() {
        f64::INFINITY
    } else {
        stack.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min)
    };
    SearchResult {
        best,
        exhausted: !stopped && stack.is_empty(),
        stopped,
        open_bound,
        pruned_bound,
    }
}
