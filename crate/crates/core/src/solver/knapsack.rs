//! Greedy packing of configuration copies against a makespan target.
//!
//! Each copy of a configuration is an item: within `T̂` seconds it can absorb
//! some of the remaining demand and it costs `o_c` per hour. Copies are
//! packed by absorbed demand per dollar, then the result is verified with the
//! exact assignment and, if needed, repaired by one add or one swap.

use super::bnb::{Evaluator, Leaf};
use super::instance::Instance;
use super::Counters;

/// Share of the remaining demand (each key normalised by its total) one
/// copy of `c` can absorb within `t_hat`, and the absorbed amounts.
fn coverage(inst: &Instance, c: usize, remaining: &[f64], best_rate: &[f64], t_hat: f64) -> (f64, Vec<f64>) {
    let mut keys: Vec<usize> = (0..inst.num_keys())
        .filter(|&k| remaining[k] > 0.0 && inst.rates[c][k].is_some())
        .collect();
    keys.sort_by(|&a, &b| {
        let ra = inst.rates[c][a].unwrap() / best_rate[a];
        let rb = inst.rates[c][b].unwrap() / best_rate[b];
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut time = t_hat;
    let mut taken = vec![0.0; inst.num_keys()];
    let mut score = 0.0;
    for k in keys {
        if time <= 0.0 {
            break;
        }
        let h = inst.rates[c][k].unwrap();
        let amount = remaining[k].min(time * h);
        time -= amount / h;
        taken[k] = amount;
        score += amount / inst.demand[k];
    }
    (score, taken)
}

pub(crate) fn pack(inst: &Instance, t_hat: f64, eval: &mut Evaluator<'_>, counters: &mut Counters) -> Option<Leaf> {
    let n = inst.num_configs();
    let best_rate: Vec<f64> = (0..inst.num_keys())
        .map(|k| (0..n).filter_map(|c| inst.rates[c][k]).fold(0.0, f64::max))
        .collect();
    let mut remaining = inst.demand.clone();
    let mut y = vec![0u32; n];
    loop {
        if remaining.iter().zip(&inst.demand).all(|(r, f)| *r <= 1e-9 * f) {
            break;
        }
        let mut pick: Option<(f64, usize, Vec<f64>)> = None;
        for &c in &inst.order {
            y[c] += 1;
            let fits = inst.fits(&y);
            y[c] -= 1;
            if !fits {
                continue;
            }
            let (cov, taken) = coverage(inst, c, &remaining, &best_rate, t_hat);
            if cov <= 1e-12 {
                continue;
            }
            let score = cov / inst.configs[c].cost.max(1e-12);
            if pick.as_ref().is_none_or(|(s, _, _)| score > *s * (1.0 + 1e-12)) {
                pick = Some((score, c, taken));
            }
        }
        let Some((_, c, taken)) = pick else { break };
        y[c] += 1;
        for (r, t) in remaining.iter_mut().zip(taken) {
            *r = (*r - t).max(0.0);
        }
    }

    let ok = |leaf: &Leaf| leaf.t <= t_hat * (1.0 + 1e-9);
    if let Some(leaf) = eval.evaluate(&y, t_hat * (1.0 + 1e-9), counters) {
        if ok(&leaf) {
            return Some(leaf);
        }
    }
    // Repair: one extra copy, then one swap.
    for &c in &inst.order {
        let mut t = y.clone();
        t[c] += 1;
        if let Some(leaf) = eval.evaluate(&t, t_hat * (1.0 + 1e-9), counters).filter(ok) {
            return Some(leaf);
        }
    }
    for &a in &inst.order {
        if y[a] == 0 {
            continue;
        }
        for &b in &inst.order {
            if a == b {
                continue;
            }
            let mut t = y.clone();
            t[a] -= 1;
            t[b] += 1;
            if let Some(leaf) = eval.evaluate(&t, t_hat * (1.0 + 1e-9), counters).filter(ok) {
                return Some(leaf);
            }
        }
    }
    None
}
