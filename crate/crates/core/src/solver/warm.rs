//! Starting incumbent: split the budget across models by memory × demand and
//! fill each share with the configuration that serves the model's class mix
//! most cheaply.

use std::collections::BTreeMap;

use crate::catalog::Availability;
use crate::configspace::Configuration;
use crate::costmodel::ThroughputTable;
use crate::error::Result;
use crate::workload::DemandMatrix;

use super::instance::Instance;

/// Requests per second on the model's class mix (`Σ f / Σ f/h`), zero if
/// the configuration misses any class.
fn mix_rate(inst: &Instance, c: usize, keys: &[usize]) -> f64 {
    let mut work = 0.0;
    let mut total = 0.0;
    for &k in keys {
        match inst.rates[c][k] {
            Some(h) => {
                work += inst.demand[k] / h;
                total += inst.demand[k];
            }
            None => return 0.0,
        }
    }
    if work > 0.0 {
        total / work
    } else {
        0.0
    }
}

pub(crate) fn warm_vector(inst: &Instance, model_memory: &BTreeMap<String, f64>) -> Option<Vec<u32>> {
    let n = inst.num_configs();
    let models = inst.models();
    let weights: Vec<f64> = models
        .iter()
        .map(|m| {
            let demand: f64 = inst
                .keys
                .iter()
                .zip(&inst.demand)
                .filter(|(k, _)| &k.model == m)
                .map(|(_, f)| f)
                .sum();
            let memory = model_memory.get(m).copied().unwrap_or_else(|| {
                inst.configs
                    .iter()
                    .filter(|c| &c.model == m)
                    .map(|c| c.cost)
                    .fold(f64::INFINITY, f64::min)
            });
            memory * demand
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return None;
    }

    let mut y = vec![0u32; n];
    let fits_with = |y: &[u32], c: usize| {
        let mut t = y.to_vec();
        t[c] += 1;
        inst.fits(&t)
    };
    for (m, w) in models.iter().zip(&weights) {
        let share = inst.budget * w / total;
        let keys: Vec<usize> = (0..inst.num_keys()).filter(|&k| &inst.keys[k].model == m).collect();
        let mine: Vec<usize> = inst.order.iter().copied().filter(|&c| &inst.configs[c].model == m).collect();
        let mut spent = 0.0;
        let affordable = |c: usize, spent: f64| spent + inst.configs[c].cost <= share * (1.0 + 1e-12);

        // Make sure every class has somebody, even if no configuration
        // serves the whole mix.
        if !mine.iter().any(|&c| mix_rate(inst, c, &keys) > 0.0 && affordable(c, 0.0)) {
            for &k in &keys {
                if mine.iter().any(|&c| y[c] > 0 && inst.rates[c][k].is_some()) {
                    continue;
                }
                let pick = mine
                    .iter()
                    .copied()
                    .filter(|&c| inst.rates[c][k].is_some() && affordable(c, spent) && fits_with(&y, c))
                    .max_by(|&a, &b| {
                        let sa = inst.rates[a][k].unwrap() / inst.configs[a].cost;
                        let sb = inst.rates[b][k].unwrap() / inst.configs[b].cost;
                        sa.total_cmp(&sb)
                    });
                if let Some(c) = pick {
                    y[c] += 1;
                    spent += inst.configs[c].cost;
                }
            }
        }
        loop {
            let pick = mine
                .iter()
                .copied()
                .filter(|&c| affordable(c, spent) && fits_with(&y, c))
                .map(|c| (c, mix_rate(inst, c, &keys) / inst.configs[c].cost))
                .filter(|(_, s)| *s > 0.0)
                .fold(None, |acc: Option<(usize, f64)>, (c, s)| match acc {
                    Some((_, best)) if best >= s => acc,
                    _ => Some((c, s)),
                });
            let Some((c, _)) = pick else { break };
            y[c] += 1;
            spent += inst.configs[c].cost;
        }
    }
    inst.covers(&y).then_some(y)
}

/// Warm-start activations by configuration id; empty when the heuristic
/// cannot serve every demanded class.
pub fn warm_start(
    configs: &[Configuration],
    table: &ThroughputTable,
    demand: &DemandMatrix,
    budget: f64,
    availability: &Availability,
    model_memory: &BTreeMap<String, f64>,
) -> Result<BTreeMap<String, u32>> {
    let inst = match Instance::new(configs, table, demand, budget, availability) {
        Ok(inst) => inst,
        Err(e) if e.is_infeasible() => return Ok(BTreeMap::new()),
        Err(e) => return Err(e),
    };
    Ok(warm_vector(&inst, model_memory)
        .map(|y| inst.activation_map(&y))
        .unwrap_or_default())
}
