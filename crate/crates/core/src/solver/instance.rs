use std::collections::{BTreeMap, BTreeSet};

use crate::catalog::Availability;
use crate::configspace::{dominated_mask, Configuration, DominanceView};
use crate::costmodel::ThroughputTable;
use crate::error::{Error, Infeasibility, Result};
use crate::workload::{DemandKey, DemandMatrix};

/// The solver's dense view of one planning problem: demanded keys with
/// positive counts, candidate configurations with their rates on those keys,
/// per-type GPU usage and limits.
#[derive(Debug, Clone)]
pub struct Instance {
    pub configs: Vec<Configuration>,
    pub keys: Vec<DemandKey>,
    pub demand: Vec<f64>,
    /// `rates[c][k]`, `None` when `c` cannot serve key `k`.
    pub rates: Vec<Vec<Option<f64>>>,
    pub budget: f64,
    pub types: Vec<String>,
    pub avail: Vec<u32>,
    /// `usage[c][n]` GPUs of type `types[n]` in one copy of `c`.
    pub usage: Vec<Vec<u32>>,
    /// Most copies of `c` that budget and availability allow on their own.
    pub max_copies: Vec<u32>,
    /// Configuration indices by descending cost, then id.
    pub order: Vec<usize>,
}

impl Instance {
    /// Builds the instance, keeping only configurations that can serve at
    /// least one demanded key and fit the budget and availability alone.
    /// Reports a structured cause when some demanded key has no candidate.
    pub fn new(
        configs: &[Configuration],
        table: &ThroughputTable,
        demand: &DemandMatrix,
        budget: f64,
        availability: &Availability,
    ) -> Result<Self> {
        if !(budget.is_finite() && budget > 0.0) {
            return Err(Error::invalid("Budget", "budget", "limit", format!("must be > 0, got {budget}")));
        }
        let keys: Vec<DemandKey> = demand.positive().map(|(k, _)| k.clone()).collect();
        if keys.is_empty() {
            return Err(Error::Input("demand has no positive entry".into()));
        }
        let demand_vec: Vec<f64> = keys.iter().map(|k| demand.get(&k.model, k.workload)).collect();
        if let Some((k, f)) = keys.iter().zip(&demand_vec).find(|(_, f)| !f.is_finite()) {
            return Err(Error::Input(format!(
                "demand for model `{}` workload {} is {f}",
                k.model, k.workload
            )));
        }

        let mut seen = BTreeSet::new();
        let unique: Vec<&Configuration> = configs.iter().filter(|c| seen.insert(c.id.clone())).collect();
        let types: Vec<String> = {
            let mut t: BTreeSet<String> = availability.0.keys().cloned().collect();
            for c in &unique {
                t.extend(c.gpu_counts.keys().cloned());
            }
            t.into_iter().collect()
        };
        let avail: Vec<u32> = types.iter().map(|t| availability.get(t)).collect();

        let rate_row = |c: &Configuration| -> Vec<Option<f64>> {
            keys.iter()
                .map(|k| {
                    if k.model != c.model {
                        return None;
                    }
                    table.rate(&c.id, k.workload).filter(|r| r.is_finite() && *r > 0.0)
                })
                .collect()
        };
        let usage_row = |c: &Configuration| -> Vec<u32> {
            types.iter().map(|t| c.gpu_counts.get(t).copied().unwrap_or(0)).collect()
        };
        let copies = |c: &Configuration, usage: &[u32]| -> u32 {
            let mut m = if c.cost > 0.0 {
                ((budget + 1e-9) / c.cost).floor().min(u32::MAX as f64) as u32
            } else {
                u32::MAX
            };
            for (n, &d) in usage.iter().enumerate() {
                if let Some(q) = avail[n].checked_div(d) {
                    m = m.min(q);
                }
            }
            m
        };

        // Diagnose keys nobody can serve before filtering.
        for (ki, key) in keys.iter().enumerate() {
            let model_configs: Vec<&&Configuration> = unique.iter().filter(|c| c.model == key.model).collect();
            if model_configs.is_empty() {
                return Err(Error::Infeasible(Infeasibility::Memory {
                    model: key.model.clone(),
                }));
            }
            let serving: Vec<&&Configuration> =
                model_configs.iter().copied().filter(|c| rate_row(c)[ki].is_some()).collect();
            if serving.is_empty() {
                return Err(Error::Unservable {
                    model: key.model.clone(),
                    workload: key.workload,
                });
            }
            let fitting: Vec<&&Configuration> = serving
                .iter()
                .copied()
                .filter(|c| usage_row(c).iter().zip(&avail).all(|(d, a)| d <= a))
                .collect();
            if fitting.is_empty() {
                return Err(Error::Infeasible(Infeasibility::Availability {
                    model: key.model.clone(),
                    workload: key.workload,
                }));
            }
            let cheapest = fitting.iter().map(|c| c.cost).fold(f64::INFINITY, f64::min);
            if cheapest > budget + 1e-9 {
                return Err(Error::Infeasible(Infeasibility::BudgetBelowCheapest { cheapest, budget }));
            }
        }

        let mut rows = Vec::new();
        for c in unique {
            let rates = rate_row(c);
            let usage = usage_row(c);
            let m = copies(c, &usage);
            if m == 0 || rates.iter().all(Option::is_none) {
                continue;
            }
            rows.push((c.clone(), rates, usage, m));
        }
        let mut inst = Instance {
            configs: Vec::new(),
            keys,
            demand: demand_vec,
            rates: Vec::new(),
            budget,
            types,
            avail,
            usage: Vec::new(),
            max_copies: Vec::new(),
            order: Vec::new(),
        };
        for (c, rates, usage, m) in rows {
            inst.configs.push(c);
            inst.rates.push(rates);
            inst.usage.push(usage);
            inst.max_copies.push(m);
        }
        inst.reorder();
        Ok(inst)
    }

    fn reorder(&mut self) {
        let mut order: Vec<usize> = (0..self.configs.len()).collect();
        order.sort_by(|&a, &b| {
            self.configs[b]
                .cost
                .total_cmp(&self.configs[a].cost)
                .then_with(|| self.configs[a].id.cmp(&self.configs[b].id))
        });
        self.order = order;
    }

    pub fn num_configs(&self) -> usize {
        self.configs.len()
    }

    pub fn num_keys(&self) -> usize {
        self.keys.len()
    }

    /// Removes configurations dominated on cost, GPU usage and every rate.
    pub fn prune_dominated(&mut self) {
        let views: Vec<DominanceView<'_>> = self
            .configs
            .iter()
            .zip(&self.rates)
            .map(|(c, r)| DominanceView {
                cost: c.cost,
                usage: &c.gpu_counts,
                rates: r.clone(),
            })
            .collect();
        let mask = dominated_mask(&views);
        let keep: Vec<usize> = (0..self.configs.len()).filter(|&i| !mask[i]).collect();
        self.retain(&keep);
    }

    /// Keeps only the configurations at the listed indices.
    pub fn retain(&mut self, keep: &[usize]) {
        self.configs = keep.iter().map(|&i| self.configs[i].clone()).collect();
        self.rates = keep.iter().map(|&i| self.rates[i].clone()).collect();
        self.usage = keep.iter().map(|&i| self.usage[i].clone()).collect();
        self.max_copies = keep.iter().map(|&i| self.max_copies[i]).collect();
        self.reorder();
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.configs.iter().position(|c| c.id == id)
    }

    pub fn cost(&self, y: &[u32]) -> f64 {
        y.iter().zip(&self.configs).map(|(&n, c)| n as f64 * c.cost).sum()
    }

    pub fn gpus(&self, y: &[u32]) -> u32 {
        y.iter().zip(&self.usage).map(|(&n, u)| n * u.iter().sum::<u32>()).sum()
    }

    pub fn usage_of(&self, y: &[u32]) -> Vec<u32> {
        let mut total = vec![0u32; self.types.len()];
        for (&n, u) in y.iter().zip(&self.usage) {
            for (t, &d) in total.iter_mut().zip(u) {
                *t += n * d;
            }
        }
        total
    }

    /// Budget and availability hold for `y`.
    pub fn fits(&self, y: &[u32]) -> bool {
        self.cost(y) <= self.budget * (1.0 + 1e-12) + 1e-9
            && self.usage_of(y).iter().zip(&self.avail).all(|(u, a)| u <= a)
    }

    /// Every demanded key has at least one active configuration serving it.
    pub fn covers(&self, y: &[u32]) -> bool {
        (0..self.keys.len()).all(|k| (0..self.configs.len()).any(|c| y[c] > 0 && self.rates[c][k].is_some()))
    }

    pub fn activation_map(&self, y: &[u32]) -> BTreeMap<String, u32> {
        y.iter()
            .zip(&self.configs)
            .filter(|(&n, _)| n > 0)
            .map(|(&n, c)| (c.id.clone(), n))
            .collect()
    }

    /// Activation vector from `(id, count)` pairs; unknown ids are skipped.
    pub fn vector_from<'a>(&self, pairs: impl IntoIterator<Item = (&'a str, u32)>) -> Vec<u32> {
        let mut y = vec![0; self.configs.len()];
        for (id, n) in pairs {
            if let Some(i) = self.index_of(id) {
                y[i] = n.min(self.max_copies[i]);
            }
        }
        y
    }

    pub fn models(&self) -> Vec<String> {
        let set: BTreeSet<String> = self.keys.iter().map(|k| k.model.clone()).collect();
        set.into_iter().collect()
    }
}
