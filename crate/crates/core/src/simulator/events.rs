use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costmodel::ThroughputTable;
use crate::error::{Error, Result};
use crate::solver::Plan;
use crate::workload::{apportion, bucket, RequestRecord, WorkloadType};

use super::{Completion, Percentiles, SimReport};

/// How each request picks a replica among those its class is assigned to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dispatch {
    /// Independent weighted draw per request, weight `x / y` per replica.
    #[default]
    Weighted,
    /// Each replica receives its share rounded by largest remainder, in a
    /// shuffled order.
    Quota,
}

struct Replica {
    id: String,
    config: String,
    free_at: f64,
    busy: f64,
}

/// Replays `trace` against the plan with FCFS queues, one per replica.
/// Service time is `1/h` of the replica's configuration for the class.
pub fn simulate_events(
    plan: &Plan,
    trace: &[RequestRecord],
    classes: &[WorkloadType],
    table: &ThroughputTable,
    seed: u64,
    dispatch: Dispatch,
) -> Result<(SimReport, Vec<Completion>)> {
    if trace.is_empty() {
        return Err(Error::Input("trace is empty".into()));
    }
    if classes.is_empty() {
        return Err(Error::Input("no workload classes".into()));
    }
    let mut replicas = Vec::new();
    let mut first_replica = BTreeMap::new();
    for a in &plan.activations {
        first_replica.insert(a.config_id.clone(), replicas.len());
        for i in 0..a.count {
            replicas.push(Replica {
                id: format!("{}#{i}", a.config_id),
                config: a.config_id.clone(),
                free_at: 0.0,
                busy: 0.0,
            });
        }
    }

    // Replicas and weights per (model, class).
    let mut targets: BTreeMap<(String, u32), (Vec<usize>, Vec<f64>)> = BTreeMap::new();
    for e in plan.assignment.iter().filter(|e| e.fraction > 0.0) {
        let y = plan.activation(&e.config_id);
        let Some(&first) = first_replica.get(&e.config_id) else { continue };
        let entry = targets.entry((e.model.clone(), e.workload_id)).or_default();
        for r in first..first + y as usize {
            entry.0.push(r);
            entry.1.push(e.fraction / y as f64);
        }
    }

    let mut requests: Vec<(f64, usize, (String, u32))> = trace
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let class = bucket(r.input_len, r.output_len, classes);
            (r.arrival_time.unwrap_or(0.0), i, (r.model.clone(), class))
        })
        .collect();
    requests.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![0usize; requests.len()];
    let mut by_key: BTreeMap<&(String, u32), Vec<usize>> = BTreeMap::new();
    for (pos, (_, _, key)) in requests.iter().enumerate() {
        by_key.entry(key).or_default().push(pos);
    }
    for (key, positions) in &by_key {
        let (rs, ws) = targets.get(*key).ok_or_else(|| Error::Unservable {
            model: key.0.clone(),
            workload: key.1,
        })?;
        match dispatch {
            Dispatch::Weighted => {
                let dist = WeightedIndex::new(ws).map_err(|e| Error::Input(format!("dispatch weights: {e}")))?;
                for &pos in positions {
                    chosen[pos] = rs[dist.sample(&mut rng)];
                }
            }
            Dispatch::Quota => {
                let quotas = apportion(positions.len() as u64, ws);
                let mut slots: Vec<usize> = rs
                    .iter()
                    .zip(&quotas)
                    .flat_map(|(&r, &q)| std::iter::repeat_n(r, q as usize))
                    .collect();
                slots.shuffle(&mut rng);
                for (&pos, r) in positions.iter().zip(slots) {
                    chosen[pos] = r;
                }
            }
        }
    }

    let mut completions = Vec::with_capacity(requests.len());
    let mut latencies = Vec::with_capacity(requests.len());
    for (pos, (arrival, _, key)) in requests.iter().enumerate() {
        let r = &mut replicas[chosen[pos]];
        let h = table.rate(&r.config, key.1).ok_or_else(|| Error::MissingRate {
            config: r.config.clone(),
            workload: key.1,
        })?;
        let start = r.free_at.max(*arrival);
        let end = start + 1.0 / h;
        r.free_at = end;
        r.busy += 1.0 / h;
        latencies.push(end - arrival);
        completions.push(Completion {
            arrival_s: *arrival,
            start_s: start,
            end_s: end,
            replica_id: r.id.clone(),
            class_id: key.1,
        });
    }

    let first = requests[0].0;
    let last = completions.iter().map(|c| c.end_s).fold(f64::NEG_INFINITY, f64::max);
    let makespan = last - first;
    let report = SimReport {
        makespan,
        throughput: requests.len() as f64 / makespan,
        latency_percentiles: Percentiles::of(&latencies),
        per_replica_utilization: replicas
            .iter()
            .map(|r| (r.id.clone(), (r.busy / makespan).clamp(0.0, 1.0)))
            .collect(),
        total_cost_for_run: plan.total_cost * makespan / 3600.0,
        requests: requests.len(),
    };
    Ok((report, completions))
}
