//! Per-replica deployment configurations and their enumeration.
//!
//! A configuration is an ordered list of pipeline stages. Each stage is one
//! tensor-parallel group of a single GPU type living inside one machine;
//! stages are packed onto machines and a boundary between two machines is a
//! cross-machine pipeline hop.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::catalog::{Availability, GpuCatalog, ModelSpec};
use crate::costmodel::ThroughputTable;
use crate::error::{Error, Result};

const MEM_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StageSpec {
    #[serde(rename = "type")]
    pub gpu_type: String,
    #[serde(rename = "tp")]
    pub tp_degree: u32,
    #[serde(rename = "layers")]
    pub layer_count: u32,
    /// Machine slot within the replica.
    pub machine: u32,
}

/// Where a stage runs, before layers are assigned.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StagePlacement {
    pub gpu_type: String,
    pub tp_degree: u32,
    pub machine: u32,
}

impl StagePlacement {
    pub fn new(gpu_type: &str, tp_degree: u32, machine: u32) -> Self {
        StagePlacement {
            gpu_type: gpu_type.to_string(),
            tp_degree,
            machine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub id: String,
    pub model: String,
    pub stages: Vec<StageSpec>,
    pub gpu_counts: BTreeMap<String, u32>,
    pub cost: f64,
}

impl Configuration {
    /// Builds a configuration from stage placements, assigning layers in
    /// proportion to stage memory and checking every structural rule.
    pub fn build(model: &ModelSpec, catalog: &GpuCatalog, placements: &[StagePlacement]) -> Result<Self> {
        if placements.is_empty() {
            return Err(Error::Input("a configuration needs at least one stage".into()));
        }
        let id = config_id(&model.name, placements);
        let bad = |field: &'static str, reason: String| Error::invalid("Configuration", &id, field, reason);
        if placements.len() > model.num_layers as usize {
            return Err(bad(
                "stages",
                format!("{} stages exceed {} layers", placements.len(), model.num_layers),
            ));
        }
        let mut per_machine: BTreeMap<u32, (String, u32)> = BTreeMap::new();
        let mut prev_machine: Option<u32> = None;
        let mut memories = Vec::with_capacity(placements.len());
        let mut zone: Option<&str> = None;
        for p in placements {
            let t = catalog.require(&p.gpu_type)?;
            if p.tp_degree == 0 || p.tp_degree > t.gpus_per_machine {
                return Err(bad(
                    "tp_degree",
                    format!("{} is outside 1..={} for {}", p.tp_degree, t.gpus_per_machine, t.name),
                ));
            }
            match prev_machine {
                None if p.machine != 0 => return Err(bad("machine", "slots must start at 0".into())),
                Some(m) if p.machine != m && p.machine != m + 1 => {
                    return Err(bad("machine", "slots must be contiguous and in stage order".into()))
                }
                _ => {}
            }
            prev_machine = Some(p.machine);
            let slot = per_machine.entry(p.machine).or_insert_with(|| (t.name.clone(), 0));
            if slot.0 != t.name {
                return Err(bad("machine", format!("machine {} mixes GPU types", p.machine)));
            }
            slot.1 += p.tp_degree;
            if slot.1 > t.gpus_per_machine {
                return Err(bad(
                    "machine",
                    format!("machine {} holds more than {} {} GPUs", p.machine, t.gpus_per_machine, t.name),
                ));
            }
            match zone {
                None => zone = Some(&t.zone),
                Some(z) if z != t.zone => return Err(bad("zone", "stages span disconnected zones".into())),
                _ => {}
            }
            memories.push(p.tp_degree as f64 * t.mem_capacity);
        }
        let layers = partition_layers(model.num_layers, &memories)?;
        let resident = model.resident_gb();
        let mut stages = Vec::with_capacity(placements.len());
        let mut gpu_counts = BTreeMap::new();
        for ((p, &l), &mem) in placements.iter().zip(&layers).zip(&memories) {
            let need = resident * l as f64 / model.num_layers as f64;
            if need > mem * (1.0 + MEM_EPS) {
                return Err(bad(
                    "memory",
                    format!("stage on {}x{} needs {need:.1} GB but has {mem:.1} GB", p.gpu_type, p.tp_degree),
                ));
            }
            *gpu_counts.entry(p.gpu_type.clone()).or_insert(0) += p.tp_degree;
            stages.push(StageSpec {
                gpu_type: p.gpu_type.clone(),
                tp_degree: p.tp_degree,
                layer_count: l,
                machine: p.machine,
            });
        }
        let total_mem: f64 = memories.iter().sum();
        if total_mem + MEM_EPS < model.min_replica_memory {
            return Err(bad(
                "memory",
                format!("{total_mem} GB is below the {} GB a replica needs", model.min_replica_memory),
            ));
        }
        let cost = config_cost(&gpu_counts, catalog)?;
        Ok(Configuration {
            id,
            model: model.name.clone(),
            stages,
            gpu_counts,
            cost,
        })
    }

    pub fn total_gpus(&self) -> u32 {
        self.gpu_counts.values().sum()
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn placements(&self) -> Vec<StagePlacement> {
        self.stages
            .iter()
            .map(|s| StagePlacement::new(&s.gpu_type, s.tp_degree, s.machine))
            .collect()
    }

    /// Number of stage boundaries that cross machines.
    pub fn cross_machine_hops(&self) -> usize {
        self.stages.windows(2).filter(|w| w[0].machine != w[1].machine).count()
    }

    fn layout_key(&self) -> Vec<(String, u32, u32, u32)> {
        self.stages
            .iter()
            .map(|s| (s.gpu_type.clone(), s.tp_degree, s.layer_count, s.machine))
            .collect()
    }
}

/// `model:TxP+TxP/TxP` where `+` joins stages on one machine and `/`
/// separates machines.
pub fn config_id(model: &str, placements: &[StagePlacement]) -> String {
    let mut id = String::new();
    id.push_str(model);
    id.push(':');
    for (i, p) in placements.iter().enumerate() {
        if i > 0 {
            id.push(if placements[i - 1].machine == p.machine { '+' } else { '/' });
        }
        let _ = write!(id, "{}x{}", p.gpu_type, p.tp_degree);
    }
    id
}

/// Parses an id produced by [`config_id`] back into its model and placements.
pub fn parse_config_id(id: &str) -> Result<(String, Vec<StagePlacement>)> {
    let bad = || Error::Input(format!("malformed configuration id `{id}`"));
    let (model, layout) = id.rsplit_once(':').ok_or_else(bad)?;
    let mut placements = Vec::new();
    let mut machine = 0;
    for (mi, group) in layout.split('/').enumerate() {
        if mi > 0 {
            machine += 1;
        }
        for stage in group.split('+') {
            let (ty, tp) = stage.rsplit_once('x').ok_or_else(bad)?;
            let tp: u32 = tp.parse().map_err(|_| bad())?;
            if ty.is_empty() {
                return Err(bad());
            }
            placements.push(StagePlacement::new(ty, tp, machine));
        }
    }
    Ok((model.to_string(), placements))
}

/// `Σ_n d_n(c) × p_n`.
pub fn config_cost(gpu_counts: &BTreeMap<String, u32>, catalog: &GpuCatalog) -> Result<f64> {
    gpu_counts
        .iter()
        .map(|(name, &d)| Ok(d as f64 * catalog.require(name)?.price))
        .sum()
}

/// Splits `num_layers` across stages in proportion to their memory.
///
/// Largest-remainder rounding with ties going to the lower stage index;
/// afterwards any empty stage borrows one layer from the largest stage.
pub fn partition_layers(num_layers: u32, stage_memories: &[f64]) -> Result<Vec<u32>> {
    let s = stage_memories.len();
    if s == 0 {
        return Err(Error::Input("at least one stage is required".into()));
    }
    if s > num_layers as usize {
        return Err(Error::Input(format!("{s} stages exceed {num_layers} layers")));
    }
    if stage_memories.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
        return Err(Error::Input("stage memories must be > 0".into()));
    }
    let total: f64 = stage_memories.iter().sum();
    let exact: Vec<f64> = stage_memories.iter().map(|m| num_layers as f64 * m / total).collect();
    let mut counts: Vec<u32> = exact.iter().map(|e| (e + 1e-9).floor() as u32).collect();
    let remainders: Vec<f64> = exact.iter().zip(&counts).map(|(e, &c)| e - c as f64).collect();
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (remainders[a], remainders[b]);
        if (ra - rb).abs() <= 1e-9 {
            a.cmp(&b)
        } else {
            rb.total_cmp(&ra)
        }
    });
    let assigned: u32 = counts.iter().sum();
    for &i in order.iter().take(num_layers.saturating_sub(assigned) as usize) {
        counts[i] += 1;
    }
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let donor = (0..s)
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
            .expect("non-empty");
        counts[donor] -= 1;
        counts[empty] += 1;
    }
    Ok(counts)
}

/// Why a family of candidate layouts produced no configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedFamily {
    pub family: String,
    pub reason: String,
    pub count: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Enumeration {
    pub configs: Vec<Configuration>,
    pub pruned: Vec<PrunedFamily>,
}

/// TP degrees considered for a type: powers of two that fit one machine.
pub fn tp_degrees(gpus_per_machine: u32, cap: u32) -> Vec<u32> {
    let limit = gpus_per_machine.min(cap);
    let mut out = Vec::new();
    let mut t = 1;
    while t <= limit {
        out.push(t);
        t *= 2;
    }
    out.reverse();
    out
}

/// Lays out a multiset of `(type, tp)` stages on machines: stages sorted by
/// catalog order then descending TP, packed first-fit per type.
pub fn pack_stages(catalog: &GpuCatalog, stages: &[(String, u32)]) -> Result<Vec<StagePlacement>> {
    let mut sorted: Vec<(usize, String, u32)> = stages
        .iter()
        .map(|(t, tp)| {
            catalog
                .index_of(t)
                .map(|i| (i, t.clone(), *tp))
                .ok_or_else(|| Error::unknown("GPU type", t))
        })
        .collect::<Result<_>>()?;
    sorted.sort_by(|a, b| a.0.cmp(&b.0).then(b.2.cmp(&a.2)));
    let mut placed: Vec<(u32, usize, StagePlacement)> = Vec::new();
    let mut machine_base = 0u32;
    let mut i = 0;
    while i < sorted.len() {
        let ty = sorted[i].0;
        let cap = catalog.types()[ty].gpus_per_machine;
        let mut fill: Vec<u32> = Vec::new();
        while i < sorted.len() && sorted[i].0 == ty {
            let tp = sorted[i].2;
            let slot = match fill.iter().position(|&used| used + tp <= cap) {
                Some(k) => k,
                None => {
                    fill.push(0);
                    fill.len() - 1
                }
            };
            fill[slot] += tp;
            placed.push((
                machine_base + slot as u32,
                i,
                StagePlacement::new(&sorted[i].1, tp, machine_base + slot as u32),
            ));
            i += 1;
        }
        machine_base += fill.len() as u32;
    }
    placed.sort_by_key(|(m, order, _)| (*m, *order));
    Ok(placed.into_iter().map(|(_, _, p)| p).collect())
}

/// Enumerates every feasible configuration of `model` using at most
/// `max_gpus_per_replica` GPUs, sorted by cost then stage layout.
pub fn enumerate_configs(
    catalog: &GpuCatalog,
    availability: &Availability,
    model: &ModelSpec,
    max_gpus_per_replica: u32,
) -> Result<Enumeration> {
    if max_gpus_per_replica == 0 {
        return Err(Error::Input("max_gpus_per_replica must be >= 1".into()));
    }
    model.validate()?;
    let zones: BTreeSet<&str> = catalog.types().iter().map(|t| t.zone.as_str()).collect();
    let mut out = Enumeration::default();
    let mut pruned: BTreeMap<(String, String), usize> = BTreeMap::new();
    for zone in zones {
        let mut kinds: Vec<(usize, u32)> = Vec::new();
        for (ti, t) in catalog.types().iter().enumerate() {
            if t.zone != zone {
                continue;
            }
            let avail = availability.get(&t.name);
            for tp in tp_degrees(t.gpus_per_machine, max_gpus_per_replica.min(avail)) {
                kinds.push((ti, tp));
            }
        }
        let mut used = vec![0u32; catalog.len()];
        let mut chosen: Vec<usize> = Vec::new();
        let mut visit = |chosen: &[usize]| {
            let stages: Vec<(String, u32)> = chosen
                .iter()
                .map(|&k| (catalog.types()[kinds[k].0].name.clone(), kinds[k].1))
                .collect();
            let placements = pack_stages(catalog, &stages).expect("types come from the catalog");
            match Configuration::build(model, catalog, &placements) {
                Ok(c) => out.configs.push(c),
                Err(Error::Invalid { field, reason, .. }) => {
                    let family = format!("zone {zone}, {} stage(s)", chosen.len());
                    let why = if field == "memory" {
                        "insufficient memory".to_string()
                    } else {
                        format!("{field}: {reason}")
                    };
                    *pruned.entry((family, why)).or_insert(0) += 1;
                }
                Err(e) => panic!("unexpected enumeration failure: {e}"),
            }
        };
        extend_multisets(
            &kinds,
            0,
            &mut chosen,
            &mut used,
            0,
            max_gpus_per_replica,
            model.num_layers as usize,
            catalog,
            availability,
            &mut visit,
        );
    }
    out.configs.sort_by(|a, b| a.cost.total_cmp(&b.cost).then_with(|| a.layout_key().cmp(&b.layout_key())));
    out.pruned = pruned
        .into_iter()
        .map(|((family, reason), count)| PrunedFamily { family, reason, count })
        .collect();
    if out.configs.is_empty() && out.pruned.is_empty() {
        out.pruned.push(PrunedFamily {
            family: "all".into(),
            reason: "no GPU type has availability".into(),
            count: 0,
        });
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn extend_multisets(
    kinds: &[(usize, u32)],
    start: usize,
    chosen: &mut Vec<usize>,
    used: &mut [u32],
    total: u32,
    max_total: u32,
    max_stages: usize,
    catalog: &GpuCatalog,
    availability: &Availability,
    visit: &mut dyn FnMut(&[usize]),
) {
    if !chosen.is_empty() {
        visit(chosen);
    }
    if chosen.len() == max_stages {
        return;
    }
    for k in start..kinds.len() {
        let (ti, tp) = kinds[k];
        if total + tp > max_total || used[ti] + tp > availability.get(&catalog.types()[ti].name) {
            continue;
        }
        used[ti] += tp;
        chosen.push(k);
        extend_multisets(
            kinds,
            k,
            chosen,
            used,
            total + tp,
            max_total,
            max_stages,
            catalog,
            availability,
            visit,
        );
        chosen.pop();
        used[ti] -= tp;
    }
}

/// Minimal view of a candidate used by the dominance filter.
pub struct DominanceView<'a> {
    pub cost: f64,
    pub usage: &'a BTreeMap<String, u32>,
    /// Rate per class; `None` means the candidate cannot serve the class.
    pub rates: Vec<Option<f64>>,
}

/// Returns `true` for every candidate dominated by another one.
pub fn dominated_mask(items: &[DominanceView<'_>]) -> Vec<bool> {
    let n = items.len();
    let mut mask = vec![false; n];
    for (i, c) in items.iter().enumerate() {
        mask[i] = items.iter().enumerate().any(|(j, d)| j != i && dominates(d, c));
    }
    mask
}

fn dominates(a: &DominanceView<'_>, b: &DominanceView<'_>) -> bool {
    if a.cost > b.cost {
        return false;
    }
    let mut strict = a.cost < b.cost;
    let types: BTreeSet<&String> = a.usage.keys().chain(b.usage.keys()).collect();
    for t in types {
        let ua = a.usage.get(t).copied().unwrap_or(0);
        let ub = b.usage.get(t).copied().unwrap_or(0);
        if ua > ub {
            return false;
        }
        strict |= ua < ub;
    }
    for (ra, rb) in a.rates.iter().zip(&b.rates) {
        let ra = ra.unwrap_or(0.0);
        let rb = rb.unwrap_or(0.0);
        if ra < rb {
            return false;
        }
        strict |= ra > rb;
    }
    strict
}

/// Drops configurations that another configuration beats or ties on cost,
/// per-type GPU usage and every class rate, strictly on at least one.
pub fn prune_dominated(configs: &[Configuration], table: &ThroughputTable) -> Vec<Configuration> {
    let mut classes: Vec<u32> = configs
        .iter()
        .flat_map(|c| table.classes_for(&c.id))
        .collect();
    classes.sort_unstable();
    classes.dedup();
    let views: Vec<DominanceView<'_>> = configs
        .iter()
        .map(|c| DominanceView {
            cost: c.cost,
            usage: &c.gpu_counts,
            rates: classes.iter().map(|&w| table.rate(&c.id, w)).collect(),
        })
        .collect();
    let mask = dominated_mask(&views);
    configs
        .iter()
        .zip(mask)
        .filter(|(_, dominated)| !dominated)
        .map(|(c, _)| c.clone())
        .collect()
}

/// Output record of the `enumerate` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigRecord {
    pub id: String,
    pub model: String,
    pub stages: Vec<StageSpec>,
    pub cost: f64,
}

impl From<&Configuration> for ConfigRecord {
    fn from(c: &Configuration) -> Self {
        ConfigRecord {
            id: c.id.clone(),
            model: c.model.clone(),
            stages: c.stages.clone(),
            cost: c.cost,
        }
    }
}
