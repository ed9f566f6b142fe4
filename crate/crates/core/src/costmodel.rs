//! Throughput and latency estimates per (configuration, workload class).
//!
//! The analytic model is a roofline: prefill is compute-bound, a decode step
//! is bound by reading the stage's weights once, and tensor/pipeline
//! communication adds transfer time over the relevant link. Measured tables
//! can be loaded and laid over the analytic values.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::{default_intra_machine_bw, GpuCatalog, ModelSpec, ETHERNET_BW, NVLINK_BW};
use crate::configspace::{parse_config_id, Configuration};
use crate::error::{Error, Result};
use crate::workload::WorkloadType;

/// Bytes per fp16 activation element.
const ACT_BYTES: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommParams {
    /// GB/s for all-reduce inside a machine when the type has no entry in
    /// `intra_machine_bw`.
    pub tp_link_bw: f64,
    /// GB/s between machines.
    pub pp_link_bw: f64,
    /// Seconds added to every message.
    pub per_message_latency: f64,
    /// Fraction of peak compute a TP group reaches, keyed by degree.
    pub tp_efficiency: BTreeMap<u32, f64>,
    /// Per-type intra-machine link, GB/s.
    pub intra_machine_bw: BTreeMap<String, f64>,
}

impl Default for CommParams {
    fn default() -> Self {
        let intra = ["A6000", "A40", "L40", "A100", "H100", "4090"]
            .iter()
            .map(|n| (n.to_string(), default_intra_machine_bw(n)))
            .collect();
        CommParams {
            tp_link_bw: NVLINK_BW,
            pp_link_bw: ETHERNET_BW,
            per_message_latency: 1e-5,
            tp_efficiency: [(1, 1.0), (2, 0.9), (4, 0.8), (8, 0.7)].into_iter().collect(),
            intra_machine_bw: intra,
        }
    }
}

impl CommParams {
    /// Communication-free parameters: every link infinitely fast, perfect TP scaling.
    pub fn zero() -> Self {
        CommParams {
            tp_link_bw: f64::INFINITY,
            pp_link_bw: f64::INFINITY,
            per_message_latency: 0.0,
            tp_efficiency: [(1, 1.0)].into_iter().collect(),
            intra_machine_bw: BTreeMap::new(),
        }
    }

    /// Efficiency of the largest listed degree not above `tp`.
    pub fn efficiency(&self, tp: u32) -> f64 {
        self.tp_efficiency.range(..=tp).next_back().map(|(_, &e)| e).unwrap_or(1.0)
    }

    pub fn intra_bw(&self, gpu_type: &str) -> f64 {
        self.intra_machine_bw.get(gpu_type).copied().unwrap_or(self.tp_link_bw)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: String| Error::invalid("CommParams", "comm", field, reason);
        if !(self.tp_link_bw > 0.0) {
            return Err(bad("tp_link_bw", "must be > 0".into()));
        }
        if !(self.pp_link_bw > 0.0) {
            return Err(bad("pp_link_bw", "must be > 0".into()));
        }
        if !(self.per_message_latency >= 0.0) {
            return Err(bad("per_message_latency", "must be >= 0".into()));
        }
        if self.tp_efficiency.get(&1).is_some_and(|&e| e != 1.0) {
            return Err(bad("tp_efficiency", "degree 1 must have efficiency 1".into()));
        }
        if let Some((t, e)) = self.tp_efficiency.iter().find(|(_, &e)| !(e > 0.0 && e <= 1.0)) {
            return Err(bad("tp_efficiency", format!("degree {t} has {e}, outside (0, 1]")));
        }
        if let Some((n, b)) = self.intra_machine_bw.iter().find(|(_, &b)| !(b > 0.0)) {
            return Err(bad("intra_machine_bw", format!("{n} has {b}")));
        }
        Ok(())
    }
}

/// Batch-size accounting knobs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryParams {
    /// Upper limit on concurrent decode sequences per replica.
    pub max_batch: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTimes {
    pub prefill_s: f64,
    pub decode_s: f64,
}

/// Hidden size from a square-layer approximation: 12·h² parameters per
/// layer at 2 bytes each.
pub fn hidden_size(model: &ModelSpec) -> f64 {
    (model.weight_bytes / (24.0 * model.num_layers as f64)).sqrt()
}

fn all_reduce_time(layers: f64, tp: u32, tokens: f64, hidden: f64, bw_gbs: f64, latency: f64) -> f64 {
    if tp <= 1 {
        return 0.0;
    }
    let t = tp as f64;
    let bytes = 2.0 * (t - 1.0) / t * tokens * hidden * ACT_BYTES;
    // Two all-reduces per transformer layer (attention and MLP).
    layers * 2.0 * (bytes / (bw_gbs * 1e9) + latency)
}

/// Per-stage prefill time for one request and decode-step time for one
/// batch. The transfer to the next stage is charged to the sending stage.
pub fn estimate_stage_times(
    config: &Configuration,
    model: &ModelSpec,
    workload: &WorkloadType,
    catalog: &GpuCatalog,
    comm: &CommParams,
) -> Result<Vec<StageTimes>> {
    let hidden = hidden_size(model);
    let input = workload.rep_input_len as f64;
    let layers_total = model.num_layers as f64;
    let mut out = Vec::with_capacity(config.stages.len());
    for (i, stage) in config.stages.iter().enumerate() {
        let gpu = catalog.require(&stage.gpu_type)?;
        let share = stage.layer_count as f64 / layers_total;
        let t = stage.tp_degree as f64;
        let layers = stage.layer_count as f64;
        let intra = comm.intra_bw(&gpu.name);
        let prefill_compute =
            model.flops_per_token * input * share / (t * gpu.peak_flops * 1e12 * comm.efficiency(stage.tp_degree));
        let decode_mem = model.weight_bytes * share / (t * gpu.mem_bandwidth * 1e9);
        let mut prefill = prefill_compute
            + all_reduce_time(layers, stage.tp_degree, input, hidden, intra, comm.per_message_latency);
        let mut decode =
            decode_mem + all_reduce_time(layers, stage.tp_degree, 1.0, hidden, intra, comm.per_message_latency);
        if let Some(next) = config.stages.get(i + 1) {
            let link = if next.machine == stage.machine {
                intra
            } else {
                comm.pp_link_bw
            };
            let hop = |tokens: f64| ACT_BYTES * hidden * tokens / (link * 1e9) + comm.per_message_latency;
            prefill += hop(input);
            decode += hop(1.0);
        }
        out.push(StageTimes {
            prefill_s: prefill,
            decode_s: decode,
        });
    }
    Ok(out)
}

/// Rate and single-request latency, or `None` when a single request's KV
/// cache does not fit next to the weights.
pub fn estimate_entry(
    config: &Configuration,
    model: &ModelSpec,
    workload: &WorkloadType,
    catalog: &GpuCatalog,
    comm: &CommParams,
    mem: &MemoryParams,
) -> Result<Option<TableEntry>> {
    let stages = estimate_stage_times(config, model, workload, catalog, comm)?;
    let mut total_mem = 0.0;
    for s in &config.stages {
        total_mem += s.tp_degree as f64 * catalog.require(&s.gpu_type)?.mem_capacity * 1e9;
    }
    let free_kv = total_mem - model.weight_bytes * model.mem_overhead_factor;
    let per_request = model.kv_bytes_per_token * (workload.rep_input_len + workload.rep_output_len) as f64;
    let mut batch = (free_kv / per_request).floor();
    if !(batch >= 1.0) {
        return Ok(None);
    }
    if let Some(cap) = mem.max_batch {
        batch = batch.min(cap.max(1) as f64);
    }
    let max_prefill = stages.iter().map(|s| s.prefill_s).fold(0.0, f64::max);
    let max_decode = stages.iter().map(|s| s.decode_s).fold(0.0, f64::max);
    let output = workload.rep_output_len as f64;
    let prefill_rate = 1.0 / max_prefill;
    let decode_rate = batch / (output * max_decode);
    let rate = prefill_rate.min(decode_rate);
    let latency =
        stages.iter().map(|s| s.prefill_s).sum::<f64>() + output * stages.iter().map(|s| s.decode_s).sum::<f64>();
    Ok(Some(TableEntry {
        rate,
        latency: Some(latency),
    }))
}

/// Requests per second of one copy of `config` on `workload`.
pub fn estimate_throughput(
    config: &Configuration,
    model: &ModelSpec,
    workload: &WorkloadType,
    catalog: &GpuCatalog,
    comm: &CommParams,
    mem: &MemoryParams,
) -> Result<Option<f64>> {
    Ok(estimate_entry(config, model, workload, catalog, comm, mem)?.map(|e| e.rate))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub rate: f64,
    pub latency: Option<f64>,
}

/// `h[c][w]` in requests/second. Absent keys mean "cannot serve".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ThroughputTable {
    entries: BTreeMap<(String, u32), TableEntry>,
}

impl ThroughputTable {
    pub fn insert(&mut self, config_id: &str, workload: u32, entry: TableEntry) {
        self.entries.insert((config_id.to_string(), workload), entry);
    }

    pub fn get(&self, config_id: &str, workload: u32) -> Option<&TableEntry> {
        self.entries.get(&(config_id.to_string(), workload))
    }

    pub fn rate(&self, config_id: &str, workload: u32) -> Option<f64> {
        self.get(config_id, workload).map(|e| e.rate)
    }

    pub fn latency(&self, config_id: &str, workload: u32) -> Option<f64> {
        self.get(config_id, workload).and_then(|e| e.latency)
    }

    pub fn classes_for(&self, config_id: &str) -> Vec<u32> {
        self.entries
            .range((config_id.to_string(), 0)..=(config_id.to_string(), u32::MAX))
            .map(|((_, w), _)| *w)
            .collect()
    }

    pub fn config_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.entries.keys().map(|(c, _)| c.clone()).collect();
        ids.dedup();
        ids
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32, &TableEntry)> {
        self.entries.iter().map(|((c, w), e)| (c.as_str(), *w, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Replaces or adds every entry of `other`.
    pub fn overlay(&mut self, other: &ThroughputTable) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), *v);
        }
    }

    /// Profile-table records, sorted by configuration id then class.
    pub fn to_records(&self) -> Vec<ProfileRecord> {
        self.entries
            .iter()
            .map(|((c, w), e)| ProfileRecord {
                config_id: c.clone(),
                workload_id: *w,
                model: parse_config_id(c).map(|(m, _)| m).unwrap_or_default(),
                rate_rps: e.rate,
                latency_s: e.latency,
            })
            .collect()
    }
}

/// Evaluates the analytic estimator over every configuration and class.
pub fn build_table(
    configs: &[Configuration],
    classes: &[WorkloadType],
    models: &[ModelSpec],
    catalog: &GpuCatalog,
    comm: &CommParams,
    mem: &MemoryParams,
) -> Result<ThroughputTable> {
    comm.validate()?;
    let mut table = ThroughputTable::default();
    for c in configs {
        let model = models
            .iter()
            .find(|m| m.name == c.model)
            .ok_or_else(|| Error::unknown("model", &c.model))?;
        for w in classes {
            if let Some(entry) = estimate_entry(c, model, w, catalog, comm, mem)? {
                table.insert(&c.id, w.id, entry);
            }
        }
    }
    Ok(table)
}

/// One measured (configuration, class) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileRecord {
    pub config_id: String,
    pub workload_id: u32,
    pub model: String,
    pub rate_rps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_s: Option<f64>,
}

/// Reads a profile table (a list of [`ProfileRecord`]) and checks that every
/// id refers to a known model, GPU type and class.
pub fn load_profile_table(
    text: &str,
    catalog: &GpuCatalog,
    models: &[ModelSpec],
    classes: &[WorkloadType],
) -> Result<ThroughputTable> {
    let records: Vec<ProfileRecord> =
        serde_json::from_str(text).map_err(|e| Error::parse("profile table", &e))?;
    let mut table = ThroughputTable::default();
    for r in records {
        let (model, placements) = parse_config_id(&r.config_id)?;
        if model != r.model {
            return Err(Error::invalid(
                "ProfileRecord",
                &r.config_id,
                "model",
                format!("is `{}` but the id names `{model}`", r.model),
            ));
        }
        if !models.iter().any(|m| m.name == model) {
            return Err(Error::unknown("model", model));
        }
        for p in &placements {
            catalog.require(&p.gpu_type)?;
        }
        if !classes.iter().any(|w| w.id == r.workload_id) {
            return Err(Error::unknown("workload class", r.workload_id.to_string()));
        }
        if !(r.rate_rps.is_finite() && r.rate_rps > 0.0) {
            return Err(Error::invalid(
                "ProfileRecord",
                &r.config_id,
                "rate_rps",
                format!("must be > 0, got {}", r.rate_rps),
            ));
        }
        if let Some(l) = r.latency_s {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::invalid("ProfileRecord", &r.config_id, "latency_s", "must be > 0"));
            }
        }
        table.insert(
            &r.config_id,
            r.workload_id,
            TableEntry {
                rate: r.rate_rps,
                latency: r.latency_s,
            },
        );
    }
    Ok(table)
}

pub fn load_profile_table_file(
    path: &std::path::Path,
    catalog: &GpuCatalog,
    models: &[ModelSpec],
    classes: &[WorkloadType],
) -> Result<ThroughputTable> {
    let text = std::fs::read_to_string(path)?;
    load_profile_table(&text, catalog, models, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{default_catalog, GpuType};
    use crate::configspace::StagePlacement;
    use crate::workload::default_classes;
    use proptest::prelude::*;

    fn assert_close(a: f64, b: f64, rel: f64) {
        assert!((a - b).abs() <= rel * b.abs(), "{a} vs {b}");
    }

    fn single(model: &ModelSpec, ty: &str, tp: u32) -> Configuration {
        Configuration::build(model, &default_catalog(), &[StagePlacement::new(ty, tp, 0)]).unwrap()
    }

    #[test]
    fn pure_roofline_prefill_and_decode() {
        let model = ModelSpec::llama3_8b();
        let a100 = single(&model, "A100", 1);
        let w = WorkloadType::new(1, 496, 18);
        let t = estimate_stage_times(&a100, &model, &w, &default_catalog(), &CommParams::zero()).unwrap();
        assert_close(t[0].prefill_s, 496.0 * 16e9 / 312e12, 1e-12);
        assert_close(t[0].prefill_s, 0.025_436, 1e-4);
        let r4090 = single(&model, "4090", 1);
        let t = estimate_stage_times(&r4090, &model, &w, &default_catalog(), &CommParams::zero()).unwrap();
        assert_close(t[0].decode_s, 16.0 / 1008.0, 1e-12);
    }

    #[test]
    fn single_token_decode_with_unit_batch() {
        let model = ModelSpec::llama3_8b();
        let c = single(&model, "A100", 1);
        let w = WorkloadType::new(1, 100, 1);
        let mem = MemoryParams { max_batch: Some(1) };
        let h = estimate_throughput(&c, &model, &w, &default_catalog(), &CommParams::zero(), &mem)
            .unwrap()
            .unwrap();
        let t = estimate_stage_times(&c, &model, &w, &default_catalog(), &CommParams::zero()).unwrap();
        assert_close(h, (1.0 / t[0].prefill_s).min(1.0 / t[0].decode_s), 1e-12);
    }

    #[test]
    fn decode_rate_is_linear_in_batch() {
        let model = ModelSpec::llama3_8b();
        let c = single(&model, "4090", 1);
        // Long outputs keep the estimate decode-bound.
        let w = WorkloadType::new(1, 16, 2000);
        let catalog = default_catalog();
        let comm = CommParams::zero();
        let one = estimate_throughput(&c, &model, &w, &catalog, &comm, &MemoryParams { max_batch: Some(1) })
            .unwrap()
            .unwrap();
        let two = estimate_throughput(&c, &model, &w, &catalog, &comm, &MemoryParams { max_batch: Some(2) })
            .unwrap()
            .unwrap();
        assert_close(two, 2.0 * one, 1e-12);
    }

    #[test]
    fn kv_cache_overflow_leaves_entry_absent() {
        let catalog = GpuCatalog::new(vec![GpuType::new("g", 100.0, 1000.0, 20.0, 1.0)]).unwrap();
        let mut model = ModelSpec::llama3_8b();
        model.mem_overhead_factor = 1.0;
        let c = Configuration::build(&model, &catalog, &[StagePlacement::new("g", 1, 0)]).unwrap();
        // 4 GB free, 131 KB per token: 50k tokens do not fit.
        let w = WorkloadType::new(1, 40_000, 10_000);
        let mem = MemoryParams::default();
        assert_eq!(
            estimate_throughput(&c, &model, &w, &catalog, &CommParams::default(), &mem).unwrap(),
            None
        );
        let table = build_table(&[c], &[w], &[model], &catalog, &CommParams::default(), &mem).unwrap();
        assert!(table.is_empty());
    }

    #[test]
    fn zero_comm_prefill_rate_identity() {
        let model = ModelSpec::llama3_8b();
        let catalog = default_catalog();
        let mut comm = CommParams::zero();
        comm.tp_efficiency = [(1, 1.0), (2, 0.9), (4, 0.8)].into_iter().collect();
        for tp in [1, 2, 4] {
            let c = single(&model, "H100", tp);
            let w = WorkloadType::new(1, 2455, 18);
            let t = estimate_stage_times(&c, &model, &w, &catalog, &comm).unwrap();
            let lhs = (1.0 / t[0].prefill_s) * model.flops_per_token * 2455.0;
            let rhs = tp as f64 * 1979e12 * comm.efficiency(tp);
            assert_close(lhs, rhs, 1e-12);
        }
    }

    #[test]
    fn efficiency_falls_back_to_lower_degree() {
        let comm = CommParams::default();
        assert_eq!(comm.efficiency(1), 1.0);
        assert_eq!(comm.efficiency(3), 0.9);
        assert_eq!(comm.efficiency(16), 0.7);
    }

    #[test]
    fn table_is_positive_and_deterministic() {
        let model = ModelSpec::llama3_8b();
        let catalog = default_catalog();
        let configs: Vec<Configuration> = ["A100", "L40", "4090"].iter().map(|t| single(&model, t, 1)).collect();
        let classes = default_classes();
        let a = build_table(&configs, &classes, std::slice::from_ref(&model), &catalog, &CommParams::default(), &Default::default())
            .unwrap();
        let b = build_table(&configs, &classes, &[model], &catalog, &CommParams::default(), &Default::default())
            .unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
        assert!(a.iter().all(|(_, _, e)| e.rate > 0.0));
    }

    #[test]
    fn profile_rows_are_validated() {
        let catalog = default_catalog();
        let models = [ModelSpec::llama3_70b()];
        let classes = default_classes();
        let ok = r#"[{"config_id": "llama3-70b:H100x2+H100x2+H100x2+H100x2", "workload_id": 1,
                      "model": "llama3-70b", "rate_rps": 0.56}]"#;
        let t = load_profile_table(ok, &catalog, &models, &classes).unwrap();
        assert_eq!(t.rate("llama3-70b:H100x2+H100x2+H100x2+H100x2", 1), Some(0.56));

        let zero = ok.replace("0.56", "0");
        let err = load_profile_table(&zero, &catalog, &models, &classes).unwrap_err();
        assert!(err.to_string().contains("rate_rps"), "{err}");

        let unknown = ok.replace("H100x2+H100x2+H100x2+H100x2", "B200x8");
        assert!(load_profile_table(&unknown, &catalog, &models, &classes).is_err());
        let bad_class = ok.replace("\"workload_id\": 1", "\"workload_id\": 42");
        assert!(load_profile_table(&bad_class, &catalog, &models, &classes).is_err());
    }

    #[test]
    fn records_round_trip() {
        let mut t = ThroughputTable::default();
        t.insert("toy:t1x1", 1, TableEntry { rate: 1.0, latency: None });
        t.insert("toy:t2x2", 2, TableEntry { rate: 1.5, latency: Some(0.3) });
        let json = serde_json::to_string(&t.to_records()).unwrap();
        let catalog = GpuCatalog::new(vec![
            GpuType::new("t1", 1.0, 1.0, 80.0, 4.0).with_machine_size(1),
            GpuType::new("t2", 1.0, 1.0, 80.0, 2.0).with_machine_size(2),
        ])
        .unwrap();
        let toy = ModelSpec {
            name: "toy".into(),
            ..ModelSpec::llama3_8b()
        };
        let classes = [WorkloadType::new(1, 10, 10), WorkloadType::new(2, 10, 10)];
        assert_eq!(load_profile_table(&json, &catalog, &[toy], &classes).unwrap(), t);
    }

    proptest! {
        #[test]
        fn longer_requests_never_raise_throughput(
            input in 1u32..4000, output in 1u32..1000, extra_in in 0u32..2000, extra_out in 0u32..500,
            which in 0usize..4,
        ) {
            let model = ModelSpec::llama3_70b();
            let catalog = default_catalog();
            let placements = [
                vec![StagePlacement::new("H100", 2, 0), StagePlacement::new("H100", 2, 0)],
                vec![StagePlacement::new("A100", 4, 0), StagePlacement::new("A100", 4, 1)],
                vec![StagePlacement::new("L40", 8, 0)],
                vec![StagePlacement::new("A6000", 4, 0), StagePlacement::new("A6000", 4, 1)],
            ];
            let c = Configuration::build(&model, &catalog, &placements[which]).unwrap();
            let comm = CommParams::default();
            let mem = MemoryParams::default();
            let base = estimate_throughput(&c, &model, &WorkloadType::new(1, input, output), &catalog, &comm, &mem).unwrap();
            let longer = estimate_throughput(
                &c, &model, &WorkloadType::new(1, input + extra_in, output + extra_out), &catalog, &comm, &mem,
            ).unwrap();
            match (base, longer) {
                (Some(a), Some(b)) => prop_assert!(b <= a * (1.0 + 1e-12)),
                (None, Some(_)) => prop_assert!(false, "longer request fits where shorter did not"),
                _ => {}
            }
        }
    }
}
