//! GPU types, availability, budget and model specifications.
//!
//! All memory figures are decimal gigabytes (1 GB = 10^9 bytes).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Zone used when a catalog entry does not name one.
pub const DEFAULT_ZONE: &str = "default";

/// Intra-machine link of data-center servers (NVLink), GB/s.
pub const NVLINK_BW: f64 = 300.0;
/// Intra-machine link of workstation and consumer servers (PCIe), GB/s.
pub const PCIE_BW: f64 = 60.0;
/// Link between servers (5 Gb/s Ethernet), GB/s.
pub const ETHERNET_BW: f64 = 5.0 / 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpuType {
    pub name: String,
    /// Peak fp16 throughput, TFLOP/s.
    pub peak_flops: f64,
    /// GB/s.
    pub mem_bandwidth: f64,
    /// GB.
    pub mem_capacity: f64,
    /// USD per GPU-hour.
    pub price: f64,
    pub gpus_per_machine: u32,
    pub zone: String,
}

impl GpuType {
    pub fn new(name: &str, peak_flops: f64, mem_bandwidth: f64, mem_capacity: f64, price: f64) -> Self {
        GpuType {
            name: name.to_string(),
            peak_flops,
            mem_bandwidth,
            mem_capacity,
            price,
            gpus_per_machine: default_gpus_per_machine(name),
            zone: DEFAULT_ZONE.to_string(),
        }
    }

    pub fn with_machine_size(mut self, gpus_per_machine: u32) -> Self {
        self.gpus_per_machine = gpus_per_machine;
        self
    }

    pub fn in_zone(mut self, zone: &str) -> Self {
        self.zone = zone.to_string();
        self
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("peak_flops", self.peak_flops),
            ("mem_bandwidth", self.mem_bandwidth),
            ("mem_capacity", self.mem_capacity),
            ("price", self.price),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid("GpuType", &self.name, field, format!("must be > 0, got {v}")));
            }
        }
        if self.gpus_per_machine == 0 {
            return Err(Error::invalid("GpuType", &self.name, "gpus_per_machine", "must be >= 1"));
        }
        if self.name.is_empty() {
            return Err(Error::invalid("GpuType", "", "name", "must not be empty"));
        }
        Ok(())
    }
}

/// Machine size assumed when a catalog entry leaves it out.
///
/// Data-center servers and L40 servers hold eight GPUs; the remaining
/// workstation and consumer servers hold four.
pub fn default_gpus_per_machine(name: &str) -> u32 {
    match name {
        "H100" | "A100" | "L40" => 8,
        _ => 4,
    }
}

/// Default intra-machine bandwidth for a GPU type, GB/s.
pub fn default_intra_machine_bw(name: &str) -> f64 {
    match name {
        "H100" | "A100" => NVLINK_BW,
        _ => PCIE_BW,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpuCatalog {
    types: Vec<GpuType>,
}

impl GpuCatalog {
    pub fn new(types: Vec<GpuType>) -> Result<Self> {
        for (i, t) in types.iter().enumerate() {
            t.validate()?;
            if types[..i].iter().any(|o| o.name == t.name) {
                return Err(Error::invalid("GpuType", &t.name, "name", "is not unique in the catalog"));
            }
        }
        Ok(GpuCatalog { types })
    }

    pub fn types(&self) -> &[GpuType] {
        &self.types
    }

    pub fn get(&self, name: &str) -> Option<&GpuType> {
        self.types.iter().find(|t| t.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.types.iter().position(|t| t.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&GpuType> {
        self.get(name).ok_or_else(|| Error::unknown("GPU type", name))
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.types.iter().map(|t| t.name.as_str())
    }
}

/// The six cloud GPU types with their published specifications and hourly prices.
pub fn default_catalog() -> GpuCatalog {
    GpuCatalog::new(vec![
        GpuType::new("A6000", 91.0, 960.0, 48.0, 0.83),
        GpuType::new("A40", 150.0, 696.0, 48.0, 0.55),
        GpuType::new("L40", 181.0, 864.0, 48.0, 0.83),
        GpuType::new("A100", 312.0, 1555.0, 80.0, 1.75),
        GpuType::new("H100", 1979.0, 3350.0, 80.0, 2.99),
        GpuType::new("4090", 83.0, 1008.0, 24.0, 0.53),
    ])
    .expect("built-in catalog is valid")
}

/// How many GPUs of each type can be rented right now.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Availability(pub BTreeMap<String, u32>);

impl Availability {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, u32)>) -> Self {
        Availability(pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
    }

    /// Types absent from the map have zero units available.
    pub fn get(&self, name: &str) -> u32 {
        self.0.get(name).copied().unwrap_or(0)
    }

    pub fn set(&mut self, name: &str, count: u32) {
        self.0.insert(name.to_string(), count);
    }

    pub fn validate(&self, catalog: &GpuCatalog) -> Result<()> {
        for name in self.0.keys() {
            if catalog.get(name).is_none() {
                return Err(Error::unknown("GPU type in availability", name));
            }
        }
        Ok(())
    }

    /// Rows of the real-time availability snapshots (`1..=4`) over the default catalog.
    pub fn snapshot(index: usize) -> Option<Self> {
        let rows: [[u32; 6]; 4] = [
            [16, 12, 8, 12, 6, 8],
            [32, 8, 16, 16, 7, 12],
            [32, 16, 8, 8, 32, 8],
            [24, 24, 24, 16, 4, 8],
        ];
        let names = ["4090", "A40", "A6000", "L40", "A100", "H100"];
        let row = rows.get(index.checked_sub(1)?)?;
        Some(Availability::from_pairs(names.iter().copied().zip(row.iter().copied())))
    }
}

/// Spending limit in USD per hour.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Budget(f64);

impl Budget {
    pub fn new(limit: f64) -> Result<Self> {
        if limit.is_finite() && limit > 0.0 {
            Ok(Budget(limit))
        } else {
            Err(Error::invalid("Budget", "budget_per_hour", "limit", format!("must be > 0, got {limit}")))
        }
    }

    pub fn limit(self) -> f64 {
        self.0
    }
}

fn default_overhead() -> f64 {
    1.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub num_layers: u32,
    /// fp16 parameter bytes.
    pub weight_bytes: f64,
    /// FLOPs per token, about twice the parameter count.
    pub flops_per_token: f64,
    pub kv_bytes_per_token: f64,
    /// Least total GPU memory (GB) that can hold one replica.
    pub min_replica_memory: f64,
    #[serde(default = "default_overhead")]
    pub mem_overhead_factor: f64,
}

impl ModelSpec {
    pub fn llama3_8b() -> Self {
        ModelSpec {
            name: "llama3-8b".into(),
            num_layers: 32,
            weight_bytes: 16e9,
            flops_per_token: 16e9,
            // 32 layers x 8 kv heads x 128 dims x (k, v) x 2 bytes
            kv_bytes_per_token: 131_072.0,
            min_replica_memory: 16.0,
            mem_overhead_factor: default_overhead(),
        }
    }

    pub fn llama3_70b() -> Self {
        ModelSpec {
            name: "llama3-70b".into(),
            num_layers: 80,
            weight_bytes: 140e9,
            flops_per_token: 140e9,
            kv_bytes_per_token: 327_680.0,
            min_replica_memory: 140.0,
            mem_overhead_factor: default_overhead(),
        }
    }

    pub fn weight_gb(&self) -> f64 {
        self.weight_bytes / 1e9
    }

    /// Weights plus activation/KV headroom, in GB.
    pub fn resident_gb(&self) -> f64 {
        self.weight_gb() * self.mem_overhead_factor
    }

    pub fn validate(&self) -> Result<()> {
        let name = &self.name;
        if name.is_empty() {
            return Err(Error::invalid("ModelSpec", "", "name", "must not be empty"));
        }
        if self.num_layers == 0 {
            return Err(Error::invalid("ModelSpec", name, "num_layers", "must be >= 1"));
        }
        for (field, v) in [
            ("weight_bytes", self.weight_bytes),
            ("flops_per_token", self.flops_per_token),
            ("kv_bytes_per_token", self.kv_bytes_per_token),
            ("min_replica_memory", self.min_replica_memory),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid("ModelSpec", name, field, format!("must be > 0, got {v}")));
            }
        }
        if !(self.mem_overhead_factor.is_finite() && self.mem_overhead_factor >= 1.0) {
            return Err(Error::invalid("ModelSpec", name, "mem_overhead_factor", "must be >= 1"));
        }
        if self.min_replica_memory + 1e-9 < self.weight_gb() {
            return Err(Error::invalid(
                "ModelSpec",
                name,
                "min_replica_memory",
                format!("{} GB is below the weight size {} GB", self.min_replica_memory, self.weight_gb()),
            ));
        }
        Ok(())
    }
}

/// Everything the catalog file carries.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogBundle {
    pub catalog: GpuCatalog,
    pub availability: Availability,
    pub budget: Budget,
    pub models: Vec<ModelSpec>,
}

impl CatalogBundle {
    pub fn model(&self, name: &str) -> Result<&ModelSpec> {
        self.models
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::unknown("model", name))
    }

    pub fn to_json(&self) -> String {
        let doc = CatalogDocument {
            gpu_types: self.catalog.types.iter().cloned().map(RawGpuType::from).collect(),
            availability: self.availability.clone(),
            budget_per_hour: self.budget.limit(),
            models: self.models.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("catalog serializes")
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGpuType {
    name: String,
    peak_flops: f64,
    mem_bandwidth: f64,
    mem_capacity: f64,
    price: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gpus_per_machine: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    zone: Option<String>,
}

impl From<GpuType> for RawGpuType {
    fn from(t: GpuType) -> Self {
        RawGpuType {
            name: t.name,
            peak_flops: t.peak_flops,
            mem_bandwidth: t.mem_bandwidth,
            mem_capacity: t.mem_capacity,
            price: t.price,
            gpus_per_machine: Some(t.gpus_per_machine),
            zone: Some(t.zone),
        }
    }
}

impl From<RawGpuType> for GpuType {
    fn from(r: RawGpuType) -> Self {
        let gpus_per_machine = r.gpus_per_machine.unwrap_or_else(|| default_gpus_per_machine(&r.name));
        GpuType {
            gpus_per_machine,
            zone: r.zone.unwrap_or_else(|| DEFAULT_ZONE.to_string()),
            name: r.name,
            peak_flops: r.peak_flops,
            mem_bandwidth: r.mem_bandwidth,
            mem_capacity: r.mem_capacity,
            price: r.price,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogDocument {
    gpu_types: Vec<RawGpuType>,
    #[serde(default)]
    availability: Availability,
    budget_per_hour: f64,
    #[serde(default)]
    models: Vec<ModelSpec>,
}

/// Parses and validates a catalog document (JSON).
pub fn load_catalog(text: &str) -> Result<CatalogBundle> {
    let doc: CatalogDocument = serde_json::from_str(text).map_err(|e| Error::parse("catalog", &e))?;
    let catalog = GpuCatalog::new(doc.gpu_types.into_iter().map(GpuType::from).collect())?;
    doc.availability.validate(&catalog)?;
    let budget = Budget::new(doc.budget_per_hour)?;
    for (i, m) in doc.models.iter().enumerate() {
        m.validate()?;
        if doc.models[..i].iter().any(|o| o.name == m.name) {
            return Err(Error::invalid("ModelSpec", &m.name, "name", "is not unique"));
        }
    }
    Ok(CatalogBundle {
        catalog,
        availability: doc.availability,
        budget,
        models: doc.models,
    })
}

pub fn load_catalog_file(path: &std::path::Path) -> Result<CatalogBundle> {
    let text = std::fs::read_to_string(path)?;
    load_catalog(&text).map_err(|e| match e {
        Error::Parse { line, column, message, .. } => Error::Parse {
            source_name: path.display().to_string(),
            line,
            column,
            message,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const A100_DOC: &str = r#"{
        "gpu_types": [
            {"name": "A100", "peak_flops": 312, "mem_bandwidth": 1555, "mem_capacity": 80, "price": 1.75}
        ],
        "availability": {"A100": 6},
        "budget_per_hour": 10,
        "models": []
    }"#;

    #[test]
    fn accepts_a100_row() {
        let b = load_catalog(A100_DOC).unwrap();
        let a100 = b.catalog.get("A100").unwrap();
        assert_eq!(a100.peak_flops, 312.0);
        assert_eq!(a100.mem_bandwidth, 1555.0);
        assert_eq!(a100.mem_capacity, 80.0);
        assert_eq!(a100.price, 1.75);
        assert_eq!(a100.gpus_per_machine, 8);
        assert_eq!(a100.zone, DEFAULT_ZONE);
        assert_eq!(b.availability.get("A100"), 6);
    }

    #[test]
    fn zero_price_names_the_field() {
        let doc = A100_DOC.replace("\"price\": 1.75", "\"price\": 0");
        let err = load_catalog(&doc).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("price"), "{msg}");
        assert!(msg.contains("GpuType"), "{msg}");
    }

    #[test]
    fn unknown_fields_are_rejected_with_position() {
        let doc = A100_DOC.replace("\"price\": 1.75", "\"price\": 1.75, \"color\": 3");
        match load_catalog(&doc).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("color"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn availability_must_reference_catalog() {
        let doc = A100_DOC.replace("{\"A100\": 6}", "{\"B200\": 1}");
        assert!(matches!(load_catalog(&doc), Err(Error::Unknown { .. })));
    }

    #[test]
    fn snapshot_one_is_accepted() {
        let avail = Availability::snapshot(1).unwrap();
        avail.validate(&default_catalog()).unwrap();
        assert_eq!(avail.get("H100"), 8);
        assert_eq!(avail.get("A100"), 6);
        assert_eq!(avail.get("4090"), 16);
        assert_eq!(avail.get("L40"), 12);
        assert!(Availability::snapshot(5).is_none());
    }

    #[test]
    fn default_catalog_matches_published_table() {
        let c = default_catalog();
        assert_eq!(c.len(), 6);
        let h100 = c.get("H100").unwrap();
        assert_eq!(
            (h100.peak_flops, h100.mem_bandwidth, h100.mem_capacity, h100.price),
            (1979.0, 3350.0, 80.0, 2.99)
        );
        let rtx = c.get("4090").unwrap();
        assert_eq!((rtx.peak_flops, rtx.mem_bandwidth, rtx.mem_capacity, rtx.price), (83.0, 1008.0, 24.0, 0.53));
        let as_strings: Vec<String> = c
            .types()
            .iter()
            .map(|t| format!("{} {} {} {} {}", t.name, t.peak_flops, t.mem_bandwidth, t.mem_capacity, t.price))
            .collect();
        assert_eq!(
            as_strings,
            [
                "A6000 91 960 48 0.83",
                "A40 150 696 48 0.55",
                "L40 181 864 48 0.83",
                "A100 312 1555 80 1.75",
                "H100 1979 3350 80 2.99",
                "4090 83 1008 24 0.53",
            ]
        );
    }

    #[test]
    fn model_memory_invariant() {
        let mut m = ModelSpec::llama3_70b();
        m.validate().unwrap();
        m.min_replica_memory = 100.0;
        assert!(m.validate().unwrap_err().to_string().contains("min_replica_memory"));
    }

    #[test]
    fn duplicate_names_rejected() {
        let t = GpuType::new("A40", 150.0, 696.0, 48.0, 0.55);
        assert!(GpuCatalog::new(vec![t.clone(), t]).is_err());
    }

    #[test]
    fn bundle_round_trip() {
        let bundle = CatalogBundle {
            catalog: default_catalog(),
            availability: Availability::snapshot(2).unwrap(),
            budget: Budget::new(30.0).unwrap(),
            models: vec![ModelSpec::llama3_8b(), ModelSpec::llama3_70b()],
        };
        let again = load_catalog(&bundle.to_json()).unwrap();
        assert_eq!(again, bundle);
        assert_eq!(load_catalog(&again.to_json()).unwrap(), again);
    }
}
