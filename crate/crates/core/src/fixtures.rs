//! Ready-made planning problems: the three-type worked example used as a
//! golden reference, and seeded random instances for property tests and
//! benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::{Availability, GpuCatalog, GpuType, ModelSpec};
use crate::configspace::{pack_stages, Configuration, StagePlacement};
use crate::costmodel::{TableEntry, ThroughputTable};
use crate::error::Result;
use crate::solver::{self, check_plan, Plan, SolverOptions, Violation};
use crate::workload::{DemandMatrix, WorkloadType};

/// Everything one solve needs.
#[derive(Debug, Clone)]
pub struct Problem {
    pub catalog: GpuCatalog,
    pub availability: Availability,
    pub budget: f64,
    pub models: Vec<ModelSpec>,
    pub classes: Vec<WorkloadType>,
    pub configs: Vec<Configuration>,
    pub table: ThroughputTable,
    pub demand: DemandMatrix,
}

impl Problem {
    pub fn solve(&self, options: &SolverOptions) -> Result<Plan> {
        solver::solve(&self.configs, &self.table, &self.demand, self.budget, &self.availability, options)
    }

    pub fn check(&self, plan: &Plan) -> Vec<Violation> {
        check_plan(
            plan,
            &self.configs,
            &self.table,
            &self.demand,
            self.budget,
            &self.availability,
            1e-9,
        )
    }

    pub fn config(&self, id: &str) -> &Configuration {
        self.configs
            .iter()
            .find(|c| c.id == id)
            .unwrap_or_else(|| panic!("no configuration `{id}`"))
    }
}

/// A model small enough to fit any single GPU in one layer.
pub fn toy_model(name: &str, num_layers: u32) -> ModelSpec {
    ModelSpec {
        name: name.into(),
        num_layers,
        weight_bytes: 1e9,
        flops_per_token: 2e9,
        kv_bytes_per_token: 1e4,
        min_replica_memory: 1.0,
        mem_overhead_factor: 1.0,
    }
}

pub fn toy_catalog() -> GpuCatalog {
    GpuCatalog::new(vec![
        GpuType::new("t1", 100.0, 1000.0, 80.0, 4.0).with_machine_size(1),
        GpuType::new("t2", 100.0, 1000.0, 80.0, 2.0).with_machine_size(2),
        GpuType::new("t3", 100.0, 1000.0, 80.0, 2.0).with_machine_size(1),
    ])
    .expect("toy catalog is valid")
}

/// Measured rates of the three-type example, as `(config id, class, rate)`.
pub const TOY_RATES: [(&str, u32, f64); 8] = [
    ("toy:t1x1", 1, 1.0),
    ("toy:t1x1", 2, 1.2),
    ("toy:t2x1", 1, 0.9),
    ("toy:t2x1", 2, 0.9),
    ("toy:t3x1", 1, 0.3),
    ("toy:t3x1", 2, 0.5),
    ("toy:t2x2", 1, 2.4),
    ("toy:t2x2", 2, 1.5),
];

/// Three GPU types (4, 2 and 2 $/h, two of each available), a budget of
/// 8 $/h, 80 requests of class 1 and 20 of class 2 arriving together.
/// Only type t2 comes two to a machine, so the lone TP configuration is t2x2.
pub fn three_type_example() -> Problem {
    let catalog = toy_catalog();
    let model = toy_model("toy", 1);
    let mut configs: Vec<Configuration> = [("t1", 1), ("t2", 1), ("t3", 1), ("t2", 2)]
        .iter()
        .map(|&(t, tp)| Configuration::build(&model, &catalog, &[StagePlacement::new(t, tp, 0)]).unwrap())
        .collect();
    configs.sort_by(|a, b| a.id.cmp(&b.id));
    let mut table = ThroughputTable::default();
    for (id, w, rate) in TOY_RATES {
        table.insert(id, w, TableEntry { rate, latency: None });
    }
    Problem {
        catalog,
        availability: Availability::from_pairs([("t1", 2), ("t2", 2), ("t3", 2)]),
        budget: 8.0,
        models: vec![model],
        classes: vec![WorkloadType::new(1, 1024, 64), WorkloadType::new(2, 128, 512)],
        configs,
        table,
        demand: DemandMatrix::single_model("toy", &[(1, 80.0), (2, 20.0)]),
    }
}

/// Shape limits for [`random_problem`].
#[derive(Debug, Clone)]
pub struct RandomSpec {
    pub max_types: usize,
    pub max_avail: u32,
    pub max_configs: usize,
    pub max_classes: usize,
    pub rate_range: (f64, f64),
    pub max_demand: u32,
    /// Most stages per configuration (mixed-type pipelines need 2+).
    pub max_stages: usize,
    pub model: String,
}

impl RandomSpec {
    /// Small instances an exhaustive search can check.
    pub fn small() -> Self {
        RandomSpec {
            max_types: 3,
            max_avail: 3,
            max_configs: 4,
            max_classes: 3,
            rate_range: (0.1, 5.0),
            max_demand: 100,
            max_stages: 2,
            model: "m".into(),
        }
    }

    pub fn medium() -> Self {
        RandomSpec {
            max_types: 6,
            max_avail: 4,
            max_configs: 20,
            max_classes: 3,
            rate_range: (0.1, 5.0),
            max_demand: 200,
            max_stages: 2,
            model: "m".into(),
        }
    }
}

/// A seeded random instance within `spec`'s limits. Every class is served
/// by at least one configuration; the budget lies between the cheapest
/// configuration and the cost of renting everything.
pub fn random_problem(seed: u64, spec: &RandomSpec) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ntypes = rng.gen_range(1..=spec.max_types);
    let types: Vec<GpuType> = (0..ntypes)
        .map(|i| {
            let price = (rng.gen_range(0.5..4.0) * 100.0_f64).round() / 100.0;
            GpuType::new(&format!("g{i}"), 100.0, 1000.0, 80.0, price).with_machine_size(rng.gen_range(1..=2))
        })
        .collect();
    let catalog = GpuCatalog::new(types.clone()).unwrap();
    let availability = Availability(
        types
            .iter()
            .map(|t| (t.name.clone(), rng.gen_range(1..=spec.max_avail)))
            .collect(),
    );
    let model = toy_model(&spec.model, spec.max_stages.max(1) as u32);
    let nclasses = rng.gen_range(1..=spec.max_classes);
    let classes: Vec<WorkloadType> = (1..=nclasses as u32).map(|w| WorkloadType::new(w, 100 * w, 10 * w)).collect();

    let target = rng.gen_range(1..=spec.max_configs);
    let mut configs: Vec<Configuration> = Vec::new();
    let mut attempts = 0;
    while configs.len() < target && attempts < 50 * spec.max_configs {
        attempts += 1;
        let stages = rng.gen_range(1..=spec.max_stages.max(1));
        let mut picked: Vec<(String, u32)> = Vec::new();
        for _ in 0..stages {
            let t = &types[rng.gen_range(0..ntypes)];
            let tp = if t.gpus_per_machine >= 2 && rng.gen_bool(0.3) { 2 } else { 1 };
            picked.push((t.name.clone(), tp));
        }
        let mut usage = std::collections::BTreeMap::<&str, u32>::new();
        for (t, tp) in &picked {
            *usage.entry(t).or_insert(0) += tp;
        }
        if usage.iter().any(|(t, &u)| u > availability.get(t)) {
            continue;
        }
        let Ok(placements) = pack_stages(&catalog, &picked) else { continue };
        let Ok(c) = Configuration::build(&model, &catalog, &placements) else { continue };
        if configs.iter().any(|o| o.id == c.id) {
            continue;
        }
        configs.push(c);
    }

    let mut table = ThroughputTable::default();
    let (lo, hi) = spec.rate_range;
    for c in &configs {
        for w in &classes {
            if rng.gen_bool(0.85) {
                let rate = rng.gen_range(lo..hi);
                table.insert(&c.id, w.id, TableEntry { rate, latency: None });
            }
        }
    }
    for w in &classes {
        if !configs.iter().any(|c| table.rate(&c.id, w.id).is_some()) {
            let c = &configs[rng.gen_range(0..configs.len())];
            let rate = rng.gen_range(lo..hi);
            table.insert(&c.id, w.id, TableEntry { rate, latency: None });
        }
    }
    let mut demand = DemandMatrix::new();
    for w in &classes {
        demand.set(&model.name, w.id, rng.gen_range(1..=spec.max_demand) as f64);
    }
    let cheapest = configs.iter().map(|c| c.cost).fold(f64::INFINITY, f64::min);
    let everything: f64 = types.iter().map(|t| t.price * availability.get(&t.name) as f64).sum();
    let budget = ((cheapest + rng.gen_range(0.0..1.0) * (everything - cheapest)) * 100.0).ceil() / 100.0;
    Problem {
        catalog,
        availability,
        budget,
        models: vec![model],
        classes,
        configs,
        table,
        demand,
    }
}

/// A seeded planning problem over a subset of the default catalog serving
/// the 8B model: two to four GPU types, up to six units each, replicas of at most two GPUs, a random mix
/// of the nine standard classes and a budget that rents part of the pool.
pub fn random_catalog_inputs(seed: u64) -> crate::pipeline::PlanningInputs {
    use crate::catalog::{default_catalog, Budget, CatalogBundle};
    use crate::workload::default_classes;
    use rand::seq::SliceRandom;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let full = default_catalog();
    let mut types: Vec<GpuType> = full.types().to_vec();
    types.shuffle(&mut rng);
    types.truncate(rng.gen_range(2..=4));
    let availability = Availability(
        types
            .iter()
            .map(|t| (t.name.clone(), rng.gen_range(1..=6)))
            .collect(),
    );
    let everything: f64 = types.iter().map(|t| t.price * availability.get(&t.name) as f64).sum();
    let cheapest = types.iter().map(|t| t.price).fold(f64::INFINITY, f64::min);
    let budget = ((cheapest + rng.gen_range(0.3..0.8) * (everything - cheapest)) * 100.0).ceil() / 100.0;
    let model = ModelSpec::llama3_8b();
    let classes = default_classes();
    let mut picked: Vec<u32> = classes.iter().map(|c| c.id).collect();
    picked.shuffle(&mut rng);
    picked.truncate(rng.gen_range(2..=4));
    let counts: Vec<(u32, f64)> = picked.iter().map(|&w| (w, rng.gen_range(20..=200) as f64)).collect();
    let bundle = CatalogBundle {
        catalog: GpuCatalog::new(types).expect("subset of a valid catalog"),
        availability,
        budget: Budget::new(budget).expect("positive budget"),
        models: vec![model.clone()],
    };
    let demand = DemandMatrix::single_model(&model.name, &counts);
    let mut inputs = crate::pipeline::PlanningInputs::new(&bundle, classes, demand).expect("valid inputs");
    inputs.max_gpus_per_replica = 2;
    inputs
}
