use std::collections::BTreeSet;

use proptest::prelude::*;

use hetserve::catalog::{Availability, GpuCatalog, GpuType, ModelSpec};
use hetserve::configspace::{enumerate_configs, pack_stages, Configuration};

fn catalog_from(spec: &[(u32, f64, u32, bool)]) -> GpuCatalog {
    GpuCatalog::new(
        spec.iter()
            .enumerate()
            .map(|(i, &(machine, mem, _, other_zone))| {
                let mut t = GpuType::new(&format!("g{i}"), 100.0, 1000.0, mem, 1.0 + i as f64).with_machine_size(machine);
                if other_zone {
                    t.zone = "far".into();
                }
                t
            })
            .collect(),
    )
    .unwrap()
}

/// Every buildable configuration, found by counting how many stages of each
/// (type, tp) kind a replica uses rather than by extending stage lists.
fn brute_force(catalog: &GpuCatalog, avail: &Availability, model: &ModelSpec, max_gpus: u32) -> BTreeSet<String> {
    let mut kinds: Vec<(String, u32, String)> = Vec::new();
    for t in catalog.types() {
        for tp in [1u32, 2, 4, 8] {
            if tp <= t.gpus_per_machine && tp <= max_gpus && tp <= avail.get(&t.name) {
                kinds.push((t.name.clone(), tp, t.zone.clone()));
            }
        }
    }
    let mut found = BTreeSet::new();
    let mut counts = vec![0u32; kinds.len()];
    loop {
        let mut i = 0;
        loop {
            if i == kinds.len() {
                return found;
            }
            counts[i] += 1;
            if kinds[i].1 * counts[i] <= max_gpus {
                break;
            }
            counts[i] = 0;
            i += 1;
        }
        let stages: Vec<(String, u32)> = kinds
            .iter()
            .zip(&counts)
            .flat_map(|((t, tp, _), &n)| std::iter::repeat_n((t.clone(), *tp), n as usize))
            .collect();
        let total: u32 = stages.iter().map(|(_, tp)| tp).sum();
        let zones: BTreeSet<&str> = kinds
            .iter()
            .zip(&counts)
            .filter(|(_, &n)| n > 0)
            .map(|((_, _, z), _)| z.as_str())
            .collect();
        let within = catalog
            .types()
            .iter()
            .all(|t| stages.iter().filter(|(n, _)| n == &t.name).map(|(_, tp)| tp).sum::<u32>() <= avail.get(&t.name));
        if total > max_gpus || zones.len() > 1 || !within || stages.len() > model.num_layers as usize {
            continue;
        }
        let placements = pack_stages(catalog, &stages).unwrap();
        if let Ok(c) = Configuration::build(model, catalog, &placements) {
            found.insert(c.id);
        }
    }
}

fn model(layers: u32, weight_gb: f64) -> ModelSpec {
    ModelSpec {
        name: "m".into(),
        num_layers: layers,
        weight_bytes: weight_gb * 1e9,
        flops_per_token: 2e9,
        kv_bytes_per_token: 1e4,
        min_replica_memory: weight_gb,
        mem_overhead_factor: 1.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn enumeration_is_complete_and_sound(
        types in proptest::collection::vec((1u32..=4, prop_oneof![Just(24.0), Just(48.0), Just(80.0)], 1u32..=3, proptest::bool::weighted(0.2)), 1..=3),
        layers in 1u32..=6,
        weight_gb in prop_oneof![3 => Just(10.0), 2 => Just(60.0), 1 => Just(150.0)],
        max_gpus in 1u32..=4,
    ) {
        let catalog = catalog_from(&types);
        let avail = Availability(
            types.iter().enumerate().map(|(i, t)| (format!("g{i}"), t.2)).collect(),
        );
        let m = model(layers, weight_gb);
        let listed = enumerate_configs(&catalog, &avail, &m, max_gpus).unwrap();
        let ids: Vec<String> = listed.configs.iter().map(|c| c.id.clone()).collect();
        let unique: BTreeSet<String> = ids.iter().cloned().collect();
        prop_assert_eq!(unique.len(), ids.len(), "duplicate configurations");
        prop_assert_eq!(&unique, &brute_force(&catalog, &avail, &m, max_gpus));
        prop_assert!(listed.configs.windows(2).all(|w| w[0].cost <= w[1].cost));
        for c in &listed.configs {
            prop_assert!(c.total_gpus() <= max_gpus);
            for (t, &n) in &c.gpu_counts {
                prop_assert!(n <= avail.get(t));
            }
            for s in &c.stages {
                let ty = catalog.get(&s.gpu_type).unwrap();
                prop_assert!(s.tp_degree.is_power_of_two() && s.tp_degree <= ty.gpus_per_machine);
                prop_assert!(s.layer_count >= 1);
            }
            prop_assert_eq!(c.stages.iter().map(|s| s.layer_count).sum::<u32>(), layers);
        }
    }
}
