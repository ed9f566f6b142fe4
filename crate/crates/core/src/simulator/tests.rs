use super::*;
use crate::catalog::{default_catalog, Availability, Budget, CatalogBundle, ModelSpec};
use crate::costmodel::TableEntry;
use crate::fixtures::{three_type_example, toy_catalog, toy_model, TOY_RATES};
use crate::pipeline::PlanningInputs;
use crate::solver::{check_plan, Activation, AssignmentEntry, Granularity, SolverOptions, SolverStats};
use crate::workload::{default_classes, synth_trace, RequestRecord, WorkloadType};

fn requests(class: &WorkloadType, n: usize, model: &str) -> Vec<RequestRecord> {
    (0..n)
        .map(|_| RequestRecord {
            input_len: class.rep_input_len,
            output_len: class.rep_output_len,
            model: model.into(),
            arrival_time: None,
        })
        .collect()
}

fn golden_trace(scale: u64, seed: u64) -> Vec<RequestRecord> {
    let p = three_type_example();
    let ratios = [(1, 80.0), (2, 20.0)].into_iter().collect();
    synth_trace(&ratios, &p.classes, 100 * scale, seed, "toy").unwrap()
}

fn single_replica_plan() -> Plan {
    Plan {
        makespan: 0.0,
        total_cost: 4.0,
        activations: vec![Activation {
            config_id: "toy:t1x1".into(),
            count: 1,
        }],
        assignment: vec![AssignmentEntry {
            config_id: "toy:t1x1".into(),
            model: "toy".into(),
            workload_id: 1,
            fraction: 1.0,
        }],
        gpu_usage: [("t1".to_string(), 1)].into_iter().collect(),
        solver: SolverStats::default(),
    }
}

#[test]
fn nearest_rank_percentiles() {
    let v: Vec<f64> = (1..=20).map(f64::from).collect();
    let p = Percentiles::of(&v);
    assert_eq!(p.get(5), Some(1.0));
    assert_eq!(p.get(50), Some(10.0));
    assert_eq!(p.get(100), Some(20.0));
    assert_eq!(Percentiles::of(&[3.0]).get(5), Some(3.0));
    let json = serde_json::to_string(&p).unwrap();
    assert!(json.starts_with("{\"p5\":1.0,\"p10\":2.0"));
    assert_eq!(serde_json::from_str::<Percentiles>(&json).unwrap(), p);
}

#[test]
fn one_replica_at_time_zero() {
    let p = three_type_example();
    let plan = single_replica_plan();
    let trace = requests(&p.classes[0], 50, "toy");
    let (report, log) = simulate_events(&plan, &trace, &p.classes, &p.table, 1, Dispatch::Weighted).unwrap();
    assert!((report.latency_percentiles.get(100).unwrap() - 50.0).abs() < 1e-9);
    assert!((report.throughput - 1.0).abs() < 1e-9);
    assert!((report.makespan - 50.0).abs() < 1e-9);
    assert_eq!(log.len(), 50);
    assert!((report.per_replica_utilization["toy:t1x1#0"] - 1.0).abs() < 1e-12);
    assert!((report.total_cost_for_run - 4.0 * 50.0 / 3600.0).abs() < 1e-12);
}

#[test]
fn queue_waits_for_arrivals() {
    let p = three_type_example();
    let plan = single_replica_plan();
    let mut trace = requests(&p.classes[0], 3, "toy");
    for (i, r) in trace.iter_mut().enumerate() {
        r.arrival_time = Some(10.0 * i as f64);
    }
    let (report, log) = simulate_events(&plan, &trace, &p.classes, &p.table, 1, Dispatch::Quota).unwrap();
    assert!(log.iter().all(|c| (c.end_s - c.arrival_s - 1.0).abs() < 1e-12));
    assert!((report.makespan - 21.0).abs() < 1e-12);
    assert!((report.per_replica_utilization["toy:t1x1#0"] - 3.0 / 21.0).abs() < 1e-12);
}

#[test]
fn same_seed_same_report() {
    let p = three_type_example();
    let plan = p.solve(&SolverOptions::default()).unwrap();
    let trace = golden_trace(3, 7);
    let a = simulate_events(&plan, &trace, &p.classes, &p.table, 11, Dispatch::Weighted).unwrap();
    let b = simulate_events(&plan, &trace, &p.classes, &p.table, 11, Dispatch::Weighted).unwrap();
    assert_eq!(a, b);
    let c = simulate_events(&plan, &trace, &p.classes, &p.table, 12, Dispatch::Weighted).unwrap();
    assert_eq!(c.1.len(), trace.len());
}

#[test]
fn quota_replay_of_the_golden_plan_is_exact() {
    let p = three_type_example();
    let plan = p.solve(&SolverOptions::default()).unwrap();
    assert!((evaluate_analytic(&plan, &p.table, &p.demand).unwrap() - plan.makespan).abs() < 1e-9);
    for scale in [1, 10, 100] {
        let (report, log) =
            simulate_events(&plan, &golden_trace(scale, 3), &p.classes, &p.table, 5, Dispatch::Quota).unwrap();
        assert_eq!(log.len() as u64, 100 * scale);
        let analytic = plan.makespan * scale as f64;
        assert!((report.makespan - analytic).abs() <= 1e-6 * analytic, "{scale}: {}", report.makespan);
        let ps: Vec<f64> = report.latency_percentiles.0.iter().map(|(_, v)| *v).collect();
        assert!(ps.windows(2).all(|w| w[0] <= w[1]));
        assert!(report.per_replica_utilization.values().all(|u| (0.0..=1.0).contains(u)));
    }
}

#[test]
fn weighted_replay_approaches_the_analytic_makespan() {
    let p = three_type_example();
    let plan = p.solve(&SolverOptions::default()).unwrap();
    let mut gaps = Vec::new();
    for scale in [1u64, 10, 100] {
        let mut total = 0.0;
        for seed in 0..10 {
            let (r, _) =
                simulate_events(&plan, &golden_trace(scale, seed), &p.classes, &p.table, seed, Dispatch::Weighted).unwrap();
            total += r.makespan;
        }
        let analytic = plan.makespan * scale as f64;
        gaps.push((total / 10.0 - analytic).abs() / analytic);
    }
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    assert!(gaps[2] < 0.02, "{gaps:?}");
}

#[test]
fn missing_class_names_the_class() {
    let p = three_type_example();
    let plan = single_replica_plan();
    let trace = requests(&p.classes[1], 2, "toy");
    let err = simulate_events(&plan, &trace, &p.classes, &p.table, 1, Dispatch::Weighted).unwrap_err();
    assert!(matches!(err, crate::Error::Unservable { workload: 2, .. }), "{err}");
}

#[test]
fn moving_work_to_a_slower_replica_never_helps() {
    let p = three_type_example();
    let plan = p.solve(&SolverOptions::fluid()).unwrap();
    let mut worse = plan.clone();
    for e in worse.assignment.iter_mut().filter(|e| e.workload_id == 1) {
        if e.config_id == "toy:t2x2" {
            e.fraction -= 0.01;
        } else {
            e.fraction += 0.01;
        }
    }
    assert!(evaluate_analytic(&worse, &p.table, &p.demand).unwrap() >= plan.makespan - 1e-9);
}

#[test]
fn baseline_names_round_trip() {
    for k in [
        BaselineKind::UniformComposition,
        BaselineKind::UniformDeployment,
        BaselineKind::RoundRobin,
        BaselineKind::Homogeneous("H100".into()),
    ] {
        assert_eq!(k.to_string().parse::<BaselineKind>().unwrap(), k);
    }
    assert_eq!("homogeneous(A40)".parse::<BaselineKind>().unwrap(), BaselineKind::Homogeneous("A40".into()));
    assert!("fastest".parse::<BaselineKind>().is_err());
}

#[test]
fn uniform_composition_splits_spend() {
    let p = three_type_example();
    let counts = uniform_composition_counts(&p.catalog, &p.availability, p.budget);
    assert_eq!(counts, Availability::from_pairs([("t1", 0), ("t2", 2), ("t3", 2)]));
}

fn toy_inputs() -> PlanningInputs {
    let p = three_type_example();
    let bundle = CatalogBundle {
        catalog: toy_catalog(),
        availability: p.availability.clone(),
        budget: Budget::new(8.0).unwrap(),
        models: vec![toy_model("toy", 1)],
    };
    let mut inputs = PlanningInputs::new(&bundle, p.classes.clone(), p.demand.clone()).unwrap();
    let mut profile = crate::costmodel::ThroughputTable::default();
    for (id, w, rate) in TOY_RATES {
        profile.insert(id, w, TableEntry { rate, latency: None });
    }
    inputs.profile = Some(profile);
    inputs.profile_only = true;
    inputs
}

#[test]
fn baselines_on_the_golden_example() {
    let inputs = toy_inputs();
    let (opt, cands) = inputs.plan().unwrap();
    for kind in [
        BaselineKind::UniformComposition,
        BaselineKind::UniformDeployment,
        BaselineKind::RoundRobin,
    ] {
        let b = baseline(&inputs, &kind, Some((&opt, &cands))).unwrap();
        assert!(b.makespan >= opt.makespan - 1e-9, "{kind}: {}", b.makespan);
        assert_eq!(b.solver.mode, kind.to_string());
    }
    let rr = baseline(&inputs, &BaselineKind::RoundRobin, None).unwrap();
    assert!(rr.makespan >= 28.67 - 0.01);
    let v = check_plan(&rr, &cands.configs, &cands.table, &inputs.demand, inputs.budget, &inputs.availability, 1e-9);
    assert!(v.is_empty(), "{v:?}");
}

#[test]
fn round_robin_fluid_split_is_even() {
    let p = three_type_example();
    let plan = p.solve(&SolverOptions::fluid()).unwrap();
    let rr = round_robin_assignment(&plan, &p.configs, &p.table, &p.demand, Granularity::Fluid).unwrap();
    for e in &rr.assignment {
        assert!((e.fraction - 0.5).abs() < 1e-12 || e.workload_id == 2 && (e.fraction - 0.5).abs() < 1e-12);
    }
}

#[test]
fn homogeneous_h100_respects_the_budget() {
    let bundle = CatalogBundle {
        catalog: default_catalog(),
        availability: Availability::from_pairs([("A40", 4)]),
        budget: Budget::new(60.0).unwrap(),
        models: vec![ModelSpec::llama3_8b()],
    };
    let name = ModelSpec::llama3_8b().name;
    let demand = crate::workload::DemandMatrix::single_model(&name, &[(1, 200.0), (9, 100.0)]);
    let inputs = PlanningInputs::new(&bundle, default_classes(), demand).unwrap();
    let plan = baseline(&inputs, &BaselineKind::Homogeneous("H100".into()), None).unwrap();
    let used: u32 = plan.gpu_usage.values().sum();
    assert!(used <= 20 && plan.gpu_usage.keys().all(|t| t == "H100"), "{:?}", plan.gpu_usage);
    assert!(plan.total_cost <= 60.0 + 1e-9);
}
