use super::*;
use crate::fixtures::{random_problem, three_type_example, RandomSpec};

fn assert_close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b}");
}

fn active<'a>(p: &'a crate::fixtures::Problem, ids: &[(&str, u32)]) -> Vec<(&'a Configuration, u32)> {
    ids.iter().map(|&(id, n)| (p.config(id), n)).collect()
}

#[test]
fn proportional_split_matches_worked_example() {
    let p = three_type_example();
    let cases = [
        (vec![("toy:t1x1", 1), ("toy:t2x1", 1), ("toy:t3x1", 1)], 44.05),
        (vec![("toy:t1x1", 1), ("toy:t2x1", 2)], 35.24),
        (vec![("toy:t1x1", 1), ("toy:t2x2", 1)], 30.94),
    ];
    for (ids, expected) in cases {
        let (_, t) = proportional_assign(&active(&p, &ids), &p.table, &p.demand).unwrap();
        assert_close(t, expected, 0.01);
    }
}

#[test]
fn inner_assignment_of_the_best_composition() {
    let p = three_type_example();
    let ids = [("toy:t1x1", 1), ("toy:t2x2", 1)];
    let (x, t) = inner_assign(&active(&p, &ids), &p.table, &p.demand, Granularity::WholeRequests).unwrap();
    assert_close(t, 28.6667, 1e-3);
    let frac = |id: &str, w: u32| {
        x.iter()
            .filter(|e| e.config_id == id && e.workload_id == w)
            .map(|e| e.fraction)
            .sum::<f64>()
    };
    assert_close(frac("toy:t1x1", 1), 0.15, 1e-9);
    assert_close(frac("toy:t2x2", 1), 0.85, 1e-9);
    assert_close(frac("toy:t1x1", 2), 1.0, 1e-9);
    let (_, fluid) = inner_assign(&active(&p, &ids), &p.table, &p.demand, Granularity::Fluid).unwrap();
    assert_close(fluid, 28.4314, 1e-3);
}

#[test]
fn trivial_inner_cases() {
    let p = three_type_example();
    let demand = DemandMatrix::single_model("toy", &[(1, 100.0)]);
    let mut table = ThroughputTable::default();
    table.insert("toy:t1x1", 1, crate::costmodel::TableEntry { rate: 2.0, latency: None });
    let (_, t) = inner_assign(&active(&p, &[("toy:t1x1", 1)]), &table, &demand, Granularity::Fluid).unwrap();
    assert_close(t, 50.0, 1e-9);
    let (x, t) = inner_assign(&active(&p, &[("toy:t1x1", 2)]), &table, &demand, Granularity::Fluid).unwrap();
    assert_close(t, 25.0, 1e-9);
    assert_close(x[0].fraction, 1.0, 1e-12);
    let err = inner_assign(&active(&p, &[("toy:t2x1", 1)]), &table, &demand, Granularity::Fluid).unwrap_err();
    assert!(matches!(err, Error::Unservable { workload: 1, .. }), "{err}");
}

#[test]
fn exact_solve_finds_the_golden_optimum() {
    let p = three_type_example();
    let plan = p.solve(&SolverOptions::default()).unwrap();
    assert_close(plan.makespan, 28.67, 0.01);
    assert_eq!(plan.activation("toy:t1x1"), 1);
    assert_eq!(plan.activation("toy:t2x2"), 1);
    assert_close(plan.fraction("toy:t1x1", "toy", 2), 1.0, 1e-9);
    assert!(plan.fraction("toy:t2x2", "toy", 1) >= 0.8);
    assert!(p.check(&plan).is_empty(), "{:?}", p.check(&plan));

    let fluid = p.solve(&SolverOptions::fluid()).unwrap();
    assert_close(fluid.makespan, 28.4314, 1e-3);
}

#[test]
fn tiny_budget_is_reported_as_budget_problem() {
    let p = three_type_example();
    let err = super::solve(&p.configs, &p.table, &p.demand, 0.01, &p.availability, &SolverOptions::default())
        .unwrap_err();
    assert!(err.is_infeasible());
    assert!(err.to_string().contains("budget below cheapest feasible configuration"), "{err}");
}

#[test]
fn fractional_demand_needs_fluid_mode() {
    let mut p = three_type_example();
    p.demand.set("toy", 1, 80.5);
    assert!(matches!(
        p.solve(&SolverOptions::default()),
        Err(Error::NonIntegralDemand { workload: 1, .. })
    ));
    assert!(p.solve(&SolverOptions::fluid()).is_ok());
}

#[test]
fn binary_search_and_bounds_on_golden_example() {
    let p = three_type_example();
    let opts = SolverOptions {
        mode: Mode::BinarySearch,
        tolerance: 0.01,
        ..SolverOptions::default()
    };
    let plan = p.solve(&opts).unwrap();
    assert!(plan.makespan >= 28.66 && plan.makespan <= 28.68, "{}", plan.makespan);
    let (lo, hi) = makespan_bounds(&p.configs, &p.table, &p.demand, p.budget, &p.availability, &opts).unwrap();
    assert!(lo <= 28.67 && 28.67 <= hi, "{lo} {hi}");

    let hit = feasibility_check(28.67, &p.configs, &p.table, &p.demand, p.budget, &p.availability, &opts)
        .unwrap()
        .unwrap();
    assert!(hit.makespan <= 28.67);
    assert!(feasibility_check(0.0, &p.configs, &p.table, &p.demand, p.budget, &p.availability, &opts)
        .unwrap()
        .is_none());
    assert!(feasibility_check(hi, &p.configs, &p.table, &p.demand, p.budget, &p.availability, &opts)
        .unwrap()
        .is_some());
    let wide = SolverOptions {
        tolerance: hi - lo + 1.0,
        ..opts.clone()
    };
    let loose = p.solve(&wide).unwrap();
    assert!(loose.makespan <= hi + 1e-9 && p.check(&loose).is_empty());
}

#[test]
fn knapsack_feasibility_is_sound() {
    let p = three_type_example();
    let opts = SolverOptions {
        mode: Mode::BinarySearch,
        tolerance: 0.01,
        feasibility_mode: FeasibilityMode::KnapsackGreedy,
        ..SolverOptions::default()
    };
    let plan = p.solve(&opts).unwrap();
    assert!(p.check(&plan).is_empty());
    assert!(plan.makespan >= 28.67 - 0.01);
}

#[test]
fn warm_start_shapes() {
    let p = three_type_example();
    let y = warm_start(&p.configs, &p.table, &p.demand, p.budget, &p.availability, &Default::default()).unwrap();
    let cost: f64 = y.iter().map(|(id, &n)| p.config(id).cost * n as f64).sum();
    assert!(cost <= p.budget + 1e-9 && cost > 0.0);
    assert!(warm_start(&p.configs, &p.table, &p.demand, 1.0, &p.availability, &Default::default())
        .unwrap()
        .is_empty());
}

#[test]
fn replanning_after_losing_gpus() {
    let p = three_type_example();
    let opts = SolverOptions::default();
    let before = p.solve(&opts).unwrap();
    let same = replan(&before, &p.configs, &p.table, &p.demand, p.budget, &p.availability, &opts).unwrap();
    assert_close(same.0.makespan, before.makespan, 1e-9);
    assert!(same.1.added.is_empty() && same.1.removed.is_empty());

    let mut fewer = p.availability.clone();
    fewer.set("t2", 0);
    let (after, delta) = replan(&before, &p.configs, &p.table, &p.demand, p.budget, &fewer, &opts).unwrap();
    assert_eq!(after.activation("toy:t2x2"), 0);
    assert!(delta.removed.iter().any(|a| a.config_id == "toy:t2x2"));
    assert!(delta.throughput_after >= delta.throughput_before);
}

fn brute_force_fluid(p: &crate::fixtures::Problem) -> Option<f64> {
    let inst = Instance::new(&p.configs, &p.table, &p.demand, p.budget, &p.availability).ok()?;
    let n = inst.num_configs();
    let mut y = vec![0u32; n];
    let mut best: Option<f64> = None;
    let mut counters = Counters::default();
    loop {
        if inst.fits(&y) {
            if let Some(a) = inner::fluid(&inst, &y, &mut counters) {
                best = Some(best.map_or(a.t, |b: f64| b.min(a.t)));
            }
        }
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            if y[i] < inst.max_copies[i] {
                y[i] += 1;
                break;
            }
            y[i] = 0;
            i += 1;
        }
    }
}

#[test]
fn exact_matches_brute_force_on_small_instances() {
    for seed in 0..60 {
        let p = random_problem(seed, &RandomSpec::small());
        let opts = SolverOptions {
            enable_lower_bound_stop: false,
            ..SolverOptions::fluid()
        };
        let got = p.solve(&opts);
        match (brute_force_fluid(&p), got) {
            (Some(b), Ok(plan)) => {
                assert!((plan.makespan - b).abs() <= 1e-6 * b, "seed {seed}: {} vs {b}", plan.makespan);
                assert!(p.check(&plan).is_empty(), "seed {seed}");
            }
            (None, Err(e)) => assert!(e.is_infeasible(), "seed {seed}: {e}"),
            (b, g) => panic!("seed {seed}: oracle {b:?} vs solver {g:?}"),
        }
    }
}

/// Smallest whole-request makespan by trying every activation vector and
/// every integral split (tiny demands only).
fn brute_force_whole(p: &crate::fixtures::Problem) -> Option<f64> {
    let inst = Instance::new(&p.configs, &p.table, &p.demand, p.budget, &p.availability).ok()?;
    let n = inst.num_configs();
    let mut best: Option<f64> = None;
    let mut y = vec![0u32; n];
    loop {
        if inst.fits(&y) && inst.covers(&y) {
            if let Some(t) = best_split(&inst, &y, 0, &mut vec![0.0; n]) {
                best = Some(best.map_or(t, |b: f64| b.min(t)));
            }
        }
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            if y[i] < inst.max_copies[i] {
                y[i] += 1;
                break;
            }
            y[i] = 0;
            i += 1;
        }
    }
}

fn best_split(inst: &Instance, y: &[u32], k: usize, loads: &mut Vec<f64>) -> Option<f64> {
    if k == inst.num_keys() {
        return Some(loads.iter().copied().fold(0.0, f64::max));
    }
    let servers: Vec<usize> = (0..inst.num_configs())
        .filter(|&c| y[c] > 0 && inst.rates[c][k].is_some())
        .collect();
    let f = inst.demand[k] as u32;
    let mut best: Option<f64> = None;
    let mut counts = vec![0u32; servers.len()];
    fn rec(
        inst: &Instance,
        y: &[u32],
        k: usize,
        servers: &[usize],
        i: usize,
        left: u32,
        counts: &mut Vec<u32>,
        loads: &mut Vec<f64>,
        best: &mut Option<f64>,
    ) {
        if i + 1 == servers.len() {
            counts[i] = left;
            let mut l = loads.clone();
            for (j, &c) in servers.iter().enumerate() {
                l[c] += counts[j] as f64 / (y[c] as f64 * inst.rates[c][k].unwrap());
            }
            if let Some(t) = best_split(inst, y, k + 1, &mut l) {
                *best = Some(best.map_or(t, |b: f64| b.min(t)));
            }
            return;
        }
        for v in 0..=left {
            counts[i] = v;
            rec(inst, y, k, servers, i + 1, left - v, counts, loads, best);
        }
    }
    rec(inst, y, k, &servers, 0, f, &mut counts, loads, &mut best);
    best
}

#[test]
fn whole_request_mode_matches_brute_force() {
    let spec = RandomSpec {
        max_configs: 3,
        max_classes: 2,
        max_demand: 7,
        max_avail: 2,
        ..RandomSpec::small()
    };
    for seed in 0..40 {
        let p = random_problem(seed, &spec);
        let opts = SolverOptions {
            enable_lower_bound_stop: false,
            ..SolverOptions::default()
        };
        match (brute_force_whole(&p), p.solve(&opts)) {
            (Some(b), Ok(plan)) => {
                assert!((plan.makespan - b).abs() <= 1e-6 * b, "seed {seed}: {} vs {b}", plan.makespan);
                assert!(p.check(&plan).is_empty(), "seed {seed}");
                for e in &plan.assignment {
                    let n = e.fraction * p.demand.get(&e.model, e.workload_id);
                    assert!((n - n.round()).abs() < 1e-6, "seed {seed}: {n} requests");
                }
            }
            (None, Err(e)) => assert!(e.is_infeasible(), "seed {seed}: {e}"),
            (b, g) => panic!("seed {seed}: oracle {b:?} vs solver {g:?}"),
        }
    }
}

#[test]
fn scaling_demand_scales_makespan() {
    for seed in 0..20 {
        let p = random_problem(seed, &RandomSpec::small());
        let opts = SolverOptions {
            enable_lower_bound_stop: false,
            ..SolverOptions::fluid()
        };
        let Ok(base) = p.solve(&opts) else { continue };
        let mut scaled = p.clone();
        scaled.demand = p.demand.scaled(3.0);
        let big = scaled.solve(&opts).unwrap();
        assert!((big.makespan - 3.0 * base.makespan).abs() <= 1e-6 * big.makespan, "seed {seed}");
    }
}

#[test]
fn zero_tolerance_binary_search_reaches_the_optimum() {
    for seed in 0..30 {
        let p = random_problem(seed, &RandomSpec::small());
        let exact = SolverOptions {
            enable_lower_bound_stop: false,
            ..SolverOptions::fluid()
        };
        let Ok(e) = p.solve(&exact) else { continue };
        let bs = SolverOptions {
            mode: Mode::BinarySearch,
            tolerance: 0.0,
            ..exact.clone()
        };
        let b = p.solve(&bs).unwrap();
        assert!((b.makespan - e.makespan).abs() <= 1e-6 * e.makespan, "seed {seed}");
    }
}

#[test]
fn knapsack_plans_always_pass_the_checker() {
    for seed in 0..40 {
        let p = random_problem(seed, &RandomSpec::small());
        let opts = SolverOptions {
            mode: Mode::BinarySearch,
            tolerance: 0.0,
            feasibility_mode: FeasibilityMode::KnapsackGreedy,
            ..SolverOptions::default()
        };
        if let Ok(plan) = p.solve(&opts) {
            assert!(p.check(&plan).is_empty(), "seed {seed}");
            let exact = p.solve(&SolverOptions::default()).unwrap();
            assert!(plan.makespan >= exact.makespan * (1.0 - 1e-9), "seed {seed}");
        }
    }
}
