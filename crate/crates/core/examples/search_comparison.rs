//! Exact branch-and-bound against binary search on random medium-sized
//! instances: makespan difference and number of evaluated nodes.

use hetserve::fixtures::{random_problem, RandomSpec};
use hetserve::solver::{makespan_bounds, Mode, SolverOptions};

fn main() {
    let spec = RandomSpec::medium();
    let mut ratios = Vec::new();
    let (mut fewer, mut ties) = (0, 0);
    println!(
        "{:>5} {:>7} {:>10} {:>10} {:>7} {:>7} {:>7}",
        "seed", "configs", "exact_T", "bsearch_T", "diff%", "nodes_e", "nodes_b"
    );
    let mut seed = 0;
    while ratios.len() < 30 {
        let p = random_problem(seed, &spec);
        seed += 1;
        let exact = SolverOptions::default();
        let Ok(e) = p.solve(&exact) else { continue };
        let (lower, _) = makespan_bounds(&p.configs, &p.table, &p.demand, p.budget, &p.availability, &exact).unwrap();
        let bs = SolverOptions {
            mode: Mode::BinarySearch,
            tolerance: 0.01 * lower,
            ..SolverOptions::default()
        };
        let b = p.solve(&bs).unwrap();
        let (ne, nb) = (e.solver.evaluated_nodes, b.solver.evaluated_nodes);
        if nb < ne {
            fewer += 1;
        } else if nb == ne {
            ties += 1;
        }
        ratios.push(ne as f64 / nb.max(1) as f64);
        println!(
            "{:>5} {:>7} {:>10.3} {:>10.3} {:>7.3} {:>7} {:>7}",
            seed - 1,
            p.configs.len(),
            e.makespan,
            b.makespan,
            100.0 * (b.makespan - e.makespan) / e.makespan,
            ne,
            nb
        );
    }
    let gm = (ratios.iter().map(|r| r.ln()).sum::<f64>() / ratios.len() as f64).exp();
    println!("binary search evaluated fewer nodes on {fewer}/30 instances, as many on {ties}");
    println!("geometric-mean node ratio exact/binary: {gm:.2}");
}
