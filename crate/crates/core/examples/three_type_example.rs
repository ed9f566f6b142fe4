//! The three-GPU-type worked example: three hand-picked compositions with
//! rate-proportional splitting, then the optimal plan.

use hetserve::configspace::Configuration;
use hetserve::fixtures::three_type_example;
use hetserve::solver::{inner_assign, proportional_assign, Granularity, SolverOptions};

fn main() -> anyhow::Result<()> {
    let p = three_type_example();
    let compositions = [
        vec![("toy:t1x1", 1), ("toy:t2x1", 1), ("toy:t3x1", 1)],
        vec![("toy:t1x1", 1), ("toy:t2x1", 2)],
        vec![("toy:t1x1", 1), ("toy:t2x2", 1)],
    ];
    for ids in &compositions {
        let active: Vec<(&Configuration, u32)> = ids.iter().map(|&(id, n)| (p.config(id), n)).collect();
        let (_, proportional) = proportional_assign(&active, &p.table, &p.demand)?;
        let (_, best) = inner_assign(&active, &p.table, &p.demand, Granularity::WholeRequests)?;
        let names: Vec<String> = ids.iter().map(|(id, n)| format!("{n}x{id}")).collect();
        println!("{:<36} proportional {proportional:>6.2} s   best split {best:>6.2} s", names.join(" + "));
    }

    let plan = p.solve(&SolverOptions::default())?;
    println!("\noptimal plan, {:.2} s at {:.2} $/h:", plan.makespan, plan.total_cost);
    for e in &plan.assignment {
        println!("  {:<10} class {} {:>5.1}%", e.config_id, e.workload_id, 100.0 * e.fraction);
    }
    let fluid = p.solve(&SolverOptions::fluid())?;
    println!("with fractional requests allowed: {:.2} s", fluid.makespan);
    Ok(())
}
