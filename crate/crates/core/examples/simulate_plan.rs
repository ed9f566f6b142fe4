//! Replaying the worked example's optimal plan with a request-level queue
//! simulation at growing trace sizes.

use std::collections::BTreeMap;

use hetserve::fixtures::three_type_example;
use hetserve::simulator::{evaluate_analytic, simulate_events, Dispatch};
use hetserve::solver::SolverOptions;
use hetserve::workload::synth_trace;

fn main() -> anyhow::Result<()> {
    let p = three_type_example();
    let plan = p.solve(&SolverOptions::default())?;
    let analytic = evaluate_analytic(&plan, &p.table, &p.demand)?;
    println!("analytic makespan {analytic:.2} s per 100 requests\n");
    let ratios: BTreeMap<u32, f64> = [(1, 80.0), (2, 20.0)].into_iter().collect();
    println!("{:>8} {:>9} {:>12} {:>12} {:>9}", "requests", "dispatch", "makespan", "per 100", "p95");
    for scale in [1u64, 10, 100] {
        let trace = synth_trace(&ratios, &p.classes, 100 * scale, 1, "toy")?;
        for dispatch in [Dispatch::Weighted, Dispatch::Quota] {
            let (report, _) = simulate_events(&plan, &trace, &p.classes, &p.table, 1, dispatch)?;
            println!(
                "{:>8} {:>9} {:>12.2} {:>12.2} {:>9.2}",
                trace.len(),
                format!("{dispatch:?}").to_lowercase(),
                report.makespan,
                report.makespan / scale as f64,
                report.latency_percentiles.get(95).unwrap_or(f64::NAN)
            );
        }
    }
    let trace = synth_trace(&ratios, &p.classes, 100, 1, "toy")?;
    let (report, _) = simulate_events(&plan, &trace, &p.classes, &p.table, 1, Dispatch::Weighted)?;
    println!("\n{}", report.to_table());
    Ok(())
}
