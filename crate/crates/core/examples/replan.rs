//! Re-planning when a GPU type becomes scarce and when the workload mix
//! shifts.

use hetserve::catalog::{default_catalog, Availability, Budget, CatalogBundle, ModelSpec};
use hetserve::pipeline::PlanningInputs;
use hetserve::solver::{replan, DeltaReport};
use hetserve::workload::{default_classes, DemandMatrix};

fn report(label: &str, delta: &DeltaReport) {
    println!("{label}");
    println!(
        "  surviving replicas alone: {:.2} s ({:.1} req/s), new plan {:.2} s ({:.1} req/s)",
        delta.makespan_before.unwrap_or(f64::INFINITY),
        delta.throughput_before,
        delta.makespan_after,
        delta.throughput_after
    );
    for a in &delta.added {
        println!("  + {} x{}", a.config_id, a.count);
    }
    for a in &delta.removed {
        println!("  - {} x{}", a.config_id, a.count);
    }
}

fn main() -> anyhow::Result<()> {
    let bundle = CatalogBundle {
        catalog: default_catalog(),
        availability: Availability::from_pairs([("H100", 4), ("A100", 4), ("A40", 6)]),
        budget: Budget::new(16.0)?,
        models: vec![ModelSpec::llama3_8b()],
    };
    let demand = DemandMatrix::single_model("llama3-8b", &[(1, 300.0), (9, 100.0)]);
    let mut inputs = PlanningInputs::new(&bundle, default_classes(), demand)?;
    inputs.max_gpus_per_replica = 2;
    let (plan, _) = inputs.plan()?;
    println!("initial plan {:.2} s using {:?}", plan.makespan, plan.gpu_usage);

    let mut scarce = inputs.clone();
    let used_h100 = plan.gpu_usage.get("H100").copied().unwrap_or(0);
    scarce.availability.set("H100", used_h100.saturating_sub(4));
    let cands = scarce.candidates()?;
    let (_, delta) = replan(
        &plan,
        &cands.configs,
        &cands.table,
        &scarce.demand,
        scarce.budget,
        &scarce.availability,
        &scarce.options,
    )?;
    report("\nafter losing 4 H100:", &delta);

    let mut shifted = inputs.clone();
    shifted.demand = DemandMatrix::single_model("llama3-8b", &[(1, 100.0), (9, 300.0)]);
    let cands = shifted.candidates()?;
    let (_, delta) = replan(
        &plan,
        &cands.configs,
        &cands.table,
        &shifted.demand,
        shifted.budget,
        &shifted.availability,
        &shifted.options,
    )?;
    report("\nafter the mix shifts toward class 9:", &delta);
    Ok(())
}
