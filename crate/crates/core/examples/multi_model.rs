//! Two models planned together under one budget, against a static split that
//! gives each model half of the budget and half of every GPU type.

use hetserve::catalog::{default_catalog, Availability, Budget, CatalogBundle, ModelSpec};
use hetserve::pipeline::PlanningInputs;
use hetserve::workload::{default_classes, DemandMatrix};

fn inputs(demand: DemandMatrix, budget: f64, per_type: u32) -> anyhow::Result<PlanningInputs> {
    let bundle = CatalogBundle {
        catalog: default_catalog(),
        availability: Availability::from_pairs(["H100", "A100", "L40", "A40"].map(|t| (t, per_type))),
        budget: Budget::new(budget)?,
        models: vec![ModelSpec::llama3_8b(), ModelSpec::llama3_70b()],
    };
    let mut inputs = PlanningInputs::new(&bundle, default_classes(), demand)?;
    inputs.max_gpus_per_replica = 4;
    Ok(inputs)
}

fn main() -> anyhow::Result<()> {
    let mut both = DemandMatrix::new();
    for (w, n) in [(1, 120.0), (5, 200.0)] {
        both.set("llama3-8b", w, n);
    }
    for (w, n) in [(1, 40.0), (9, 60.0)] {
        both.set("llama3-70b", w, n);
    }
    let budget = 24.0;
    let (joint, _) = inputs(both.clone(), budget, 4)?.plan()?;
    println!("joint plan: {:.2} s at {:.2} $/h", joint.makespan, joint.total_cost);
    for a in &joint.activations {
        println!("  {:<36} x{}", a.config_id, a.count);
    }

    let mut worst: f64 = 0.0;
    for model in ["llama3-8b", "llama3-70b"] {
        let mut one = DemandMatrix::new();
        for (k, f) in both.positive().filter(|(k, _)| k.model == model) {
            one.set(&k.model, k.workload, f);
        }
        let (plan, _) = inputs(one, budget / 2.0, 2)?.plan()?;
        println!("{model} alone on half the budget and GPUs: {:.2} s", plan.makespan);
        worst = worst.max(plan.makespan);
    }
    println!("static split makespan {worst:.2} s vs joint {:.2} s", joint.makespan);
    Ok(())
}
