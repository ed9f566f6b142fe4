//! Every feasible deployment of the 70B model on a small heterogeneous pool,
//! with the families rejected by the memory check.

use hetserve::catalog::{default_catalog, Availability, ModelSpec};
use hetserve::configspace::{enumerate_configs, partition_layers};

fn main() -> anyhow::Result<()> {
    let catalog = default_catalog();
    let availability = Availability::from_pairs([("H100", 4), ("A100", 4), ("L40", 8)]);
    let model = ModelSpec::llama3_70b();
    let found = enumerate_configs(&catalog, &availability, &model, 8)?;
    println!("{} configurations of {}", found.configs.len(), model.name);
    for c in found.configs.iter().take(12) {
        let layers: Vec<String> = c.stages.iter().map(|s| s.layer_count.to_string()).collect();
        println!("  {:<40} {:>6.2} $/h  layers {}", c.id, c.cost, layers.join("/"));
    }
    if found.configs.len() > 12 {
        println!("  ...");
    }
    for p in &found.pruned {
        println!("pruned {} x{}: {}", p.family, p.count, p.reason);
    }
    println!("\n24 layers over stages with 1:2 memory -> {:?}", partition_layers(24, &[1.0, 2.0])?);
    Ok(())
}
