//! The built-in GPU catalog, an availability snapshot and the document
//! format accepted by `--catalog`.

use hetserve::catalog::{default_catalog, load_catalog, Availability, Budget, CatalogBundle, ModelSpec};

fn main() -> anyhow::Result<()> {
    let catalog = default_catalog();
    println!("{:<6} {:>9} {:>8} {:>6} {:>7} {:>8}", "type", "TFLOP/s", "GB/s", "GB", "$/h", "per box");
    for t in catalog.types() {
        println!(
            "{:<6} {:>9.0} {:>8.0} {:>6.0} {:>7.2} {:>8}",
            t.name, t.peak_flops, t.mem_bandwidth, t.mem_capacity, t.price, t.gpus_per_machine
        );
    }

    let availability = Availability::snapshot(1).expect("snapshot 1 exists");
    availability.validate(&catalog)?;
    println!("\navailability snapshot 1: {:?}", availability.0);

    let bundle = CatalogBundle {
        catalog,
        availability,
        budget: Budget::new(30.0)?,
        models: vec![ModelSpec::llama3_8b(), ModelSpec::llama3_70b()],
    };
    let text = bundle.to_json();
    let back = load_catalog(&text)?;
    println!(
        "catalog document: {} bytes, {} types and {} models after a round trip",
        text.len(),
        back.catalog.len(),
        back.models.len()
    );
    Ok(())
}
