//! Analytic throughput estimates: tensor versus pipeline parallelism on one
//! GPU type, and how rates vary across the nine classes.

use hetserve::catalog::{default_catalog, ModelSpec};
use hetserve::configspace::{Configuration, StagePlacement};
use hetserve::costmodel::{estimate_entry, CommParams, MemoryParams};
use hetserve::workload::default_classes;

fn main() -> anyhow::Result<()> {
    let catalog = default_catalog();
    let model = ModelSpec::llama3_70b();
    let classes = default_classes();
    let (comm, mem) = (CommParams::default(), MemoryParams::default());

    for gpu in ["H100", "L40"] {
        let layouts = [
            ("(2,4)", (0..4).map(|_| StagePlacement::new(gpu, 2, 0)).collect::<Vec<_>>()),
            ("(4,2)", vec![StagePlacement::new(gpu, 4, 0), StagePlacement::new(gpu, 4, 0)]),
            ("(4,2) cross machine", vec![StagePlacement::new(gpu, 4, 0), StagePlacement::new(gpu, 4, 1)]),
        ];
        for (label, placements) in layouts {
            let c = Configuration::build(&model, &catalog, &placements)?;
            let e = estimate_entry(&c, &model, &classes[0], &catalog, &comm, &mem)?.expect("fits");
            println!(
                "{gpu} {label:<20} {:>8.3} req/s  latency {:>6.3} s",
                e.rate,
                e.latency.unwrap_or(f64::NAN)
            );
        }
    }

    let c = Configuration::build(&model, &catalog, &[StagePlacement::new("H100", 4, 0)])?;
    println!("\n{} per class:", c.id);
    for w in &classes {
        let rate = estimate_entry(&c, &model, w, &catalog, &comm, &mem)?.map(|e| e.rate);
        println!("  class {} ({:>4} in, {:>3} out): {:?}", w.id, w.rep_input_len, w.rep_output_len, rate);
    }
    Ok(())
}
