//! Classifying requests by length, bucketing them into the nine standard
//! classes and counting the demand matrix.

use std::collections::BTreeMap;

use hetserve::workload::{bucket, classify, default_classes, ingest_trace, synth_trace};

fn main() -> anyhow::Result<()> {
    for (input, output) in [(2455, 18), (496, 510), (512, 128), (513, 129)] {
        println!("({input:>4}, {output:>3}) -> {}", classify(input, output, 512, 128));
    }

    let classes = default_classes();
    println!("\nclass  input  output");
    for c in &classes {
        println!("{:>5} {:>6} {:>7}", c.id, c.rep_input_len, c.rep_output_len);
    }
    println!("a (1800, 40) request lands in class {}", bucket(1800, 40, &classes));

    let ratios: BTreeMap<u32, f64> = [(1, 50.0), (5, 30.0), (9, 20.0)].into_iter().collect();
    let trace = synth_trace(&ratios, &classes, 1000, 7, "llama3-8b")?;
    let demand = ingest_trace(&trace, &classes, &["llama3-8b"])?;
    println!("\nsynthetic trace of {} requests:", trace.len());
    for (key, count) in demand.positive() {
        println!("  {} class {}: {count}", key.model, key.workload);
    }
    Ok(())
}
