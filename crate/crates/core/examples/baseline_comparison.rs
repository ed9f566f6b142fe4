//! Optimized plans against the ablation baselines on random catalog instances.

use hetserve::fixtures::random_catalog_inputs;
use hetserve::simulator::{baseline, BaselineKind};

fn main() -> anyhow::Result<()> {
    let kinds = [
        BaselineKind::UniformComposition,
        BaselineKind::UniformDeployment,
        BaselineKind::RoundRobin,
    ];
    let mut log_ratio = vec![0.0; kinds.len()];
    let mut n = 0;
    println!("{:>4} {:>6} {:>10} {:>10} {:>10} {:>10} {:>8}", "seed", "cfgs", "optimized", "uni_comp", "uni_dep", "rr", "wall_s");
    for seed in 0..20 {
        let inputs = random_catalog_inputs(seed);
        let start = std::time::Instant::now();
        let (opt, cands) = match inputs.plan() {
            Ok(x) => x,
            Err(e) => {
                println!("{seed:>4} {e}");
                continue;
            }
        };
        let mut row = format!("{seed:>4} {:>6} {:>10.2}", cands.configs.len(), opt.makespan);
        for (i, k) in kinds.iter().enumerate() {
            match baseline(&inputs, k, Some((&opt, &cands))) {
                Ok(b) => {
                    log_ratio[i] += (b.makespan / opt.makespan).ln();
                    row += &format!(" {:>10.2}", b.makespan);
                }
                Err(_) => row += &format!(" {:>10}", "infeasible"),
            }
        }
        n += 1;
        println!("{row} {:>8.3}", start.elapsed().as_secs_f64());
    }
    for (k, s) in kinds.iter().zip(log_ratio) {
        println!("{k}: geometric-mean slowdown {:.1}%", 100.0 * ((s / n as f64).exp() - 1.0));
    }
    Ok(())
}
