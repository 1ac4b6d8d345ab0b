//! Runs the default ablation and prints the tables.

use sft_core::experiment::{run_experiment, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let report = run_experiment(&cfg, None)?;
    print!("{}", report.ablation_tsv());
    print!("{}", report.sigma_sweep_tsv());
    print!("{}", report.k_sweep_tsv());
    for c in &report.ablation {
        let maps: Vec<String> = c.per_seed.iter().map(|m| format!("{:.3}", m.map)).collect();
        println!("{}\t{}", c.name, maps.join(" "));
    }
    Ok(())
}
