//! Run any experiment config through the harness and print its summary.
//!
//! ```bash
//! cargo run --example run_config -- crates/core/configs/fed_inversion.ini
//! ```

use std::path::PathBuf;

use privsec::harness::config::ExperimentConfig;
use privsec::harness::metrics::summarize;
use privsec::harness::run_experiment;

pub fn run_file(path: &std::path::Path) -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig::load(path)?;
    let out = run_experiment(&cfg)?;
    let summary = summarize(&out.records);
    println!(
        "{}: {} records, {} artifacts",
        summary.run_id.as_deref().unwrap_or("-"),
        summary.records,
        out.artifacts.len()
    );
    for (key, s) in &summary.keys {
        if let Some(last) = s.last {
            println!("  {key:<32} {last:.6}");
        }
    }
    Ok(())
}

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    run_file(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/fed_baseline.ini"))
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    match std::env::args_os().nth(1) {
        Some(p) => run_file(&PathBuf::from(p)),
        None => run(),
    }
}
