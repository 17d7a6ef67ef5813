//! Replicate the benchmark simulation table.
//!
//! Usage: `cargo run --release --example montecarlo_table [config.json|-] [reps] [md|csv|json]`
//!
//! Without a config the benchmark design is used (n = 2000, x0 = 0).

use matchpoint::montecarlo::{emit_table, run_mc, McConfig, TableFormat};
use std::time::Instant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut cfg = match args.next() {
        Some(path) if path != "-" => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        _ => McConfig::default(),
    };
    if let Some(reps) = args.next() {
        cfg.reps = reps.parse()?;
    }
    let format = args.next();
    let start = Instant::now();
    let report = run_mc(&cfg)?;
    match format.as_deref() {
        Some("json") => println!("{}", serde_json::to_string_pretty(&report)?),
        Some("csv") => print!("{}", emit_table(&report, TableFormat::Csv)),
        _ => print!("{}", emit_table(&report, TableFormat::Markdown)),
    }
    eprintln!("{} replications in {:.1?}", cfg.reps, start.elapsed());
    Ok(())
}
