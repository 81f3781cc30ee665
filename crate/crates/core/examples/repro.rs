//! Runs an experiment file end to end: data, training, evaluation, medians
//! over seeds, checks.
//!
//! `cargo run --release --example repro -- [config] [out_dir]`
//!
//! Defaults to `configs/repro_s01.cfg`.

use std::path::PathBuf;

use casn::config::parse_config;
use casn::repro::{run_repro, summary_csv};

fn main() -> casn::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/repro_s01.cfg")));
    let spec = parse_config(&path)?;
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| PathBuf::from(&spec.out_dir));
    println!("{} grid points, config hash {}", spec.points().len(), spec.hash());

    let outcome = run_repro(&spec, &out)?;
    print!("{}", summary_csv(&outcome.summary));
    for c in &outcome.checks {
        println!("{c}");
    }
    println!("outputs in {}", out.display());
    if !outcome.passed() {
        std::process::exit(1);
    }
    Ok(())
}
