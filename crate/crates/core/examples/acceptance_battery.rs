//! Run the full acceptance battery on a configuration file (defaults to the
//! bundled Markov market) and print one line per criterion.
//!
//! Run with `cargo run --release --example acceptance_battery -- configs/weibull.toml`.

use std::path::PathBuf;

use smgbm::acceptance::Battery;
use smgbm::config::ExperimentConfig;

fn main() -> smgbm::Result<()> {
    let path = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/markov.toml"));
    let config = ExperimentConfig::load(&path)?;
    config.validate().into_result()?;
    let results = Battery::from_config(&config).run(None, |r| println!("{r}"))?;
    let passed = results.iter().filter(|r| r.passed).count();
    println!("{passed}/{} criteria passed", results.len());
    Ok(())
}
