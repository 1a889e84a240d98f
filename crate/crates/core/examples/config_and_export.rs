//! Build a configuration in code, round-trip it through TOML, solve it and
//! export the surface, its deltas and a reloadable snapshot.
//!
//! Run with `cargo run --release --example config_and_export`.

use smgbm::config::ExperimentConfig;
use smgbm::greeks::write_delta_csv;
use smgbm::volterra::{write_surface_csv, SurfaceData};
use smgbm::{solve, ContractSpec, HazardFn, PriceSurface, RegimeModel, SolverConfig};

fn main() -> smgbm::Result<()> {
    let model = RegimeModel::fully_connected(vec![0.04, 0.06], vec![0.15, 0.35], vec![0.07, 0.09], HazardFn::weibull(0.8, 1.5));
    let mut config = ExperimentConfig::new(&model, ContractSpec::new(100.0, 0.5)?);
    config.solver = SolverConfig { n_t: 41, n_s: 101, ..SolverConfig::default() };
    let text = config.to_toml()?;
    println!("{text}");

    let parsed = ExperimentConfig::parse(&text)?;
    let report = parsed.validate();
    assert!(report.is_empty(), "{report:?}");
    println!("solve key {}", parsed.solve_key());

    let surface = solve(&parsed.model(), &parsed.contract(), &parsed.solver)?;
    let dir = std::env::temp_dir().join("smgbm-example");
    std::fs::create_dir_all(&dir)?;
    let mut csv = Vec::new();
    write_surface_csv(&surface, &mut csv)?;
    std::fs::write(dir.join("surface.csv"), &csv)?;
    let mut delta = Vec::new();
    write_delta_csv(&surface, &mut delta)?;
    std::fs::write(dir.join("surface_delta.csv"), &delta)?;
    println!("wrote {} surface rows and {} delta rows to {}", csv.iter().filter(|&&b| b == b'\n').count() - 1, delta.iter().filter(|&&b| b == b'\n').count() - 1, dir.display());

    let json = serde_json::to_string(&surface.to_data()).expect("surface serializes");
    let data: SurfaceData = serde_json::from_str(&json).expect("snapshot parses");
    let reloaded = PriceSurface::from_data(data)?;
    println!(
        "reloaded snapshot prices phi(0.2, 105, regime 2, 0.1) = {:.8} (original {:.8})",
        reloaded.price_at(0.2, 105.0, 1, 0.1)?,
        surface.price_at(0.2, 105.0, 1, 0.1)?
    );
    Ok(())
}
