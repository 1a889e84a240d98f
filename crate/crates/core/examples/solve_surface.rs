//! Solve the pricing equation for a two-regime market and read prices off
//! the surface.
//!
//! Run with `cargo run --release --example solve_surface`.

use std::time::Instant;

use smgbm::bsm_kernel::bs_call;
use smgbm::volterra::estimate_contraction;
use smgbm::{solve, ContractSpec, HazardFn, RegimeModel, SolverConfig};

fn main() -> smgbm::Result<()> {
    let contract = ContractSpec::new(100.0, 1.0)?;
    let model = RegimeModel::fully_connected(vec![0.05; 2], vec![0.2, 0.4], vec![0.08, 0.10], HazardFn::weibull(1.0, 2.0));
    println!("contraction bound J = {:.6}", estimate_contraction(&model, contract.maturity).value);

    let start = Instant::now();
    let surface = solve(&model, &contract, &SolverConfig::default())?;
    let c = &surface.convergence;
    println!(
        "solved in {:.2} s: {} iterations, last update {:.2e}",
        start.elapsed().as_secs_f64(),
        c.iterations,
        c.final_residual
    );
    println!("update ratios: {:?}", c.error_ratios().iter().map(|q| format!("{q:.3}")).collect::<Vec<_>>());

    println!("\n   s     regime 1    regime 2    BS(0.2)     BS(0.4)");
    for s in [80.0, 90.0, 100.0, 110.0, 120.0] {
        println!(
            "{s:5.0}  {:10.5}  {:10.5}  {:10.5}  {:10.5}",
            surface.price_at(0.0, s, 0, 0.0)?,
            surface.price_at(0.0, s, 1, 0.0)?,
            bs_call(s, 100.0, 0.05, 0.2, 1.0),
            bs_call(s, 100.0, 0.05, 0.4, 1.0),
        );
    }

    // Off the age-zero slice: the longer regime 1 has lasted, the sooner it ends.
    println!("\nphi(0.5, 100, regime 1, y):");
    for y in [0.0, 0.1, 0.25, 0.5] {
        println!("  y = {y:4.2}: {:.6}", surface.price_at(0.5, 100.0, 0, y)?);
    }
    println!("fixed-point residual of the stored surface: {:.2e}", surface.fixed_point_residual()?);
    Ok(())
}
