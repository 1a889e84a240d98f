//! The solved surface satisfies the non-local pricing PDE: its
//! central-difference residual shrinks like the stencil squared.
//!
//! Run with `cargo run --release --example pde_residual`.

use smgbm::volterra::pde_residual;
use smgbm::{solve, ContractSpec, HazardFn, RegimeModel, SolverConfig};

fn main() -> smgbm::Result<()> {
    let contract = ContractSpec::new(100.0, 1.0)?;
    let model = RegimeModel::fully_connected(vec![0.05; 2], vec![0.2, 0.4], vec![0.08, 0.10], HazardFn::weibull(1.0, 2.0));
    let surface = solve(&model, &contract, &SolverConfig::default())?;

    let (t, s, i, y) = (0.61, 119.0, 1, 0.35);
    let phi = surface.price_at(t, s, i, y)?;
    println!("phi({t}, {s}, regime {}, {y}) = {phi:.6}", i + 1);
    println!("step      residual    ratio");
    let mut previous = f64::NAN;
    for k in 0..4 {
        let f = 0.02 * 0.5f64.powi(k);
        let r = pde_residual(&surface, t, s, i, y, f, f * s, f)?;
        println!("{f:<8}  {r:.3e}  {:.2}", previous / r);
        previous = r;
    }
    Ok(())
}
