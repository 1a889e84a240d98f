//! Delta from the integral representation, checked against finite
//! differences, and the resulting hedge holdings.
//!
//! Run with `cargo run --release --example hedge_ratio`.

use smgbm::greeks::{delta_fd, delta_integral, strategy};
use smgbm::{solve, ContractSpec, HazardFn, RegimeModel, SolverConfig};

fn main() -> smgbm::Result<()> {
    let contract = ContractSpec::new(100.0, 1.0)?;
    let model = RegimeModel::fully_connected(vec![0.05; 2], vec![0.2, 0.4], vec![0.08, 0.10], HazardFn::constant(1.0));
    let surface = solve(&model, &contract, &SolverConfig::default())?;

    println!("  t     s   regime  y      psi        finite diff");
    for &(t, s, i, y) in &[(0.0, 100.0, 0, 0.0), (0.3, 90.0, 1, 0.1), (0.6, 115.0, 0, 0.45), (0.9, 100.0, 1, 0.0)] {
        println!(
            "{t:4.2}  {s:5.0}  {:5}  {y:4.2}  {:.8}  {:.8}",
            i + 1,
            delta_integral(&surface, t, s, i, y)?,
            delta_fd(&surface, t, s, i, y, None)?,
        );
    }

    // Holdings at t = 0.25 after the money market has grown at 5%.
    let money_market = (0.05f64 * 0.25).exp();
    let h = strategy(&surface, 0.25, 104.0, 0, 0.25, money_market)?;
    println!("\nat t=0.25, s=104, regime 1, age 0.25:");
    println!("  price {:.6} = {:.6} shares x 104 + {:.6} money-market units x {money_market:.6}", h.phi, h.xi, h.eps);
    Ok(())
}
