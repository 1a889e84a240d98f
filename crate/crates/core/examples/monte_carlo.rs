//! Monte Carlo prices from simulated regime paths, compared with the solved
//! surface at a few starting states.
//!
//! Run with `cargo run --release --example monte_carlo`.

use smgbm::mc::{mc_price, StartState};
use smgbm::{solve, ContractSpec, HazardFn, RegimeModel, SolverConfig};

fn main() -> smgbm::Result<()> {
    let contract = ContractSpec::new(100.0, 1.0)?;
    let model = RegimeModel::fully_connected(vec![0.05; 2], vec![0.2, 0.4], vec![0.08, 0.10], HazardFn::weibull(1.0, 2.0));
    let surface = solve(&model, &contract, &SolverConfig::default())?;

    let starts = [
        StartState::at_inception(100.0, 0),
        StartState::at_inception(100.0, 1),
        StartState { t: 0.4, s: 95.0, regime: 0, age: 0.3 },
    ];
    println!("start                               surface     monte carlo (se)      z");
    for start in starts {
        let phi = surface.price_at(start.t, start.s, start.regime, start.age)?;
        let mc = mc_price(&model, &contract, start, 200_000, 11)?;
        println!(
            "t={:.1} s={:5.1} regime {} age {:.1}   {phi:9.5}   {:9.5} ({:.5})   {:5.2}",
            start.t,
            start.s,
            start.regime + 1,
            start.age,
            mc.mean,
            mc.se,
            (mc.mean - phi) / mc.se
        );
    }
    Ok(())
}
