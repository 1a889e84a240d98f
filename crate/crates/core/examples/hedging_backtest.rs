//! Discrete rebalancing of the risk-minimizing hedge along simulated paths.
//!
//! The hedge cannot remove the regime risk, so the residual keeps a positive
//! variance no matter how often it is rebalanced; with identical regimes it is
//! a Black–Scholes delta hedge and the variance falls with the step.
//!
//! Run with `cargo run --release --example hedging_backtest`.

use smgbm::greeks::DeltaTable;
use smgbm::mc::hedge_backtest;
use smgbm::{solve, ContractSpec, HazardFn, RegimeModel, SolverConfig};

fn main() -> smgbm::Result<()> {
    let contract = ContractSpec::new(100.0, 1.0)?;
    let switching = RegimeModel::fully_connected(vec![0.05; 2], vec![0.2, 0.4], vec![0.08, 0.10], HazardFn::constant(1.0));
    let identical = RegimeModel::fully_connected(vec![0.05; 2], vec![0.2, 0.2], vec![0.08, 0.08], HazardFn::constant(1.0));

    for (name, model) in [("two regimes", &switching), ("identical regimes", &identical)] {
        let surface = solve(model, &contract, &SolverConfig::default())?;
        let table = DeltaTable::build(&surface);
        println!("{name}:");
        for steps in [50, 250] {
            let report = hedge_backtest(&surface, &table, 100.0, 0, 20_000, contract.maturity / steps as f64, 5)?;
            println!(
                "  {steps:4} rebalances: mean {:+.4} (se {:.4}), variance {:.4} (se {:.4})",
                report.mean, report.se, report.variance, report.variance_se
            );
        }
    }
    Ok(())
}
