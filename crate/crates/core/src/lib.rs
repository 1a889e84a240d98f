//! Pricing and hedging of European calls when the stock follows a geometric
//! Brownian motion whose rate and volatility switch with a semi-Markov chain.

pub mod acceptance;
pub mod bsm_kernel;
pub mod cli;
pub mod config;
pub mod error;
pub mod greeks;
pub mod interp;
pub mod mc;
pub mod regime_model;
pub mod volterra;

pub use error::{Error, Result};
pub use regime_model::{HazardFn, RegimeModel};
pub use volterra::{solve, solve_from, ContractSpec, InitialGuess, PriceSurface, SolverConfig};
