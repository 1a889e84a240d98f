//! Black–Scholes prices, the lognormal transition kernel and Gauss–Hermite
//! expectations against it.
//!
//! Run with `cargo run --example lognormal_kernel`.

use smgbm::bsm_kernel::{bs_call, bs_delta, eta_kernel_expectation, lognormal_expectation, Lognormal};

fn main() -> smgbm::Result<()> {
    let (strike, r, sigma, tau) = (100.0, 0.05, 0.2, 1.0);
    println!("Black–Scholes call at the money: {:.6}", bs_call(100.0, strike, r, sigma, tau));
    println!("Black–Scholes delta at the money: {:.6}", bs_delta(100.0, strike, r, sigma, tau));

    let kernel = Lognormal::new(r, sigma);
    let (s, v) = (100.0, 0.5);
    for x in [70.0, 100.0, 130.0] {
        println!("alpha({x}; s={s}, v={v}) = {:.6e}", kernel.alpha(x, s, v)?);
    }
    println!("beta identity residual at (120, 100, 0.5): {:.2e}", kernel.beta_identity_residual(120.0, s, v)?);

    // Discounted stock is a martingale under the kernel.
    let mean = lognormal_expectation(|x| x, s, kernel, v, 32)?;
    println!("E[S_v] = {mean:.10}, s e^(rv) = {:.10}", s * (r * v).exp());

    // Running a call through the kernel for v, then holding a call in a second
    // regime for the remaining time, composes into one lognormal.
    let target = Lognormal::new(r, 0.4);
    let closed = eta_kernel_expectation(s, strike, kernel, v, target, tau - v);
    let quad = lognormal_expectation(|x| bs_call(x, strike, r, 0.4, tau - v), s, kernel, v, 64)?;
    println!("composed call: closed form {closed:.10}, quadrature {quad:.10}");
    Ok(())
}
