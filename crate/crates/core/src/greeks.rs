//! Hedge ratio `ψ = ∂φ/∂s` and the locally risk-minimizing strategy.
//!
//! `ψ` differentiates the right-hand side of the price equation under the
//! integral. In Gauss–Hermite coordinates the kernel derivative is the score
//! `z / (s σ_i √v)`, so each inner expectation becomes `E[G_j(t+v, X_v) z]`
//! scaled by `1 / (s σ_i √v)`.

use rayon::prelude::*;

use crate::bsm_kernel::bs_delta;
use crate::error::{Error, Result};
use crate::regime_model::conditional_survival_unchecked;
use crate::volterra::{grid_nodes, v_weights, PriceSurface};

/// Holdings `(ξ, ε)` of the strategy at one state, with the price they replicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HedgePosition {
    /// Stock units.
    pub xi: f64,
    /// Money-market units.
    pub eps: f64,
    pub phi: f64,
}

/// `ψ(t, s, i, y)` from the integral representation.
pub fn delta_integral(surface: &PriceSurface, t: f64, s: f64, i: usize, y: f64) -> Result<f64> {
    surface.check_point(t, s, i, y)?;
    let contract = surface.contract();
    let t = t.clamp(0.0, contract.maturity);
    let y = y.min(t);
    let kernel = surface.kernel(i);
    let tau = contract.maturity - t;
    let eta_delta = bs_delta(s, contract.strike, kernel.r, kernel.sigma, tau);
    if tau <= 0.0 {
        return Ok(eta_delta);
    }
    let head = conditional_survival_unchecked(surface.model(), i, y, tau) * eta_delta;
    surface.integrate(t, s, i, y, head, true)
}

/// Central difference of [`PriceSurface::price_at`] with step `h` (default `1e−4·s`).
///
/// When the estimates at `h` and `h/2` disagree by more than 10 % the
/// Richardson combination of the two is returned.
pub fn delta_fd(surface: &PriceSurface, t: f64, s: f64, i: usize, y: f64, h: Option<f64>) -> Result<f64> {
    let h = h.unwrap_or(1e-4 * s);
    if !(h > 0.0) || s - h <= 0.0 {
        return Err(Error::Domain(format!("finite-difference stencil s±h with s={s}, h={h} leaves s > 0")));
    }
    let central = |h: f64| -> Result<f64> {
        Ok((surface.price_at(t, s + h, i, y)? - surface.price_at(t, s - h, i, y)?) / (2.0 * h))
    };
    let coarse = central(h)?;
    let fine = central(0.5 * h)?;
    if (coarse - fine).abs() > 0.1 * coarse.abs().max(fine.abs()) {
        Ok((4.0 * fine - coarse) / 3.0)
    } else {
        Ok(coarse)
    }
}

/// Strategy at `(t, s, i, y)` given the accumulated money-market value `B_t`.
pub fn strategy(surface: &PriceSurface, t: f64, s: f64, i: usize, y: f64, money_market: f64) -> Result<HedgePosition> {
    if !(money_market > 0.0 && money_market.is_finite()) {
        return Err(Error::InvalidArgument(format!("money-market value must be positive, got {money_market}")));
    }
    let phi = surface.price_at(t, s, i, y)?;
    let xi = delta_integral(surface, t, s, i, y)?;
    Ok(HedgePosition {
        xi,
        eps: (phi - xi * s) / money_market,
        phi,
    })
}

/// Writes `ψ` on the age-zero grid as `t,s,regime,y,psi` rows, in the order of
/// the price export.
pub fn write_delta_csv(surface: &PriceSurface, out: &mut impl std::io::Write) -> Result<()> {
    writeln!(out, "t,s,regime,y,psi")?;
    let grid = *surface.grid();
    for n in 0..grid.n_t() {
        for i in 0..grid.regimes {
            for m in 0..grid.n_s() {
                let (t, s) = (grid.time(n), surface.spot(m));
                writeln!(out, "{t},{s},{},0,{}", i + 1, delta_integral(surface, t, s, i, 0.0)?)?;
            }
        }
    }
    Ok(())
}

/// `ψ` tabulated on `(regime, t_n, y_l ≤ t_n, s_m)` for fast lookups along
/// simulated paths.
///
/// The table stores `ψ − ∂η_i/∂s`; lookups add the exact Black–Scholes delta
/// back, interpolating only the regime-switching correction (cubic in
/// `ln s`, linear in age and time).
#[derive(Debug, Clone)]
pub struct DeltaTable {
    strike: f64,
    maturity: f64,
    r: Vec<f64>,
    sigma: Vec<f64>,
    log_start: f64,
    log_step: f64,
    n_s: usize,
    dt: f64,
    n_t: usize,
    /// Offset of row `(i, n, 0)`; ages `l = 0..=n` follow contiguously.
    row_start: Vec<usize>,
    values: Vec<f64>,
}

impl DeltaTable {
    pub fn build(surface: &PriceSurface) -> Self {
        let grid = *surface.grid();
        let model = surface.model();
        let contract = *surface.contract();
        let (k, n_t, n_s) = (grid.regimes, grid.n_t(), grid.n_s());
        let mut row_start = Vec::with_capacity(k * n_t);
        let mut rows = Vec::new();
        for i in 0..k {
            for n in 0..n_t {
                row_start.push(rows.len() * n_s);
                for l in 0..=n {
                    rows.push((i, n, l));
                }
            }
        }
        let score = surface.score_table();
        let mut values = vec![0.0; rows.len() * n_s];
        values.par_chunks_mut(n_s).zip(rows.par_iter()).for_each(|(out, &(i, n, l))| {
            if n == grid.last() {
                return;
            }
            let (t, y) = (grid.time(n), grid.time(l));
            let nodes = grid_nodes(&grid, n);
            let w = v_weights(model, i, y, &nodes);
            let kernel = surface.kernel(i);
            let tau = contract.maturity - t;
            let surv = conditional_survival_unchecked(model, i, y, tau);
            for (m, slot) in out.iter_mut().enumerate() {
                let s = surface.spot(m);
                let eta_delta = bs_delta(s, contract.strike, kernel.r, kernel.sigma, tau);
                let mut acc = (surv - 1.0) * eta_delta;
                for kk in 0..nodes.len() {
                    for jj in 0..k - 1 {
                        let weight = w[kk * (k - 1) + jj];
                        if weight != 0.0 {
                            acc += weight * score[surface.table_row(i, jj, n, kk) + m];
                        }
                    }
                }
                *slot = acc;
            }
        });
        DeltaTable {
            strike: contract.strike,
            maturity: contract.maturity,
            r: model.r.clone(),
            sigma: model.sigma.clone(),
            log_start: grid.log_s.start,
            log_step: grid.log_s.step,
            n_s,
            dt: grid.times.step,
            n_t,
            row_start,
            values,
        }
    }

    /// Correction `ψ − ∂η_i/∂s` on row `(i, n)` at age `y` (clamped to `[0, t_n]`).
    fn correction_on_row(&self, i: usize, n: usize, y: f64, pos: f64) -> f64 {
        let age = (y / self.dt).clamp(0.0, n as f64);
        let l = (age.floor() as usize).min(n.saturating_sub(1));
        let frac = if n == 0 { 0.0 } else { age - l as f64 };
        let base = self.row_start[i * self.n_t + n];
        let at = |l: usize| lagrange_row(&self.values[base + l * self.n_s..base + (l + 1) * self.n_s], pos);
        if frac == 0.0 {
            at(l)
        } else {
            (1.0 - frac) * at(l) + frac * at(l + 1)
        }
    }

    /// `ψ(t, s, i, y)`.
    pub fn delta(&self, t: f64, s: f64, i: usize, y: f64) -> f64 {
        let tau = (self.maturity - t).max(0.0);
        let eta_delta = bs_delta(s, self.strike, self.r[i], self.sigma[i], tau);
        if tau <= 0.0 {
            return eta_delta;
        }
        let pos = ((s.ln() - self.log_start) / self.log_step).clamp(0.0, (self.n_s - 1) as f64);
        let tpos = (t / self.dt).clamp(0.0, (self.n_t - 1) as f64);
        let n = (tpos.floor() as usize).min(self.n_t - 2);
        let frac = tpos - n as f64;
        let lower = self.correction_on_row(i, n, y, pos);
        let correction = if frac == 0.0 {
            lower
        } else {
            (1.0 - frac) * lower + frac * self.correction_on_row(i, n + 1, y, pos)
        };
        eta_delta + correction
    }
}

/// Four-point Lagrange interpolation of a uniformly sampled row at fractional position `pos`.
fn lagrange_row(row: &[f64], pos: f64) -> f64 {
    let n = row.len();
    let start = (pos.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
    let x = pos - start as f64;
    let (x0, x1, x2, x3) = (x, x - 1.0, x - 2.0, x - 3.0);
    -row[start] * x1 * x2 * x3 / 6.0 + row[start + 1] * x0 * x2 * x3 / 2.0 - row[start + 2] * x0 * x1 * x3 / 2.0
        + row[start + 3] * x0 * x1 * x2 / 6.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regime_model::{HazardFn, RegimeModel};
    use crate::volterra::{solve, ContractSpec, SolverConfig};
    use approx::assert_abs_diff_eq;

    fn config() -> SolverConfig {
        SolverConfig {
            n_t: 21,
            n_s: 81,
            quad_order: 32,
            tol: 1e-10,
            ..SolverConfig::default()
        }
    }

    fn surface(sigma: [f64; 2], hazard: HazardFn) -> PriceSurface {
        let model = RegimeModel::fully_connected(vec![0.05, 0.05], sigma.to_vec(), vec![0.08, 0.1], hazard);
        solve(&model, &ContractSpec::new(100.0, 1.0).unwrap(), &config()).unwrap()
    }

    #[test]
    fn identical_regimes_give_bs_delta() {
        let sf = surface([0.2, 0.2], HazardFn::weibull(1.0, 2.0));
        for &(t, s, y) in &[(0.0, 100.0, 0.0), (0.33, 87.0, 0.1), (0.5, 120.0, 0.5), (0.9, 101.0, 0.2)] {
            let psi = delta_integral(&sf, t, s, 1, y).unwrap();
            assert_abs_diff_eq!(psi, bs_delta(s, 100.0, 0.05, 0.2, 1.0 - t), epsilon = 1e-4);
        }
    }

    #[test]
    fn integral_delta_matches_finite_difference() {
        let sf = surface([0.2, 0.4], HazardFn::constant(1.0));
        for &(t, s, i, y) in &[(0.0, 100.0, 0, 0.0), (0.33, 87.0, 1, 0.1), (0.52, 130.0, 0, 0.4), (0.75, 95.0, 1, 0.0)] {
            let psi = delta_integral(&sf, t, s, i, y).unwrap();
            let fd = delta_fd(&sf, t, s, i, y, None).unwrap();
            assert!((psi - fd).abs() < 1e-3 * psi.abs().max(1.0), "t={t} s={s}: {psi} vs {fd}");
        }
    }

    #[test]
    fn deep_in_the_money_delta_is_one() {
        let sf = surface([0.2, 0.4], HazardFn::constant(1.0));
        let psi = delta_integral(&sf, 0.0, 1e5, 0, 0.0).unwrap();
        assert!((0.99..=1.0 + 1e-6).contains(&psi), "{psi}");
    }

    #[test]
    fn terminal_differences_follow_the_payoff() {
        let sf = surface([0.2, 0.4], HazardFn::constant(1.0));
        assert_abs_diff_eq!(delta_fd(&sf, 1.0, 130.0, 0, 0.5, None).unwrap(), 1.0, epsilon = 1e-10);
        assert_eq!(delta_fd(&sf, 1.0, 70.0, 0, 0.5, None).unwrap(), 0.0);
        assert!(delta_fd(&sf, 0.5, 1.0, 0, 0.0, Some(2.0)).is_err());
    }

    #[test]
    fn strategy_replicates_price() {
        let sf = surface([0.2, 0.4], HazardFn::constant(1.0));
        let b = 1.03;
        let pos = strategy(&sf, 1.0, 130.0, 0, 0.2, b).unwrap();
        assert_eq!(pos.xi, 1.0);
        assert_abs_diff_eq!(pos.eps, -100.0 / b, epsilon = 1e-12);
        let pos = strategy(&sf, 1.0, 70.0, 1, 0.2, b).unwrap();
        assert_eq!((pos.xi, pos.eps), (0.0, 0.0));
        let pos = strategy(&sf, 0.4, 104.0, 1, 0.3, b).unwrap();
        assert!((pos.eps * b + pos.xi * 104.0 - pos.phi).abs() <= 1e-12 * pos.phi);
        assert!(strategy(&sf, 0.4, 104.0, 1, 0.3, 0.0).is_err());
    }

    #[test]
    fn table_lookup_agrees_with_integral() {
        let sf = surface([0.2, 0.4], HazardFn::weibull(1.0, 2.0));
        let table = DeltaTable::build(&sf);
        for &(t, s, i, y) in &[(0.0, 100.0, 0, 0.0), (0.3, 93.0, 1, 0.1), (0.61, 115.0, 0, 0.61), (0.9, 104.0, 1, 0.05)] {
            let exact = delta_integral(&sf, t, s, i, y).unwrap();
            assert!((table.delta(t, s, i, y) - exact).abs() < 5e-3, "t={t}: {} vs {exact}", table.delta(t, s, i, y));
        }
        assert_eq!(table.delta(1.0, 120.0, 0, 0.3), 1.0);
    }

    #[test]
    fn lagrange_row_is_exact_for_cubics() {
        let row: Vec<f64> = (0..10).map(|m| (m as f64).powi(3) - 2.0 * m as f64).collect();
        for &p in &[0.0, 0.4, 3.7, 8.9, 9.0] {
            assert_abs_diff_eq!(lagrange_row(&row, p), p.powi(3) - 2.0 * p, epsilon = 1e-10);
        }
    }
}
