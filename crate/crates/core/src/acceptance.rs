//! Acceptance battery: property and oracle checks run against a configuration.
//!
//! Each check returns a [`CriterionResult`] with the measured quantity and the
//! bound it was held to. [`Battery::run`] runs all of them for one
//! configuration; the individual functions are public so that callers can
//! aim a check at a specific model.

use std::fmt;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::bsm_kernel::{bs_call, bs_delta, Lognormal};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::greeks::{delta_fd, delta_integral, DeltaTable};
use crate::mc::{hedge_backtest, mc_price, path_rng, StartState};
use crate::regime_model::{HazardFn, RegimeModel};
use crate::volterra::{
    estimate_contraction, pde_residual, solve_from, write_surface_csv, ContractSpec, Convergence, InitialGuess,
    PriceSurface, SolverConfig,
};

/// Envelope slack per unit of `1 + s`.
pub const ENVELOPE_SLACK: f64 = 1e-9;
/// Fixed-point residual bound, pinned to twice the default tolerance so that a
/// loosened `solver.tol` cannot relax it.
pub const FIXED_POINT_LIMIT: f64 = 2e-8;

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    /// What was measured, against which bound.
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:>2} {:<22} {} ({:.1} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

fn result(id: u32, name: &'static str, passed: bool, detail: String, start: Instant) -> CriterionResult {
    CriterionResult {
        id,
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Copy of `model` with every regime given the coefficients of regime 0.
pub fn identical_variant(model: &RegimeModel) -> RegimeModel {
    let k = model.regime_count();
    RegimeModel::new(
        vec![model.r[0]; k],
        vec![model.sigma[0]; k],
        vec![model.mu[0]; k],
        model.hazards.clone(),
    )
}

/// Largest `|G − η|/(1+s)` over the age-zero grid; the surface must come from
/// an identical-coefficient model.
pub fn bs_reduction(model: &RegimeModel, contract: &ContractSpec, solver: &SolverConfig) -> Result<CriterionResult> {
    let start = Instant::now();
    if !model.has_identical_coefficients() {
        return Err(Error::InvalidArgument("reduction check needs identical regime coefficients".into()));
    }
    let surface = solve_from(model, contract, solver, InitialGuess::Bsm)?;
    let worst = bs_gap(&surface);
    let seconds = start.elapsed().as_secs_f64();
    Ok(result(
        1,
        "BS reduction",
        worst < 5e-5 && seconds < 60.0,
        format!("max |phi-eta|/(1+s) = {worst:.2e} < 5e-5, solve {seconds:.1} s < 60 s"),
        start,
    ))
}

fn bs_gap(surface: &PriceSurface) -> f64 {
    let grid = surface.grid();
    let contract = surface.contract();
    let model = surface.model();
    let mut worst: f64 = 0.0;
    for i in 0..grid.regimes {
        for n in 0..grid.n_t() {
            let tau = contract.maturity - grid.time(n);
            for m in 0..grid.n_s() {
                let s = surface.spot(m);
                let eta = if n == grid.last() {
                    contract.payoff(s)
                } else {
                    bs_call(s, contract.strike, model.r[i], model.sigma[i], tau)
                };
                worst = worst.max((surface.value(i, n, m) - eta).abs() / (1.0 + s));
            }
        }
    }
    worst
}

/// Random point of the domain with a log-uniform spot reaching past the grid.
fn random_point(surface: &PriceSurface, rng: &mut impl Rng) -> (f64, f64, usize, f64) {
    let contract = surface.contract();
    let grid = surface.grid();
    let (lo, hi) = (grid.log_s.start - 0.5, grid.log_s.end() + 0.5);
    let t = rng.gen::<f64>() * contract.maturity;
    let y = rng.gen::<f64>() * t;
    let s = (lo + rng.gen::<f64>() * (hi - lo)).exp();
    (t, s, rng.gen_range(0..grid.regimes), y)
}

/// Envelope `(s−K)⁺ ≤ φ ≤ s` on the unclipped right-hand side at every
/// age-zero grid node and at `probes` random points.
pub fn bounds(surface: &PriceSurface, probes: usize, seed: u64) -> Result<CriterionResult> {
    let start = Instant::now();
    let grid = *surface.grid();
    let strike = surface.contract().strike;
    let excess = |raw: f64, s: f64| ((s - strike).max(0.0) - raw).max(raw - s) / (1.0 + s);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..grid.regimes {
        for n in 0..grid.n_t() {
            for m in 0..grid.n_s() {
                let s = surface.spot(m);
                worst = worst.max(excess(surface.price_at_raw(grid.time(n), s, i, 0.0)?, s));
            }
        }
    }
    let mut rng = path_rng(seed, u64::MAX);
    for _ in 0..probes {
        let (t, s, i, y) = random_point(surface, &mut rng);
        worst = worst.max(excess(surface.price_at_raw(t, s, i, y)?, s));
    }
    Ok(result(
        2,
        "bounds",
        worst <= ENVELOPE_SLACK,
        format!(
            "max envelope excess/(1+s) = {worst:.2e} <= {ENVELOPE_SLACK:.0e} over {} nodes + {probes} probes",
            grid.slice_len()
        ),
        start,
    ))
}

/// Exact payoff at maturity, and a price below `1e−6·K` at `s = 1e−8·K`.
pub fn terminal_and_boundary(surface: &PriceSurface, seed: u64) -> Result<CriterionResult> {
    let start = Instant::now();
    let grid = *surface.grid();
    let contract = *surface.contract();
    let mut mismatches = 0usize;
    for i in 0..grid.regimes {
        for m in 0..grid.n_s() {
            if surface.value(i, grid.last(), m) != contract.payoff(surface.spot(m)) {
                mismatches += 1;
            }
        }
    }
    let mut rng = path_rng(seed, u64::MAX - 1);
    for _ in 0..1000 {
        let (_, s, i, _) = random_point(surface, &mut rng);
        let y = rng.gen::<f64>() * contract.maturity;
        if surface.price_at(contract.maturity, s, i, y)? != contract.payoff(s) {
            mismatches += 1;
        }
    }
    let tiny = 1e-8 * contract.strike;
    let mut worst: f64 = 0.0;
    for i in 0..grid.regimes {
        for frac in [0.0, 0.25, 0.5, 0.75, 0.99] {
            let t = frac * contract.maturity;
            for y in [0.0, 0.5 * t, t] {
                worst = worst.max(surface.price_at(t, tiny, i, y)?);
            }
        }
    }
    let limit = 1e-6 * contract.strike;
    Ok(result(
        3,
        "terminal/boundary",
        mismatches == 0 && worst < limit,
        format!("{mismatches} terminal mismatches; max phi(t, 1e-8K) = {worst:.2e} < {limit:.0e}"),
        start,
    ))
}

/// `1 − e^{−aT}` when every regime has the same constant total hazard `a`.
fn constant_total_hazard(model: &RegimeModel) -> Option<f64> {
    let mut common = None;
    for row in &model.hazards {
        let mut total = 0.0;
        for h in row.iter().flatten() {
            match h {
                HazardFn::Constant { rate } => total += rate,
                HazardFn::Weibull { .. } => return None,
            }
        }
        match common {
            None => common = Some(total),
            Some(a) if a == total => {}
            Some(_) => return None,
        }
    }
    common
}

/// Picard ratios from `n = 2` on against the contraction estimate.
pub fn contraction(model: &RegimeModel, maturity: f64, runs: &[&Convergence]) -> CriterionResult {
    let start = Instant::now();
    let estimate = estimate_contraction(model, maturity).value;
    let worst = runs
        .iter()
        .flat_map(|c| c.error_ratios().into_iter().skip(1))
        .fold(0.0, f64::max);
    let mut passed = worst <= estimate + 0.05;
    let mut detail = format!("max ratio (n>=2) = {worst:.3} <= J + 0.05 = {:.3}", estimate + 0.05);
    if let Some(a) = constant_total_hazard(model) {
        let exact = -(-a * maturity).exp_m1();
        let gap = (estimate - exact).abs();
        passed &= gap <= 1e-10;
        detail += &format!("; |J - (1-e^-aT)| = {gap:.1e} <= 1e-10");
    }
    result(4, "contraction", passed, detail, start)
}

/// Solves from `η`, `0` and `s`; the three must agree within `2·tol` and the
/// fixed-point residual of each must stay below [`FIXED_POINT_LIMIT`].
///
/// Returns the solves in that order alongside the result.
pub fn uniqueness(
    model: &RegimeModel,
    contract: &ContractSpec,
    solver: &SolverConfig,
    from_eta: Option<PriceSurface>,
) -> Result<(CriterionResult, Vec<PriceSurface>)> {
    let start = Instant::now();
    let mut surfaces = vec![match from_eta {
        Some(s) => s,
        None => solve_from(model, contract, solver, InitialGuess::Bsm)?,
    }];
    for guess in [InitialGuess::Zero, InitialGuess::Spot] {
        surfaces.push(solve_from(model, contract, solver, guess)?);
    }
    let op = surfaces[0].operator();
    let mut gap: f64 = 0.0;
    for a in 0..surfaces.len() {
        for b in a + 1..surfaces.len() {
            gap = gap.max(op.weighted_distance(surfaces[a].values(), surfaces[b].values()));
        }
    }
    let mut residual: f64 = 0.0;
    for s in &surfaces {
        residual = residual.max(s.fixed_point_residual()?);
    }
    let limit = 2.0 * solver.tol;
    Ok((
        result(
            5,
            "uniqueness",
            gap <= limit && residual < FIXED_POINT_LIMIT,
            format!(
                "max start-to-start gap = {gap:.2e} <= 2 tol = {limit:.0e}; fixed-point residual = {residual:.2e} < {FIXED_POINT_LIMIT:.0e}"
            ),
            start,
        ),
        surfaces,
    ))
}

/// `∫ (1 + x) α(x; s, v) dx` by the trapezoid rule in `ln x` with `α`
/// evaluated pointwise.
pub fn kernel_mass(kernel: Lognormal, s: f64, v: f64) -> Result<f64> {
    let sd = kernel.sigma * v.sqrt();
    let mean = s.ln() + kernel.log_drift() * v + sd * sd;
    let h = sd / 8.0;
    let mut total = 0.0;
    for q in -400..=400 {
        let u = mean + q as f64 * h;
        let x = u.exp();
        total += (1.0 + x) * kernel.alpha(x, s, v)? * x;
    }
    Ok(total * h)
}

/// Kernel identities at 100 random points per regime.
pub fn kernel_identities(model: &RegimeModel, seed: u64) -> Result<CriterionResult> {
    let start = Instant::now();
    let mut rng = path_rng(seed, u64::MAX - 2);
    let mut worst_identity: f64 = 0.0;
    let mut worst_mass: f64 = 0.0;
    for i in 0..model.regime_count() {
        let kernel = Lognormal::for_regime(model, i)?;
        for _ in 0..100 {
            let mut draw = || 0.1 + 9.9 * rng.gen::<f64>();
            let (x, s, v) = (draw(), draw(), draw());
            worst_identity = worst_identity.max(kernel.beta_identity_residual(x, s, v)?.abs());
            let exact = 1.0 + s * (kernel.r * v).exp();
            worst_mass = worst_mass.max((kernel_mass(kernel, s, v)? - exact).abs());
        }
    }
    Ok(result(
        6,
        "kernel identities",
        worst_identity < 1e-12 && worst_mass < 1e-12,
        format!("beta identity residual = {worst_identity:.1e} < 1e-12; |int (1+x) alpha - (1+s e^rv)| = {worst_mass:.1e} < 1e-12"),
        start,
    ))
}

/// `φ(0, s, i, 0)` against the Monte Carlo price within three standard errors.
///
/// `solve_seconds` is added to the runtime bound.
pub fn mc_cross_validation(
    surface: &PriceSurface,
    s: f64,
    regime: usize,
    n_paths: usize,
    seed: u64,
    solve_seconds: f64,
) -> Result<CriterionResult> {
    let start = Instant::now();
    let phi = surface.price_at(0.0, s, regime, 0.0)?;
    let est = mc_price(surface.model(), surface.contract(), StartState::at_inception(s, regime), n_paths, seed)?;
    let z = (phi - est.mean).abs() / est.se;
    let seconds = start.elapsed().as_secs_f64() + solve_seconds;
    Ok(result(
        7,
        "MC cross-validation",
        z < 3.0 && seconds < 180.0,
        format!(
            "phi = {phi:.5}, mc = {:.5} +- {:.5} ({n_paths} paths): |gap|/se = {z:.2} < 3, {seconds:.1} s < 180 s",
            est.mean, est.se
        ),
        start,
    ))
}

/// Interior probes for the PDE check: two times, two spots off the strike.
pub fn pde_probes(contract: &ContractSpec) -> Vec<(f64, f64, f64)> {
    let (k, t) = (contract.strike, contract.maturity);
    let mut probes = Vec::new();
    for (tf, yf) in [(0.31, 0.11), (0.61, 0.35)] {
        for sf in [0.85, 1.19] {
            probes.push((tf * t, sf * k, yf * t));
        }
    }
    probes
}

/// Residual ratios over two successive stencil halvings, and the residual at
/// the finest stencil against `1e−2·r·φ`.
///
/// Stencils are relative: `h_t = h_y = f·T`, `h_s = f·s`.
pub fn pde_check(surface: &PriceSurface) -> Result<CriterionResult> {
    const LEVELS: [f64; 3] = [0.02, 0.01, 0.005];
    let start = Instant::now();
    let contract = *surface.contract();
    let model = surface.model();
    let mut worst_ratio = f64::INFINITY;
    let mut worst_rel: f64 = 0.0;
    for i in 0..model.regime_count() {
        for &(t, s, y) in &pde_probes(&contract) {
            let residuals = LEVELS
                .iter()
                .map(|&f| pde_residual(surface, t, s, i, y, f * contract.maturity, f * s, f * contract.maturity))
                .collect::<Result<Vec<_>>>()?;
            for w in residuals.windows(2) {
                worst_ratio = worst_ratio.min(w[0].abs() / w[1].abs());
            }
            let scale = 1e-2 * model.r[i] * surface.price_at(t, s, i, y)?;
            worst_rel = worst_rel.max(residuals[LEVELS.len() - 1].abs() / scale);
        }
    }
    Ok(result(
        8,
        "PDE residual",
        worst_ratio >= 3.0 && worst_rel < 1.0,
        format!("min halving ratio = {worst_ratio:.2} >= 3; max |residual|/(1e-2 r phi) = {worst_rel:.3} < 1"),
        start,
    ))
}

/// Probe grid for delta checks: 10 times × 10 spots × regimes × 3 ages.
pub fn delta_probes(surface: &PriceSurface) -> Vec<(f64, f64, usize, f64)> {
    let contract = surface.contract();
    let mut probes = Vec::new();
    for a in 0..10 {
        let t = contract.maturity * (0.05 + 0.1 * a as f64);
        for b in 0..10 {
            let s = contract.strike * (0.6f64.ln() + (1.6f64 / 0.6).ln() * b as f64 / 9.0).exp();
            for i in 0..surface.grid().regimes {
                for y in [0.0, 0.5 * t, t] {
                    probes.push((t, s, i, y));
                }
            }
        }
    }
    probes
}

/// `ψ` against a central difference of the price, and in the identical
/// configuration against the Black–Scholes delta.
pub fn delta_check(surface: &PriceSurface, identical: &PriceSurface) -> Result<CriterionResult> {
    let start = Instant::now();
    let mut worst_fd: f64 = 0.0;
    for (t, s, i, y) in delta_probes(surface) {
        let psi = delta_integral(surface, t, s, i, y)?;
        let fd = delta_fd(surface, t, s, i, y, None)?;
        worst_fd = worst_fd.max((psi - fd).abs() / psi.abs().max(1.0));
    }
    let contract = identical.contract();
    let model = identical.model();
    let mut worst_bs: f64 = 0.0;
    for (t, s, i, y) in delta_probes(identical) {
        let psi = delta_integral(identical, t, s, i, y)?;
        let exact = bs_delta(s, contract.strike, model.r[i], model.sigma[i], contract.maturity - t);
        worst_bs = worst_bs.max((psi - exact).abs());
    }
    Ok(result(
        9,
        "delta representation",
        worst_fd < 1e-3 && worst_bs < 1e-4,
        format!("max |psi-fd|/max(1,psi) = {worst_fd:.1e} < 1e-3; identical |psi-bs| = {worst_bs:.1e} < 1e-4"),
        start,
    ))
}

/// Hedging residual: zero mean at `T/250`, strictly positive variance when the
/// regimes differ, and variance shrinking with the rebalancing step in the
/// identical configuration.
pub fn hedging(
    surface: &PriceSurface,
    identical: &PriceSurface,
    s0: f64,
    regime: usize,
    n_paths: usize,
    seed: u64,
) -> Result<CriterionResult> {
    let start = Instant::now();
    let maturity = surface.contract().maturity;
    let table = DeltaTable::build(surface);
    let main = hedge_backtest(surface, &table, s0, regime, n_paths, maturity / 250.0, seed)?;
    let z = main.mean.abs() / main.se;
    let mut passed = z < 3.0;
    let mut detail = format!("mean/se = {z:.2} < 3");
    if !surface.model().has_identical_coefficients() {
        let sig = main.variance / main.variance_se;
        passed &= sig > 5.0;
        detail += &format!("; var = {:.4} = {sig:.0} se > 5 se", main.variance);
    }
    let table = DeltaTable::build(identical);
    let mut variances = Vec::new();
    for steps in [50.0, 250.0, 1250.0] {
        let rep = hedge_backtest(identical, &table, s0, regime, n_paths, maturity / steps, seed)?;
        variances.push((rep.variance, rep.variance_se));
    }
    let shrinking = variances.windows(2).all(|w| w[0].0 - w[1].0 > 3.0 * (w[0].1 + w[1].1));
    let factor = variances[0].0 / variances[2].0;
    passed &= shrinking && factor > 4.0;
    detail += &format!(
        "; identical var at T/50, T/250, T/1250 = {:.4}, {:.4}, {:.4} (significant drops, total factor {factor:.1} > 4)",
        variances[0].0, variances[1].0, variances[2].0
    );
    Ok(result(10, "hedging backtest", passed, detail, start))
}

fn surface_csv(surface: &PriceSurface) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    write_surface_csv(surface, &mut bytes)?;
    Ok(bytes)
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Surface CSV and Monte Carlo price compared bit for bit across repeated
/// runs and worker counts.
pub fn determinism(reference: &PriceSurface, s0: f64, regime: usize, n_paths: usize, seed: u64) -> Result<CriterionResult> {
    let start = Instant::now();
    let (model, contract, config) = (reference.model(), reference.contract(), reference.config());
    let csv = surface_csv(reference)?;
    let mut csv_equal = true;
    for threads in [1, 3] {
        let again = in_pool(threads, || solve_from(model, contract, config, InitialGuess::Bsm))??;
        csv_equal &= surface_csv(&again)? == csv;
    }
    let state = StartState::at_inception(s0, regime);
    let runs = [
        mc_price(model, contract, state, n_paths, seed)?,
        mc_price(model, contract, state, n_paths, seed)?,
        in_pool(1, || mc_price(model, contract, state, n_paths, seed))??,
        in_pool(3, || mc_price(model, contract, state, n_paths, seed))??,
    ];
    let mc_equal = runs
        .iter()
        .all(|r| r.mean.to_bits() == runs[0].mean.to_bits() && r.se.to_bits() == runs[0].se.to_bits());
    Ok(result(
        11,
        "determinism",
        csv_equal && mc_equal,
        format!(
            "surface csv identical: {csv_equal} ({} bytes); mc price identical: {mc_equal} (1, 3 workers and default)",
            csv.len()
        ),
        start,
    ))
}

/// Every check for one configuration.
#[derive(Debug, Clone)]
pub struct Battery {
    pub model: RegimeModel,
    pub contract: ContractSpec,
    pub solver: SolverConfig,
    pub mc_paths: usize,
    pub backtest_paths: usize,
    pub seed: u64,
    /// Spot and regime of the priced and hedged position.
    pub spot: f64,
    pub regime: usize,
}

impl Battery {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        let contract = config.contract();
        Battery {
            model: config.model(),
            contract,
            solver: config.solver,
            mc_paths: config.mc.n_paths,
            backtest_paths: config.mc.n_paths.min(100_000),
            seed: config.mc.seed,
            spot: contract.strike,
            regime: 0,
        }
    }

    /// Runs every check; `surface`, when given, must be the solve of this
    /// configuration from the Black–Scholes start.
    pub fn run(&self, surface: Option<PriceSurface>, mut progress: impl FnMut(&CriterionResult)) -> Result<Vec<CriterionResult>> {
        let mut out = Vec::new();
        let mut push = |r: CriterionResult| {
            progress(&r);
            out.push(r);
        };
        let identical_model = identical_variant(&self.model);
        push(bs_reduction(&identical_model, &self.contract, &self.solver)?);

        let solve_start = Instant::now();
        let (unique, mut surfaces) = uniqueness(&self.model, &self.contract, &self.solver, surface)?;
        let solve_seconds = solve_start.elapsed().as_secs_f64() / 3.0;
        let surface = surfaces.swap_remove(0);
        push(bounds(&surface, 10_000, self.seed)?);
        push(terminal_and_boundary(&surface, self.seed)?);
        let runs: Vec<&Convergence> = std::iter::once(&surface.convergence)
            .chain(surfaces.iter().map(|s| &s.convergence))
            .collect();
        push(contraction(&self.model, self.contract.maturity, &runs));
        push(unique);
        push(kernel_identities(&self.model, self.seed)?);
        push(mc_cross_validation(&surface, self.spot, self.regime, self.mc_paths, self.seed, solve_seconds)?);
        push(pde_check(&surface)?);
        let identical = solve_from(&identical_model, &self.contract, &self.solver, InitialGuess::Bsm)?;
        push(delta_check(&surface, &identical)?);
        push(hedging(&surface, &identical, self.spot, self.regime, self.backtest_paths, self.seed)?);
        push(determinism(&surface, self.spot, self.regime, self.mc_paths, self.seed)?);
        out.sort_by_key(|r| r.id);
        Ok(out)
    }
}
