//! Monte Carlo simulation of the regime chain and the stock.
//!
//! Each path draws from its own ChaCha stream, selected by the path index, so
//! estimates are identical for any number of worker threads. Per-path results
//! are collected in index order and reduced sequentially.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::greeks::DeltaTable;
use crate::regime_model::RegimeModel;
use crate::volterra::{ContractSpec, PriceSurface};

const MAX_JUMPS: usize = 1_000_000;
pub const MIN_PATHS: usize = 1_000;

/// Random stream of path `index` under `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform draw on `(0, 1]`.
fn open_uniform(rng: &mut impl Rng) -> f64 {
    1.0 - rng.gen::<f64>()
}

/// Drift used between regime changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    /// Drift `r(i)`.
    RiskNeutral,
    /// Drift `μ(i)`.
    Physical,
}

/// One simulated path on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub horizon: f64,
    /// `T_0 = 0 < T_1 < …`, all inside `[0, horizon)`.
    pub jump_times: Vec<f64>,
    /// Regime on `[T_n, T_{n+1})`.
    pub regimes: Vec<usize>,
    /// Age at time 0.
    pub initial_age: f64,
    /// `(time, S_time)` at time 0, every jump time, every observation time and the horizon, sorted.
    pub stock: Vec<(f64, f64)>,
}

impl PathRecord {
    fn segment(&self, t: f64) -> usize {
        self.jump_times.partition_point(|&u| u <= t).saturating_sub(1)
    }

    /// `X_t`, right-continuous.
    pub fn regime_at(&self, t: f64) -> usize {
        self.regimes[self.segment(t)]
    }

    /// `Y_t = t − T_{n(t)}`, with the initial age added before the first jump.
    pub fn age_at(&self, t: f64) -> f64 {
        let n = self.segment(t);
        if n == 0 {
            self.initial_age + t
        } else {
            t - self.jump_times[n]
        }
    }

    pub fn jump_count(&self) -> usize {
        self.jump_times.len() - 1
    }

    /// `∫_0^t r(X_u) du`.
    pub fn discount_integral(&self, model: &RegimeModel, t: f64) -> f64 {
        self.integrate(t, |i| model.r[i])
    }

    fn integrate(&self, t: f64, f: impl Fn(usize) -> f64) -> f64 {
        let t = t.min(self.horizon);
        let mut acc = 0.0;
        for (n, &start) in self.jump_times.iter().enumerate() {
            if start >= t {
                break;
            }
            let end = self.jump_times.get(n + 1).copied().unwrap_or(self.horizon).min(t);
            acc += f(self.regimes[n]) * (end - start);
        }
        acc
    }

    /// Recorded stock value at `t`, if `t` was a recorded time.
    pub fn stock_at(&self, t: f64) -> Option<f64> {
        self.stock.iter().find(|(u, _)| *u == t).map(|&(_, s)| s)
    }
}

/// Regime path started in regime `x0` at age `y0`.
pub fn simulate_chain(model: &RegimeModel, x0: usize, y0: f64, horizon: f64, rng: &mut impl Rng) -> Result<PathRecord> {
    model.check_regime(x0)?;
    if !(y0 >= 0.0 && horizon >= 0.0) {
        return Err(Error::InvalidArgument(format!("need y0 ≥ 0 and horizon ≥ 0, got y0={y0}, horizon={horizon}")));
    }
    let mut jump_times = vec![0.0];
    let mut regimes = vec![x0];
    let (mut t, mut age, mut state) = (0.0, y0, x0);
    loop {
        let stay = model.sample_sojourn(state, age, open_uniform(rng))?;
        if t + stay >= horizon {
            break;
        }
        t += stay;
        let exit_age = age + stay;
        let probs = model.transition_prob(state, exit_age)?;
        let u = rng.gen::<f64>();
        let mut cumulative = 0.0;
        let mut next = None;
        for (j, p) in probs.iter().enumerate() {
            cumulative += p;
            if *p > 0.0 && u < cumulative {
                next = Some(j);
                break;
            }
        }
        let next = next.unwrap_or_else(|| probs.iter().rposition(|&p| p > 0.0).unwrap_or(state));
        state = next;
        age = 0.0;
        jump_times.push(t);
        regimes.push(state);
        if jump_times.len() > MAX_JUMPS {
            return Err(Error::ModelDefect(format!("more than {MAX_JUMPS} regime changes before the horizon")));
        }
    }
    Ok(PathRecord {
        horizon,
        jump_times,
        regimes,
        initial_age: y0,
        stock: Vec::new(),
    })
}

/// Fills the stock along `chain` with exact lognormal steps between
/// consecutive recorded times.
pub fn simulate_stock(
    model: &RegimeModel,
    chain: &PathRecord,
    s0: f64,
    measure: Measure,
    rng: &mut impl Rng,
    observe_at: &[f64],
) -> Result<PathRecord> {
    if !(s0 > 0.0 && s0.is_finite()) {
        return Err(Error::InvalidArgument(format!("initial stock must be positive, got {s0}")));
    }
    let mut times: Vec<f64> = chain.jump_times.clone();
    times.extend(observe_at.iter().copied().filter(|&t| t >= 0.0 && t <= chain.horizon));
    times.push(chain.horizon);
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut path = chain.clone();
    path.stock = Vec::with_capacity(times.len());
    let mut s = s0;
    path.stock.push((times[0], s));
    for w in times.windows(2) {
        let (a, b) = (w[0], w[1]);
        let i = chain.regime_at(a);
        let drift = match measure {
            Measure::RiskNeutral => model.r[i],
            Measure::Physical => model.mu[i],
        };
        let sigma = model.sigma[i];
        let dt = b - a;
        let z: f64 = rng.sample(StandardNormal);
        s *= ((drift - 0.5 * sigma * sigma) * dt + sigma * dt.sqrt() * z).exp();
        path.stock.push((b, s));
    }
    Ok(path)
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
    pub seed: u64,
}

/// Neumaier-compensated sum in slice order.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Mean, unbiased variance, and the standard error of that variance.
fn moments(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = compensated_sum(values.iter().copied()) / n;
    let m2 = compensated_sum(values.iter().map(|x| (x - mean).powi(2))) / n;
    let m4 = compensated_sum(values.iter().map(|x| (x - mean).powi(4))) / n;
    let var = m2 * n / (n - 1.0);
    let var_se = ((m4 - m2 * m2).max(0.0) / n).sqrt();
    (mean, var, var_se)
}

fn estimate(values: &[f64], seed: u64) -> McEstimate {
    let (mean, var, _) = moments(values);
    McEstimate {
        mean,
        se: (var / values.len() as f64).sqrt(),
        n: values.len(),
        seed,
    }
}

/// Starting state `(t, s, regime, age)` of a simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StartState {
    pub t: f64,
    pub s: f64,
    pub regime: usize,
    pub age: f64,
}

impl StartState {
    pub fn at_inception(s: f64, regime: usize) -> Self {
        StartState { t: 0.0, s, regime, age: 0.0 }
    }
}

fn check_paths(n_paths: usize) -> Result<()> {
    if n_paths < MIN_PATHS {
        return Err(Error::InvalidArgument(format!("need at least {MIN_PATHS} paths, got {n_paths}")));
    }
    Ok(())
}

/// Discounted payoff `e^{−∫r} (S_T − K)⁺` averaged over risk-neutral paths.
pub fn mc_price(
    model: &RegimeModel,
    contract: &ContractSpec,
    start: StartState,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    model.validate().into_result()?;
    check_paths(n_paths)?;
    model.check_regime(start.regime)?;
    if !(start.s > 0.0 && start.t >= 0.0 && start.t <= contract.maturity && start.age >= 0.0 && start.age <= start.t) {
        return Err(Error::Domain(format!("start state {start:?} outside the pricing domain")));
    }
    let horizon = contract.maturity - start.t;
    let payoffs: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|index| {
            let mut rng = path_rng(seed, index);
            let chain = simulate_chain(model, start.regime, start.age, horizon, &mut rng)?;
            // The log-price is Gaussian given the chain: one draw covers all segments.
            let mut drift = 0.0;
            let mut var = 0.0;
            let mut rate = 0.0;
            for (n, &a) in chain.jump_times.iter().enumerate() {
                let b = chain.jump_times.get(n + 1).copied().unwrap_or(horizon);
                let i = chain.regimes[n];
                let sigma = model.sigma[i];
                drift += (model.r[i] - 0.5 * sigma * sigma) * (b - a);
                var += sigma * sigma * (b - a);
                rate += model.r[i] * (b - a);
            }
            let z: f64 = rng.sample(StandardNormal);
            let s_t = start.s * (drift + var.sqrt() * z).exp();
            Ok((-rate).exp() * contract.payoff(s_t))
        })
        .collect::<Result<_>>()?;
    Ok(estimate(&payoffs, seed))
}

/// Summary of the hedging residual `L̂ = H* − φ(0) − Σ ξ ΔS*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub mean: f64,
    pub se: f64,
    pub variance: f64,
    pub variance_se: f64,
    pub n: usize,
    pub seed: u64,
    pub rebalance_dt: f64,
    /// `φ(0, s0, i0, 0)` from the surface.
    pub initial_price: f64,
}

/// Discrete-time run of the locally risk-minimizing hedge along risk-neutral
/// paths started at `(0, s0, regime, 0)`.
///
/// The position is reset on the grid `k·rebalance_dt` and at every regime
/// change. The position held over `(a, b]` is `ψ(a, S_a, X_a, Y_a)`; since no
/// jump happens inside `(a, b)`, that is the left-limit state for every
/// instant of the interval.
pub fn hedge_backtest(
    surface: &PriceSurface,
    table: &DeltaTable,
    s0: f64,
    regime: usize,
    n_paths: usize,
    rebalance_dt: f64,
    seed: u64,
) -> Result<BacktestReport> {
    let model = surface.model();
    let contract = *surface.contract();
    check_paths(n_paths)?;
    if !(rebalance_dt > 0.0 && rebalance_dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("rebalance_dt must be positive, got {rebalance_dt}")));
    }
    let initial_price = surface.price_at(0.0, s0, regime, 0.0)?;
    let horizon = contract.maturity;
    let steps = (horizon / rebalance_dt - 1e-9).ceil().max(1.0) as usize;
    let residuals: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|index| {
            let mut rng = path_rng(seed, index);
            let chain = simulate_chain(model, regime, 0.0, horizon, &mut rng)?;
            let mut s = s0;
            let mut log_discount = 0.0f64;
            let mut gains = 0.0;
            let mut t = 0.0;
            let mut seg = 0;
            let mut k = 1;
            while t < horizon {
                let grid_time = if k >= steps { horizon } else { k as f64 * rebalance_dt };
                let jump_time = chain.jump_times.get(seg + 1).copied().unwrap_or(f64::INFINITY);
                let b = grid_time.min(jump_time);
                let i = chain.regimes[seg];
                let xi = table.delta(t, s, i, chain.age_at(t));
                let (r, sigma) = (model.r[i], model.sigma[i]);
                let dt = b - t;
                let z: f64 = rng.sample(StandardNormal);
                let discounted_before = s * (-log_discount).exp();
                s *= ((r - 0.5 * sigma * sigma) * dt + sigma * dt.sqrt() * z).exp();
                log_discount += r * dt;
                gains += xi * (s * (-log_discount).exp() - discounted_before);
                if jump_time <= b {
                    seg += 1;
                }
                if grid_time <= b {
                    k += 1;
                }
                t = b;
            }
            let claim = (-log_discount).exp() * contract.payoff(s);
            Ok(claim - initial_price - gains)
        })
        .collect::<Result<_>>()?;
    let (mean, variance, variance_se) = moments(&residuals);
    Ok(BacktestReport {
        mean,
        se: (variance / n_paths as f64).sqrt(),
        variance,
        variance_se,
        n: n_paths,
        seed,
        rebalance_dt,
        initial_price,
    })
}

/// Mean-variance tradeoff `K̂_t = ∫_0^t ((μ(X_u) − r(X_u)) / σ(X_u))² du` along a path.
pub fn mvt_process(model: &RegimeModel, path: &PathRecord, t: f64) -> Result<f64> {
    if !(t >= 0.0 && t <= path.horizon) {
        return Err(Error::Domain(format!("t={t} outside [0, {}]", path.horizon)));
    }
    Ok(path.integrate(t, |i| ((model.mu[i] - model.r[i]) / model.sigma[i]).powi(2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regime_model::HazardFn;

    fn markov() -> RegimeModel {
        RegimeModel::fully_connected(vec![0.05, 0.05], vec![0.2, 0.4], vec![0.08, 0.1], HazardFn::constant(1.0))
    }

    #[test]
    fn poisson_jump_count() {
        let model = markov();
        let n = 100_000;
        let total: usize = (0..n)
            .map(|q| simulate_chain(&model, 0, 0.0, 1.0, &mut path_rng(7, q)).unwrap().jump_count())
            .sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn older_weibull_sojourns_are_shorter() {
        let model = RegimeModel::fully_connected(vec![0.05; 2], vec![0.2; 2], vec![0.0; 2], HazardFn::weibull(1.0, 2.0));
        let n = 100_000;
        let mean_stay = |y0: f64| {
            let mut rng = path_rng(3, 0);
            (0..n).map(|_| model.sample_sojourn(0, y0, open_uniform(&mut rng)).unwrap()).sum::<f64>() / n as f64
        };
        assert!(mean_stay(2.0) < mean_stay(0.0));
    }

    #[test]
    fn empty_horizon_has_no_jumps() {
        let path = simulate_chain(&markov(), 1, 0.3, 0.0, &mut path_rng(1, 1)).unwrap();
        assert_eq!(path.jump_count(), 0);
        assert_eq!(path.regime_at(0.0), 1);
        assert_eq!(path.age_at(0.0), 0.3);
    }

    #[test]
    fn path_structure_invariants() {
        let model = markov();
        for q in 0..200 {
            let mut rng = path_rng(11, q);
            let chain = simulate_chain(&model, 0, 0.0, 2.0, &mut rng).unwrap();
            let path = simulate_stock(&model, &chain, 100.0, Measure::Physical, &mut rng, &[0.5, 1.5]).unwrap();
            for w in path.regimes.windows(2) {
                assert_ne!(w[0], w[1]);
            }
            for w in path.jump_times.windows(2) {
                assert!(w[0] < w[1]);
                assert_eq!(path.age_at(w[1]), 0.0);
                assert_eq!(path.regime_at(w[1]), path.regimes[path.segment(w[1])]);
            }
            assert!(path.stock.iter().all(|&(_, s)| s > 0.0));
            assert!(path.stock_at(0.5).is_some() && path.stock_at(2.0).is_some());
            let mut previous = 0.0;
            for q in 0..=20 {
                let k = mvt_process(&model, &path, q as f64 * 0.1).unwrap();
                assert!(k >= previous);
                previous = k;
            }
            assert!(previous <= 2.0 * 0.25f64.powi(2) + 1e-12);
        }
    }

    #[test]
    fn single_segment_observation_is_one_lognormal_step() {
        let model = markov();
        let chain = PathRecord {
            horizon: 1.0,
            jump_times: vec![0.0],
            regimes: vec![0],
            initial_age: 0.0,
            stock: Vec::new(),
        };
        let mut rng = path_rng(5, 0);
        let path = simulate_stock(&model, &chain, 100.0, Measure::RiskNeutral, &mut rng, &[1.0]).unwrap();
        let mut replay = path_rng(5, 0);
        let z: f64 = replay.sample(StandardNormal);
        let expect = 100.0 * ((0.05 - 0.02) + 0.2 * z).exp();
        assert_eq!(path.stock, vec![(0.0, 100.0), (1.0, expect)]);
    }

    #[test]
    fn discounted_stock_is_a_martingale() {
        let model = markov();
        let observe = [0.25, 0.5, 1.0];
        let n = 100_000;
        let samples: Vec<[f64; 3]> = (0..n)
            .map(|q| {
                let mut rng = path_rng(21, q);
                let chain = simulate_chain(&model, 0, 0.0, 1.0, &mut rng).unwrap();
                let path = simulate_stock(&model, &chain, 100.0, Measure::RiskNeutral, &mut rng, &observe).unwrap();
                observe.map(|t| path.stock_at(t).unwrap() * (-path.discount_integral(&model, t)).exp())
            })
            .collect();
        for c in 0..3 {
            let column: Vec<f64> = samples.iter().map(|row| row[c]).collect();
            let e = estimate(&column, 21);
            assert!((e.mean - 100.0).abs() < 3.0 * e.se, "t={} mean={} se={}", observe[c], e.mean, e.se);
        }
    }

    #[test]
    fn mvt_single_regime_value() {
        let model = RegimeModel::fully_connected(vec![0.05; 2], vec![0.2; 2], vec![0.1; 2], HazardFn::constant(1.0));
        let path = simulate_chain(&model, 0, 0.0, 1.0, &mut path_rng(2, 0)).unwrap();
        assert!((mvt_process(&model, &path, 1.0).unwrap() - 0.0625).abs() < 1e-12);
        let flat = RegimeModel::fully_connected(vec![0.05; 2], vec![0.2, 0.3], vec![0.05; 2], HazardFn::constant(1.0));
        assert_eq!(mvt_process(&flat, &path, 0.7).unwrap(), 0.0);
        assert!(mvt_process(&model, &path, 1.5).is_err());
    }

    #[test]
    fn zero_strike_prices_the_spot() {
        let contract = ContractSpec { strike: 0.0, maturity: 1.0 };
        let e = mc_price(&markov(), &contract, StartState::at_inception(100.0, 0), 20_000, 4).unwrap();
        assert!((e.mean - 100.0).abs() < 3.0 * e.se);
        assert!(mc_price(&markov(), &contract, StartState::at_inception(100.0, 0), 10, 4).is_err());
    }

    #[test]
    fn identical_regimes_match_black_scholes() {
        let model = RegimeModel::fully_connected(vec![0.05; 2], vec![0.2; 2], vec![0.0; 2], HazardFn::weibull(1.0, 2.0));
        let contract = ContractSpec::new(100.0, 1.0).unwrap();
        let e = mc_price(&model, &contract, StartState::at_inception(100.0, 1), 50_000, 9).unwrap();
        let bs = crate::bsm_kernel::bs_call(100.0, 100.0, 0.05, 0.2, 1.0);
        assert!((e.mean - bs).abs() < 3.0 * e.se, "{} vs {bs}", e.mean);
    }

    #[test]
    fn standard_error_scales_with_path_count() {
        let contract = ContractSpec::new(100.0, 1.0).unwrap();
        let se = |n| mc_price(&markov(), &contract, StartState::at_inception(100.0, 0), n, 13).unwrap().se;
        let (a, b, c) = (se(10_000), se(40_000), se(160_000));
        for ratio in [a / b, b / c] {
            assert!((ratio / 2.0 - 1.0).abs() < 0.2, "{ratio}");
        }
    }

    #[test]
    fn estimates_do_not_depend_on_thread_count() {
        let contract = ContractSpec::new(100.0, 1.0).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| mc_price(&markov(), &contract, StartState::at_inception(100.0, 0), 5_000, 99).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn compensated_sum_is_exact_on_cancellation() {
        assert_eq!(compensated_sum([1e16, 1.0, -1e16].into_iter()), 1.0);
    }
}
