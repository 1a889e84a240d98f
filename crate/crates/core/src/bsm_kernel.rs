//! Per-regime Black–Scholes closed forms and the lognormal transition kernel.
//!
//! Within a single regime `i` the stock is a geometric Brownian motion with
//! rate `r(i)` and volatility `σ(i)`. After an elapsed time `v` the price
//! started at `s` has the lognormal density
//!
//! ```text
//! α(x; s, i, v) = exp(−β²/2) / (√(2π) · x · σ(i) · √v)
//! β(x, s, i, v) = (ln(x/s) − (r(i) − σ(i)²/2) v) / (σ(i) √v)
//! ```
//!
//! Expectations against `α` are computed by Gauss–Hermite quadrature in the
//! standardized variable `z = β`, i.e. `x = s · exp((r − σ²/2) v + σ √v z)`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::regime_model::RegimeModel;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function, `Φ(x) = erfc(−x/√2)/2`.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// `E[(X − K)⁺]` for lognormal `X` with mean `forward` and log-variance `total_var`.
pub fn lognormal_call(forward: f64, strike: f64, total_var: f64) -> f64 {
    if strike <= 0.0 {
        return forward;
    }
    if forward <= 0.0 {
        return 0.0;
    }
    if total_var <= 0.0 {
        return (forward - strike).max(0.0);
    }
    let sd = total_var.sqrt();
    let d1 = ((forward / strike).ln() + 0.5 * total_var) / sd;
    forward * norm_cdf(d1) - strike * norm_cdf(d1 - sd)
}

/// `N(d1)` of [`lognormal_call`], i.e. `∂/∂forward` of the call value.
pub fn lognormal_call_delta(forward: f64, strike: f64, total_var: f64) -> f64 {
    if strike <= 0.0 {
        return 1.0;
    }
    if total_var <= 0.0 {
        return if forward >= strike { 1.0 } else { 0.0 };
    }
    let sd = total_var.sqrt();
    norm_cdf(((forward / strike).ln() + 0.5 * total_var) / sd)
}

/// Black–Scholes call value with time to maturity `tau`.
pub fn bs_call(s: f64, strike: f64, r: f64, sigma: f64, tau: f64) -> f64 {
    if tau <= 0.0 {
        return (s - strike).max(0.0);
    }
    let disc = (-r * tau).exp();
    disc * lognormal_call(s / disc, strike, sigma * sigma * tau)
}

/// Black–Scholes call delta; the terminal kink is resolved to 1.
pub fn bs_delta(s: f64, strike: f64, r: f64, sigma: f64, tau: f64) -> f64 {
    let disc = (-r * tau.max(0.0)).exp();
    lognormal_call_delta(s / disc, strike, sigma * sigma * tau.max(0.0))
}

/// Black–Scholes problem for one regime: rate, volatility, strike, maturity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsParams {
    pub r: f64,
    pub sigma: f64,
    pub strike: f64,
    pub maturity: f64,
}

impl BsParams {
    pub fn new(r: f64, sigma: f64, strike: f64, maturity: f64) -> Result<Self> {
        if !(sigma > 0.0 && strike >= 0.0 && maturity > 0.0 && r.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "invalid Black–Scholes parameters r={r}, sigma={sigma}, K={strike}, T={maturity}"
            )));
        }
        Ok(BsParams {
            r,
            sigma,
            strike,
            maturity,
        })
    }

    fn check(&self, t: f64, s: f64) -> Result<()> {
        if !(s > 0.0) {
            return Err(Error::InvalidArgument(format!("spot must be positive, got {s}")));
        }
        if !(0.0..=self.maturity).contains(&t) {
            return Err(Error::Domain(format!("t={t} outside [0, {}]", self.maturity)));
        }
        Ok(())
    }

    /// `η(t, s)`: call value with time to maturity `T − t`.
    pub fn eta(&self, t: f64, s: f64) -> Result<f64> {
        self.check(t, s)?;
        Ok(bs_call(s, self.strike, self.r, self.sigma, self.maturity - t))
    }

    /// `∂η/∂s(t, s)`.
    pub fn eta_delta(&self, t: f64, s: f64) -> Result<f64> {
        self.check(t, s)?;
        Ok(bs_delta(s, self.strike, self.r, self.sigma, self.maturity - t))
    }
}

/// Rate and volatility of one regime: the parameters of the kernel `α`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lognormal {
    pub r: f64,
    pub sigma: f64,
}

impl Lognormal {
    pub fn new(r: f64, sigma: f64) -> Self {
        Lognormal { r, sigma }
    }

    pub fn for_regime(model: &RegimeModel, i: usize) -> Result<Self> {
        model.check_regime(i)?;
        Ok(Lognormal::new(model.r[i], model.sigma[i]))
    }

    /// Log-drift `r − σ²/2`.
    pub fn log_drift(&self) -> f64 {
        self.r - 0.5 * self.sigma * self.sigma
    }

    /// Price reached from `s` after `v` when the standardized variable equals `z`.
    pub fn price_at_score(&self, s: f64, v: f64, z: f64) -> f64 {
        s * (self.log_drift() * v + self.sigma * v.sqrt() * z).exp()
    }

    pub fn beta(&self, x: f64, s: f64, v: f64) -> Result<f64> {
        check_kernel_point(x, s, v)?;
        Ok(((x / s).ln() - self.log_drift() * v) / (self.sigma * v.sqrt()))
    }

    /// Analytic `∂β/∂v`.
    pub fn dbeta_dv(&self, x: f64, s: f64, v: f64) -> Result<f64> {
        check_kernel_point(x, s, v)?;
        let log_ratio = (x / s).ln();
        Ok(-(log_ratio + self.log_drift() * v) / (2.0 * self.sigma * v * v.sqrt()))
    }

    pub fn alpha(&self, x: f64, s: f64, v: f64) -> Result<f64> {
        let b = self.beta(x, s, v)?;
        Ok((-0.5 * b * b).exp() * FRAC_1_SQRT_2PI / (x * self.sigma * v.sqrt()))
    }

    /// `β ∂β/∂v + r β/(σ√v) + β²/(2v) − σ β/(2√v)`, which vanishes identically.
    ///
    /// Evaluated in double-double arithmetic from the f64 values of `ln(x/s)`
    /// and `√v`, so the result measures the algebra rather than f64 cancellation
    /// between terms of size `β²/v`.
    pub fn beta_identity_residual(&self, x: f64, s: f64, v: f64) -> Result<f64> {
        check_kernel_point(x, s, v)?;
        let log_ratio = Dd::from((x / s).ln());
        let sqrt_v = Dd::from(v.sqrt());
        let v = Dd::from(v);
        let r = Dd::from(self.r);
        let sigma = Dd::from(self.sigma);
        let half = Dd::from(0.5);
        let drift = r - half * sigma * sigma;
        let sig_sqrt_v = sigma * sqrt_v;
        let beta = (log_ratio - drift * v) / sig_sqrt_v;
        // ∂β/∂v = −drift/(σ√v) − β/(2v)
        let dbeta = Dd::from(0.0) - drift / sig_sqrt_v - beta / (Dd::from(2.0) * v);
        let residual = beta * dbeta + r * beta / sig_sqrt_v + beta * beta / (Dd::from(2.0) * v)
            - sigma * beta / (Dd::from(2.0) * sqrt_v);
        Ok(residual.hi + residual.lo)
    }
}

fn check_kernel_point(x: f64, s: f64, v: f64) -> Result<()> {
    if x > 0.0 && s > 0.0 && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "kernel requires positive x, s, v; got x={x}, s={s}, v={v}"
        )))
    }
}

/// Unevaluated sum of two f64 values.
#[derive(Debug, Clone, Copy)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl From<f64> for Dd {
    fn from(hi: f64) -> Self {
        Dd { hi, lo: 0.0 }
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

impl std::ops::Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (hi, lo) = two_sum(s, e + self.lo + o.lo);
        Dd { hi, lo }
    }
}

impl std::ops::Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl std::ops::Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl std::ops::Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        let (hi, lo) = two_sum(p, e + self.hi * o.lo + self.lo * o.hi);
        Dd { hi, lo }
    }
}

impl std::ops::Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o * Dd::from(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::from(q2);
        let q3 = r.hi / o.hi;
        let (hi, lo) = two_sum(q1, q2);
        Dd::from(hi) + Dd::from(lo + q3)
    }
}

/// Gauss–Hermite rule for the standard normal weight: `E[g(Z)] ≈ Σ w_q g(z_q)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Builds the rule from the eigen-decomposition of the Jacobi matrix of the
    /// probabilists' Hermite recurrence, then polishes each node with Newton
    /// steps and recomputes the weights from the Christoffel function.
    pub fn new(order: usize) -> Result<Self> {
        if order < 1 {
            return Err(Error::InvalidArgument("Gauss–Hermite order must be at least 1".into()));
        }
        let n = order;
        let mut diag = vec![0.0; n];
        let mut off: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).chain(std::iter::once(0.0)).collect();
        let mut first_row = vec![0.0; n];
        first_row[0] = 1.0;
        tridiagonal_ql(&mut diag, &mut off, &mut first_row)?;

        let mut pairs: Vec<(f64, f64)> = diag.into_iter().zip(first_row.into_iter().map(|z| z * z)).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();

        for x in nodes.iter_mut() {
            for _ in 0..3 {
                let (pn, pn1, _) = orthonormal_hermite(n, *x);
                let deriv = (n as f64).sqrt() * pn1;
                if deriv == 0.0 {
                    break;
                }
                let step = pn / deriv;
                *x -= step;
                if step.abs() <= 1e-16 * x.abs().max(1.0) {
                    break;
                }
            }
        }
        for q in 0..n / 2 {
            let m = 0.5 * (nodes[n - 1 - q] - nodes[q]);
            nodes[q] = -m;
            nodes[n - 1 - q] = m;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        let mut weights: Vec<f64> = nodes.iter().map(|&x| 1.0 / orthonormal_hermite(n, x).2).collect();
        let total: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= total;
        }
        for q in 0..n / 2 {
            let w = 0.5 * (weights[q] + weights[n - 1 - q]);
            weights[q] = w;
            weights[n - 1 - q] = w;
        }
        Ok(GaussHermite { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn expectation(&self, mut g: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&z, &w)| w * g(z)).sum()
    }
}

/// Returns `(p_n(x), p_{n−1}(x), Σ_{k<n} p_k(x)²)` for the orthonormal
/// probabilists' Hermite polynomials.
fn orthonormal_hermite(n: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    let mut sum_sq = 0.0;
    for k in 0..n {
        sum_sq += cur * cur;
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (cur, prev, sum_sq)
}

/// Implicit QL on a symmetric tridiagonal matrix, tracking only the first
/// component of each eigenvector.
fn tridiagonal_ql(d: &mut [f64], e: &mut [f64], z0: &mut [f64]) -> Result<()> {
    let n = d.len();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::SolverDefect("tridiagonal QL failed to converge".into()));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut deflated = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                let f = z0[i + 1];
                z0[i + 1] = s * z0[i] + c * f;
                z0[i] = c * z0[i] - s * f;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Shared, lazily built Gauss–Hermite rule of the given order.
pub fn gauss_hermite(order: usize) -> Result<Arc<GaussHermite>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().expect("rule cache poisoned").get(&order) {
        return Ok(Arc::clone(rule));
    }
    let rule = Arc::new(GaussHermite::new(order)?);
    let mut guard = cache.lock().expect("rule cache poisoned");
    Ok(Arc::clone(guard.entry(order).or_insert(rule)))
}

/// `∫_0^∞ g(x) α(x; s, i, v) dx` by Gauss–Hermite quadrature of the given order.
pub fn lognormal_expectation(
    g: impl FnMut(f64) -> f64,
    s: f64,
    kernel: Lognormal,
    v: f64,
    order: usize,
) -> Result<f64> {
    if !(s > 0.0 && v > 0.0) {
        return Err(Error::InvalidArgument(format!("need s > 0 and v > 0, got s={s}, v={v}")));
    }
    let rule = gauss_hermite(order)?;
    let mut g = g;
    Ok(rule.expectation(|z| g(kernel.price_at_score(s, v, z))))
}

/// Closed form of `∫ η_j(t+v, x) α(x; s, i, v) dx` where `η_j` is the call value
/// of a regime with coefficients `target` and `tau_after` time to maturity.
///
/// Composing the two lognormal steps gives a single lognormal with mean
/// `s·exp(r_i v + r_j τ)` and log-variance `σ_i² v + σ_j² τ`.
pub fn eta_kernel_expectation(
    s: f64,
    strike: f64,
    kernel: Lognormal,
    v: f64,
    target: Lognormal,
    tau_after: f64,
) -> f64 {
    let forward = s * (kernel.r * v + target.r * tau_after).exp();
    let var = kernel.sigma * kernel.sigma * v + target.sigma * target.sigma * tau_after;
    (-target.r * tau_after).exp() * lognormal_call(forward, strike, var)
}

/// `∂/∂s` of [`eta_kernel_expectation`].
pub fn eta_kernel_expectation_delta(
    s: f64,
    strike: f64,
    kernel: Lognormal,
    v: f64,
    target: Lognormal,
    tau_after: f64,
) -> f64 {
    let forward = s * (kernel.r * v + target.r * tau_after).exp();
    let var = kernel.sigma * kernel.sigma * v + target.sigma * target.sigma * tau_after;
    (kernel.r * v).exp() * lognormal_call_delta(forward, strike, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Independent oracle for Φ: composite Simpson of the density from 0.
    fn cdf_by_quadrature(x: f64) -> f64 {
        let n = 20_000;
        let h = x / n as f64;
        let mut acc = 0.0;
        for k in 0..=n {
            let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * norm_pdf(k as f64 * h);
        }
        0.5 + acc * h / 3.0
    }

    #[test]
    fn cdf_matches_quadrature_oracle() {
        for &x in &[-3.0, -1.2, -0.1, 0.35, 0.9, 2.5] {
            assert_abs_diff_eq!(norm_cdf(x), cdf_by_quadrature(x), epsilon = 1e-14);
        }
        assert_eq!(norm_cdf(0.0), 0.5);
        assert!(norm_cdf(-40.0) >= 0.0 && norm_cdf(-40.0) < 1e-300);
    }

    #[test]
    fn eta_reference_values() {
        let p = BsParams::new(0.05, 0.2, 100.0, 1.0).unwrap();
        assert_eq!(p.eta(1.0, 150.0).unwrap(), 50.0);
        // s·Φ(d1) − K e^{−r}Φ(d2) with d1 = 0.35, d2 = 0.15, Φ via the quadrature oracle.
        let oracle = 100.0 * cdf_by_quadrature(0.35) - 100.0 * (-0.05f64).exp() * cdf_by_quadrature(0.15);
        assert_abs_diff_eq!(p.eta(0.0, 100.0).unwrap(), oracle, epsilon = 1e-10);
        assert_abs_diff_eq!(p.eta(0.0, 100.0).unwrap(), 10.450584, epsilon = 1e-6);
        assert_abs_diff_eq!(p.eta_delta(0.0, 100.0).unwrap(), cdf_by_quadrature(0.35), epsilon = 1e-12);
        assert_abs_diff_eq!(p.eta_delta(0.0, 100.0).unwrap(), 0.636831, epsilon = 1e-6);
        assert!(p.eta(0.0, 0.0).is_err());
    }

    #[test]
    fn eta_limits() {
        let p = BsParams::new(0.05, 0.2, 100.0, 1.0).unwrap();
        assert_abs_diff_eq!(p.eta_delta(0.0, 1e8).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.eta_delta(0.0, 1e-3).unwrap(), 0.0, epsilon = 1e-12);
        assert_eq!(p.eta_delta(1.0, 100.0).unwrap(), 1.0);
        assert_eq!(p.eta_delta(1.0, 99.0).unwrap(), 0.0);
        let zero_strike = BsParams::new(0.05, 0.2, 0.0, 1.0).unwrap();
        for &t in &[0.0, 0.4, 1.0] {
            assert_abs_diff_eq!(zero_strike.eta(t, 123.0).unwrap(), 123.0, epsilon = 1e-12);
        }
        for &s in &[20.0, 80.0, 100.0, 130.0, 400.0] {
            let v = p.eta(0.3, s).unwrap();
            assert!(v >= (s - 100.0 * (-0.05f64 * 0.7).exp()).max(0.0) - 1e-12 && v <= s);
        }
    }

    #[test]
    fn eta_monotone_and_convex_on_grid() {
        let p = BsParams::new(0.03, 0.3, 100.0, 2.0).unwrap();
        for &t in &[0.0, 1.0, 1.9, 1.999] {
            let vals: Vec<f64> = (1..400).map(|k| p.eta(t, k as f64 * 0.5).unwrap()).collect();
            for w in vals.windows(3) {
                assert!(w[1] >= w[0] - 1e-13);
                assert!(w[2] - 2.0 * w[1] + w[0] >= -1e-9 * 100.0);
            }
        }
    }

    #[test]
    fn beta_alpha_basics() {
        let k = Lognormal::new(0.05, 0.3);
        let (s, v) = (2.0, 0.7);
        let x = s * (k.log_drift() * v).exp();
        assert_abs_diff_eq!(k.beta(x, s, v).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            k.alpha(x, s, v).unwrap(),
            FRAC_1_SQRT_2PI / (x * 0.3 * v.sqrt()),
            epsilon = 1e-15
        );
        assert_eq!(k.beta_identity_residual(x, s, v).unwrap().abs() < 1e-14, true);
        assert!(k.alpha(0.0, s, v).is_err());
        assert!(k.beta(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn alpha_normalizes_by_independent_quadrature() {
        // Simpson in u = ln x over ±12 standard deviations.
        let k = Lognormal::new(0.04, 0.25);
        let (s, v) = (3.0f64, 1.5);
        let centre = s.ln() + k.log_drift() * v;
        let width = 12.0 * k.sigma * v.sqrt();
        let n = 20_000;
        let h = 2.0 * width / n as f64;
        let (mut mass, mut mean) = (0.0, 0.0);
        for q in 0..=n {
            let u = centre - width + q as f64 * h;
            let x = u.exp();
            let w = if q == 0 || q == n { 1.0 } else if q % 2 == 1 { 4.0 } else { 2.0 };
            let dens = k.alpha(x, s, v).unwrap() * x;
            mass += w * dens;
            mean += w * dens * (1.0 + x);
        }
        assert_abs_diff_eq!(mass * h / 3.0, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(mean * h / 3.0, 1.0 + s * (k.r * v).exp(), epsilon = 1e-9);
    }

    #[test]
    fn beta_derivative_matches_finite_difference() {
        let k = Lognormal::new(0.05, 0.35);
        for &(x, s, v) in &[(1.3, 0.8, 0.5), (0.2, 5.0, 2.0), (9.0, 0.5, 7.5)] {
            let h = 1e-6;
            let fd = (k.beta(x, s, v + h).unwrap() - k.beta(x, s, v - h).unwrap()) / (2.0 * h);
            let an = k.dbeta_dv(x, s, v).unwrap();
            assert!((fd - an).abs() / an.abs() < 1e-6, "fd={fd} an={an}");
        }
    }

    #[test]
    fn gauss_hermite_moments() {
        for order in [1usize, 2, 5, 16, 64, 128] {
            let rule = gauss_hermite(order).unwrap();
            assert_abs_diff_eq!(rule.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
            let max_deg = 2 * order - 1;
            // E[Z^{2m}] = (2m−1)!!
            let mut double_factorial = 1.0;
            for m in 1..=(max_deg / 2).min(12) {
                double_factorial *= (2 * m - 1) as f64;
                let got = rule.expectation(|z| z.powi(2 * m as i32));
                assert!((got - double_factorial).abs() <= 1e-11 * double_factorial, "order {order} m {m}");
                assert!(rule.expectation(|z| z.powi(2 * m as i32 - 1)).abs() < 1e-11 * double_factorial);
            }
        }
        assert!(GaussHermite::new(0).is_err());
    }

    #[test]
    fn lognormal_expectation_identities() {
        let k = Lognormal::new(0.05, 0.2);
        let (s, v) = (100.0, 0.8);
        assert_abs_diff_eq!(lognormal_expectation(|_| 1.0, s, k, v, 64).unwrap(), 1.0, epsilon = 1e-15);
        for order in [5, 16, 64] {
            let got = lognormal_expectation(|x| x, s, k, v, order).unwrap();
            let tol = if order < 10 { 1e-9 } else { 1e-13 };
            assert_abs_diff_eq!(got, s * (k.r * v).exp(), epsilon = tol * s);
        }
        let affine = lognormal_expectation(|x| 3.0 - 0.5 * x, 2.0, k, v, 64).unwrap();
        assert_abs_diff_eq!(affine, 3.0 - (k.r * v).exp(), epsilon = 1e-12);

        // Semigroup: E[η(t+v, X)] = e^{rv} η(t, s).
        let p = BsParams::new(0.05, 0.2, 100.0, 1.0).unwrap();
        let (t, v) = (0.1, 0.5);
        let got = lognormal_expectation(|x| p.eta(t + v, x).unwrap(), s, k, v, 64).unwrap();
        assert_abs_diff_eq!(got, (k.r * v).exp() * p.eta(t, s).unwrap(), epsilon = 1e-8);
        assert!(lognormal_expectation(|x| x, s, k, v, 0).is_err());
    }

    #[test]
    fn kernel_expectation_closed_form_matches_quadrature() {
        let ki = Lognormal::new(0.03, 0.15);
        let kj = Lognormal::new(0.06, 0.45);
        let (s, strike, v, tau) = (90.0, 100.0, 0.4, 0.5);
        let quad = lognormal_expectation(|x| bs_call(x, strike, kj.r, kj.sigma, tau), s, ki, v, 128).unwrap();
        let closed = eta_kernel_expectation(s, strike, ki, v, kj, tau);
        assert_abs_diff_eq!(quad, closed, epsilon = 1e-9);

        let h = 1e-4 * s;
        let fd = (eta_kernel_expectation(s + h, strike, ki, v, kj, tau)
            - eta_kernel_expectation(s - h, strike, ki, v, kj, tau))
            / (2.0 * h);
        assert_abs_diff_eq!(eta_kernel_expectation_delta(s, strike, ki, v, kj, tau), fd, epsilon = 1e-8);
    }

    #[test]
    fn identity_residual_at_random_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let k = Lognormal::new(0.05, 0.4);
        for _ in 0..100 {
            let (x, s, v) = (rng.gen_range(0.1..10.0), rng.gen_range(0.1..10.0), rng.gen_range(0.1..10.0));
            assert!(k.beta_identity_residual(x, s, v).unwrap().abs() < 1e-12);
        }
    }
}
