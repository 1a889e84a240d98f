//! Semi-Markov regime specification.
//!
//! A regime model is described by its transition hazards `λ_ij(y)`, the
//! instantaneous rate of moving from regime `i` to regime `j` after spending
//! an age `y` in `i`. Everything else is derived from them:
//!
//! - cumulative hazard `Λ_i(y) = Σ_{j≠i} ∫_0^y λ_ij`,
//! - holding-time law `F(y|i) = 1 − exp(−Λ_i(y))` and its density `f(y|i)`,
//! - age-dependent jump kernel `p_ij(y) = λ_ij(y) / Σ_{l≠i} λ_il(y)`.
//!
//! Hazards come from two closed-form families (constant and Weibull), so the
//! cumulative hazard and the sojourn inversion never need quadrature except
//! for rows that mix families.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance of the sojourn root-finder, measured in Λ-space.
const SOJOURN_TOL: f64 = 1e-12;
const SOJOURN_MAX_ITER: usize = 200;

/// A transition hazard `λ(y)` as a function of the age `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum HazardFn {
    /// `λ(y) = rate`. Recovers the Markov-chain case.
    Constant { rate: f64 },
    /// `λ(y) = scale · shape · y^(shape−1)`, cumulative `scale · y^shape`.
    Weibull { scale: f64, shape: f64 },
}

impl HazardFn {
    pub fn constant(rate: f64) -> Self {
        HazardFn::Constant { rate }
    }

    pub fn weibull(scale: f64, shape: f64) -> Self {
        HazardFn::Weibull { scale, shape }
    }

    /// Hazard value at age `y`. Infinite at `y = 0` for Weibull shapes below one.
    pub fn rate(&self, y: f64) -> f64 {
        match *self {
            HazardFn::Constant { rate } => rate,
            HazardFn::Weibull { scale, shape } => {
                if shape == 1.0 {
                    scale
                } else if y == 0.0 {
                    if shape > 1.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    scale * shape * y.powf(shape - 1.0)
                }
            }
        }
    }

    /// Closed-form `∫_0^y λ`.
    pub fn cumulative(&self, y: f64) -> f64 {
        match *self {
            HazardFn::Constant { rate } => rate * y,
            HazardFn::Weibull { scale, shape } => {
                if y == 0.0 {
                    0.0
                } else {
                    scale * y.powf(shape)
                }
            }
        }
    }

    /// Age `z ≥ y0` at which this single term accumulates `extra` more hazard.
    fn invert_from(&self, y0: f64, extra: f64) -> f64 {
        match *self {
            HazardFn::Constant { rate } => y0 + extra / rate,
            HazardFn::Weibull { scale, shape } => {
                ((self.cumulative(y0) + extra) / scale).powf(1.0 / shape)
            }
        }
    }

    fn parameter_problem(&self) -> Option<String> {
        match *self {
            HazardFn::Constant { rate } => {
                (!(rate.is_finite() && rate > 0.0)).then(|| format!("constant rate must be positive and finite, got {rate}"))
            }
            HazardFn::Weibull { scale, shape } => {
                if !(scale.is_finite() && scale > 0.0) {
                    Some(format!("weibull scale must be positive and finite, got {scale}"))
                } else if !(shape.is_finite() && shape > 0.0) {
                    Some(format!("weibull shape must be positive and finite, got {shape}"))
                } else {
                    None
                }
            }
        }
    }
}

/// One violated modelling assumption, keyed by the configuration path it refers to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub key: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

/// Outcome of [`RegimeModel::validate`]. Empty means the model is usable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn push(&mut self, key: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            key: key.into(),
            message: message.into(),
        });
    }

    pub fn extend(&mut self, other: ValidationReport) {
        self.violations.extend(other.violations);
    }

    /// Converts a non-empty report into an error.
    pub fn into_result(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            let joined: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
            Err(Error::ModelDefect(joined.join("; ")))
        }
    }
}

/// Market coefficients per regime plus the off-diagonal hazard matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeModel {
    /// Spot interest rate per regime.
    pub r: Vec<f64>,
    /// Volatility per regime.
    pub sigma: Vec<f64>,
    /// Physical drift per regime.
    pub mu: Vec<f64>,
    /// `hazards[i][j]` is `λ_ij`; the diagonal is always `None`.
    pub hazards: Vec<Vec<Option<HazardFn>>>,
}

impl RegimeModel {
    pub fn new(
        r: Vec<f64>,
        sigma: Vec<f64>,
        mu: Vec<f64>,
        hazards: Vec<Vec<Option<HazardFn>>>,
    ) -> Self {
        RegimeModel {
            r,
            sigma,
            mu,
            hazards,
        }
    }

    /// Model where every pair of distinct regimes is connected by the same hazard.
    pub fn fully_connected(r: Vec<f64>, sigma: Vec<f64>, mu: Vec<f64>, hazard: HazardFn) -> Self {
        let k = r.len();
        let hazards = (0..k)
            .map(|i| (0..k).map(|j| (i != j).then_some(hazard)).collect())
            .collect();
        RegimeModel::new(r, sigma, mu, hazards)
    }

    pub fn regime_count(&self) -> usize {
        self.r.len()
    }

    /// Whether all regimes share the same rate and volatility.
    pub fn has_identical_coefficients(&self) -> bool {
        self.r.iter().all(|&r| r == self.r[0]) && self.sigma.iter().all(|&s| s == self.sigma[0])
    }

    pub fn max_sigma(&self) -> f64 {
        self.sigma.iter().copied().fold(0.0, f64::max)
    }

    /// Checks positivity, shape consistency and irreducibility of the jump chain.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let k = self.r.len();
        if k < 2 {
            report.push("market.k", format!("at least two regimes required, got {k}"));
        }
        for (name, len) in [("sigma", self.sigma.len()), ("mu", self.mu.len())] {
            if len != k {
                report.push(format!("market.{name}"), format!("expected {k} entries, got {len}"));
            }
        }
        for (i, &r) in self.r.iter().enumerate() {
            if !(r.is_finite() && r >= 0.0) {
                report.push(format!("market.r[{}]", i + 1), format!("rate must be nonnegative, got {r}"));
            }
        }
        for (i, &s) in self.sigma.iter().enumerate() {
            if !(s.is_finite() && s > 0.0) {
                report.push(format!("market.sigma[{}]", i + 1), format!("sigma must be positive, got {s}"));
            }
        }
        for (i, &m) in self.mu.iter().enumerate() {
            if !m.is_finite() {
                report.push(format!("market.mu[{}]", i + 1), "drift must be finite");
            }
        }

        if self.hazards.len() != k {
            report.push(
                "market.hazards",
                format!("expected {k} rows, got {}; hazard matrix structure is incomplete", self.hazards.len()),
            );
            return report;
        }
        let mut structure_ok = true;
        for (i, row) in self.hazards.iter().enumerate() {
            if row.len() != k {
                report.push(
                    format!("market.hazards[{}]", i + 1),
                    format!("expected {k} entries, got {}", row.len()),
                );
                structure_ok = false;
                continue;
            }
            if row[i].is_some() {
                report.push(
                    format!("market.hazards[{}][{}]", i + 1, i + 1),
                    "diagonal hazard must be absent",
                );
            }
            let mut any = false;
            for (j, h) in row.iter().enumerate() {
                if let (Some(h), true) = (h, i != j) {
                    any = true;
                    if let Some(problem) = h.parameter_problem() {
                        report.push(format!("market.hazards[{}][{}]", i + 1, j + 1), problem);
                    }
                }
            }
            if !any {
                report.push(
                    format!("market.hazards[{}]", i + 1),
                    "regime has no outgoing hazard; total hazard must be positive",
                );
            }
        }
        if structure_ok && k >= 2 && !self.is_irreducible() {
            report.push(
                "market.hazards",
                "jump chain is not irreducible: some regime cannot be reached from another",
            );
        }
        report
    }

    /// Strong connectivity of the hazard support digraph.
    fn is_irreducible(&self) -> bool {
        let k = self.regime_count();
        let reach = |forward: bool| {
            let mut seen = vec![false; k];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(a) = stack.pop() {
                for b in 0..k {
                    let edge = if forward {
                        self.hazards[a][b].is_some()
                    } else {
                        self.hazards[b][a].is_some()
                    };
                    if a != b && edge && !seen[b] {
                        seen[b] = true;
                        stack.push(b);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }

    pub(crate) fn check_regime(&self, i: usize) -> Result<()> {
        if i < self.regime_count() {
            Ok(())
        } else {
            Err(Error::UnknownRegime {
                index: i,
                count: self.regime_count(),
            })
        }
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, &HazardFn)> {
        self.hazards[i]
            .iter()
            .enumerate()
            .filter_map(move |(j, h)| if j == i { None } else { h.as_ref().map(|h| (j, h)) })
    }

    /// `|λ_ii(y)|`, the total exit rate. No index check; used in hot loops.
    pub(crate) fn total_hazard_unchecked(&self, i: usize, y: f64) -> f64 {
        self.row(i).map(|(_, h)| h.rate(y)).sum()
    }

    pub(crate) fn hazard_unchecked(&self, i: usize, j: usize, y: f64) -> f64 {
        match (i != j).then(|| self.hazards[i][j]).flatten() {
            Some(h) => h.rate(y),
            None => 0.0,
        }
    }

    pub(crate) fn cumulative_unchecked(&self, i: usize, y: f64) -> f64 {
        self.row(i).map(|(_, h)| h.cumulative(y)).sum()
    }

    /// `λ_ij(y)`; zero where no hazard is supplied.
    pub fn hazard(&self, i: usize, j: usize, y: f64) -> Result<f64> {
        self.check_regime(i)?;
        self.check_regime(j)?;
        Ok(self.hazard_unchecked(i, j, y))
    }

    /// `Λ_i(y)`.
    pub fn cumulative_hazard(&self, i: usize, y: f64) -> Result<f64> {
        self.check_regime(i)?;
        check_age(y)?;
        Ok(self.cumulative_unchecked(i, y))
    }

    /// `1 − F(y|i) = exp(−Λ_i(y))`.
    pub fn survival(&self, i: usize, y: f64) -> Result<f64> {
        Ok((-self.cumulative_hazard(i, y)?).exp())
    }

    /// `(1 − F(y0+u|i)) / (1 − F(y0|i))`, computed without forming the ratio.
    pub fn conditional_survival(&self, i: usize, y0: f64, u: f64) -> Result<f64> {
        self.check_regime(i)?;
        check_age(y0)?;
        check_age(u)?;
        Ok(conditional_survival_unchecked(self, i, y0, u))
    }

    /// `f(y|i) = |λ_ii(y)| exp(−Λ_i(y))`.
    pub fn sojourn_density(&self, i: usize, y: f64) -> Result<f64> {
        self.check_regime(i)?;
        check_age(y)?;
        let total = self.total_hazard_unchecked(i, y);
        if !total.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sojourn density of regime {} is unbounded at age {y}",
                i + 1
            )));
        }
        Ok(total * (-self.cumulative_unchecked(i, y)).exp())
    }

    /// Row `p_i·(y)` of the age-dependent jump kernel.
    pub fn transition_prob(&self, i: usize, y: f64) -> Result<Vec<f64>> {
        self.check_regime(i)?;
        check_age(y)?;
        let k = self.regime_count();
        let rates: Vec<f64> = (0..k).map(|j| self.hazard_unchecked(i, j, y)).collect();
        let total: f64 = rates.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::ModelDefect(format!(
                "total hazard of regime {} at age {y} is {total}",
                i + 1
            )));
        }
        Ok(rates.into_iter().map(|r| r / total).collect())
    }

    /// Remaining holding time in regime `i` given current age `y0` and a
    /// uniform draw `u ∈ (0, 1]`: the `τ` with `Λ_i(y0+τ) = Λ_i(y0) − ln u`.
    pub fn sample_sojourn(&self, i: usize, y0: f64, u: f64) -> Result<f64> {
        self.check_regime(i)?;
        check_age(y0)?;
        if !(u > 0.0 && u <= 1.0) {
            return Err(Error::InvalidArgument(format!("uniform draw must lie in (0, 1], got {u}")));
        }
        let extra = -u.ln();
        if extra == 0.0 {
            return Ok(0.0);
        }
        self.invert_cumulative(i, y0, extra)
    }

    fn invert_cumulative(&self, i: usize, y0: f64, extra: f64) -> Result<f64> {
        let mut terms = self.row(i).map(|(_, h)| *h);
        let first = terms
            .next()
            .ok_or_else(|| Error::ModelDefect(format!("regime {} has no outgoing hazard", i + 1)))?;

        // Rows of a single family (and, for Weibull, a common shape) collapse to one term.
        let merged = self.row(i).map(|(_, h)| *h).try_fold(None::<HazardFn>, |acc, h| {
            match (acc, h) {
                (None, h) => Some(Some(h)),
                (Some(HazardFn::Constant { rate: a }), HazardFn::Constant { rate: b }) => {
                    Some(Some(HazardFn::Constant { rate: a + b }))
                }
                (
                    Some(HazardFn::Weibull { scale: a, shape: sa }),
                    HazardFn::Weibull { scale: b, shape: sb },
                ) if sa == sb => Some(Some(HazardFn::Weibull {
                    scale: a + b,
                    shape: sa,
                })),
                _ => None,
            }
        });
        if let Some(Some(single)) = merged {
            return Ok((single.invert_from(y0, extra) - y0).max(0.0));
        }

        // Mixed row: each term alone reaches the target no earlier than the sum,
        // so the smallest single-term inverse brackets the root from above.
        let mut hi = first.invert_from(y0, extra) - y0;
        for h in terms {
            hi = hi.min(h.invert_from(y0, extra) - y0);
        }
        let base = self.cumulative_unchecked(i, y0);
        let target = base + extra;
        let g = |tau: f64| self.cumulative_unchecked(i, y0 + tau) - target;
        let mut lo = 0.0;
        let mut tau = hi;
        for _ in 0..SOJOURN_MAX_ITER {
            let value = g(tau);
            if value.abs() <= SOJOURN_TOL {
                return Ok(tau);
            }
            if value > 0.0 {
                hi = tau;
            } else {
                lo = tau;
            }
            if hi - lo <= f64::EPSILON * hi.max(1.0) {
                return Ok(0.5 * (lo + hi));
            }
            let slope = self.total_hazard_unchecked(i, y0 + tau);
            let newton = tau - value / slope;
            tau = if newton.is_finite() && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        Err(Error::RootFinding { target, lo, hi })
    }
}

pub(crate) fn conditional_survival_unchecked(model: &RegimeModel, i: usize, y0: f64, u: f64) -> f64 {
    (-(model.cumulative_unchecked(i, y0 + u) - model.cumulative_unchecked(i, y0))).exp()
}

fn check_age(y: f64) -> Result<()> {
    if y.is_finite() && y >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("age must be finite and nonnegative, got {y}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_state(h: HazardFn) -> RegimeModel {
        RegimeModel::fully_connected(vec![0.05, 0.02], vec![0.2, 0.4], vec![0.05, 0.02], h)
    }

    fn three_state_mixed() -> RegimeModel {
        let w = Some(HazardFn::weibull(1.0, 2.0));
        let c = Some(HazardFn::constant(0.25));
        RegimeModel::new(
            vec![0.01; 3],
            vec![0.2; 3],
            vec![0.0; 3],
            vec![
                vec![None, w, c],
                vec![c, None, w],
                vec![w, c, None],
            ],
        )
    }

    #[test]
    fn validate_accepts_basic_model() {
        assert!(two_state(HazardFn::constant(0.5)).validate().is_empty());
    }

    #[test]
    fn validate_flags_zero_sigma() {
        let mut m = two_state(HazardFn::constant(0.5));
        m.sigma[1] = 0.0;
        let report = m.validate();
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].key, "market.sigma[2]");
        assert!(report.violations[0].message.contains("sigma must be positive"));
    }

    #[test]
    fn validate_flags_negative_rate_and_bad_hazard() {
        let mut m = two_state(HazardFn::weibull(-1.0, 2.0));
        m.r[0] = -0.01;
        let keys: Vec<_> = m.validate().violations.into_iter().map(|v| v.key).collect();
        assert!(keys.contains(&"market.r[1]".to_string()));
        assert!(keys.contains(&"market.hazards[1][2]".to_string()));
    }

    #[test]
    fn validate_flags_unreachable_state() {
        let c = Some(HazardFn::constant(1.0));
        let m = RegimeModel::new(
            vec![0.0; 3],
            vec![0.2; 3],
            vec![0.0; 3],
            vec![vec![None, None, c], vec![None, None, None], vec![c, None, None]],
        );
        let report = m.validate();
        assert!(report.violations.iter().any(|v| v.message.contains("irreducible")));
        assert!(report.violations.iter().any(|v| v.key == "market.hazards[2]"));
    }

    #[test]
    fn validate_flags_one_way_chain() {
        let c = Some(HazardFn::constant(1.0));
        let m = RegimeModel::new(
            vec![0.0; 3],
            vec![0.2; 3],
            vec![0.0; 3],
            vec![vec![None, c, None], vec![None, None, c], vec![None, c, None]],
        );
        assert!(m.validate().violations.iter().any(|v| v.message.contains("irreducible")));
    }

    #[test]
    fn validate_flags_missing_row() {
        let mut m = two_state(HazardFn::constant(1.0));
        m.hazards.pop();
        let report = m.validate();
        assert!(report.violations[0].message.contains("structure"));
    }

    #[test]
    fn cumulative_hazard_values() {
        let m = two_state(HazardFn::constant(0.5));
        assert_abs_diff_eq!(m.cumulative_hazard(0, 2.0).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(m.cumulative_hazard(1, 0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(three_state_mixed().cumulative_hazard(0, 2.0).unwrap(), 4.5, epsilon = 1e-14);
        assert!(matches!(m.cumulative_hazard(5, 1.0), Err(Error::UnknownRegime { .. })));
    }

    #[test]
    fn survival_and_density_values() {
        let m = two_state(HazardFn::constant(0.5));
        assert_abs_diff_eq!(m.survival(0, 2.0).unwrap(), (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(m.survival(0, 2.0).unwrap(), 0.367879, epsilon = 1e-6);
        assert_eq!(m.survival(0, 0.0).unwrap(), 1.0);
        assert_abs_diff_eq!(m.sojourn_density(0, 2.0).unwrap(), 0.183940, epsilon = 1e-6);

        let w = two_state(HazardFn::weibull(1.0, 2.0));
        assert_abs_diff_eq!(w.survival(0, 3.0).unwrap(), 1.2341e-4, epsilon = 1e-8);
        assert_abs_diff_eq!(w.sojourn_density(0, 1.0).unwrap(), 0.735759, epsilon = 1e-6);
    }

    #[test]
    fn constant_density_integrates_to_one() {
        let m = two_state(HazardFn::constant(0.5));
        // Composite Simpson on [0, 80]; the tail beyond carries e^{-40}.
        let n = 20_000;
        let h = 80.0 / n as f64;
        let mut acc = 0.0;
        for k in 0..=n {
            let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * m.sojourn_density(0, k as f64 * h).unwrap();
        }
        assert_abs_diff_eq!(acc * h / 3.0, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn transition_probabilities() {
        assert_eq!(two_state(HazardFn::weibull(1.0, 2.0)).transition_prob(0, 0.7).unwrap(), vec![0.0, 1.0]);

        let c1 = Some(HazardFn::constant(1.0));
        let c3 = Some(HazardFn::constant(3.0));
        let m = RegimeModel::new(
            vec![0.0; 3],
            vec![0.2; 3],
            vec![0.0; 3],
            vec![vec![None, c1, c3], vec![c1, None, c1], vec![c1, c1, None]],
        );
        let p = m.transition_prob(0, 1.3).unwrap();
        assert_eq!(p, vec![0.0, 0.25, 0.75]);

        let w = Some(HazardFn::weibull(1.0, 2.0));
        let c2 = Some(HazardFn::constant(2.0));
        let m = RegimeModel::new(
            vec![0.0; 3],
            vec![0.2; 3],
            vec![0.0; 3],
            vec![vec![None, w, c2], vec![c1, None, c1], vec![c1, c1, None]],
        );
        assert_abs_diff_eq!(m.transition_prob(0, 1.0).unwrap()[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn sojourn_inversion_closed_forms() {
        let m = two_state(HazardFn::constant(0.5));
        assert_abs_diff_eq!(m.sample_sojourn(0, 0.0, (-1.0f64).exp()).unwrap(), 2.0, epsilon = 1e-12);
        let tiny = m.sample_sojourn(0, 0.0, 1.0 - 1e-12).unwrap();
        assert!(tiny > 0.0 && tiny < 1e-11);

        let w = two_state(HazardFn::weibull(1.0, 2.0));
        assert_abs_diff_eq!(w.sample_sojourn(0, 1.0, (-3.0f64).exp()).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sojourn_inversion_mixed_row() {
        let m = three_state_mixed();
        for &(y0, u) in &[(0.0, 0.3), (0.5, 0.9), (2.0, 1e-6), (0.1, 0.999)] {
            let tau = m.sample_sojourn(0, y0, u).unwrap();
            let gained = m.cumulative_hazard(0, y0 + tau).unwrap() - m.cumulative_hazard(0, y0).unwrap();
            assert_abs_diff_eq!(gained, -f64::ln(u), epsilon = 1e-11);
        }
    }

    #[test]
    fn shape_below_one_is_accepted() {
        let m = two_state(HazardFn::weibull(0.8, 0.5));
        assert!(m.validate().is_empty());
        assert!(m.sojourn_density(0, 0.0).is_err());
        assert!(m.sojourn_density(0, 0.5).unwrap() > 0.0);
        let tau = m.sample_sojourn(0, 0.0, 0.5).unwrap();
        assert_abs_diff_eq!(0.8 * tau.sqrt(), 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn conditional_survival_matches_ratio() {
        let m = three_state_mixed();
        for &(y0, u) in &[(0.0, 0.5), (0.3, 0.2), (1.1, 0.05)] {
            let ratio = m.survival(0, y0 + u).unwrap() / m.survival(0, y0).unwrap();
            let direct = m.conditional_survival(0, y0, u).unwrap();
            assert!((ratio - direct).abs() <= 1e-14 * ratio.max(1e-300) + 1e-300);
        }
    }
}
