//! Volterra fixed-point pricer.
//!
//! The price `φ(t, s, i, y)` is the fixed point of
//!
//! ```text
//! φ(t,s,i,y) = S_i(y, T−t) η_i(t,s)
//!            + ∫_0^{T−t} e^{−r_i v} Σ_{j≠i} λ_ij(y+v) S_i(y, v) E_i[φ(t+v, X_v, j, 0) | X_0 = s] dv
//! ```
//!
//! with `S_i(y, u) = exp(−(Λ_i(y+u) − Λ_i(y)))` the conditional survival of the
//! current sojourn and `E_i` the lognormal kernel of regime `i`. The integral
//! only ever touches the age-zero slice `φ(·, ·, j, 0)`, so the fixed point is
//! solved on that slice alone; any other age is one application of the
//! right-hand side away.
//!
//! Numerically the slice lives on a uniform time grid and a uniform log-price
//! grid. The `v`-integral uses the time-grid offsets as quadrature nodes, so
//! no time interpolation is needed inside the iteration. Each inner
//! expectation splits `φ_j = η_j + (φ_j − η_j)`: the Black–Scholes part has a
//! closed form under the kernel and only the regime-switching deviation goes
//! through Gauss–Hermite quadrature and monotone cubic interpolation.

use std::borrow::Cow;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bsm_kernel::{
    bs_call, bs_delta, eta_kernel_expectation, eta_kernel_expectation_delta, gauss_hermite, norm_pdf, Lognormal,
};
use crate::error::{Error, Result};
use crate::interp::{hermite_basis, hermite_eval, hermite_eval_derivative, smooth_slopes, UniformGrid};
use crate::regime_model::{conditional_survival_unchecked, RegimeModel};

/// Envelope slack allowed before a bound violation counts as a defect.
pub const CLIP_TOL: f64 = 1e-9;
/// Quadrature nodes lighter than this are dropped from the solver's rule.
const MIN_NODE_WEIGHT: f64 = 1e-22;
/// Kernels at least this many grid steps wide are integrated on the grid lattice.
const LATTICE_MIN_SPREAD: f64 = 1.25;
/// Lattice kernels are truncated this many standard deviations from their mean.
const LATTICE_HALF_WIDTH: f64 = 9.0;
/// Grid-snapping tolerance, in units of the grid step.
const SNAP_TOL: f64 = 1e-10;
const MAX_ITER_CAP: usize = 10_000;

/// European call contract.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractSpec {
    pub strike: f64,
    pub maturity: f64,
}

impl ContractSpec {
    pub fn new(strike: f64, maturity: f64) -> Result<Self> {
        let c = ContractSpec { strike, maturity };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Err(Error::InvalidArgument(format!("strike must be positive, got {}", self.strike)));
        }
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return Err(Error::InvalidArgument(format!("maturity must be positive, got {}", self.maturity)));
        }
        Ok(())
    }

    /// Errors unless `s > 0` and `0 ≤ y ≤ t ≤ T`.
    pub fn check_point(&self, t: f64, s: f64, y: f64) -> Result<()> {
        let maturity = self.maturity;
        let eps = 1e-12 * maturity;
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Domain(format!("spot must be positive, got {s}")));
        }
        if !(t >= -eps && t <= maturity + eps) {
            return Err(Error::Domain(format!("t={t} outside [0, {maturity}]")));
        }
        if !(y >= 0.0 && y <= t + eps) {
            return Err(Error::Domain(format!("age y={y} must satisfy 0 ≤ y ≤ t={t}")));
        }
        Ok(())
    }

    pub fn payoff(&self, s: f64) -> f64 {
        (s - self.strike).max(0.0)
    }
}

/// Discretization and stopping parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Time nodes, uniform on `[0, T]`.
    pub n_t: usize,
    /// Log-price nodes.
    pub n_s: usize,
    /// Half-width of the log-price grid in units of `max σ · √T` around `ln K`.
    pub s_width: f64,
    /// Gauss–Hermite order of the inner expectations.
    pub quad_order: usize,
    /// Stopping tolerance on `max |ΔG| / (1 + s)`.
    pub tol: f64,
    /// Iteration cap; derived from the contraction estimate when absent.
    pub max_iter: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            n_t: 101,
            n_s: 201,
            s_width: 6.0,
            quad_order: 64,
            tol: 1e-8,
            max_iter: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n_t < 3 {
            return bad(format!("solver.n_t must be at least 3, got {}", self.n_t));
        }
        if self.n_s < 16 {
            return bad(format!("solver.n_s must be at least 16, got {}", self.n_s));
        }
        if !(self.s_width > 0.0 && self.s_width.is_finite()) {
            return bad(format!("solver.s_width must be positive, got {}", self.s_width));
        }
        if self.quad_order < 1 {
            return bad("solver.quad_order must be at least 1".into());
        }
        if !(self.tol > 0.0) {
            return bad(format!("solver.tol must be positive, got {}", self.tol));
        }
        Ok(())
    }
}

/// Starting iterate of the Picard iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialGuess {
    /// Per-regime Black–Scholes prices.
    Bsm,
    Zero,
    /// `G(t, s) = s`.
    Spot,
}

/// Supremum bound on the Picard contraction factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionEstimate {
    pub value: f64,
    pub warning: Option<String>,
}

/// `max_i sup_{0≤y≤t≤T} (F(y+T−t|i) − F(y|i)) / (1 − F(y|i))` over a uniform grid.
pub fn estimate_contraction(model: &RegimeModel, maturity: f64) -> ContractionEstimate {
    const NODES: usize = 401;
    let mut worst: f64 = 0.0;
    for i in 0..model.regime_count() {
        for a in 0..NODES {
            let t = maturity * a as f64 / (NODES - 1) as f64;
            for b in 0..=a {
                let y = maturity * b as f64 / (NODES - 1) as f64;
                let window = maturity - t;
                let jumped = -(-(model.cumulative_unchecked(i, y + window) - model.cumulative_unchecked(i, y))).exp_m1();
                worst = worst.max(jumped);
            }
        }
    }
    let warning = (worst > 0.999)
        .then(|| format!("contraction estimate {worst:.6} is close to 1; expect slow convergence"));
    ContractionEstimate { value: worst, warning }
}

/// Iteration record of a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    /// Weighted sup-norm of the last update.
    pub final_residual: f64,
    pub contraction: f64,
    /// `‖G^{n+1} − G^n‖` for every iteration.
    pub diff_history: Vec<f64>,
    pub warning: Option<String>,
}

impl Convergence {
    /// Successive ratios `‖G^{n+1}−G^n‖ / ‖G^n−G^{n−1}‖`; entry `0` belongs to `n = 1`.
    pub fn error_ratios(&self) -> Vec<f64> {
        self.diff_history.windows(2).map(|w| w[1] / w[0]).collect()
    }
}

/// Tensor-product grid shared by the solver and the surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub times: UniformGrid,
    pub log_s: UniformGrid,
    pub regimes: usize,
}

impl Grid {
    pub fn new(model: &RegimeModel, contract: &ContractSpec, config: &SolverConfig) -> Self {
        let half = config.s_width * model.max_sigma() * contract.maturity.sqrt();
        let centre = contract.strike.ln();
        Grid {
            times: UniformGrid::new(0.0, contract.maturity, config.n_t),
            log_s: UniformGrid::new(centre - half, centre + half, config.n_s),
            regimes: model.regime_count(),
        }
    }

    pub fn n_t(&self) -> usize {
        self.times.len
    }

    pub fn n_s(&self) -> usize {
        self.log_s.len
    }

    /// Index of the maturity node.
    pub fn last(&self) -> usize {
        self.times.len - 1
    }

    pub fn slice_len(&self) -> usize {
        self.regimes * self.n_t() * self.n_s()
    }

    /// Flat index of `(regime, time node, price node)`.
    #[inline]
    pub fn idx(&self, i: usize, n: usize, m: usize) -> usize {
        (i * self.n_t() + n) * self.n_s() + m
    }

    pub fn time(&self, n: usize) -> f64 {
        self.times.node(n)
    }

    pub fn spot(&self, m: usize) -> f64 {
        self.log_s.node(m).exp()
    }

    /// Number of `(n, kk)` pairs with `n + kk ≤ last`.
    fn pair_count(&self) -> usize {
        let p = self.n_t();
        p * (p + 1) / 2
    }

    #[inline]
    fn pair(&self, n: usize, kk: usize) -> usize {
        let p = self.n_t();
        n * p - n * (n.saturating_sub(1)) / 2 + kk
    }
}

/// Composite Newton–Cotes weights for `panels` equal panels of width `h`:
/// Simpson on pairs, a 3/8 tail for odd counts, trapezoid for a single panel.
pub(crate) fn composite_weights(panels: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; panels + 1];
    match panels {
        0 => {}
        1 => {
            w[0] = 0.5 * h;
            w[1] = 0.5 * h;
        }
        _ => {
            let simpson_panels = if panels % 2 == 0 { panels } else { panels - 3 };
            for p in (0..simpson_panels).step_by(2) {
                w[p] += h / 3.0;
                w[p + 1] += 4.0 * h / 3.0;
                w[p + 2] += h / 3.0;
            }
            if panels % 2 == 1 {
                let b = simpson_panels;
                let c = 3.0 * h / 8.0;
                w[b] += c;
                w[b + 1] += 3.0 * c;
                w[b + 2] += 3.0 * c;
                w[b + 3] += c;
            }
        }
    }
    w
}

/// Where a `v`-quadrature node reads the age-zero slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum TimeRef {
    Grid(usize),
    Off(f64),
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct VNode {
    pub v: f64,
    pub time: TimeRef,
    pub base: f64,
}

/// Per-node, per-destination weights `base · e^{−r_i v} λ_ij(y+v) S_i(y, v)`,
/// flattened as `[node][jj]` over the regimes `j ≠ i`.
///
/// The weights are rescaled so that, without discounting, they integrate the
/// sojourn density exactly: `Σ λ S` over the nodes equals `1 − S_i(y, v_last)`.
/// When the exit rate is unbounded at the starting age (Weibull shape < 1 at
/// `y = 0`) the first panel is integrated as its exact jump mass placed at the
/// panel's right node.
pub(crate) fn v_weights(model: &RegimeModel, i: usize, y: f64, nodes: &[VNode]) -> Vec<f64> {
    let k = model.regime_count();
    let others: Vec<usize> = (0..k).filter(|&j| j != i).collect();
    let r = model.r[i];
    let mut out = vec![0.0; nodes.len() * others.len()];
    let Some(last) = nodes.last() else {
        return out;
    };
    let singular = !model.total_hazard_unchecked(i, y).is_finite();
    let mut mass = 0.0;
    let bases: Vec<f64> = if singular { tail_weights(nodes) } else { nodes.iter().map(|n| n.base).collect() };
    if singular && nodes.len() >= 2 {
        let v1 = nodes[1].v;
        let jump = -(-(model.cumulative_unchecked(i, y + v1) - model.cumulative_unchecked(i, y))).exp_m1();
        let total1 = model.total_hazard_unchecked(i, y + v1);
        for (jj, &j) in others.iter().enumerate() {
            let p = jump * model.hazard_unchecked(i, j, y + v1) / total1;
            out[others.len() + jj] = p * (-r * v1).exp();
            mass += p;
        }
    }
    for (q, node) in nodes.iter().enumerate() {
        let base = bases[q];
        if base == 0.0 {
            continue;
        }
        let density = base * conditional_survival_unchecked(model, i, y, node.v);
        let discount = (-r * node.v).exp();
        for (jj, &j) in others.iter().enumerate() {
            let p = density * model.hazard_unchecked(i, j, y + node.v);
            out[q * others.len() + jj] += p * discount;
            mass += p;
        }
    }
    let exact = -(-(model.cumulative_unchecked(i, y + last.v) - model.cumulative_unchecked(i, y))).exp_m1();
    if mass > 0.0 && exact > 0.0 {
        let scale = exact / mass;
        out.iter_mut().for_each(|w| *w *= scale);
    }
    out
}

/// Quadrature weights for nodes `1..` covering `[v_1, v_last]`, assuming the
/// nodes after the first gap are uniformly spaced except possibly one leading
/// half-panel.
fn tail_weights(nodes: &[VNode]) -> Vec<f64> {
    let mut w = vec![0.0; nodes.len()];
    if nodes.len() <= 2 {
        return w;
    }
    let mut start = 1;
    // Off-grid layout: 0, δ/2, δ, δ+h, ... has an extra half-panel [δ/2, δ].
    if nodes.len() >= 3 {
        let d1 = nodes[2].v - nodes[1].v;
        let d2 = if nodes.len() >= 4 { nodes[3].v - nodes[2].v } else { d1 };
        if (d1 - d2).abs() > 1e-12 * d2.abs().max(1e-300) {
            w[1] += 0.5 * d1;
            w[2] += 0.5 * d1;
            start = 2;
        }
    }
    let panels = nodes.len() - 1 - start;
    if panels > 0 {
        let h = (nodes[nodes.len() - 1].v - nodes[start].v) / panels as f64;
        for (q, c) in composite_weights(panels, h).into_iter().enumerate() {
            w[start + q] += c;
        }
    }
    w
}

#[derive(Debug, Clone)]
struct StencilEntry {
    offset: isize,
    /// `w·h00, w·h·h10, w·h01, w·h·h11` (slope terms already scaled by the step).
    coef: [f64; 4],
    weight: f64,
    score: f64,
    factor: f64,
}

/// Trapezoid weights of a wide kernel on the log-price lattice, for offsets
/// `lo, lo + 1, …` from the starting node.
#[derive(Debug, Clone)]
struct Lattice {
    lo: isize,
    weights: Vec<f64>,
    scores: Vec<f64>,
}

impl Lattice {
    /// Kernel with log-mean `drift` and spread `sd` sampled on steps of `h`,
    /// centred `centre` steps from the origin.
    fn new(centre: f64, drift: f64, sd: f64, h: f64) -> Self {
        let mean = centre + drift / h;
        let reach = LATTICE_HALF_WIDTH * sd / h;
        let lo = (mean - reach).ceil() as isize;
        let hi = (mean + reach).floor() as isize;
        let (weights, scores) = (lo..=hi)
            .map(|l| {
                let z = (l as f64 - mean) * h / sd;
                let w = h / sd * norm_pdf(z);
                (w, w * z)
            })
            .unzip();
        Lattice { lo, weights, scores }
    }
}

fn wide_kernel(sd: f64, h: f64) -> bool {
    sd >= LATTICE_MIN_SPREAD * h
}

/// Four-way unrolled dot product with a fixed summation order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for q in 0..4 {
            acc[q] += x[q] * y[q];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Inner-expectation rule of regime `i` after time `v`: Gauss–Hermite nodes as
/// fixed grid offsets for narrow kernels, lattice weights for wide ones.
#[derive(Debug, Clone)]
struct Stencil {
    v: f64,
    entries: Vec<StencilEntry>,
    offsets: Vec<isize>,
    lattice: Option<Lattice>,
}

impl Stencil {
    /// Entry range that lands strictly inside the grid for price node `m`.
    #[inline]
    fn inside(&self, m: usize, n_s: usize) -> (usize, usize) {
        let lo = self.offsets.partition_point(|&a| a < -(m as isize));
        let hi = self.offsets.partition_point(|&a| a <= n_s as isize - 2 - m as isize);
        (lo, hi.max(lo))
    }
}

/// Pruned Gauss–Hermite rule used by every solver-side expectation.
#[derive(Debug, Clone)]
pub(crate) struct QuadRule {
    pub z: Vec<f64>,
    pub w: Vec<f64>,
}

impl QuadRule {
    fn new(order: usize) -> Result<Self> {
        let rule = gauss_hermite(order)?;
        let (z, w) = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .filter(|(_, &w)| w >= MIN_NODE_WEIGHT)
            .map(|(&z, &w)| (z, w))
            .unzip();
        Ok(QuadRule { z, w })
    }
}

/// Precomputed discretization of the operator `A` on the age-zero slice.
#[derive(Debug, Clone)]
pub struct VolterraOperator {
    model: RegimeModel,
    contract: ContractSpec,
    grid: Grid,
    kernels: Vec<Lognormal>,
    rule: QuadRule,
    spots: Vec<f64>,
    eta: Vec<f64>,
    eta_delta: Vec<f64>,
    surv_to_maturity: Vec<f64>,
    /// `[i * n_t + kk]`, `kk ≥ 1`.
    stencils: Vec<Stencil>,
    /// Lattice nodes kept on each side of the price grid.
    pad: usize,
    /// Black–Scholes values on the padded lattice (zero inside the grid), `[j][n]` rows.
    eta_ext: Vec<f64>,
    /// Closed-form part of every inner expectation, laid out like the expectation table.
    cst: Vec<f64>,
    /// `[i][n]` → flattened `[kk][jj]` weights at age zero.
    weights0: Vec<Vec<f64>>,
}

impl VolterraOperator {
    pub fn new(model: &RegimeModel, contract: &ContractSpec, config: &SolverConfig) -> Result<Self> {
        model.validate().into_result()?;
        contract.validate()?;
        config.validate()?;
        let grid = Grid::new(model, contract, config);
        let k = grid.regimes;
        let (n_t, n_s) = (grid.n_t(), grid.n_s());
        let kernels: Vec<Lognormal> = (0..k).map(|i| Lognormal::new(model.r[i], model.sigma[i])).collect();
        let rule = QuadRule::new(config.quad_order)?;
        let spots: Vec<f64> = (0..n_s).map(|m| grid.spot(m)).collect();

        let mut eta = vec![0.0; grid.slice_len()];
        let mut eta_delta = vec![0.0; grid.slice_len()];
        for i in 0..k {
            for n in 0..n_t {
                let tau = contract.maturity - grid.time(n);
                for m in 0..n_s {
                    let (s, ki) = (spots[m], kernels[i]);
                    eta[grid.idx(i, n, m)] = if n == grid.last() {
                        contract.payoff(s)
                    } else {
                        bs_call(s, contract.strike, ki.r, ki.sigma, tau)
                    };
                    eta_delta[grid.idx(i, n, m)] = bs_delta(s, contract.strike, ki.r, ki.sigma, tau);
                }
            }
        }

        let surv_to_maturity = (0..k)
            .flat_map(|i| {
                (0..n_t).map(move |n| (i, n))
            })
            .map(|(i, n)| conditional_survival_unchecked(model, i, 0.0, contract.maturity - grid.time(n)))
            .collect();

        let h = grid.log_s.step;
        let dt = grid.times.step;
        let mut stencils = Vec::with_capacity(k * n_t);
        for ki in &kernels {
            for kk in 0..n_t {
                let v = kk as f64 * dt;
                let sd = ki.sigma * v.sqrt();
                if kk > 0 && wide_kernel(sd, h) {
                    let lattice = Lattice::new(0.0, ki.log_drift() * v, sd, h);
                    stencils.push(Stencil { v, entries: Vec::new(), offsets: Vec::new(), lattice: Some(lattice) });
                    continue;
                }
                let mut entries: Vec<StencilEntry> = if kk == 0 {
                    Vec::new()
                } else {
                    rule.z
                        .iter()
                        .zip(&rule.w)
                        .map(|(&z, &w)| {
                            let shift = ki.log_drift() * v + ki.sigma * v.sqrt() * z;
                            let o = shift / h;
                            let offset = o.floor();
                            let [b0, b1, b2, b3] = hermite_basis(o - offset);
                            StencilEntry {
                                offset: offset as isize,
                                coef: [w * b0, w * h * b1, w * b2, w * h * b3],
                                weight: w,
                                score: z,
                                factor: shift.exp(),
                            }
                        })
                        .collect()
                };
                entries.sort_by_key(|e| e.offset);
                let offsets = entries.iter().map(|e| e.offset).collect();
                stencils.push(Stencil { v, entries, offsets, lattice: None });
            }
        }
        let pad = stencils
            .iter()
            .filter_map(|st| st.lattice.as_ref())
            .map(|lat| (-lat.lo).max(lat.lo + lat.weights.len() as isize - 1).max(0) as usize)
            .max()
            .unwrap_or(0);
        let ext_len = n_s + 2 * pad;
        let mut eta_ext = vec![0.0; k * n_t * ext_len];
        for (row, chunk) in eta_ext.chunks_mut(ext_len).enumerate() {
            let (j, n) = (row / n_t, row % n_t);
            let kj = kernels[j];
            let tau = contract.maturity - grid.time(n);
            for (q, slot) in chunk.iter_mut().enumerate() {
                if q < pad || q >= pad + n_s {
                    let x = grid.log_s.node_unbounded(q as isize - pad as isize).exp();
                    *slot = if n == grid.last() {
                        contract.payoff(x)
                    } else {
                        bs_call(x, contract.strike, kj.r, kj.sigma, tau)
                    };
                }
            }
        }

        let weights0 = (0..k)
            .flat_map(|i| (0..n_t).map(move |n| (i, n)))
            .map(|(i, n)| v_weights(model, i, 0.0, &grid_nodes(&grid, n)))
            .collect();

        let mut op = VolterraOperator {
            model: model.clone(),
            contract: *contract,
            grid,
            kernels,
            rule,
            spots,
            eta,
            eta_delta,
            surv_to_maturity,
            stencils,
            pad,
            eta_ext,
            cst: Vec::new(),
            weights0,
        };
        op.cst = op.closed_form_table();
        Ok(op)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn model(&self) -> &RegimeModel {
        &self.model
    }

    pub fn contract(&self) -> &ContractSpec {
        &self.contract
    }

    /// Per-regime Black–Scholes values on the grid.
    pub fn eta_slice(&self) -> &[f64] {
        &self.eta
    }

    fn table_len(&self) -> usize {
        let k = self.grid.regimes;
        k * (k - 1) * self.grid.pair_count() * self.grid.n_s()
    }

    #[inline]
    fn table_row(&self, i: usize, jj: usize, n: usize, kk: usize) -> usize {
        let k = self.grid.regimes;
        ((i * (k - 1) + jj) * self.grid.pair_count() + self.grid.pair(n, kk)) * self.grid.n_s()
    }

    /// Row descriptors `(i, jj, j, n, kk)` in table order.
    fn table_rows(&self) -> Vec<(usize, usize, usize, usize, usize)> {
        let k = self.grid.regimes;
        let mut rows = Vec::with_capacity(k * (k - 1) * self.grid.pair_count());
        for i in 0..k {
            for (jj, j) in (0..k).filter(|&j| j != i).enumerate() {
                for n in 0..self.grid.n_t() {
                    for kk in 0..=(self.grid.last() - n) {
                        rows.push((i, jj, j, n, kk));
                    }
                }
            }
        }
        rows
    }

    fn eta_target(&self, j: usize, n: usize, x: f64) -> f64 {
        let kj = self.kernels[j];
        bs_call(x, self.contract.strike, kj.r, kj.sigma, self.contract.maturity - self.grid.time(n))
    }

    fn closed_form_table(&self) -> Vec<f64> {
        let mut cst = vec![0.0; self.table_len()];
        let rows = self.table_rows();
        let n_s = self.grid.n_s();
        cst.par_chunks_mut(n_s).zip(rows.par_iter()).for_each(|(out, &(i, _jj, j, n, kk))| {
            if kk == 0 {
                return;
            }
            let target = n + kk;
            let st = &self.stencils[i * self.grid.n_t() + kk];
            let tau_after = self.contract.maturity - self.grid.time(target);
            for (m, slot) in out.iter_mut().enumerate() {
                let s = self.spots[m];
                let tau_after = if target == self.grid.last() { 0.0 } else { tau_after };
                let mut value =
                    eta_kernel_expectation(s, self.contract.strike, self.kernels[i], st.v, self.kernels[j], tau_after);
                if target != self.grid.last() && st.lattice.is_none() {
                    let (lo, hi) = st.inside(m, n_s);
                    for e in st.entries[..lo].iter().chain(&st.entries[hi..]) {
                        value -= e.weight * self.eta_target(j, target, s * e.factor);
                    }
                }
                *slot = value;
            }
        });
        cst
    }

    fn ext_len(&self) -> usize {
        self.grid.n_s() + 2 * self.pad
    }

    /// Deviation `G − η`, its node slopes, and the deviation on the padded
    /// lattice (extrapolated slice minus `η` outside the grid), row by row.
    fn deviation(&self, g: &[f64]) -> Deviation {
        let dev: Vec<f64> = g.iter().zip(&self.eta).map(|(a, b)| a - b).collect();
        let mut slopes = vec![0.0; dev.len()];
        let n_s = self.grid.n_s();
        slopes
            .par_chunks_mut(n_s)
            .zip(dev.par_chunks(n_s))
            .for_each(|(d, row)| smooth_slopes(row, self.grid.log_s.step, d));
        let (pad, ext_len) = (self.pad, self.ext_len());
        let mut ext = vec![0.0; self.eta_ext.len()];
        ext.par_chunks_mut(ext_len).enumerate().for_each(|(row, out)| {
            let g_row = &g[row * n_s..(row + 1) * n_s];
            let eta_row = &self.eta_ext[row * ext_len..(row + 1) * ext_len];
            out[pad..pad + n_s].copy_from_slice(&dev[row * n_s..(row + 1) * n_s]);
            for q in (0..pad).chain(pad + n_s..ext_len) {
                let x = self.grid.log_s.node_unbounded(q as isize - pad as isize).exp();
                out[q] = self.extrapolate(g_row, x) - eta_row[q];
            }
        });
        Deviation { dev, slopes, ext }
    }

    /// Extrapolated slice value outside the price grid, clipped to the call envelope.
    #[inline]
    fn extrapolate(&self, row: &[f64], x: f64) -> f64 {
        extrapolate_row(row, &self.spots, self.contract.strike, x)
    }

    /// Inner expectations `E_i[G_j(t_n + v_kk, ·)](s_m)` (or their `s`-derivatives
    /// when `score` is set) for every row of the table.
    fn expectation_table(&self, g: &[f64], deviation: &Deviation, score: bool) -> Vec<f64> {
        let (dev, slopes) = (&deviation.dev[..], &deviation.slopes[..]);
        let ext_len = self.ext_len();
        let mut table = vec![0.0; self.table_len()];
        let rows = self.table_rows();
        let n_s = self.grid.n_s();
        let last = self.grid.last();
        table.par_chunks_mut(n_s).zip(rows.par_iter()).for_each(|(out, &(i, jj, j, n, kk))| {
            let base = self.grid.idx(j, n + kk, 0);
            let g_row = &g[base..base + n_s];
            let d_row = &dev[base..base + n_s];
            let s_row = &slopes[base..base + n_s];
            if kk == 0 {
                if score {
                    for m in 0..n_s {
                        out[m] = self.eta_delta[base + m] + s_row[m] / self.spots[m];
                    }
                } else {
                    out.copy_from_slice(g_row);
                }
                return;
            }
            let st = &self.stencils[i * self.grid.n_t() + kk];
            let ki = self.kernels[i];
            let target = n + kk;
            if target == last {
                if score {
                    for m in 0..n_s {
                        out[m] = eta_kernel_expectation_delta(
                            self.spots[m],
                            self.contract.strike,
                            ki,
                            st.v,
                            self.kernels[j],
                            0.0,
                        );
                    }
                } else {
                    let c = self.table_row(i, jj, n, kk);
                    out.copy_from_slice(&self.cst[c..c + n_s]);
                }
                return;
            }
            let cst_row = self.table_row(i, jj, n, kk);
            if let Some(lat) = &st.lattice {
                let e = (j * self.grid.n_t() + target) * ext_len;
                let e_row = &deviation.ext[e..e + ext_len];
                let width = lat.weights.len();
                let tau_after = self.contract.maturity - self.grid.time(target);
                for m in 0..n_s {
                    let start = (self.pad as isize + m as isize + lat.lo) as usize;
                    let seg = &e_row[start..start + width];
                    out[m] = if score {
                        let s = self.spots[m];
                        let closed =
                            eta_kernel_expectation_delta(s, self.contract.strike, ki, st.v, self.kernels[j], tau_after);
                        closed + dot(&lat.scores, seg) / (s * ki.sigma * st.v.sqrt())
                    } else {
                        self.cst[cst_row + m] + dot(&lat.weights, seg)
                    };
                }
                return;
            }
            for m in 0..n_s {
                let s = self.spots[m];
                let (lo, hi) = st.inside(m, n_s);
                let mut acc = 0.0;
                for e in &st.entries[lo..hi] {
                    let idx = (m as isize + e.offset) as usize;
                    let t = e.coef[0] * d_row[idx]
                        + e.coef[1] * s_row[idx]
                        + e.coef[2] * d_row[idx + 1]
                        + e.coef[3] * s_row[idx + 1];
                    acc += if score { e.score * t } else { t };
                }
                if score {
                    for e in st.entries[..lo].iter().chain(&st.entries[hi..]) {
                        let x = s * e.factor;
                        acc += e.weight * e.score * (self.extrapolate(g_row, x) - self.eta_target(j, target, x));
                    }
                    let scale = 1.0 / (s * ki.sigma * st.v.sqrt());
                    let closed = eta_kernel_expectation_delta(
                        s,
                        self.contract.strike,
                        ki,
                        st.v,
                        self.kernels[j],
                        self.contract.maturity - self.grid.time(target),
                    );
                    out[m] = closed + acc * scale;
                } else {
                    for e in st.entries[..lo].iter().chain(&st.entries[hi..]) {
                        acc += e.weight * self.extrapolate(g_row, s * e.factor);
                    }
                    out[m] = self.cst[cst_row + m] + acc;
                }
            }
        });
        table
    }

    /// Combines an expectation table with the age-zero weights into a new slice.
    fn combine(&self, table: &[f64], head: &[f64]) -> Vec<f64> {
        let grid = &self.grid;
        let (k, n_t, n_s) = (grid.regimes, grid.n_t(), grid.n_s());
        let mut out = vec![0.0; grid.slice_len()];
        out.par_chunks_mut(n_s).enumerate().for_each(|(row, dst)| {
            let (i, n) = (row / n_t, row % n_t);
            if n == grid.last() {
                for m in 0..n_s {
                    dst[m] = self.contract.payoff(self.spots[m]);
                }
                return;
            }
            let surv = self.surv_to_maturity[i * n_t + n];
            let h = &head[grid.idx(i, n, 0)..grid.idx(i, n, 0) + n_s];
            for m in 0..n_s {
                dst[m] = surv * h[m];
            }
            let w = &self.weights0[i * n_t + n];
            for kk in 0..=(grid.last() - n) {
                for jj in 0..k - 1 {
                    let weight = w[kk * (k - 1) + jj];
                    if weight == 0.0 {
                        continue;
                    }
                    let r = self.table_row(i, jj, n, kk);
                    for m in 0..n_s {
                        dst[m] += weight * table[r + m];
                    }
                }
            }
        });
        out
    }

    /// One application of `A` to the slice `g` (layout of [`Grid::idx`]).
    pub fn apply(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.grid.slice_len() {
            return Err(Error::Mismatch(format!(
                "slice has {} values, grid expects {}",
                g.len(),
                self.grid.slice_len()
            )));
        }
        let deviation = self.deviation(g);
        let table = self.expectation_table(g, &deviation, false);
        Ok(self.combine(&table, &self.eta))
    }

    /// Weighted sup-norm `max |a − b| / (1 + s)`.
    pub fn weighted_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let n_s = self.grid.n_s();
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(q, (x, y))| (x - y).abs() / (1.0 + self.spots[q % n_s]))
            .fold(0.0, f64::max)
    }

    pub fn initial_slice(&self, guess: InitialGuess) -> Vec<f64> {
        let n_s = self.grid.n_s();
        match guess {
            InitialGuess::Bsm => self.eta.clone(),
            InitialGuess::Zero => vec![0.0; self.grid.slice_len()],
            InitialGuess::Spot => (0..self.grid.slice_len()).map(|q| self.spots[q % n_s]).collect(),
        }
    }
}

/// Deviation of a slice from the Black–Scholes prices, ready for integration.
#[derive(Debug, Clone)]
struct Deviation {
    dev: Vec<f64>,
    slopes: Vec<f64>,
    /// `[j][n]` rows over the padded lattice.
    ext: Vec<f64>,
}

/// Extrapolation of one slice row outside the price grid.
///
/// Below the grid the value is continued linearly through the origin, above
/// it linearly with the slope of the last two nodes; both are clipped to the
/// envelope `[(x − K)⁺, x]`.
#[inline]
fn extrapolate_row(row: &[f64], spots: &[f64], strike: f64, x: f64) -> f64 {
    let n = row.len();
    let raw = if x <= spots[0] {
        row[0] / spots[0] * x
    } else {
        let slope = (row[n - 1] - row[n - 2]) / (spots[n - 1] - spots[n - 2]);
        row[n - 1] + slope * (x - spots[n - 1])
    };
    raw.clamp((x - strike).max(0.0), x)
}

#[inline]
fn extrapolate_row_slope(row: &[f64], spots: &[f64], strike: f64, x: f64) -> f64 {
    let n = row.len();
    let (raw, slope) = if x <= spots[0] {
        (row[0] / spots[0] * x, row[0] / spots[0])
    } else {
        let slope = (row[n - 1] - row[n - 2]) / (spots[n - 1] - spots[n - 2]);
        (row[n - 1] + slope * (x - spots[n - 1]), slope)
    };
    if raw > x {
        1.0
    } else if raw < (x - strike).max(0.0) {
        if x > strike {
            1.0
        } else {
            0.0
        }
    } else {
        slope
    }
}

/// Quadrature nodes for a grid time `t_n`: the offsets to every later grid time.
pub(crate) fn grid_nodes(grid: &Grid, n: usize) -> Vec<VNode> {
    let panels = grid.last() - n;
    let dt = grid.times.step;
    composite_weights(panels, dt)
        .into_iter()
        .enumerate()
        .map(|(kk, base)| VNode {
            v: kk as f64 * dt,
            time: TimeRef::Grid(n + kk),
            base,
        })
        .collect()
}

/// Nodes for an off-grid time `t` between grid nodes: a Simpson panel up to
/// the next grid time, then the grid offsets.
pub(crate) fn off_grid_nodes(grid: &Grid, t: f64) -> Vec<VNode> {
    let next = (grid.times.position(t).floor() as usize + 1).min(grid.last());
    let delta = grid.time(next) - t;
    let mut nodes = vec![
        VNode {
            v: 0.0,
            time: TimeRef::Off(t),
            base: delta / 6.0,
        },
        VNode {
            v: 0.5 * delta,
            time: TimeRef::Off(t + 0.5 * delta),
            base: 4.0 * delta / 6.0,
        },
    ];
    for (q, node) in grid_nodes(grid, next).into_iter().enumerate() {
        nodes.push(VNode {
            v: delta + node.v,
            time: node.time,
            base: node.base + if q == 0 { delta / 6.0 } else { 0.0 },
        });
    }
    nodes
}

/// Solved age-zero slice plus everything needed to evaluate `φ` anywhere.
#[derive(Debug)]
pub struct PriceSurface {
    op: VolterraOperator,
    config: SolverConfig,
    /// Slice used inside every integral (the last Picard input).
    inner: Vec<f64>,
    /// `A(inner)`: the reported age-zero prices.
    values: Vec<f64>,
    deviation: Deviation,
    expectations: Vec<f64>,
    score_table: OnceLock<Vec<f64>>,
    pub convergence: Convergence,
}

/// Serializable form of a solved surface.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceData {
    pub format_version: u32,
    pub model: RegimeModel,
    pub contract: ContractSpec,
    pub config: SolverConfig,
    pub inner: Vec<f64>,
    pub convergence: Convergence,
}

pub const SURFACE_FORMAT_VERSION: u32 = 1;

/// Solves from the per-regime Black–Scholes prices.
pub fn solve(model: &RegimeModel, contract: &ContractSpec, config: &SolverConfig) -> Result<PriceSurface> {
    solve_from(model, contract, config, InitialGuess::Bsm)
}

/// Picard iteration `G ← A(G)` from the chosen start until the weighted
/// update norm falls below `config.tol`.
pub fn solve_from(
    model: &RegimeModel,
    contract: &ContractSpec,
    config: &SolverConfig,
    start: InitialGuess,
) -> Result<PriceSurface> {
    let op = VolterraOperator::new(model, contract, config)?;
    let estimate = estimate_contraction(model, contract.maturity);
    let max_iter = config.max_iter.unwrap_or_else(|| {
        let j = estimate.value.clamp(1e-300, 1.0 - 1e-12);
        let n = (config.tol.ln() / j.ln()).ceil();
        if n.is_finite() && n > 0.0 {
            (n as usize + 10).min(MAX_ITER_CAP)
        } else {
            10
        }
    });

    let mut current = op.initial_slice(start);
    let mut history = Vec::new();
    loop {
        let next = op.apply(&current)?;
        let diff = op.weighted_distance(&next, &current);
        history.push(diff);
        if diff < config.tol {
            let convergence = Convergence {
                iterations: history.len(),
                final_residual: diff,
                contraction: estimate.value,
                diff_history: history,
                warning: estimate.warning.clone(),
            };
            return PriceSurface::assemble(op, *config, current, convergence);
        }
        if history.len() >= max_iter {
            return Err(Error::NonConvergence {
                iterations: history.len(),
                residual: diff,
                contraction: estimate.value,
            });
        }
        current = next;
    }
}

impl PriceSurface {
    fn assemble(op: VolterraOperator, config: SolverConfig, inner: Vec<f64>, convergence: Convergence) -> Result<Self> {
        let deviation = op.deviation(&inner);
        let expectations = op.expectation_table(&inner, &deviation, false);
        let mut values = op.combine(&expectations, &op.eta);
        let grid = op.grid;
        for i in 0..grid.regimes {
            for n in 0..grid.n_t() {
                for m in 0..grid.n_s() {
                    let s = op.spots[m];
                    let q = grid.idx(i, n, m);
                    values[q] = clip_checked(values[q], s, op.contract.strike).map_err(|excess| {
                        Error::SolverDefect(format!(
                            "envelope violated by {excess:.3e} at regime {}, t={}, s={s}",
                            i + 1,
                            grid.time(n)
                        ))
                    })?;
                }
            }
        }
        Ok(PriceSurface {
            op,
            config,
            inner,
            values,
            deviation,
            expectations,
            score_table: OnceLock::new(),
            convergence,
        })
    }

    /// Rebuilds a surface from its serialized form.
    pub fn from_data(data: SurfaceData) -> Result<Self> {
        if data.format_version != SURFACE_FORMAT_VERSION {
            return Err(Error::Mismatch(format!(
                "surface format version {} is not supported (expected {SURFACE_FORMAT_VERSION})",
                data.format_version
            )));
        }
        let op = VolterraOperator::new(&data.model, &data.contract, &data.config)?;
        if data.inner.len() != op.grid.slice_len() {
            return Err(Error::Mismatch("stored slice does not match the grid".into()));
        }
        PriceSurface::assemble(op, data.config, data.inner, data.convergence)
    }

    pub fn to_data(&self) -> SurfaceData {
        SurfaceData {
            format_version: SURFACE_FORMAT_VERSION,
            model: self.op.model.clone(),
            contract: self.op.contract,
            config: self.config,
            inner: self.inner.clone(),
            convergence: self.convergence.clone(),
        }
    }

    pub fn model(&self) -> &RegimeModel {
        &self.op.model
    }

    pub fn contract(&self) -> &ContractSpec {
        &self.op.contract
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn grid(&self) -> &Grid {
        &self.op.grid
    }

    pub fn operator(&self) -> &VolterraOperator {
        &self.op
    }

    /// Solved `G_i(t_n, s_m) ≈ φ(t_n, s_m, i, 0)` in [`Grid::idx`] layout.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize, n: usize, m: usize) -> f64 {
        self.values[self.op.grid.idx(i, n, m)]
    }

    pub fn spot(&self, m: usize) -> f64 {
        self.op.spots[m]
    }

    /// `‖A(G*) − G*‖` in the weighted norm.
    pub fn fixed_point_residual(&self) -> Result<f64> {
        let next = self.op.apply(&self.values)?;
        Ok(self.op.weighted_distance(&next, &self.values))
    }

    pub(crate) fn check_point(&self, t: f64, s: f64, i: usize, y: f64) -> Result<()> {
        self.op.model.check_regime(i)?;
        self.op.contract.check_point(t, s, y)
    }

    pub(crate) fn snap_time(&self, t: f64) -> Option<usize> {
        self.op.grid.times.snap(t, SNAP_TOL)
    }

    pub(crate) fn snap_spot(&self, s: f64) -> Option<usize> {
        self.op.grid.log_s.snap(s.ln(), SNAP_TOL)
    }

    /// `φ(t, s, i, y)` clipped into the envelope `[(s−K)⁺, s]`; errors when the
    /// raw value misses the envelope by more than `1e−9·(1+s)`.
    pub fn price_at(&self, t: f64, s: f64, i: usize, y: f64) -> Result<f64> {
        let raw = self.price_at_raw(t, s, i, y)?;
        clip_checked(raw, s, self.op.contract.strike).map_err(|excess| {
            Error::SolverDefect(format!("envelope violated by {excess:.3e} at t={t}, s={s}, regime {}, y={y}", i + 1))
        })
    }

    /// One evaluation of the right-hand side, without envelope clipping.
    pub fn price_at_raw(&self, t: f64, s: f64, i: usize, y: f64) -> Result<f64> {
        self.check_point(t, s, i, y)?;
        let contract = &self.op.contract;
        let t = t.clamp(0.0, contract.maturity);
        let y = y.min(t);
        if t >= contract.maturity {
            return Ok(contract.payoff(s));
        }
        let ki = self.op.kernels[i];
        let head = conditional_survival_unchecked(&self.op.model, i, y, contract.maturity - t)
            * bs_call(s, contract.strike, ki.r, ki.sigma, contract.maturity - t);
        self.integrate(t, s, i, y, head, false)
    }

    /// Shared `v`-integration for prices (`score == false`) and deltas.
    pub(crate) fn integrate(&self, t: f64, s: f64, i: usize, y: f64, head: f64, score: bool) -> Result<f64> {
        let grid = &self.op.grid;
        let k = grid.regimes;
        if let (Some(n), Some(m)) = (self.snap_time(t), self.snap_spot(s)) {
            let nodes = grid_nodes(grid, n);
            let w = v_weights(&self.op.model, i, y, &nodes);
            let table = if score { self.score_table() } else { &self.expectations };
            let mut acc = head;
            for kk in 0..nodes.len() {
                for jj in 0..k - 1 {
                    let weight = w[kk * (k - 1) + jj];
                    if weight != 0.0 {
                        acc += weight * table[self.op.table_row(i, jj, n, kk) + m];
                    }
                }
            }
            return Ok(acc);
        }
        let nodes = match self.snap_time(t) {
            Some(n) => grid_nodes(grid, n),
            None => off_grid_nodes(grid, t),
        };
        let w = v_weights(&self.op.model, i, y, &nodes);
        let others: Vec<usize> = (0..k).filter(|&j| j != i).collect();
        let mut acc = head;
        for (q, node) in nodes.iter().enumerate() {
            for (jj, &j) in others.iter().enumerate() {
                let weight = w[q * (k - 1) + jj];
                if weight == 0.0 {
                    continue;
                }
                let row = self.row_view(j, node.time);
                let value = if node.v == 0.0 {
                    if score {
                        row.slope_at(&self.op, s)
                    } else {
                        row.value_at(&self.op, s)
                    }
                } else {
                    row.expectation(&self.op, self.op.kernels[i], s, node.v, score)
                };
                acc += weight * value;
            }
        }
        Ok(acc)
    }

    /// Table of inner expectation derivatives, built on first use.
    pub(crate) fn score_table(&self) -> &[f64] {
        self.score_table
            .get_or_init(|| self.op.expectation_table(&self.inner, &self.deviation, true))
    }

    pub(crate) fn kernel(&self, i: usize) -> Lognormal {
        self.op.kernels[i]
    }

    pub(crate) fn table_row(&self, i: usize, jj: usize, n: usize, kk: usize) -> usize {
        self.op.table_row(i, jj, n, kk)
    }

    fn row_view(&self, j: usize, time: TimeRef) -> RowView<'_> {
        let grid = &self.op.grid;
        let n_s = grid.n_s();
        let ext_len = self.op.ext_len();
        match time {
            TimeRef::Grid(n) => {
                let b = grid.idx(j, n, 0);
                let e = b / n_s * ext_len;
                RowView {
                    regime: j,
                    time: grid.time(n),
                    dev: Cow::Borrowed(&self.deviation.dev[b..b + n_s]),
                    slopes: Cow::Borrowed(&self.deviation.slopes[b..b + n_s]),
                    g: Cow::Borrowed(&self.inner[b..b + n_s]),
                    ext: Cow::Borrowed(&self.deviation.ext[e..e + ext_len]),
                }
            }
            TimeRef::Off(tau) => {
                let (start, coeffs) = lagrange_in_time(grid, tau);
                let mut ext = vec![0.0; ext_len];
                let mut g = vec![0.0; n_s];
                for (l, c) in coeffs.iter().enumerate() {
                    let e = grid.idx(j, start + l, 0) / n_s * ext_len;
                    for (q, slot) in ext.iter_mut().enumerate() {
                        *slot += c * self.deviation.ext[e + q];
                    }
                }
                let pad = self.op.pad;
                let dev = ext[pad..pad + n_s].to_vec();
                let kj = self.op.kernels[j];
                let tau_after = self.op.contract.maturity - tau;
                for m in 0..n_s {
                    g[m] = bs_call(self.op.spots[m], self.op.contract.strike, kj.r, kj.sigma, tau_after) + dev[m];
                }
                let mut slopes = vec![0.0; n_s];
                smooth_slopes(&dev, grid.log_s.step, &mut slopes);
                RowView {
                    regime: j,
                    time: tau,
                    dev: Cow::Owned(dev),
                    slopes: Cow::Owned(slopes),
                    g: Cow::Owned(g),
                    ext: Cow::Owned(ext),
                }
            }
        }
    }
}

/// Cubic Lagrange weights over the four grid times around `tau`.
fn lagrange_in_time(grid: &Grid, tau: f64) -> (usize, Vec<f64>) {
    let points = grid.n_t().min(4);
    let pos = grid.times.position(tau);
    let start = (pos.floor() as isize - (points as isize / 2 - 1)).clamp(0, (grid.n_t() - points) as isize) as usize;
    let coeffs = (0..points)
        .map(|l| {
            let xl = (start + l) as f64;
            (0..points)
                .filter(|&q| q != l)
                .map(|q| {
                    let xq = (start + q) as f64;
                    (pos - xq) / (xl - xq)
                })
                .product()
        })
        .collect();
    (start, coeffs)
}

fn clip_checked(raw: f64, s: f64, strike: f64) -> std::result::Result<f64, f64> {
    let lo = (s - strike).max(0.0);
    let slack = CLIP_TOL * (1.0 + s);
    if raw < lo - slack {
        Err(lo - raw)
    } else if raw > s + slack {
        Err(raw - s)
    } else {
        Ok(raw.clamp(lo, s))
    }
}

/// Age-zero slice of one regime at one time, ready for off-grid evaluation.
struct RowView<'a> {
    regime: usize,
    time: f64,
    dev: Cow<'a, [f64]>,
    slopes: Cow<'a, [f64]>,
    g: Cow<'a, [f64]>,
    /// Deviation on the padded lattice.
    ext: Cow<'a, [f64]>,
}

impl RowView<'_> {
    fn tau_after(&self, op: &VolterraOperator) -> f64 {
        (op.contract.maturity - self.time).max(0.0)
    }

    fn eta(&self, op: &VolterraOperator, x: f64) -> f64 {
        let kj = op.kernels[self.regime];
        bs_call(x, op.contract.strike, kj.r, kj.sigma, self.tau_after(op))
    }

    fn value_at(&self, op: &VolterraOperator, s: f64) -> f64 {
        let pos = op.grid.log_s.position(s.ln());
        if pos >= 0.0 && pos <= (op.grid.n_s() - 1) as f64 {
            let (idx, f) = op.grid.log_s.cell(pos);
            self.eta(op, s) + hermite_eval(&self.dev, &self.slopes, op.grid.log_s.step, idx, f)
        } else {
            extrapolate_row(&self.g, &op.spots, op.contract.strike, s)
        }
    }

    fn slope_at(&self, op: &VolterraOperator, s: f64) -> f64 {
        let pos = op.grid.log_s.position(s.ln());
        if pos >= 0.0 && pos <= (op.grid.n_s() - 1) as f64 {
            let (idx, f) = op.grid.log_s.cell(pos);
            let kj = op.kernels[self.regime];
            bs_delta(s, op.contract.strike, kj.r, kj.sigma, self.tau_after(op))
                + hermite_eval_derivative(&self.dev, &self.slopes, op.grid.log_s.step, idx, f) / s
        } else {
            extrapolate_row_slope(&self.g, &op.spots, op.contract.strike, s)
        }
    }

    /// `E_i[φ_j(time, X_v)]` from spot `s`, or its `s`-derivative.
    fn expectation(&self, op: &VolterraOperator, ki: Lognormal, s: f64, v: f64, score: bool) -> f64 {
        let strike = op.contract.strike;
        let kj = op.kernels[self.regime];
        let tau_after = self.tau_after(op);
        let closed = if score {
            eta_kernel_expectation_delta(s, strike, ki, v, kj, tau_after)
        } else {
            eta_kernel_expectation(s, strike, ki, v, kj, tau_after)
        };
        if tau_after <= 0.0 {
            return closed;
        }
        let grid = &op.grid.log_s;
        let n_s = grid.len;
        let base = grid.position(s.ln());
        let h = grid.step;
        let sd = ki.sigma * v.sqrt();
        if wide_kernel(sd, h) {
            let lat = Lattice::new(base, ki.log_drift() * v, sd, h);
            let mut acc = 0.0;
            for (q, (&w, &wz)) in lat.weights.iter().zip(&lat.scores).enumerate() {
                let l = lat.lo + q as isize;
                let p = l + op.pad as isize;
                let d = if p >= 0 && (p as usize) < self.ext.len() {
                    self.ext[p as usize]
                } else {
                    let x = grid.node_unbounded(l).exp();
                    extrapolate_row(&self.g, &op.spots, strike, x) - self.eta(op, x)
                };
                acc += if score { wz * d } else { w * d };
            }
            return if score { closed + acc / (s * sd) } else { closed + acc };
        }
        let mut acc = 0.0;
        for (&z, &w) in op.rule.z.iter().zip(&op.rule.w) {
            let shift = ki.log_drift() * v + ki.sigma * v.sqrt() * z;
            let pos = base + shift / h;
            let r = if pos >= 0.0 && pos < (n_s - 1) as f64 {
                let (idx, f) = grid.cell(pos);
                hermite_eval(&self.dev, &self.slopes, h, idx, f)
            } else {
                let x = s * shift.exp();
                extrapolate_row(&self.g, &op.spots, strike, x) - self.eta(op, x)
            };
            acc += if score { w * z * r } else { w * r };
        }
        if score {
            closed + acc / (s * ki.sigma * v.sqrt())
        } else {
            closed + acc
        }
    }
}

/// Central-difference residual of the non-local pricing PDE at an interior point:
///
/// `∂_t φ + ∂_y φ + r s ∂_s φ + ½σ² s² ∂_ss φ + Σ_j λ_ij(y)(φ(t,s,j,0) − φ) − r φ`.
#[allow(clippy::too_many_arguments)]
pub fn pde_residual(
    surface: &PriceSurface,
    t: f64,
    s: f64,
    i: usize,
    y: f64,
    h_t: f64,
    h_s: f64,
    h_y: f64,
) -> Result<f64> {
    let maturity = surface.contract().maturity;
    if !(t - h_t >= 0.0 && t + h_t <= maturity && y - h_y >= 0.0 && y + h_y <= t - h_t && s - h_s > 0.0) {
        return Err(Error::Domain(format!(
            "stencil (h_t={h_t}, h_s={h_s}, h_y={h_y}) around t={t}, s={s}, y={y} leaves the domain"
        )));
    }
    let model = surface.model();
    let p = |t: f64, s: f64, i: usize, y: f64| surface.price_at_raw(t, s, i, y);
    let centre = p(t, s, i, y)?;
    let dt = (p(t + h_t, s, i, y)? - p(t - h_t, s, i, y)?) / (2.0 * h_t);
    let dy = (p(t, s, i, y + h_y)? - p(t, s, i, y - h_y)?) / (2.0 * h_y);
    let up = p(t, s + h_s, i, y)?;
    let down = p(t, s - h_s, i, y)?;
    let ds = (up - down) / (2.0 * h_s);
    let dss = (up - 2.0 * centre + down) / (h_s * h_s);
    let mut nonlocal = 0.0;
    for j in (0..model.regime_count()).filter(|&j| j != i) {
        let rate = model.hazard_unchecked(i, j, y);
        if rate != 0.0 {
            nonlocal += rate * (p(t, s, j, 0.0)? - centre);
        }
    }
    let (r, sigma) = (model.r[i], model.sigma[i]);
    Ok(dt + dy + r * s * ds + 0.5 * sigma * sigma * s * s * dss + nonlocal - r * centre)
}

/// Writes the solved age-zero slice as `t,s,regime,y,phi` rows, time outermost
/// and price innermost. Regimes are numbered from 1.
pub fn write_surface_csv(surface: &PriceSurface, out: &mut impl std::io::Write) -> Result<()> {
    writeln!(out, "t,s,regime,y,phi")?;
    let grid = surface.grid();
    for n in 0..grid.n_t() {
        for i in 0..grid.regimes {
            for m in 0..grid.n_s() {
                writeln!(out, "{},{},{},0,{}", grid.time(n), surface.spot(m), i + 1, surface.value(i, n, m))?;
            }
        }
    }
    Ok(())
}
