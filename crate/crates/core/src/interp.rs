//! Cubic Hermite interpolation on a uniform grid.
//!
//! [`monotone_slopes`] limits fourth-order centred differences à la
//! Fritsch–Carlson: zero at local extrema of the data and at most three times
//! the adjacent secants, so the interpolant never overshoots monotone data.
//! [`smooth_slopes`] keeps the unlimited differences.

/// Uniformly spaced nodes `start + m·step`, `m = 0..len`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGrid {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl UniformGrid {
    pub fn new(start: f64, end: f64, len: usize) -> Self {
        assert!(len >= 2 && end > start, "grid needs two distinct nodes");
        UniformGrid {
            start,
            step: (end - start) / (len - 1) as f64,
            len,
        }
    }

    pub fn node(&self, m: usize) -> f64 {
        if m + 1 == self.len {
            self.end()
        } else {
            self.start + m as f64 * self.step
        }
    }

    /// Node position for any integer index, inside the grid or not.
    pub fn node_unbounded(&self, m: isize) -> f64 {
        self.start + m as f64 * self.step
    }

    pub fn end(&self) -> f64 {
        self.start + (self.len - 1) as f64 * self.step
    }

    /// Fractional node position of `u`; in `[0, len−1]` inside the grid.
    pub fn position(&self, u: f64) -> f64 {
        (u - self.start) / self.step
    }

    /// Cell index and local coordinate for a position inside the grid.
    pub fn cell(&self, pos: f64) -> (usize, f64) {
        let idx = (pos.floor().max(0.0) as usize).min(self.len - 2);
        (idx, pos - idx as f64)
    }

    /// Index of the node within `tol` steps of `u`, if any.
    pub fn snap(&self, u: f64, tol: f64) -> Option<usize> {
        let pos = self.position(u);
        let m = pos.round();
        ((pos - m).abs() <= tol && m >= 0.0 && m <= (self.len - 1) as f64).then_some(m as usize)
    }
}

/// Limited node slopes (derivative with respect to the grid coordinate).
pub fn monotone_slopes(values: &[f64], step: f64, slopes: &mut [f64]) {
    let n = values.len();
    debug_assert_eq!(n, slopes.len());
    if n < 2 {
        slopes.iter_mut().for_each(|d| *d = 0.0);
        return;
    }
    if n == 2 {
        let d = (values[1] - values[0]) / step;
        slopes[0] = d;
        slopes[1] = d;
        return;
    }
    let secant = |m: usize| (values[m + 1] - values[m]) / step;
    for m in 1..n - 1 {
        let (a, b) = (secant(m - 1), secant(m));
        slopes[m] = if a * b <= 0.0 {
            0.0
        } else {
            let c = if m >= 2 && m + 2 < n {
                (values[m - 2] - values[m + 2] + 8.0 * (values[m + 1] - values[m - 1])) / (12.0 * step)
            } else if m == 1 && n >= 4 {
                (-2.0 * values[0] - 3.0 * values[1] + 6.0 * values[2] - values[3]) / (6.0 * step)
            } else if m + 2 == n && n >= 4 {
                (2.0 * values[n - 1] + 3.0 * values[n - 2] - 6.0 * values[n - 3] + values[n - 4]) / (6.0 * step)
            } else {
                0.5 * (a + b)
            };
            let cap = 3.0 * a.abs().min(b.abs());
            if c * a <= 0.0 {
                0.0
            } else {
                c.abs().min(cap).copysign(a)
            }
        };
    }
    let (first, last) = if n >= 4 {
        (
            (-11.0 * values[0] + 18.0 * values[1] - 9.0 * values[2] + 2.0 * values[3]) / (6.0 * step),
            (11.0 * values[n - 1] - 18.0 * values[n - 2] + 9.0 * values[n - 3] - 2.0 * values[n - 4]) / (6.0 * step),
        )
    } else {
        (0.5 * (3.0 * secant(0) - secant(1)), 0.5 * (3.0 * secant(n - 2) - secant(n - 3)))
    };
    slopes[0] = limit_end(first, secant(0));
    slopes[n - 1] = limit_end(last, secant(n - 2));
}

/// Unlimited fourth-order node slopes, for data with no shape to preserve.
pub fn smooth_slopes(values: &[f64], step: f64, slopes: &mut [f64]) {
    let n = values.len();
    debug_assert_eq!(n, slopes.len());
    if n < 4 {
        return monotone_slopes(values, step, slopes);
    }
    for m in 2..n - 2 {
        slopes[m] = (values[m - 2] - values[m + 2] + 8.0 * (values[m + 1] - values[m - 1])) / (12.0 * step);
    }
    slopes[1] = (-2.0 * values[0] - 3.0 * values[1] + 6.0 * values[2] - values[3]) / (6.0 * step);
    slopes[n - 2] = (2.0 * values[n - 1] + 3.0 * values[n - 2] - 6.0 * values[n - 3] + values[n - 4]) / (6.0 * step);
    slopes[0] = (-11.0 * values[0] + 18.0 * values[1] - 9.0 * values[2] + 2.0 * values[3]) / (6.0 * step);
    slopes[n - 1] = (11.0 * values[n - 1] - 18.0 * values[n - 2] + 9.0 * values[n - 3] - 2.0 * values[n - 4]) / (6.0 * step);
}

/// Same sign as the adjacent secant and at most three times it.
fn limit_end(d: f64, secant: f64) -> f64 {
    if d * secant <= 0.0 {
        0.0
    } else {
        d.abs().min(3.0 * secant.abs()).copysign(secant)
    }
}

/// Cubic Hermite basis `(h00, h10, h01, h11)` at local coordinate `f`.
#[inline]
pub fn hermite_basis(f: f64) -> [f64; 4] {
    let g = 1.0 - f;
    [(1.0 + 2.0 * f) * g * g, f * g * g, f * f * (3.0 - 2.0 * f), f * f * (f - 1.0)]
}

/// Derivative of [`hermite_basis`] with respect to `f`.
#[inline]
pub fn hermite_basis_derivative(f: f64) -> [f64; 4] {
    [6.0 * f * f - 6.0 * f, 3.0 * f * f - 4.0 * f + 1.0, 6.0 * f - 6.0 * f * f, 3.0 * f * f - 2.0 * f]
}

#[inline]
pub fn hermite_eval(values: &[f64], slopes: &[f64], step: f64, idx: usize, f: f64) -> f64 {
    let [a, b, c, d] = hermite_basis(f);
    a * values[idx] + b * step * slopes[idx] + c * values[idx + 1] + d * step * slopes[idx + 1]
}

#[inline]
pub fn hermite_eval_derivative(values: &[f64], slopes: &[f64], step: f64, idx: usize, f: f64) -> f64 {
    let [a, b, c, d] = hermite_basis_derivative(f);
    (a * values[idx] + c * values[idx + 1]) / step + b * slopes[idx] + d * slopes[idx + 1]
}

/// Owned interpolant over a uniform grid.
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    pub grid: UniformGrid,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(grid: UniformGrid, values: Vec<f64>) -> Self {
        assert_eq!(grid.len, values.len());
        let mut slopes = vec![0.0; values.len()];
        monotone_slopes(&values, grid.step, &mut slopes);
        MonotoneCubic { grid, values, slopes }
    }

    /// Value at `u`, clamped to the grid range.
    pub fn eval(&self, u: f64) -> f64 {
        let pos = self.grid.position(u).clamp(0.0, (self.grid.len - 1) as f64);
        let (idx, f) = self.grid.cell(pos);
        hermite_eval(&self.values, &self.slopes, self.grid.step, idx, f)
    }

    /// Derivative at `u`, clamped to the grid range.
    pub fn derivative(&self, u: f64) -> f64 {
        let pos = self.grid.position(u).clamp(0.0, (self.grid.len - 1) as f64);
        let (idx, f) = self.grid.cell(pos);
        hermite_eval_derivative(&self.values, &self.slopes, self.grid.step, idx, f)
    }
}
