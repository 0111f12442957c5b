//! Closed-form and quadrature benchmarks for driftless exit problems:
//! truncated Brownian exit time, its Lipschitz bound, the Lamperti
//! transform and the deterministic time change.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quadrature::integrate;

const QUAD_TOL: f64 = 1e-12;

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// `P(tau > t + s)` for Brownian motion started at `x >= 0`: `2 Phi(x / sqrt(s)) - 1`.
pub fn bm_survival(x: f64, s: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if s <= 0.0 {
        return 1.0;
    }
    libm::erf(x / (2.0 * s).sqrt())
}

/// `E[tau(x, t) ^ T]` for standard Brownian motion absorbed at 0.
pub fn bm_truncated_exit(x: f64, t: f64, horizon: f64) -> f64 {
    if x <= 0.0 || horizon <= t {
        return t;
    }
    t + integrate(|s| bm_survival(x, s), 0.0, horizon - t, QUAD_TOL)
}

/// Lipschitz bound `sqrt(T / pi)` from the reflection-principle argument.
///
/// The sharp constant for the driftless exit time is the slope at `x = 0`,
/// see [`bm_exit_slope_at_zero`], which is larger.
pub fn bm_lipschitz_bound(horizon: f64) -> f64 {
    (horizon / PI).sqrt()
}

/// `d/dx E[tau(x, 0) ^ T]` at `x = 0`, i.e. `sqrt(8 T / pi)`; the supremum of
/// the slope over `x >= 0`.
pub fn bm_exit_slope_at_zero(horizon: f64) -> f64 {
    (8.0 * horizon / PI).sqrt()
}

type Fn1 = dyn Fn(f64) -> f64 + Send + Sync;

/// `zeta(x) = int_0^x dz / sigma(z)` with its inverse and the drift of the
/// unit-volatility process `dY = -sigma'(zeta^{-1}(Y))/2 ds + dW`.
#[derive(Clone)]
pub struct Lamperti {
    sigma: Arc<Fn1>,
    sigma_prime: Arc<Fn1>,
    step: f64,
    /// `zeta(k * step)` for `k = 0..`.
    table: Arc<Vec<f64>>,
}

const LAMPERTI_STEP: f64 = 1.0 / 16.0;

/// Builds the transform on the working range `[0, x_range]`. `sigma` must be
/// positive there; the table is extended on demand beyond it by quadrature.
pub fn lamperti(
    sigma: impl Fn(f64) -> f64 + Send + Sync + 'static,
    sigma_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
    x_range: f64,
) -> Result<Lamperti> {
    if !(x_range.is_finite() && x_range > 0.0) {
        return Err(Error::Precondition(format!("x_range must be positive, got {x_range}")));
    }
    let checks = 4096;
    for k in 0..=checks {
        let x = x_range * k as f64 / checks as f64;
        let s = sigma(x);
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::Precondition(format!(
                "sigma must be positive on [0, {x_range}], got sigma({x}) = {s}"
            )));
        }
    }
    let n = (x_range / LAMPERTI_STEP).ceil() as usize + 1;
    let mut table = Vec::with_capacity(n + 1);
    table.push(0.0);
    let inv = |z: f64| 1.0 / sigma(z);
    for k in 0..n {
        let a = k as f64 * LAMPERTI_STEP;
        let prev = table[k];
        table.push(prev + integrate(inv, a, a + LAMPERTI_STEP, 1e-14));
    }
    Ok(Lamperti {
        sigma: Arc::new(sigma),
        sigma_prime: Arc::new(sigma_prime),
        step: LAMPERTI_STEP,
        table: Arc::new(table),
    })
}

impl Lamperti {
    fn table_end(&self) -> f64 {
        (self.table.len() - 1) as f64 * self.step
    }

    pub fn zeta(&self, x: f64) -> f64 {
        let inv = |z: f64| 1.0 / (self.sigma)(z);
        if x <= 0.0 {
            return -integrate(inv, x, 0.0, 1e-14);
        }
        let end = self.table_end();
        if x >= end {
            return self.table[self.table.len() - 1] + integrate(inv, end, x, 1e-14);
        }
        let k = (x / self.step).floor() as usize;
        let a = k as f64 * self.step;
        self.table[k] + integrate(inv, a, x, 1e-14)
    }

    /// Inverse of [`Lamperti::zeta`] by bracketed Newton iteration.
    pub fn zeta_inv(&self, y: f64) -> f64 {
        let (mut lo, mut hi) = self.bracket(y);
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let g = self.zeta(x) - y;
            if g > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let newton = x - g * (self.sigma)(x);
            let next = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - x).abs() <= 1e-13 * (1.0 + x.abs()) || hi - lo <= 1e-13 {
                return next;
            }
            x = next;
        }
        x
    }

    fn bracket(&self, y: f64) -> (f64, f64) {
        let zmax = self.table[self.table.len() - 1];
        if y >= 0.0 && y <= zmax {
            // table is increasing
            let k = self.table.partition_point(|&z| z <= y);
            let k = k.clamp(1, self.table.len() - 1);
            return ((k - 1) as f64 * self.step, k as f64 * self.step);
        }
        let (mut lo, mut hi) = if y > zmax {
            (self.table_end(), self.table_end() + 1.0)
        } else {
            (-1.0, 0.0)
        };
        let mut width = 1.0;
        while y > zmax && self.zeta(hi) < y {
            lo = hi;
            width *= 2.0;
            hi += width;
        }
        while y < 0.0 && self.zeta(lo) > y {
            hi = lo;
            width *= 2.0;
            lo -= width;
        }
        (lo, hi)
    }

    /// `-sigma'(zeta^{-1}(y)) / 2`.
    pub fn transformed_drift(&self, y: f64) -> f64 {
        -0.5 * (self.sigma_prime)(self.zeta_inv(y))
    }

    /// Piecewise-linear table of [`Lamperti::transformed_drift`] on
    /// `[y_lo, y_hi]`, clamped outside.
    pub fn tabulated_drift(&self, y_lo: f64, y_hi: f64, n: usize) -> impl Fn(f64) -> f64 + Send + Sync + Clone {
        let n = n.max(2);
        let h = (y_hi - y_lo) / (n - 1) as f64;
        let values: Arc<Vec<f64>> = Arc::new(
            (0..n)
                .map(|k| self.transformed_drift(y_lo + k as f64 * h))
                .collect(),
        );
        move |y: f64| {
            let s = ((y - y_lo) / h).clamp(0.0, (n - 1) as f64);
            let k = (s.floor() as usize).min(n - 2);
            let w = s - k as f64;
            values[k] * (1.0 - w) + values[k + 1] * w
        }
    }
}

/// Deterministic clock `t -> T - int_t^T gamma(s)^2 ds` on `[0, T]`.
#[derive(Clone)]
pub struct TimeChange {
    pub horizon: f64,
    /// `T - int_0^T gamma^2`.
    pub t0: f64,
    gamma: Arc<Fn1>,
    step: f64,
    /// `int_0^{k step} gamma^2`.
    cumulative: Arc<Vec<f64>>,
}

const TIME_CHANGE_SEGMENTS: usize = 256;

pub fn time_change(gamma: impl Fn(f64) -> f64 + Send + Sync + 'static, horizon: f64) -> Result<TimeChange> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::Precondition(format!("horizon must be positive, got {horizon}")));
    }
    let checks = 4096;
    for k in 0..=checks {
        let s = horizon * k as f64 / checks as f64;
        let g = gamma(s);
        if !(g.is_finite() && g.abs() > 1e-12) {
            return Err(Error::Precondition(format!(
                "gamma must be bounded away from zero on [0, {horizon}], got gamma({s}) = {g}"
            )));
        }
    }
    let step = horizon / TIME_CHANGE_SEGMENTS as f64;
    let sq = |s: f64| {
        let g = gamma(s);
        g * g
    };
    let mut cumulative = Vec::with_capacity(TIME_CHANGE_SEGMENTS + 1);
    cumulative.push(0.0);
    for k in 0..TIME_CHANGE_SEGMENTS {
        let a = k as f64 * step;
        let b = if k + 1 == TIME_CHANGE_SEGMENTS { horizon } else { a + step };
        let prev = cumulative[k];
        cumulative.push(prev + integrate(sq, a, b, 1e-15));
    }
    let total = cumulative[TIME_CHANGE_SEGMENTS];
    Ok(TimeChange {
        horizon,
        t0: horizon - total,
        gamma: Arc::new(gamma),
        step,
        cumulative: Arc::new(cumulative),
    })
}

impl TimeChange {
    fn integral_to(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.horizon);
        let k = ((t / self.step).floor() as usize).min(TIME_CHANGE_SEGMENTS - 1);
        let a = k as f64 * self.step;
        let sq = |s: f64| {
            let g = (self.gamma)(s);
            g * g
        };
        self.cumulative[k] + integrate(sq, a, t, 1e-15)
    }

    /// `T - int_t^T gamma(s)^2 ds`.
    pub fn map(&self, t: f64) -> f64 {
        let total = self.cumulative[TIME_CHANGE_SEGMENTS];
        self.horizon - (total - self.integral_to(t))
    }

    /// Inverse of [`TimeChange::map`] on `[t0, T]`.
    pub fn inverse(&self, r: f64) -> f64 {
        if r <= self.t0 {
            return 0.0;
        }
        if r >= self.horizon {
            return self.horizon;
        }
        let (mut lo, mut hi) = (0.0, self.horizon);
        let mut t = self.horizon * (r - self.t0) / (self.horizon - self.t0);
        for _ in 0..200 {
            let g = self.map(t) - r;
            if g > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let d = (self.gamma)(t);
            let newton = t - g / (d * d);
            let next = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - t).abs() <= 1e-14 * (1.0 + t.abs()) || hi - lo <= 1e-14 {
                return next;
            }
            t = next;
        }
        t
    }

    pub fn gamma(&self, s: f64) -> f64 {
        (self.gamma)(s)
    }
}
