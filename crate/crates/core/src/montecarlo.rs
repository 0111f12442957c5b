//! Euler–Maruyama simulation of diffusions absorbed at `x = 0`, with optional
//! Brownian-bridge exit correction.
//!
//! Every path draws from its own ChaCha8 stream `(seed, path index)`, so
//! estimates are bit-identical for a given seed whatever the worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoundaryData, ControlSet, ProblemSpec, ScalarField2};
use crate::pde::Mesh;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_paths: usize,
    /// Euler step.
    pub dt: f64,
    pub seed: u64,
    pub bridge_correction: bool,
    pub n_workers: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_paths: 10_000,
            dt: 1e-3,
            seed: 0,
            bridge_correction: true,
            n_workers: 1,
        }
    }
}

impl McConfig {
    fn check(&self, span: f64) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::Precondition("n_paths must be >= 1".into()));
        }
        if self.n_workers == 0 {
            return Err(Error::Precondition("n_workers must be >= 1".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Precondition(format!("dt must be positive, got {}", self.dt)));
        }
        if span > 0.0 && self.dt > span * (1.0 + 1e-12) {
            return Err(Error::Precondition(format!(
                "dt = {} exceeds the simulated horizon {span}",
                self.dt
            )));
        }
        Ok(())
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
}

impl McEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        // shifted by the first sample so constant samples give an exact mean
        let shift = samples.first().copied().unwrap_or(0.0);
        let mean = shift + samples.iter().map(|v| v - shift).sum::<f64>() / n as f64;
        let var = if n > 1 {
            samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            stderr: (var / n as f64).sqrt(),
            n_paths: n,
        }
    }

    /// `sqrt(se_a^2 + se_b^2)`.
    pub fn combined_stderr(&self, other: &McEstimate) -> f64 {
        self.stderr.hypot(other.stderr)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("estimate serializes")
    }
}

/// Outcome of one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitSample {
    /// `tau ^ T`.
    pub exit_time: f64,
    /// `X_{tau ^ T}`; 0 when the path was absorbed.
    pub terminal_state: f64,
    pub exited: bool,
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Runs one absorbed Euler path. `coeffs(x, t)` returns `(drift, sigma)`;
/// `visit(x_k, t_k, h)` is called for every step actually lived, with `h`
/// the part of the step before exit.
#[allow(clippy::too_many_arguments)]
fn run_path<R: Rng>(
    rng: &mut R,
    x0: f64,
    t0: f64,
    horizon: f64,
    dt: f64,
    bridge: bool,
    mut coeffs: impl FnMut(f64, f64) -> (f64, f64),
    mut visit: impl FnMut(f64, f64, f64),
    mut record: Option<&mut Vec<(f64, f64)>>,
) -> ExitSample {
    if let Some(r) = record.as_deref_mut() {
        r.push((t0, x0.max(0.0)));
    }
    if x0 <= 0.0 {
        return ExitSample {
            exit_time: t0,
            terminal_state: 0.0,
            exited: true,
        };
    }
    let mut x = x0;
    let mut t = t0;
    let mut k: u64 = 0;
    let end_tol = 1e-12 * horizon.abs().max(1.0);
    while t < horizon - end_tol {
        k += 1;
        let mut t_next = t0 + k as f64 * dt;
        if t_next > horizon - end_tol {
            t_next = horizon;
        }
        let h = t_next - t;
        let (b, s) = coeffs(x, t);
        let z: f64 = rng.sample(StandardNormal);
        let x_next = x + b * h + s * h.sqrt() * z;
        if x_next <= 0.0 {
            visit(x, t, h);
            if let Some(r) = record.as_deref_mut() {
                r.push((t_next, 0.0));
            }
            return ExitSample {
                exit_time: t_next,
                terminal_state: 0.0,
                exited: true,
            };
        }
        if bridge {
            let p = (-2.0 * x * x_next / (s * s * h)).exp();
            if p > 0.0 && rng.random::<f64>() < p {
                let mid = t + 0.5 * h;
                visit(x, t, 0.5 * h);
                if let Some(r) = record.as_deref_mut() {
                    r.push((mid, 0.0));
                }
                return ExitSample {
                    exit_time: mid,
                    terminal_state: 0.0,
                    exited: true,
                };
            }
        }
        visit(x, t, h);
        x = x_next;
        t = t_next;
        if let Some(r) = record.as_deref_mut() {
            r.push((t, x));
        }
    }
    ExitSample {
        exit_time: horizon,
        terminal_state: x,
        exited: false,
    }
}

/// Maps `per_path` over path indices on `n_workers` threads, preserving order.
fn map_paths<T: Send>(cfg: &McConfig, per_path: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    if cfg.n_workers <= 1 {
        return (0..cfg.n_paths).map(per_path).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.n_workers)
        .build()
        .expect("thread pool");
    pool.install(|| (0..cfg.n_paths).into_par_iter().map(per_path).collect())
}

/// Per-path exit samples of `dX = drift(X, s) ds + sigma(X, s) dW` from `(x, t)`,
/// with replay access to individual trajectories.
pub struct ExitSimulation<'a> {
    pub samples: Vec<ExitSample>,
    x: f64,
    t: f64,
    horizon: f64,
    sigma: &'a ScalarField2,
    drift: &'a (dyn Fn(f64, f64) -> f64 + Sync),
    cfg: McConfig,
}

impl ExitSimulation<'_> {
    /// Re-simulates path `i`, returning its `(time, state)` points.
    pub fn trajectory(&self, i: usize) -> Vec<(f64, f64)> {
        let mut rng = path_rng(self.cfg.seed, i);
        let mut out = Vec::new();
        run_path(
            &mut rng,
            self.x,
            self.t,
            self.horizon,
            self.cfg.dt,
            self.cfg.bridge_correction,
            |x, s| ((self.drift)(x, s), self.sigma.eval(x, s)),
            |_, _, _| {},
            Some(&mut out),
        );
        out
    }

    pub fn exit_time_estimate(&self) -> McEstimate {
        let v: Vec<f64> = self.samples.iter().map(|s| s.exit_time).collect();
        McEstimate::from_samples(&v)
    }
}

pub fn simulate_exit<'a>(
    x: f64,
    t: f64,
    horizon: f64,
    sigma: &'a ScalarField2,
    drift: &'a (dyn Fn(f64, f64) -> f64 + Sync),
    cfg: &McConfig,
) -> Result<ExitSimulation<'a>> {
    check_start(x, t, horizon)?;
    cfg.check(horizon - t)?;
    let samples = map_paths(cfg, |i| {
        let mut rng = path_rng(cfg.seed, i);
        run_path(
            &mut rng,
            x,
            t,
            horizon,
            cfg.dt,
            cfg.bridge_correction,
            |y, s| (drift(y, s), sigma.eval(y, s)),
            |_, _, _| {},
            None,
        )
    });
    Ok(ExitSimulation {
        samples,
        x,
        t,
        horizon,
        sigma,
        drift,
        cfg: *cfg,
    })
}

fn check_start(x: f64, t: f64, horizon: f64) -> Result<()> {
    if !(x.is_finite() && x >= 0.0) {
        return Err(Error::Precondition(format!("start state must be >= 0, got {x}")));
    }
    if !(t.is_finite() && t <= horizon) {
        return Err(Error::Precondition(format!(
            "start time {t} must not exceed the horizon {horizon}"
        )));
    }
    Ok(())
}

/// `E[tau(x, t) ^ T]` for `dX = sigma(X, s) dW`.
pub fn expected_exit_time(x: f64, t: f64, horizon: f64, sigma: &ScalarField2, cfg: &McConfig) -> Result<McEstimate> {
    let zero = |_: f64, _: f64| 0.0;
    Ok(simulate_exit(x, t, horizon, sigma, &zero, cfg)?.exit_time_estimate())
}

/// Feynman–Kac estimate `E[beta(X_{tau^T}, tau^T) + int_t^{tau^T} f(X_s, s) ds]`
/// with a left-endpoint sum for the integral.
pub fn fk_estimate(
    f: &ScalarField2,
    boundary: &BoundaryData,
    sigma: &ScalarField2,
    x: f64,
    t: f64,
    cfg: &McConfig,
) -> Result<McEstimate> {
    let horizon = boundary.horizon();
    check_start(x, t, horizon)?;
    cfg.check(horizon - t)?;
    let values = map_paths(cfg, |i| {
        let mut rng = path_rng(cfg.seed, i);
        let mut integral = 0.0;
        let s = run_path(
            &mut rng,
            x,
            t,
            horizon,
            cfg.dt,
            cfg.bridge_correction,
            |y, s| (0.0, sigma.eval(y, s)),
            |y, s, h| integral += f.eval(y, s) * h,
            None,
        );
        boundary.eval(s.terminal_state, s.exit_time) + integral
    });
    finite_estimate(&values, "source")
}

fn finite_estimate(values: &[f64], field: &'static str) -> Result<McEstimate> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation {
            field,
            x: f64::NAN,
            t: f64::NAN,
            alpha: None,
        });
    }
    Ok(McEstimate::from_samples(values))
}

/// Markov control `alpha(x, t)` stored on mesh nodes and looked up at the
/// nearest node.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackPolicy {
    mesh: Mesh,
    controls: ControlSet,
    values: Vec<f64>,
}

impl FeedbackPolicy {
    /// Fails with a data error if any value lies outside `controls`.
    pub fn new(mesh: Mesh, controls: ControlSet, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.len() {
            return Err(Error::ShapeMismatch(format!(
                "policy has {} values for {} nodes",
                values.len(),
                mesh.len()
            )));
        }
        let p = Self {
            mesh,
            controls,
            values,
        };
        p.check_values()?;
        Ok(p)
    }

    pub fn from_fn(mesh: Mesh, controls: ControlSet, mut f: impl FnMut(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(mesh.len());
        for j in 0..mesh.n_t {
            for i in 0..mesh.n_x {
                values.push(f(mesh.x(i), mesh.t(j)));
            }
        }
        Self::new(mesh, controls, values)
    }

    fn check_values(&self) -> Result<()> {
        for (k, &a) in self.values.iter().enumerate() {
            if !self.controls.contains(a) {
                return Err(Error::Data(format!(
                    "policy value {a} at time level {}, node {} lies outside the control set",
                    k / self.mesh.n_x,
                    k % self.mesh.n_x
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, x: f64, t: f64) -> f64 {
        let j = self.mesh.nearest_t(t);
        let i = self.mesh.nearest_x(x);
        self.values[j * self.mesh.n_x + i]
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn controls(&self) -> &ControlSet {
        &self.controls
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.values[j * self.mesh.n_x + i]
    }

    /// CSV `x,t,alpha`, row-major by time level.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "x,t,alpha")?;
        for j in 0..self.mesh.n_t {
            let t = self.mesh.t(j);
            for i in 0..self.mesh.n_x {
                writeln!(w, "{},{t},{}", self.mesh.x(i), self.get(j, i))?;
            }
        }
        Ok(())
    }
}

/// Monte Carlo value `J^alpha(x, t)` of a feedback policy.
pub fn evaluate_policy(
    policy: &FeedbackPolicy,
    spec: &ProblemSpec,
    x: f64,
    t: f64,
    cfg: &McConfig,
) -> Result<McEstimate> {
    if policy.controls != spec.controls {
        policy
            .values
            .iter()
            .find(|a| !spec.controls.contains(**a))
            .map_or(Ok(()), |a| {
                Err(Error::Data(format!(
                    "policy value {a} lies outside the problem's control set"
                )))
            })?;
    }
    let horizon = spec.horizon;
    check_start(x, t, horizon)?;
    cfg.check(horizon - t)?;
    let values = map_paths(cfg, |i| {
        let mut rng = path_rng(cfg.seed, i);
        let mut log_discount = 0.0_f64;
        let mut running = 0.0;
        let s = run_path(
            &mut rng,
            x,
            t,
            horizon,
            cfg.dt,
            cfg.bridge_correction,
            |y, s| {
                let a = policy.eval(y, s);
                (spec.drift.eval(y, s, a), spec.sigma.eval(y, s))
            },
            |y, s, h| {
                let a = policy.eval(y, s);
                running += log_discount.exp() * spec.running_reward.eval(y, s, a) * h;
                log_discount += spec.discount.eval(y, s, a) * h;
            },
            None,
        );
        running + log_discount.exp() * spec.boundary.eval(s.terminal_state, s.exit_time)
    });
    finite_estimate(&values, "running_reward")
}
