//! TOML problem files.
//!
//! ```toml
//! [problem]
//! horizon = 1.0
//! sigma = { kind = "constant", value = 1.0 }
//! drift = { kind = "polynomial", terms = [{ coef = 1.0, alpha = 1 }] }
//! running_reward = { kind = "constant", value = 1.0 }
//! controls = { kind = "interval", lo = -1.0, hi = 1.0 }
//!
//! [mesh]
//! x_max = 8.0
//! nx = 161
//! nt = 401
//! ```
//!
//! Every section except `[problem]` is optional. Unknown keys are rejected.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{
    BoundaryData, ControlSet, ControlledField, DeclaredConstants, ExitTimeCheck, ProblemSpec,
    Sampling, ScalarField2, ValidationOptions, DEFAULT_CONTROL_POINTS,
};
use crate::montecarlo::McConfig;
use crate::pde::{FarField, Mesh, SchemeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Var {
    X,
    T,
    Alpha,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub coef: f64,
    #[serde(default)]
    pub x: u32,
    #[serde(default)]
    pub t: u32,
    #[serde(default)]
    pub alpha: u32,
}

/// Built-in field families, evaluated at `(x, t, alpha)`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Constant {
        value: f64,
    },
    /// `sum coef * x^i t^j alpha^k`.
    Polynomial {
        terms: Vec<Term>,
    },
    /// `clamp(offset + scale * exp(rate * var), lo, hi)`.
    ClampedExp {
        scale: f64,
        rate: f64,
        #[serde(default = "default_var")]
        var: Var,
        #[serde(default)]
        offset: f64,
        lo: Option<f64>,
        hi: Option<f64>,
    },
    /// Piecewise linear through `points`, constant outside.
    Tabulated {
        #[serde(default = "default_var")]
        var: Var,
        points: Vec<[f64; 2]>,
    },
}

fn default_var() -> Var {
    Var::X
}

impl FieldSpec {
    fn check(&self, name: &str) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("field `{name}`: {msg}")));
        match self {
            FieldSpec::Constant { value } if !value.is_finite() => bad("constant is not finite".into()),
            FieldSpec::Polynomial { terms } if terms.iter().any(|t| !t.coef.is_finite()) => {
                bad("polynomial coefficient is not finite".into())
            }
            FieldSpec::ClampedExp { lo: Some(lo), hi: Some(hi), .. } if lo > hi => {
                bad(format!("clamp bounds lo = {lo} > hi = {hi}"))
            }
            FieldSpec::Tabulated { points, .. } => {
                if points.is_empty() {
                    return bad("tabulated field needs at least one point".into());
                }
                if points.iter().flatten().any(|v| !v.is_finite()) {
                    return bad("tabulated field contains a non-finite value".into());
                }
                if points.windows(2).any(|w| w[1][0] <= w[0][0]) {
                    return bad("tabulated abscissae must be strictly increasing".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn uses_alpha(&self) -> bool {
        match self {
            FieldSpec::Constant { .. } => false,
            FieldSpec::Polynomial { terms } => terms.iter().any(|t| t.alpha > 0 && t.coef != 0.0),
            FieldSpec::ClampedExp { var, .. } | FieldSpec::Tabulated { var, .. } => *var == Var::Alpha,
        }
    }

    /// Closure `(x, t, alpha) -> value`.
    pub fn build(&self) -> impl Fn(f64, f64, f64) -> f64 + Send + Sync + Clone + 'static {
        let spec = self.clone();
        move |x, t, a| spec.eval(x, t, a)
    }

    pub fn eval(&self, x: f64, t: f64, a: f64) -> f64 {
        let pick = |v: Var| match v {
            Var::X => x,
            Var::T => t,
            Var::Alpha => a,
        };
        match self {
            FieldSpec::Constant { value } => *value,
            FieldSpec::Polynomial { terms } => terms
                .iter()
                .map(|m| m.coef * x.powi(m.x as i32) * t.powi(m.t as i32) * a.powi(m.alpha as i32))
                .sum(),
            FieldSpec::ClampedExp {
                scale,
                rate,
                var,
                offset,
                lo,
                hi,
            } => {
                let v = offset + scale * (rate * pick(*var)).exp();
                v.max(lo.unwrap_or(f64::NEG_INFINITY)).min(hi.unwrap_or(f64::INFINITY))
            }
            FieldSpec::Tabulated { var, points } => interp(points, pick(*var)),
        }
    }

    fn constant_value(&self) -> Option<f64> {
        match self {
            FieldSpec::Constant { value } => Some(*value),
            _ => None,
        }
    }

    fn scalar(&self, name: &str) -> Result<ScalarField2> {
        self.check(name)?;
        if self.uses_alpha() {
            return Err(Error::Config(format!("field `{name}` may not depend on alpha")));
        }
        Ok(match self.constant_value() {
            Some(c) => ScalarField2::constant(c),
            None => {
                let f = self.build();
                ScalarField2::new(move |x, t| f(x, t, 0.0))
            }
        })
    }

    fn controlled(&self, name: &str) -> Result<ControlledField> {
        self.check(name)?;
        Ok(match self.constant_value() {
            Some(c) => ControlledField::constant(c),
            None => ControlledField::new(self.build()),
        })
    }
}

fn interp(points: &[[f64; 2]], v: f64) -> f64 {
    let k = points.partition_point(|p| p[0] <= v);
    if k == 0 {
        return points[0][1];
    }
    if k == points.len() {
        return points[k - 1][1];
    }
    let [x0, y0] = points[k - 1];
    let [x1, y1] = points[k];
    y0 + (y1 - y0) * (v - x0) / (x1 - x0)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlsSpec {
    Interval {
        lo: f64,
        hi: f64,
        #[serde(default = "default_control_points")]
        n: usize,
    },
    Finite {
        values: Vec<f64>,
    },
}

fn default_control_points() -> usize {
    DEFAULT_CONTROL_POINTS
}

fn zero_field() -> FieldSpec {
    FieldSpec::Constant { value: 0.0 }
}

fn unit_field() -> FieldSpec {
    FieldSpec::Constant { value: 1.0 }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub horizon: f64,
    #[serde(default = "unit_field")]
    pub sigma: FieldSpec,
    #[serde(default = "zero_field")]
    pub drift: FieldSpec,
    #[serde(default = "zero_field")]
    pub discount: FieldSpec,
    #[serde(default = "zero_field")]
    pub running_reward: FieldSpec,
    /// `beta(x, T)`, read as `f(x, T, 0)`.
    #[serde(default = "zero_field")]
    pub terminal: FieldSpec,
    /// `beta(0, t)`, read as `f(0, t, 0)`; defaults to the constant `terminal(0)`.
    pub lateral: Option<FieldSpec>,
    pub boundary_bound: Option<f64>,
    pub controls: ControlsSpec,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub x_max: f64,
    pub nx: usize,
    pub nt: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            x_max: 8.0,
            nx: 161,
            nt: 401,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeSection {
    pub theta: f64,
    pub far_field: FarField,
}

impl Default for SchemeSection {
    fn default() -> Self {
        let s = SchemeConfig::default();
        Self {
            theta: s.theta,
            far_field: s.far_field,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IterationConfig {
    /// Explicit weight; otherwise chosen from `k` and `m`.
    pub kappa: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub safety: f64,
    /// Gradient constant; calibrated on the mesh when absent.
    pub m: Option<f64>,
    /// Hamiltonian Lipschitz constant; estimated when absent.
    pub k: Option<f64>,
    pub seed: u64,
}

impl Default for IterationConfig {
    fn default() -> Self {
        Self {
            kappa: None,
            tol: 1e-8,
            max_iter: 200,
            safety: 1.5,
            m: None,
            k: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub bridge: bool,
    pub workers: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        let m = McConfig::default();
        Self {
            paths: m.n_paths,
            dt: m.dt,
            seed: m.seed,
            bridge: m.bridge_correction,
            workers: m.n_workers,
        }
    }
}

impl MonteCarloConfig {
    pub fn to_mc(&self) -> McConfig {
        McConfig {
            n_paths: self.paths,
            dt: self.dt,
            seed: self.seed,
            bridge_correction: self.bridge,
            n_workers: self.workers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub points: usize,
    pub x_range: [f64; 2],
    pub seed: u64,
    pub sigma_lower: Option<f64>,
    pub sigma_upper: Option<f64>,
    pub sigma_lipschitz: Option<f64>,
    pub boundary_bound: Option<f64>,
    pub boundary_lipschitz: Option<f64>,
    pub coefficient_bound: Option<f64>,
    pub coefficient_lipschitz: Option<f64>,
    pub hamiltonian_k: Option<f64>,
    pub exit_lipschitz: Option<f64>,
    /// Runs the Monte Carlo exit-time sweep.
    pub exit_time: bool,
    pub exit_paths: usize,
    pub exit_levels: usize,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        let s = Sampling::default();
        let e = ExitTimeCheck::default();
        Self {
            points: s.n_points,
            x_range: [s.x_range.0, s.x_range.1],
            seed: s.seed,
            sigma_lower: None,
            sigma_upper: None,
            sigma_lipschitz: None,
            boundary_bound: None,
            boundary_lipschitz: None,
            coefficient_bound: None,
            coefficient_lipschitz: None,
            hamiltonian_k: None,
            exit_lipschitz: None,
            exit_time: false,
            exit_paths: e.mc.n_paths,
            exit_levels: e.n_levels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub scheme: SchemeSection,
    #[serde(default)]
    pub iteration: IterationConfig,
    #[serde(default)]
    pub montecarlo: MonteCarloConfig,
    #[serde(default)]
    pub validation: ValidationConfig,
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

impl Config {
    pub fn parse(src: &str) -> Result<Self> {
        toml::from_str(src).map_err(|e| {
            let msg = e.message().trim().to_string();
            match e.span() {
                Some(span) => Error::Config(format!("line {}: {msg}", line_of(src, span.start))),
                None => Error::Config(msg),
            }
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let src = std::fs::read_to_string(path)?;
        Self::parse(&src).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        let p = &self.problem;
        let horizon = p.horizon;
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        let sigma = p.sigma.scalar("sigma")?;
        let terminal = p.terminal.scalar("terminal")?;
        let lateral = match &p.lateral {
            Some(l) => l.scalar("lateral")?,
            None => ScalarField2::constant(terminal.eval(0.0, horizon)),
        };
        let boundary = match (terminal.as_constant(), lateral.as_constant()) {
            (Some(a), Some(b)) if a == b => BoundaryData::constant(a, horizon),
            _ => {
                let (tm, lt) = (terminal.clone(), lateral.clone());
                BoundaryData::new(move |x| tm.eval(x, horizon), move |t| lt.eval(0.0, t), horizon)
                    .map_err(|e| Error::Config(e.to_string()))?
            }
        };
        let boundary = match p.boundary_bound {
            Some(b) => boundary.with_bound(b),
            None => boundary,
        };
        let controls = match &p.controls {
            ControlsSpec::Interval { lo, hi, n } => ControlSet::interval_with(*lo, *hi, *n),
            ControlsSpec::Finite { values } => ControlSet::finite(values.clone()),
        }
        .map_err(|e| Error::Config(e.to_string()))?;
        ProblemSpec::new(
            sigma,
            p.drift.controlled("drift")?,
            p.discount.controlled("discount")?,
            p.running_reward.controlled("running_reward")?,
            boundary,
            controls,
            horizon,
        )
    }

    pub fn mesh(&self) -> Result<Mesh> {
        Mesh::new(self.mesh.x_max, self.mesh.nx, self.mesh.nt, self.problem.horizon)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn scheme(&self) -> SchemeConfig {
        SchemeConfig {
            theta: self.scheme.theta,
            far_field: self.scheme.far_field,
        }
    }

    pub fn validation_options(&self) -> ValidationOptions {
        let v = &self.validation;
        let mc = self.montecarlo.to_mc();
        ValidationOptions {
            sampling: Sampling {
                n_points: v.points,
                x_range: (v.x_range[0], v.x_range[1]),
                seed: v.seed,
            },
            declared: DeclaredConstants {
                sigma_lower: v.sigma_lower,
                sigma_upper: v.sigma_upper,
                sigma_lipschitz: v.sigma_lipschitz,
                boundary_bound: v.boundary_bound,
                boundary_lipschitz: v.boundary_lipschitz,
                coefficient_bound: v.coefficient_bound,
                coefficient_lipschitz: v.coefficient_lipschitz,
                hamiltonian_k: v.hamiltonian_k,
                exit_lipschitz: v.exit_lipschitz,
            },
            exit_time: v.exit_time.then(|| ExitTimeCheck {
                mc: McConfig {
                    n_paths: v.exit_paths,
                    ..mc
                },
                n_levels: v.exit_levels,
                times: vec![0.0],
            }),
        }
    }
}
