//! Problem data: coefficient fields, control sets, boundary data and the two
//! problem forms (controlled exit-time problem and general semilinear form).

mod validate;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hamiltonian;

pub use validate::{
    validate_assumptions, AssumptionCheck, DeclaredConstants, ExitTimeCheck, ProblemRef, Sampling,
    ValidationOptions, ValidationReport, WorstPair,
};

/// Tolerance for the corner consistency `terminal(0) == lateral(T)`.
pub const CORNER_TOLERANCE: f64 = 1e-12;

type Fn2 = dyn Fn(f64, f64) -> f64 + Send + Sync;
type Fn3 = dyn Fn(f64, f64, f64) -> f64 + Send + Sync;
type Fn1 = dyn Fn(f64) -> f64 + Send + Sync;

/// A real field of `(x, t)`.
#[derive(Clone)]
pub struct ScalarField2 {
    f: Arc<Fn2>,
    constant: Option<f64>,
}

impl ScalarField2 {
    pub fn new(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            f: Arc::new(f),
            constant: None,
        }
    }

    pub fn constant(value: f64) -> Self {
        Self {
            f: Arc::new(move |_, _| value),
            constant: Some(value),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64, t: f64) -> f64 {
        (self.f)(x, t)
    }

    /// Evaluates and rejects non-finite output, naming `field` in the error.
    pub fn try_eval(&self, field: &'static str, x: f64, t: f64) -> Result<f64> {
        let v = self.eval(x, t);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation {
                field,
                x,
                t,
                alpha: None,
            })
        }
    }

    /// `Some(c)` when the field was built as a constant.
    pub fn as_constant(&self) -> Option<f64> {
        self.constant
    }
}

impl fmt::Debug for ScalarField2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.constant {
            Some(c) => write!(f, "ScalarField2::constant({c})"),
            None => f.write_str("ScalarField2(<fn>)"),
        }
    }
}

/// A real field of `(x, t, alpha)`.
#[derive(Clone)]
pub struct ControlledField {
    f: Arc<Fn3>,
    constant: Option<f64>,
}

impl ControlledField {
    pub fn new(f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            f: Arc::new(f),
            constant: None,
        }
    }

    pub fn constant(value: f64) -> Self {
        Self {
            f: Arc::new(move |_, _, _| value),
            constant: Some(value),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64, t: f64, alpha: f64) -> f64 {
        (self.f)(x, t, alpha)
    }

    pub fn try_eval(&self, field: &'static str, x: f64, t: f64, alpha: f64) -> Result<f64> {
        let v = self.eval(x, t, alpha);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation {
                field,
                x,
                t,
                alpha: Some(alpha),
            })
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        self.constant
    }
}

impl fmt::Debug for ControlledField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.constant {
            Some(c) => write!(f, "ControlledField::constant({c})"),
            None => f.write_str("ControlledField(<fn>)"),
        }
    }
}

/// Compact one-dimensional control set.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlSet {
    /// `[lo, hi]`, searched on an `n`-point uniform grid plus refinement.
    Interval { lo: f64, hi: f64, n: usize },
    Finite(Vec<f64>),
}

/// Default grid size for interval control sets.
pub const DEFAULT_CONTROL_POINTS: usize = 33;

const CONTROL_MEMBERSHIP_TOL: f64 = 1e-12;

impl ControlSet {
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::interval_with(lo, hi, DEFAULT_CONTROL_POINTS)
    }

    pub fn interval_with(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::Precondition(format!(
                "control interval requires finite lo <= hi, got [{lo}, {hi}]"
            )));
        }
        if n < 2 {
            return Err(Error::Precondition(format!(
                "control interval needs at least 2 grid points, got {n}"
            )));
        }
        Ok(ControlSet::Interval { lo, hi, n })
    }

    pub fn finite(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Precondition("finite control set is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition(
                "finite control set contains a non-finite value".into(),
            ));
        }
        values.sort_by(f64::total_cmp);
        if values.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Precondition(
                "finite control set contains duplicates".into(),
            ));
        }
        Ok(ControlSet::Finite(values))
    }

    /// Candidate controls in increasing order.
    pub fn grid(&self) -> Vec<f64> {
        match self {
            ControlSet::Interval { lo, hi, n } => {
                if lo == hi {
                    return vec![*lo];
                }
                let h = (hi - lo) / (*n as f64 - 1.0);
                (0..*n)
                    .map(|k| if k + 1 == *n { *hi } else { lo + k as f64 * h })
                    .collect()
            }
            ControlSet::Finite(v) => v.clone(),
        }
    }

    pub fn contains(&self, alpha: f64) -> bool {
        match self {
            ControlSet::Interval { lo, hi, .. } => {
                alpha >= lo - CONTROL_MEMBERSHIP_TOL && alpha <= hi + CONTROL_MEMBERSHIP_TOL
            }
            ControlSet::Finite(v) => v
                .iter()
                .any(|a| (a - alpha).abs() <= CONTROL_MEMBERSHIP_TOL),
        }
    }

    pub fn min(&self) -> f64 {
        match self {
            ControlSet::Interval { lo, .. } => *lo,
            ControlSet::Finite(v) => v[0],
        }
    }

    pub fn max(&self) -> f64 {
        match self {
            ControlSet::Interval { hi, .. } => *hi,
            ControlSet::Finite(v) => v[v.len() - 1],
        }
    }

    /// Midpoint for intervals, the median element (lower one for even sizes)
    /// for finite sets.
    pub fn middle(&self) -> f64 {
        match self {
            ControlSet::Interval { lo, hi, .. } => 0.5 * (lo + hi),
            ControlSet::Finite(v) => v[(v.len() - 1) / 2],
        }
    }
}

/// Boundary data on the parabolic boundary: `terminal(x) = beta(x, T)` and
/// `lateral(t) = beta(0, t)`.
#[derive(Clone)]
pub struct BoundaryData {
    terminal: Arc<Fn1>,
    lateral: Arc<Fn1>,
    horizon: f64,
    bound: Option<f64>,
    constant: Option<f64>,
}

impl BoundaryData {
    pub fn new(
        terminal: impl Fn(f64) -> f64 + Send + Sync + 'static,
        lateral: impl Fn(f64) -> f64 + Send + Sync + 'static,
        horizon: f64,
    ) -> Result<Self> {
        let data = Self {
            terminal: Arc::new(terminal),
            lateral: Arc::new(lateral),
            horizon,
            bound: None,
            constant: None,
        };
        data.check_corner()?;
        Ok(data)
    }

    pub fn constant(value: f64, horizon: f64) -> Self {
        Self {
            terminal: Arc::new(move |_| value),
            lateral: Arc::new(move |_| value),
            horizon,
            bound: Some(value.abs()),
            constant: Some(value),
        }
    }

    pub fn zero(horizon: f64) -> Self {
        Self::constant(0.0, horizon)
    }

    /// Attaches a declared bound `sup |beta| <= bound`.
    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = Some(bound);
        self
    }

    fn check_corner(&self) -> Result<()> {
        let a = (self.terminal)(0.0);
        let b = (self.lateral)(self.horizon);
        if !(a.is_finite() && b.is_finite()) || (a - b).abs() > CORNER_TOLERANCE {
            return Err(Error::Precondition(format!(
                "boundary corner mismatch: terminal(0) = {a}, lateral(T) = {b}"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn terminal(&self, x: f64) -> f64 {
        (self.terminal)(x)
    }

    #[inline]
    pub fn lateral(&self, t: f64) -> f64 {
        (self.lateral)(t)
    }

    /// `beta(x, t)` on the parabolic boundary: lateral part at `x <= 0`,
    /// terminal part otherwise.
    #[inline]
    pub fn eval(&self, x: f64, t: f64) -> f64 {
        if x <= 0.0 {
            self.lateral(t)
        } else {
            self.terminal(x)
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn declared_bound(&self) -> Option<f64> {
        self.bound
    }

    pub fn as_constant(&self) -> Option<f64> {
        self.constant
    }
}

impl fmt::Debug for BoundaryData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundaryData")
            .field("horizon", &self.horizon)
            .field("bound", &self.bound)
            .field("constant", &self.constant)
            .finish_non_exhaustive()
    }
}

/// Controlled exit-time problem `sup_alpha J^alpha`.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub sigma: ScalarField2,
    pub drift: ControlledField,
    pub discount: ControlledField,
    pub running_reward: ControlledField,
    pub boundary: BoundaryData,
    pub controls: ControlSet,
    pub horizon: f64,
}

impl ProblemSpec {
    pub fn new(
        sigma: ScalarField2,
        drift: ControlledField,
        discount: ControlledField,
        running_reward: ControlledField,
        boundary: BoundaryData,
        controls: ControlSet,
        horizon: f64,
    ) -> Result<Self> {
        check_horizon(horizon, &boundary)?;
        Ok(Self {
            sigma,
            drift,
            discount,
            running_reward,
            boundary,
            controls,
            horizon,
        })
    }
}

fn check_horizon(horizon: f64, boundary: &BoundaryData) -> Result<()> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::Precondition(format!(
            "horizon must be positive and finite, got {horizon}"
        )));
    }
    if (boundary.horizon() - horizon).abs() > 1e-12 * horizon.max(1.0) {
        return Err(Error::Precondition(format!(
            "boundary horizon {} does not match problem horizon {horizon}",
            boundary.horizon()
        )));
    }
    Ok(())
}

type HamFn = dyn Fn(f64, f64, f64, f64) -> Result<f64> + Send + Sync;

/// `H(p, u, x, t)` of the semilinear equation.
#[derive(Clone)]
pub struct Hamiltonian(Arc<HamFn>);

impl Hamiltonian {
    /// Wraps an infallible closure; non-finite output becomes an evaluation error.
    pub fn new(f: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Hamiltonian(Arc::new(move |p, u, x, t| {
            let v = f(p, u, x, t);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Evaluation {
                    field: "hamiltonian",
                    x,
                    t,
                    alpha: None,
                })
            }
        }))
    }

    pub fn fallible(f: impl Fn(f64, f64, f64, f64) -> Result<f64> + Send + Sync + 'static) -> Self {
        Hamiltonian(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, p: f64, u: f64, x: f64, t: f64) -> Result<f64> {
        (self.0)(p, u, x, t)
    }
}

impl fmt::Debug for Hamiltonian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Hamiltonian(<fn>)")
    }
}

/// `D_t u + sigma^2/2 D_x^2 u + H(D_x u, u, x, t) = 0`, `u = beta` on the
/// parabolic boundary.
#[derive(Debug, Clone)]
pub struct GeneralProblem {
    pub sigma: ScalarField2,
    pub hamiltonian: Hamiltonian,
    pub boundary: BoundaryData,
    pub horizon: f64,
}

impl GeneralProblem {
    pub fn new(
        sigma: ScalarField2,
        hamiltonian: Hamiltonian,
        boundary: BoundaryData,
        horizon: f64,
    ) -> Result<Self> {
        check_horizon(horizon, &boundary)?;
        Ok(Self {
            sigma,
            hamiltonian,
            boundary,
            horizon,
        })
    }
}

/// Max-form Hamiltonian of a controlled problem.
pub fn to_general(spec: &ProblemSpec) -> GeneralProblem {
    let inner = spec.clone();
    let hamiltonian = Hamiltonian::fallible(move |p, u, x, t| {
        hamiltonian::eval_hmax(p, u, x, t, &inner).map(|(v, _)| v)
    });
    GeneralProblem {
        sigma: spec.sigma.clone(),
        hamiltonian,
        boundary: spec.boundary.clone(),
        horizon: spec.horizon,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(drift: ControlledField, discount: f64, reward: ControlledField) -> ProblemSpec {
        ProblemSpec::new(
            ScalarField2::constant(1.0),
            drift,
            ControlledField::constant(discount),
            reward,
            BoundaryData::zero(1.0),
            ControlSet::interval(-1.0, 1.0).unwrap(),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn to_general_linear_drift() {
        let s = spec(ControlledField::new(|_, _, a| a), 0.0, ControlledField::constant(0.0));
        let g = to_general(&s);
        assert_eq!(g.hamiltonian.eval(2.0, 0.3, 1.0, 0.5).unwrap(), 2.0);
    }

    #[test]
    fn to_general_constant_reward() {
        let s = spec(ControlledField::constant(0.0), 0.0, ControlledField::constant(5.0));
        let g = to_general(&s);
        for &(p, u) in &[(0.0, 0.0), (-3.0, 2.0), (10.0, -7.0)] {
            assert_eq!(g.hamiltonian.eval(p, u, 0.4, 0.1).unwrap(), 5.0);
        }
    }

    #[test]
    fn to_general_quadratic_reward() {
        let s = spec(
            ControlledField::new(|_, _, a| a),
            -1.0,
            ControlledField::new(|_, _, a| a * a),
        );
        let g = to_general(&s);
        let v = g.hamiltonian.eval(1.0, 2.0, 0.5, 0.5).unwrap();
        assert!(v.abs() < 1e-12, "{v}");
    }

    #[test]
    fn corner_mismatch_is_rejected() {
        let err = BoundaryData::new(|_| 1.0, |_| 0.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
        assert!(BoundaryData::new(|x| x, |t| 1.0 - t, 1.0).is_ok());
    }

    #[test]
    fn control_set_invariants() {
        assert!(ControlSet::interval(1.0, -1.0).is_err());
        assert!(ControlSet::interval_with(0.0, 1.0, 1).is_err());
        assert!(ControlSet::finite(vec![]).is_err());
        assert!(ControlSet::finite(vec![1.0, 0.0, 1.0]).is_err());
        let c = ControlSet::finite(vec![2.0, -1.0, 0.5]).unwrap();
        assert_eq!(c.grid(), vec![-1.0, 0.5, 2.0]);
        assert_eq!(c.middle(), 0.5);
        let g = ControlSet::interval(-1.0, 1.0).unwrap().grid();
        assert_eq!(g.len(), DEFAULT_CONTROL_POINTS);
        assert_eq!(g[0], -1.0);
        assert_eq!(g[32], 1.0);
        assert_eq!(g[16], 0.0);
    }

    #[test]
    fn horizon_must_be_positive() {
        let err = GeneralProblem::new(
            ScalarField2::constant(1.0),
            Hamiltonian::new(|_, _, _, _| 0.0),
            BoundaryData::zero(0.0),
            0.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }
}
