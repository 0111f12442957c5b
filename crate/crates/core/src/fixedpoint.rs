//! The operator `T u = u_f` with `f = H(D_x u, u, x, t)` and the Picard
//! sequence `u_{n+1} = T u_n`, stopped in the time-weighted norm.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{BoundaryData, GeneralProblem, ScalarField2};
use crate::montecarlo::FeedbackPolicy;
use crate::pde::{self, bielecki_norm, dx, GridFunction, Mesh, SchemeConfig};

/// Consecutive growing diffs that count as divergence.
pub const DIVERGENCE_WINDOW: usize = 5;

/// Fallback for the kernel constant `M` when calibration is skipped.
pub const DEFAULT_M: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub n: usize,
    /// `||u_{n+1} - u_n||_kappa`, derivative part included.
    pub bielecki_diff: f64,
    pub sup_diff: f64,
    /// `bielecki_diff_n / bielecki_diff_{n-1}`.
    pub q_estimate: Option<f64>,
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationDiagnostics {
    pub records: Vec<IterationRecord>,
}

impl IterationDiagnostics {
    pub fn diffs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.bielecki_diff).collect()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    /// One JSON object per line: `{"n", "bielecki_diff", "sup_diff", "q_estimate"}`.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub value: GridFunction,
    pub derivative: GridFunction,
    pub policy: Option<FeedbackPolicy>,
    pub diagnostics: IterationDiagnostics,
    pub converged: bool,
    pub kappa_used: f64,
}

/// Source `H(D_x u, u, x, t)` on every node of `u`'s mesh.
pub fn hamiltonian_source(u: &GridFunction, problem: &GeneralProblem) -> Result<GridFunction> {
    let mesh = *u.mesh();
    let du = dx(u);
    let nx = mesh.n_x;
    let mut values = vec![0.0; mesh.len()];
    values
        .par_chunks_mut(nx)
        .enumerate()
        .try_for_each(|(j, row)| -> Result<()> {
            let t = mesh.t(j);
            let (ur, dr) = (u.row(j), du.row(j));
            for i in 0..nx {
                row[i] = problem.hamiltonian.eval(dr[i], ur[i], mesh.x(i), t)?;
            }
            Ok(())
        })?;
    GridFunction::from_values(mesh, values)
}

/// One application of the operator: a linear solve with the Hamiltonian
/// source frozen at `u_n`.
pub fn apply_t(u_n: &GridFunction, problem: &GeneralProblem, scheme: &SchemeConfig) -> Result<GridFunction> {
    let source = hamiltonian_source(u_n, problem)?;
    pde::solve_linear_with_source(&problem.sigma, &source, &problem.boundary, scheme)
}

/// `safety * max{(K M)^3, 1}`.
pub fn choose_kappa(k: f64, m: f64, safety: f64) -> f64 {
    safety * (k * m).powi(3).max(1.0)
}

/// Boundary data extended constantly in time: `terminal(x)` off the axis,
/// `lateral(t)` on it.
pub fn default_initial(boundary: &BoundaryData, mesh: &Mesh) -> GridFunction {
    GridFunction::from_fn(*mesh, |x, t| {
        if x <= 0.0 {
            boundary.lateral(t)
        } else {
            boundary.terminal(x)
        }
    })
}

/// Picard iteration until `||u_{n+1} - u_n||_kappa <= tol` or `max_iter`
/// applications of the operator.
pub fn iterate(
    problem: &GeneralProblem,
    mesh: &Mesh,
    scheme: &SchemeConfig,
    kappa: f64,
    tol: f64,
    max_iter: usize,
    u_1: Option<GridFunction>,
) -> Result<Solution> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::Precondition(format!("kappa must be >= 0, got {kappa}")));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Precondition(format!("tol must be positive, got {tol}")));
    }
    let mut u = match u_1 {
        Some(g) => {
            if g.mesh() != mesh {
                return Err(Error::ShapeMismatch("initial iterate is not on the solver mesh".into()));
            }
            g
        }
        None => default_initial(&problem.boundary, mesh),
    };
    let start = Instant::now();
    let mut diagnostics = IterationDiagnostics::default();
    let mut converged = false;
    let mut growth_streak = 0;
    for n in 1..=max_iter {
        let next = apply_t(&u, problem, scheme)?;
        let diff = next.sub(&u)?;
        let d = bielecki_norm(&diff, Some(&dx(&diff)), kappa)?;
        let prev = diagnostics.last().map(|r| r.bielecki_diff);
        let q = prev.filter(|p| *p > 0.0).map(|p| d / p);
        growth_streak = match prev {
            Some(p) if d > p => growth_streak + 1,
            _ => 0,
        };
        diagnostics.records.push(IterationRecord {
            n,
            bielecki_diff: d,
            sup_diff: diff.sup_norm(),
            q_estimate: q,
            wall_time: start.elapsed().as_secs_f64(),
        });
        u = next;
        if d <= tol {
            converged = true;
            break;
        }
        if growth_streak >= DIVERGENCE_WINDOW {
            return Err(Error::Divergence {
                window: DIVERGENCE_WINDOW,
                q_estimate: q.unwrap_or(f64::INFINITY),
            });
        }
    }
    let derivative = dx(&u);
    Ok(Solution {
        value: u,
        derivative,
        policy: None,
        diagnostics,
        converged,
        kappa_used: kappa,
    })
}

/// Geometric-mean ratio of consecutive diffs over the last half of the
/// records.
pub fn contraction_rate(d: &IterationDiagnostics) -> Result<f64> {
    let diffs: Vec<f64> = d.diffs().into_iter().take_while(|v| *v > 0.0).collect();
    if diffs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 nonzero diffs, have {}",
            diffs.len()
        )));
    }
    let start = (diffs.len() / 2).min(diffs.len() - 3);
    let tail = &diffs[start..];
    let steps = (tail.len() - 1) as f64;
    Ok((tail[tail.len() - 1] / tail[0]).powf(1.0 / steps))
}

/// Probe sources used to calibrate `M`.
pub fn probe_sources() -> Vec<ScalarField2> {
    vec![
        ScalarField2::constant(1.0),
        ScalarField2::new(|x, _| (-x).exp()),
        ScalarField2::new(|x, _| if x < 0.5 { 1.0 } else { -1.0 }),
        ScalarField2::new(|x, _| if x < 1.5 { 1.0 } else { -1.0 }),
        ScalarField2::new(|x, t| (1.0 + t) / (1.0 + x * x)),
    ]
}

/// `max_f ||u_f||_kappa cbrt(kappa) / ||f||^0_kappa` over [`probe_sources`]
/// with zero boundary data.
pub fn calibrate_m(sigma: &ScalarField2, mesh: &Mesh, scheme: &SchemeConfig, kappa: f64) -> Result<f64> {
    let zero = BoundaryData::zero(mesh.horizon);
    let mut m: f64 = 0.0;
    for f in probe_sources() {
        let fg = GridFunction::from_fn(*mesh, |x, t| f.eval(x, t));
        let u = pde::solve_linear_with_source(sigma, &fg, &zero, scheme)?;
        let num = bielecki_norm(&u, Some(&dx(&u)), kappa)?;
        let den = bielecki_norm(&fg, None, kappa)?;
        if den > 0.0 {
            m = m.max(num * kappa.cbrt() / den);
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::bm_truncated_exit;
    use crate::model::Hamiltonian;
    use crate::pde::FarField;

    fn problem(h: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static) -> GeneralProblem {
        GeneralProblem::new(
            ScalarField2::constant(1.0),
            Hamiltonian::new(h),
            BoundaryData::zero(1.0),
            1.0,
        )
        .unwrap()
    }

    fn mesh() -> Mesh {
        Mesh::new(6.0, 121, 201, 1.0).unwrap()
    }

    #[test]
    fn kappa_formula() {
        assert_eq!(choose_kappa(0.0, 2.0, 1.5), 1.5);
        assert_eq!(choose_kappa(1.0, 2.0, 1.5), 12.0);
        assert_eq!(choose_kappa(1.0, 1.0, 2.0), 2.0);
    }

    #[test]
    fn rate_of_geometric_sequence() {
        let d = IterationDiagnostics {
            records: [1.0, 0.5, 0.25, 0.125]
                .iter()
                .enumerate()
                .map(|(k, &v)| IterationRecord {
                    n: k + 1,
                    bielecki_diff: v,
                    sup_diff: v,
                    q_estimate: None,
                    wall_time: 0.0,
                })
                .collect(),
        };
        assert!((contraction_rate(&d).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rate_needs_three_entries() {
        let d = IterationDiagnostics {
            records: [1.0, 0.0]
                .iter()
                .enumerate()
                .map(|(k, &v)| IterationRecord {
                    n: k + 1,
                    bielecki_diff: v,
                    sup_diff: v,
                    q_estimate: None,
                    wall_time: 0.0,
                })
                .collect(),
        };
        assert!(matches!(contraction_rate(&d), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn zero_hamiltonian_is_a_constant_map() {
        let p = problem(|_, _, _, _| 0.0);
        let m = mesh();
        let s = SchemeConfig::default();
        let u0 = GridFunction::from_fn(m, |x, t| x.sin() * t);
        let a = apply_t(&u0, &p, &s).unwrap();
        let b = apply_t(&a, &p, &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unit_hamiltonian_is_exit_time() {
        let p = problem(|_, _, _, _| 1.0);
        let m = mesh();
        let u = apply_t(&GridFunction::zeros(m), &p, &SchemeConfig::default()).unwrap();
        let mut err: f64 = 0.0;
        for j in 0..m.n_t {
            for i in 0..m.n_x {
                let (x, t) = (m.x(i), m.t(j));
                if x <= 3.0 {
                    err = err.max((u.get(j, i) - (bm_truncated_exit(x, t, 1.0) - t)).abs());
                }
            }
        }
        assert!(err < 5e-3, "{err}");
    }

    #[test]
    fn gradient_hamiltonian_keeps_zero() {
        let p = problem(|p, _, _, _| p);
        let u = apply_t(&GridFunction::zeros(mesh()), &p, &SchemeConfig::default()).unwrap();
        assert_eq!(u.sup_norm(), 0.0);
    }

    #[test]
    fn unit_hamiltonian_converges_in_two_steps() {
        let p = problem(|_, _, _, _| 1.0);
        let sol = iterate(&p, &mesh(), &SchemeConfig::default(), 1.5, 1e-10, 50, None).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.diagnostics.records.len(), 2);
        assert!(sol.diagnostics.records[1].bielecki_diff < 1e-14);
    }

    #[test]
    fn max_iter_exhaustion_is_not_an_error() {
        let p = problem(|p, _, _, _| p.abs() + 1.0);
        let sol = iterate(&p, &mesh(), &SchemeConfig::default(), 1.5, 1e-12, 1, None).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.diagnostics.records.len(), 1);
    }

    #[test]
    fn divergence_is_detected() {
        // growth in u far beyond any contraction regime
        let p = problem(|_, u, _, _| 1.0 + 500.0 * u);
        let m = Mesh::new(4.0, 21, 11, 1.0).unwrap();
        let err = iterate(&p, &m, &SchemeConfig::implicit(FarField::Neumann), 0.0, 1e-12, 100, None)
            .unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn diagnostics_json_lines() {
        let p = problem(|p, _, _, _| p.abs() + 1.0);
        let m = Mesh::new(4.0, 41, 41, 1.0).unwrap();
        let sol = iterate(&p, &m, &SchemeConfig::default(), 1.5, 1e-9, 100, None).unwrap();
        let text = sol.diagnostics.to_json_lines();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), sol.diagnostics.records.len());
        let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(first["n"], 1);
        assert!(first["q_estimate"].is_null());
        let second: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert!(second["q_estimate"].as_f64().unwrap() < 1.0);
        let keys: Vec<&String> = second.as_object().unwrap().keys().collect();
        assert_eq!(keys.len(), 4);
    }

    #[test]
    fn calibrated_m_is_positive_and_finite() {
        let m = calibrate_m(&ScalarField2::constant(1.0), &mesh(), &SchemeConfig::default(), 8.0).unwrap();
        assert!(m.is_finite() && m > 0.0, "{m}");
    }
}
