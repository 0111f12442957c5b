//! Sampled checks of the standing assumptions on sigma, beta, H and the
//! expected exit time. Every check is empirical: a pass means no
//! counterexample was found on the point cloud.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{to_general, GeneralProblem, ProblemSpec, ScalarField2, BoundaryData, CORNER_TOLERANCE};
use crate::error::{Error, Result};
use crate::hamiltonian::{estimate_k, KSampling};
use crate::montecarlo::{expected_exit_time, McConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Sampling {
    pub n_points: usize,
    pub x_range: (f64, f64),
    pub seed: u64,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            n_points: 500,
            x_range: (0.0, 8.0),
            seed: 0,
        }
    }
}

/// User-declared constants the sampled estimates are compared against.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeclaredConstants {
    pub sigma_lower: Option<f64>,
    pub sigma_upper: Option<f64>,
    pub sigma_lipschitz: Option<f64>,
    pub boundary_bound: Option<f64>,
    pub boundary_lipschitz: Option<f64>,
    pub coefficient_bound: Option<f64>,
    pub coefficient_lipschitz: Option<f64>,
    pub hamiltonian_k: Option<f64>,
    pub exit_lipschitz: Option<f64>,
}

/// Monte Carlo settings for the optional exit-time check.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitTimeCheck {
    pub mc: McConfig,
    /// Number of `x` levels in `x_range` whose neighbours are compared.
    pub n_levels: usize,
    /// Start times at which the sweep is repeated.
    pub times: Vec<f64>,
}

impl Default for ExitTimeCheck {
    fn default() -> Self {
        Self {
            mc: McConfig {
                n_paths: 20_000,
                dt: 1e-3,
                ..McConfig::default()
            },
            n_levels: 9,
            times: vec![0.0],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationOptions {
    pub sampling: Sampling,
    pub declared: DeclaredConstants,
    pub exit_time: Option<ExitTimeCheck>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WorstPair {
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub quotient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub id: &'static str,
    pub passed: bool,
    pub empirical: bool,
    /// Largest sampled quotient (Lipschitz constant, `K`, ...).
    pub estimated_constant: f64,
    pub inf: Option<f64>,
    pub sup: Option<f64>,
    pub worst_pair: Option<WorstPair>,
    pub notes: Vec<String>,
}

impl AssumptionCheck {
    fn new(id: &'static str) -> Self {
        Self {
            id,
            passed: true,
            empirical: true,
            estimated_constant: 0.0,
            inf: None,
            sup: None,
            worst_pair: None,
            notes: Vec::new(),
        }
    }

    fn fail(&mut self, note: String) {
        self.passed = false;
        self.notes.push(note);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, id: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.id == id)
    }

    /// One human-readable line per check.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{:<3} {} (empirical) constant={:.6}",
                c.id,
                if c.passed { "PASS" } else { "FAIL" },
                c.estimated_constant
            ));
            if let (Some(lo), Some(hi)) = (c.inf, c.sup) {
                out.push_str(&format!(" range=[{lo:.6}, {hi:.6}]"));
            }
            if let Some(w) = &c.worst_pair {
                out.push_str(&format!(
                    " worst=({:.6},{:.6})-({:.6},{:.6}) q={:.6}",
                    w.a.0, w.a.1, w.b.0, w.b.1, w.quotient
                ));
            }
            for n in &c.notes {
                out.push_str(&format!("; {n}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Which problem form to check.
#[derive(Debug, Clone, Copy)]
pub enum ProblemRef<'a> {
    Controlled(&'a ProblemSpec),
    General(&'a GeneralProblem),
}

impl<'a> From<&'a ProblemSpec> for ProblemRef<'a> {
    fn from(p: &'a ProblemSpec) -> Self {
        ProblemRef::Controlled(p)
    }
}

impl<'a> From<&'a GeneralProblem> for ProblemRef<'a> {
    fn from(p: &'a GeneralProblem) -> Self {
        ProblemRef::General(p)
    }
}

/// Runs A1 (sigma), A2 (beta), B3 (coefficients, controlled problems only),
/// A3 (Hamiltonian `K`) and, when requested, A4 (exit-time Lipschitz).
pub fn validate_assumptions<'a>(problem: impl Into<ProblemRef<'a>>, opts: &ValidationOptions) -> Result<ValidationReport> {
    let s = &opts.sampling;
    if s.n_points < 2 {
        return Err(Error::Precondition(format!(
            "validation needs n_points >= 2, got {}",
            s.n_points
        )));
    }
    let problem = problem.into();
    let (sigma, boundary, horizon) = match problem {
        ProblemRef::Controlled(p) => (&p.sigma, &p.boundary, p.horizon),
        ProblemRef::General(p) => (&p.sigma, &p.boundary, p.horizon),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let points = point_cloud(&mut rng, s, horizon);

    let mut checks = vec![
        check_sigma(sigma, &points, &opts.declared, &mut rng, s, horizon)?,
        check_boundary(boundary, &mut rng, s, horizon, &opts.declared)?,
    ];
    let general;
    let general_ref = match problem {
        ProblemRef::Controlled(p) => {
            checks.push(check_coefficients(p, &points, &mut rng, s, &opts.declared)?);
            general = to_general(p);
            &general
        }
        ProblemRef::General(g) => g,
    };
    checks.push(check_hamiltonian(general_ref, problem, s, &opts.declared)?);
    if let Some(exit) = &opts.exit_time {
        checks.push(check_exit_time(sigma, horizon, s, exit, &opts.declared)?);
    }
    Ok(ValidationReport { checks })
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Random `(x, t)` points plus the four corners of the sampling box.
fn point_cloud(rng: &mut ChaCha8Rng, s: &Sampling, horizon: f64) -> Vec<(f64, f64)> {
    let (lo, hi) = s.x_range;
    let mut pts = vec![(lo, 0.0), (hi, 0.0), (lo, horizon), (hi, horizon)];
    for _ in 0..s.n_points {
        pts.push((uniform(rng, lo, hi), uniform(rng, 0.0, horizon)));
    }
    pts
}

/// Nearby partner of `p` inside the box, for local quotients.
fn neighbour(rng: &mut ChaCha8Rng, p: (f64, f64), s: &Sampling, horizon: f64) -> (f64, f64) {
    let (lo, hi) = s.x_range;
    let scale = 10f64.powf(rng.random_range(-4.0..-1.0));
    let x = (p.0 + scale * (hi - lo) * rng.random_range(-1.0..1.0)).clamp(lo, hi);
    let t = (p.1 + scale * horizon * rng.random_range(-1.0..1.0)).clamp(0.0, horizon);
    (x, t)
}

struct QuotientTracker {
    best: Option<WorstPair>,
}

impl QuotientTracker {
    fn new() -> Self {
        Self { best: None }
    }

    fn push(&mut self, a: (f64, f64), b: (f64, f64), fa: f64, fb: f64) {
        let d = (a.0 - b.0).abs() + (a.1 - b.1).abs();
        if d <= 0.0 {
            return;
        }
        let q = (fa - fb).abs() / d;
        if self.best.is_none_or(|w| q > w.quotient) {
            self.best = Some(WorstPair { a, b, quotient: q });
        }
    }

    fn constant(&self) -> f64 {
        self.best.map_or(0.0, |w| w.quotient)
    }
}

fn check_sigma(
    sigma: &ScalarField2,
    points: &[(f64, f64)],
    declared: &DeclaredConstants,
    rng: &mut ChaCha8Rng,
    s: &Sampling,
    horizon: f64,
) -> Result<AssumptionCheck> {
    let mut c = AssumptionCheck::new("A1");
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    let mut q = QuotientTracker::new();
    let values: Vec<f64> = points
        .iter()
        .map(|&(x, t)| sigma.try_eval("sigma", x, t))
        .collect::<Result<_>>()?;
    for (k, (&p, &v)) in points.iter().zip(&values).enumerate() {
        lo = lo.min(v.abs());
        hi = hi.max(v.abs());
        let other = (k * 7919 + 1) % points.len();
        q.push(p, points[other], v, values[other]);
        let nb = neighbour(rng, p, s, horizon);
        q.push(p, nb, v, sigma.try_eval("sigma", nb.0, nb.1)?);
    }
    c.inf = Some(lo);
    c.sup = Some(hi);
    c.estimated_constant = q.constant();
    c.worst_pair = q.best;
    if lo.is_nan() || lo <= 0.0 {
        c.fail(format!("sigma is not bounded away from zero: inf |sigma| = {lo}"));
    }
    if let Some(d) = declared.sigma_lower {
        if lo < d {
            c.fail(format!("inf |sigma| = {lo} below declared {d}"));
        }
    }
    if let Some(d) = declared.sigma_upper {
        if hi > d {
            c.fail(format!("sup |sigma| = {hi} above declared {d}"));
        }
    }
    if let Some(d) = declared.sigma_lipschitz {
        if c.estimated_constant > d {
            c.fail(format!(
                "Lipschitz quotient {} exceeds declared {d}",
                c.estimated_constant
            ));
        }
    }
    Ok(c)
}

fn check_boundary(
    beta: &BoundaryData,
    rng: &mut ChaCha8Rng,
    s: &Sampling,
    horizon: f64,
    declared: &DeclaredConstants,
) -> Result<AssumptionCheck> {
    let mut c = AssumptionCheck::new("A2");
    let (lo, hi) = s.x_range;
    let eval = |p: (f64, f64)| -> Result<f64> {
        let v = if p.0 <= 0.0 {
            beta.lateral(p.1)
        } else {
            beta.terminal(p.0)
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation {
                field: "boundary",
                x: p.0,
                t: p.1,
                alpha: None,
            })
        }
    };
    // points on the parabolic boundary: {t = T} and {x = 0}
    let mut pts = vec![(0.0, 0.0), (0.0, horizon), (hi.max(lo), horizon)];
    for k in 0..s.n_points {
        if k % 2 == 0 {
            pts.push((uniform(rng, lo.max(0.0), hi), horizon));
        } else {
            pts.push((0.0, uniform(rng, 0.0, horizon)));
        }
    }
    let values: Vec<f64> = pts.iter().map(|&p| eval(p)).collect::<Result<_>>()?;
    let mut q = QuotientTracker::new();
    let mut sup: f64 = 0.0;
    let mut inf = f64::INFINITY;
    for (k, (&p, &v)) in pts.iter().zip(&values).enumerate() {
        sup = sup.max(v.abs());
        inf = inf.min(v);
        let other = (k * 7919 + 1) % pts.len();
        q.push(p, pts[other], v, values[other]);
        let nb = if p.0 <= 0.0 {
            (0.0, (p.1 + 1e-3 * horizon * rng.random_range(-1.0..1.0)).clamp(0.0, horizon))
        } else {
            ((p.0 + 1e-3 * (hi - lo) * rng.random_range(-1.0..1.0)).max(1e-12), horizon)
        };
        q.push(p, nb, v, eval(nb)?);
    }
    c.inf = Some(inf);
    c.sup = Some(sup);
    c.estimated_constant = q.constant();
    c.worst_pair = q.best;
    let corner = (beta.terminal(0.0) - beta.lateral(horizon)).abs();
    if corner > CORNER_TOLERANCE {
        c.fail(format!("corner mismatch |terminal(0) - lateral(T)| = {corner}"));
    }
    if let Some(d) = declared.boundary_bound.or(beta.declared_bound()) {
        if sup > d {
            c.fail(format!("sup |beta| = {sup} above declared {d}"));
        }
    }
    if let Some(d) = declared.boundary_lipschitz {
        if c.estimated_constant > d {
            c.fail(format!(
                "Lipschitz quotient {} exceeds declared {d}",
                c.estimated_constant
            ));
        }
    }
    Ok(c)
}

fn check_coefficients(
    p: &ProblemSpec,
    points: &[(f64, f64)],
    rng: &mut ChaCha8Rng,
    s: &Sampling,
    declared: &DeclaredConstants,
) -> Result<AssumptionCheck> {
    let mut c = AssumptionCheck::new("B3");
    let controls = p.controls.grid();
    let mut bound: f64 = 0.0;
    let mut q = QuotientTracker::new();
    let mut worst_field = "";
    let fields = [
        ("drift", &p.drift),
        ("discount", &p.discount),
        ("running_reward", &p.running_reward),
    ];
    for (k, &pt) in points.iter().enumerate() {
        let nb = neighbour(rng, pt, s, p.horizon);
        let other = points[(k * 7919 + 1) % points.len()];
        let alpha = controls[k % controls.len()];
        for (name, f) in fields {
            let v = f.try_eval(name, pt.0, pt.1, alpha)?;
            bound = bound.max(v.abs());
            let before = q.constant();
            q.push(pt, nb, v, f.try_eval(name, nb.0, nb.1, alpha)?);
            q.push(pt, other, v, f.try_eval(name, other.0, other.1, alpha)?);
            if q.constant() > before {
                worst_field = name;
            }
        }
    }
    c.sup = Some(bound);
    c.inf = Some(-bound);
    c.estimated_constant = q.constant();
    c.worst_pair = q.best;
    if !worst_field.is_empty() {
        c.notes.push(format!("largest quotient in `{worst_field}`"));
    }
    if let Some(d) = declared.coefficient_bound {
        if bound > d {
            c.fail(format!("sup of |b|, |h|, |l| = {bound} above declared {d}"));
        }
    }
    if let Some(d) = declared.coefficient_lipschitz {
        if c.estimated_constant > d {
            c.fail(format!(
                "Lipschitz quotient {} exceeds declared {d}",
                c.estimated_constant
            ));
        }
    }
    Ok(c)
}

fn check_hamiltonian(
    g: &GeneralProblem,
    problem: ProblemRef<'_>,
    s: &Sampling,
    declared: &DeclaredConstants,
) -> Result<AssumptionCheck> {
    let mut c = AssumptionCheck::new("A3");
    let k = estimate_k(
        g,
        &KSampling {
            n_points: s.n_points,
            x_range: s.x_range,
            seed: s.seed ^ 0x9e37_79b9_7f4a_7c15,
            ..KSampling::default()
        },
    )?;
    c.estimated_constant = k;
    if !k.is_finite() {
        c.fail("K estimate is not finite".into());
    }
    if let ProblemRef::Controlled(p) = problem {
        let grid = p.controls.grid();
        let mut sb: f64 = 0.0;
        let mut sh: f64 = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed.wrapping_add(1));
        for n in 0..s.n_points {
            let x = uniform(&mut rng, s.x_range.0, s.x_range.1);
            let t = uniform(&mut rng, 0.0, p.horizon);
            let a = grid[n % grid.len()];
            sb = sb.max(p.drift.try_eval("drift", x, t, a)?.abs());
            sh = sh.max(p.discount.try_eval("discount", x, t, a)?.abs());
        }
        c.notes.push(format!("sup|b| + sup|h| = {}", sb + sh));
    }
    if let Some(d) = declared.hamiltonian_k {
        if k > d {
            c.fail(format!("K estimate {k} exceeds declared {d}"));
        }
    }
    Ok(c)
}

fn check_exit_time(
    sigma: &ScalarField2,
    horizon: f64,
    s: &Sampling,
    exit: &ExitTimeCheck,
    declared: &DeclaredConstants,
) -> Result<AssumptionCheck> {
    let mut c = AssumptionCheck::new("A4");
    let (lo, hi) = s.x_range;
    let n = exit.n_levels.max(2);
    let mut worst: Option<WorstPair> = None;
    let mut worst_excess = f64::NEG_INFINITY;
    for &t in &exit.times {
        let mut prev: Option<(f64, crate::montecarlo::McEstimate)> = None;
        for k in 0..n {
            let x = lo.max(0.0) + (hi - lo.max(0.0)) * k as f64 / (n - 1) as f64;
            let mc = McConfig {
                seed: exit.mc.seed.wrapping_add(k as u64),
                ..exit.mc
            };
            let e = expected_exit_time(x, t, horizon, sigma, &mc)?;
            if let Some((px, pe)) = prev {
                let dx = x - px;
                let quotient = (e.mean - pe.mean).abs() / dx;
                let se = e.combined_stderr(&pe) / dx;
                if quotient > worst.map_or(f64::NEG_INFINITY, |w| w.quotient) {
                    worst = Some(WorstPair {
                        a: (px, t),
                        b: (x, t),
                        quotient,
                    });
                }
                if let Some(l) = declared.exit_lipschitz {
                    worst_excess = worst_excess.max(quotient - 3.0 * se - l);
                }
            }
            prev = Some((x, e));
        }
    }
    c.worst_pair = worst;
    c.estimated_constant = worst.map_or(0.0, |w| w.quotient);
    if let Some(l) = declared.exit_lipschitz {
        if worst_excess > 0.0 {
            c.fail(format!(
                "exit-time quotient exceeds declared {l} by {worst_excess} beyond 3 stderr"
            ));
        }
    }
    Ok(c)
}
