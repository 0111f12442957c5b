//! Max-form Hamiltonian `max_alpha b p + h u + l` and the growth/Lipschitz
//! constant `K`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{ControlSet, GeneralProblem, ProblemSpec};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Relative bracket width at which the golden-section pass stops.
const GOLDEN_REL_TOL: f64 = 1e-6;

/// `b(x,t,a) p + h(x,t,a) u + l(x,t,a)`.
#[inline]
pub fn control_expression(spec: &ProblemSpec, p: f64, u: f64, x: f64, t: f64, alpha: f64) -> Result<f64> {
    let b = spec.drift.try_eval("drift", x, t, alpha)?;
    let h = spec.discount.try_eval("discount", x, t, alpha)?;
    let l = spec.running_reward.try_eval("running_reward", x, t, alpha)?;
    let v = b * p + h * u + l;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Evaluation {
            field: "hamiltonian",
            x,
            t,
            alpha: Some(alpha),
        })
    }
}

/// Maximum of the control expression over the discretized control set and
/// its maximizer. Ties resolve to the smallest control.
pub fn eval_hmax(p: f64, u: f64, x: f64, t: f64, spec: &ProblemSpec) -> Result<(f64, f64)> {
    let eval = |a: f64| control_expression(spec, p, u, x, t, a);
    match &spec.controls {
        ControlSet::Finite(values) => grid_max(values.iter().copied(), eval),
        ControlSet::Interval { lo, hi, n } => {
            if lo == hi {
                return Ok((eval(*lo)?, *lo));
            }
            let controls = spec.controls.grid();
            let (best, best_alpha) = grid_max(controls.iter().copied(), eval)?;
            let h = (hi - lo) / (*n as f64 - 1.0);
            let a = (best_alpha - h).max(*lo);
            let b = (best_alpha + h).min(*hi);
            let (refined, refined_alpha) = golden_max(a, b, h * GOLDEN_REL_TOL, eval)?;
            if refined > best {
                Ok((refined, refined_alpha))
            } else {
                Ok((best, best_alpha))
            }
        }
    }
}

fn grid_max(
    controls: impl Iterator<Item = f64>,
    mut eval: impl FnMut(f64) -> Result<f64>,
) -> Result<(f64, f64)> {
    let mut best = f64::NEG_INFINITY;
    let mut best_alpha = f64::NAN;
    for a in controls {
        let v = eval(a)?;
        // strict comparison keeps the smallest maximizer
        if v > best {
            best = v;
            best_alpha = a;
        }
    }
    Ok((best, best_alpha))
}

fn golden_max(
    mut a: f64,
    mut b: f64,
    tol: f64,
    mut eval: impl FnMut(f64) -> Result<f64>,
) -> Result<(f64, f64)> {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    while (b - a) > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = eval(d)?;
        }
    }
    Ok(if fc >= fd { (fc, c) } else { (fd, d) })
}

/// Sampling box for [`estimate_k`].
#[derive(Debug, Clone, PartialEq)]
pub struct KSampling {
    pub n_points: usize,
    pub p_range: (f64, f64),
    pub u_range: (f64, f64),
    pub x_range: (f64, f64),
    pub seed: u64,
}

impl Default for KSampling {
    fn default() -> Self {
        Self {
            n_points: 2000,
            p_range: (-10.0, 10.0),
            u_range: (-10.0, 10.0),
            x_range: (0.0, 8.0),
            seed: 0,
        }
    }
}

/// Empirical constant `K` with `|H| <= K (1 + |u| + |p|)` and
/// `|H(p,u) - H(q,v)| <= K (|u - v| + |p - q|)` on the sampled box.
///
/// Lipschitz quotients are taken separately in `p` and in `u` and summed,
/// which bounds the joint quotient from above.
pub fn estimate_k(problem: &GeneralProblem, sampling: &KSampling) -> Result<f64> {
    if sampling.n_points < 2 {
        return Err(Error::Precondition(format!(
            "estimate_k needs n_points >= 2, got {}",
            sampling.n_points
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let h = &problem.hamiltonian;
    let (plo, phi) = sampling.p_range;
    let (ulo, uhi) = sampling.u_range;
    let (xlo, xhi) = sampling.x_range;
    let pw = (phi - plo).max(0.0);
    let uw = (uhi - ulo).max(0.0);

    let mut growth: f64 = 0.0;
    let mut k_p: f64 = 0.0;
    let mut k_u: f64 = 0.0;
    for _ in 0..sampling.n_points {
        let p = uniform(&mut rng, plo, phi);
        let u = uniform(&mut rng, ulo, uhi);
        let x = uniform(&mut rng, xlo, xhi);
        let t = uniform(&mut rng, 0.0, problem.horizon);
        let base = h.eval(p, u, x, t)?;
        growth = growth.max(base.abs() / (1.0 + u.abs() + p.abs()));

        let dp = perturbation(&mut rng, pw);
        if dp != 0.0 {
            let hp = h.eval(p + dp, u, x, t)?;
            k_p = k_p.max((hp - base).abs() / dp.abs());
            growth = growth.max(hp.abs() / (1.0 + u.abs() + (p + dp).abs()));
        }
        let du = perturbation(&mut rng, uw);
        if du != 0.0 {
            let hu = h.eval(p, u + du, x, t)?;
            k_u = k_u.max((hu - base).abs() / du.abs());
            growth = growth.max(hu.abs() / (1.0 + (u + du).abs() + p.abs()));
        }
    }
    Ok(growth.max(k_p + k_u))
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Signed step with magnitude spread log-uniformly between 1e-4 and 0.5 of `width`.
fn perturbation(rng: &mut ChaCha8Rng, width: f64) -> f64 {
    if width <= 0.0 {
        return 0.0;
    }
    let mag = width * 10f64.powf(rng.random_range(-4.0..(0.5f64).log10()));
    if rng.random_bool(0.5) {
        mag
    } else {
        -mag
    }
}
