use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use hjb_core::analytic::bm_truncated_exit;
use hjb_core::config::Config;
use hjb_core::fixedpoint::apply_t;
use hjb_core::model::{to_general, ProblemSpec};
use hjb_core::montecarlo::{evaluate_policy, FeedbackPolicy, McConfig};
use hjb_core::pde::{bielecki_norm, dx, read_grid_csv, GridFunction};
use hjb_core::policy::extract_policy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::solve::{Summary, POLICY_FILE, SUMMARY_FILE, VALUE_FILE};
use crate::{FAILED_CHECK, OK};

/// Absolute slack on top of the Monte Carlo error bars.
const ABS_TOL: f64 = 5e-3;

#[derive(Args)]
pub struct VerifyArgs {
    pub config: PathBuf,
    pub solution_dir: PathBuf,
    #[arg(long, default_value_t = 20_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Number of sampled `(x, t)` points.
    #[arg(long, default_value_t = 6)]
    pub points: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

struct Report {
    failed: usize,
}

impl Report {
    fn check(&mut self, name: &str, passed: bool, detail: String) {
        if !passed {
            self.failed += 1;
        }
        println!("check {name}: {} {detail}", if passed { "PASS" } else { "FAIL" });
    }
}

fn open(dir: &Path, name: &str) -> anyhow::Result<BufReader<File>> {
    let path = dir.join(name);
    let f = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

/// `u = L (E[tau ^ T] - t)` when sigma is a constant `c`, the drift and
/// discount vanish, the reward is a constant `L` and beta is zero.
fn closed_form(spec: &ProblemSpec) -> Option<impl Fn(f64, f64) -> f64> {
    let c = spec.sigma.as_constant()?;
    let l = spec.running_reward.as_constant()?;
    let ok = spec.drift.as_constant() == Some(0.0)
        && spec.discount.as_constant() == Some(0.0)
        && spec.boundary.as_constant() == Some(0.0)
        && c > 0.0;
    let horizon = spec.horizon;
    ok.then_some(move |x: f64, t: f64| l * (bm_truncated_exit(x / c, t, horizon) - t))
}

fn comparison_policies(reference: &FeedbackPolicy, horizon: f64) -> anyhow::Result<Vec<(&'static str, FeedbackPolicy)>> {
    let mesh = *reference.mesh();
    let a = reference.controls().clone();
    let (lo, mid, hi) = (a.min(), a.middle(), a.max());
    Ok(vec![
        ("min", FeedbackPolicy::from_fn(mesh, a.clone(), |_, _| lo)?),
        ("middle", FeedbackPolicy::from_fn(mesh, a.clone(), |_, _| mid)?),
        ("max", FeedbackPolicy::from_fn(mesh, a.clone(), |_, _| hi)?),
        (
            "bang-bang-t",
            FeedbackPolicy::from_fn(mesh, a.clone(), |_, t| if t < 0.5 * horizon { hi } else { lo })?,
        ),
        ("bang-bang-x", FeedbackPolicy::from_fn(mesh, a, |x, _| if x < 1.0 { hi } else { lo })?),
    ])
}

pub fn run(a: &VerifyArgs, workers: usize) -> anyhow::Result<u8> {
    let cfg = Config::load(&a.config)?;
    let spec = cfg.problem_spec()?;
    let (mesh, names, mut cols) = read_grid_csv(open(&a.solution_dir, VALUE_FILE)?)?;
    if names.first().map(String::as_str) != Some("u") {
        bail!("{VALUE_FILE} has no `u` column");
    }
    if (mesh.horizon - spec.horizon).abs() > 1e-9 * spec.horizon {
        bail!("solution horizon {} does not match the problem horizon {}", mesh.horizon, spec.horizon);
    }
    let u = GridFunction::from_values(mesh, cols.swap_remove(0))?;
    let du = dx(&u);
    let policy = if a.solution_dir.join(POLICY_FILE).exists() {
        let (pm, pn, mut pc) = read_grid_csv(open(&a.solution_dir, POLICY_FILE)?)?;
        if pn != ["alpha"] || pm != mesh {
            bail!("{POLICY_FILE} does not match {VALUE_FILE}");
        }
        FeedbackPolicy::new(pm, spec.controls.clone(), pc.swap_remove(0))?
    } else {
        extract_policy(&u, &du, &spec)?
    };
    let summary: Option<Summary> = match open(&a.solution_dir, SUMMARY_FILE) {
        Ok(r) => Some(serde_json::from_reader(r).context("reading summary.json")?),
        Err(_) => None,
    };

    let mut report = Report { failed: 0 };
    let beta = &spec.boundary;
    let mut boundary_err: f64 = 0.0;
    for j in 0..mesh.n_t {
        boundary_err = boundary_err.max((u.get(j, 0) - beta.lateral(mesh.t(j))).abs());
    }
    for i in 1..mesh.n_x {
        boundary_err = boundary_err.max((u.get(mesh.n_t - 1, i) - beta.terminal(mesh.x(i))).abs());
    }
    report.check("boundary", boundary_err <= 1e-9, format!("max deviation {boundary_err:.3e}"));

    if let Some(s) = &summary {
        let general = to_general(&spec);
        let next = apply_t(&u, &general, &cfg.scheme())?;
        let diff = next.sub(&u)?;
        let r = bielecki_norm(&diff, Some(&dx(&diff)), s.kappa)?;
        report.check(
            "fixed-point residual",
            s.converged && r <= 2.0 * s.tol,
            format!("{r:.3e} (<= {:.1e}, kappa {:.4}, converged {})", 2.0 * s.tol, s.kappa, s.converged),
        );
    }

    let seed = a.seed.unwrap_or(cfg.montecarlo.seed);
    let mc = McConfig {
        n_paths: a.paths,
        dt: a.dt,
        seed,
        n_workers: workers,
        ..cfg.montecarlo.to_mc()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_hi = (0.5 * mesh.x_max).min(4.0);
    let t_hi = 0.9 * spec.horizon;
    let exact = closed_form(&spec);
    let others = comparison_policies(&policy, spec.horizon)?;
    for k in 0..a.points {
        let x = rng.random_range(0.05 * x_hi..x_hi);
        let t = rng.random_range(0.0..t_hi);
        let cfg_k = McConfig {
            seed: seed.wrapping_add(k as u64),
            ..mc
        };
        let est = evaluate_policy(&policy, &spec, x, t, &cfg_k)?;
        let pde = u.interpolate(x, t);
        let bar = 3.0 * est.stderr + ABS_TOL;
        report.check(
            "pde-vs-mc",
            (pde - est.mean).abs() <= bar,
            format!(
                "({x:.4}, {t:.4}) pde {pde:.6} mc {:.6} ± {:.2e} (|diff| {:.3e} <= {bar:.3e})",
                est.mean,
                est.stderr,
                (pde - est.mean).abs()
            ),
        );
        if let Some(f) = &exact {
            let v = f(x, t);
            report.check(
                "pde-vs-analytic",
                (pde - v).abs() <= ABS_TOL,
                format!("({x:.4}, {t:.4}) pde {pde:.6} analytic {v:.6}"),
            );
            report.check(
                "mc-vs-analytic",
                (est.mean - v).abs() <= bar,
                format!("({x:.4}, {t:.4}) mc {:.6} analytic {v:.6}", est.mean),
            );
        }
        let mut worst = (f64::NEG_INFINITY, "");
        for (name, p) in &others {
            let other = evaluate_policy(p, &spec, x, t, &cfg_k)?;
            let margin = other.mean - 3.0 * est.combined_stderr(&other) - est.mean;
            if margin > worst.0 {
                worst = (margin, name);
            }
        }
        report.check(
            "optimality",
            worst.0 <= 0.0,
            format!("({x:.4}, {t:.4}) best alternative `{}` margin {:.3e} (<= 0)", worst.1, worst.0),
        );
    }
    if report.failed == 0 {
        println!("verify: PASS");
        Ok(OK)
    } else {
        println!("verify: FAIL ({} checks failed)", report.failed);
        Ok(FAILED_CHECK)
    }
}
