use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use hjb_core::config::Config;
use hjb_core::fixedpoint::{calibrate_m, choose_kappa, iterate};
use hjb_core::hamiltonian::{estimate_k, KSampling};
use hjb_core::model::to_general;
use hjb_core::policy::extract_policy;
use serde::{Deserialize, Serialize};

use crate::{NOT_CONVERGED, OK};

#[derive(Args)]
pub struct SolveArgs {
    pub config: PathBuf,
    #[arg(long)]
    pub x_max: Option<f64>,
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub nt: Option<usize>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, default_value = "solution")]
    pub out_dir: PathBuf,
    /// Seed for the Hamiltonian constant estimate.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub const VALUE_FILE: &str = "value.csv";
pub const POLICY_FILE: &str = "policy.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

/// Contents of `summary.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct Summary {
    pub converged: bool,
    pub iterations: usize,
    pub last_bielecki_diff: Option<f64>,
    pub tol: f64,
    pub kappa: f64,
    pub k: f64,
    pub m: f64,
    pub x_max: f64,
    pub n_x: usize,
    pub n_t: usize,
    pub horizon: f64,
}

fn apply_overrides(cfg: &mut Config, a: &SolveArgs) {
    if let Some(v) = a.x_max {
        cfg.mesh.x_max = v;
    }
    if let Some(v) = a.nx {
        cfg.mesh.nx = v;
    }
    if let Some(v) = a.nt {
        cfg.mesh.nt = v;
    }
    if let Some(v) = a.kappa {
        cfg.iteration.kappa = Some(v);
    }
    if let Some(v) = a.tol {
        cfg.iteration.tol = v;
    }
    if let Some(v) = a.max_iter {
        cfg.iteration.max_iter = v;
    }
    if let Some(v) = a.seed {
        cfg.iteration.seed = v;
    }
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn run(a: &SolveArgs) -> anyhow::Result<u8> {
    let mut cfg = Config::load(&a.config)?;
    apply_overrides(&mut cfg, a);
    let spec = cfg.problem_spec()?;
    let mesh = cfg.mesh()?;
    let scheme = cfg.scheme();
    let general = to_general(&spec);
    let it = &cfg.iteration;

    let k = match it.k {
        Some(k) => k,
        None => estimate_k(
            &general,
            &KSampling {
                x_range: (0.0, mesh.x_max),
                seed: it.seed,
                ..KSampling::default()
            },
        )?,
    };
    let m = match it.m {
        Some(m) => m,
        None => calibrate_m(&general.sigma, &mesh, &scheme, 8.0)?,
    };
    let kappa = it.kappa.unwrap_or_else(|| choose_kappa(k, m, it.safety));
    let sol = iterate(&general, &mesh, &scheme, kappa, it.tol, it.max_iter, None)?;
    let policy = extract_policy(&sol.value, &sol.derivative, &spec)?;

    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut w = create(&a.out_dir, VALUE_FILE)?;
    sol.value.write_csv(&mut w, Some(&sol.derivative))?;
    w.flush()?;
    let mut w = create(&a.out_dir, POLICY_FILE)?;
    policy.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&a.out_dir, DIAGNOSTICS_FILE)?;
    w.write_all(sol.diagnostics.to_json_lines().as_bytes())?;
    w.flush()?;

    let last = sol.diagnostics.last();
    let summary = Summary {
        converged: sol.converged,
        iterations: last.map_or(0, |r| r.n),
        last_bielecki_diff: last.map(|r| r.bielecki_diff),
        tol: it.tol,
        kappa,
        k,
        m,
        x_max: mesh.x_max,
        n_x: mesh.n_x,
        n_t: mesh.n_t,
        horizon: mesh.horizon,
    };
    let mut w = create(&a.out_dir, SUMMARY_FILE)?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    writeln!(w)?;
    w.flush()?;

    println!(
        "{} after {} iterations (last diff {:.3e}, tol {:.1e}, kappa {:.4}, K {:.4}, M {:.4}); wrote {}",
        if sol.converged { "converged" } else { "NOT converged" },
        summary.iterations,
        summary.last_bielecki_diff.unwrap_or(f64::NAN),
        it.tol,
        kappa,
        k,
        m,
        a.out_dir.display()
    );
    Ok(if sol.converged { OK } else { NOT_CONVERGED })
}
