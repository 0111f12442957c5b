use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use hjb_core::analytic::bm_truncated_exit;
use hjb_core::fixedpoint::{choose_kappa, iterate};
use hjb_core::model::{to_general, BoundaryData, ControlSet, ControlledField, ProblemSpec, ScalarField2};
use hjb_core::montecarlo::{expected_exit_time, McConfig};
use hjb_core::pde::{solve_linear, Mesh, SchemeConfig};

use crate::OK;

#[derive(Args)]
pub struct BenchArgs {
    /// Refinement levels; each doubles `nx` and `nt`.
    #[arg(long, default_value_t = 3)]
    pub levels: u32,
    #[arg(long, default_value_t = 41)]
    pub nx: usize,
    #[arg(long, default_value_t = 101)]
    pub nt: usize,
    #[arg(long, default_value_t = 8.0)]
    pub x_max: f64,
    /// Paths for the Monte Carlo row.
    #[arg(long, default_value_t = 2_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the table here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub const HEADER: &str = "benchmark,level,n_x,n_t,paths,iterations,value,error,seconds";

struct Row {
    benchmark: &'static str,
    level: u32,
    n_x: Option<usize>,
    n_t: Option<usize>,
    paths: Option<usize>,
    iterations: Option<usize>,
    value: f64,
    error: Option<f64>,
    seconds: f64,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl Row {
    fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:.6}",
            self.benchmark,
            self.level,
            opt(self.n_x),
            opt(self.n_t),
            opt(self.paths),
            opt(self.iterations),
            self.value,
            opt(self.error),
            self.seconds
        )
    }
}

fn drift_control() -> ProblemSpec {
    ProblemSpec::new(
        ScalarField2::constant(1.0),
        ControlledField::new(|_, _, a| a),
        ControlledField::constant(0.0),
        ControlledField::constant(1.0),
        BoundaryData::zero(1.0),
        ControlSet::interval(-1.0, 1.0).expect("valid interval"),
        1.0,
    )
    .expect("valid benchmark")
}

/// Probe point for the value column.
const PROBE: (f64, f64) = (1.0, 0.0);

pub fn run(a: &BenchArgs, workers: usize) -> anyhow::Result<u8> {
    anyhow::ensure!(a.levels >= 1, "--levels must be at least 1");
    let mut rows = Vec::new();
    let one = ScalarField2::constant(1.0);
    let zero = BoundaryData::zero(1.0);
    let scheme = SchemeConfig::default();
    let spec = drift_control();
    let general = to_general(&spec);
    let mut previous: Option<f64> = None;
    for level in 0..a.levels {
        let scale = 1usize << level;
        let mesh = Mesh::new(a.x_max, a.nx * scale, a.nt * scale, 1.0)?;

        let start = Instant::now();
        let u = solve_linear(&one, &one, &zero, &mesh, &scheme)?;
        let seconds = start.elapsed().as_secs_f64();
        let mut err: f64 = 0.0;
        for j in 0..mesh.n_t - 1 {
            for i in 1..mesh.n_x - 1 {
                let (x, t) = (mesh.x(i), mesh.t(j));
                if x > 4.0 {
                    break;
                }
                err = err.max((u.get(j, i) - (bm_truncated_exit(x, t, 1.0) - t)).abs());
            }
        }
        rows.push(Row {
            benchmark: "linear_exit",
            level,
            n_x: Some(mesh.n_x),
            n_t: Some(mesh.n_t),
            paths: None,
            iterations: None,
            value: u.interpolate(PROBE.0, PROBE.1),
            error: Some(err),
            seconds,
        });

        let start = Instant::now();
        let sol = iterate(&general, &mesh, &scheme, choose_kappa(1.0, 2.0, 1.5), 1e-8, 200, None)?;
        let seconds = start.elapsed().as_secs_f64();
        let v = sol.value.interpolate(PROBE.0, PROBE.1);
        rows.push(Row {
            benchmark: "drift_control",
            level,
            n_x: Some(mesh.n_x),
            n_t: Some(mesh.n_t),
            paths: None,
            iterations: sol.diagnostics.last().map(|r| r.n),
            value: v,
            // change against the next coarser level
            error: previous.map(|p| (v - p).abs()),
            seconds,
        });
        previous = Some(v);
    }

    let cfg = McConfig {
        n_paths: a.paths,
        seed: a.seed,
        n_workers: workers,
        ..McConfig::default()
    };
    let start = Instant::now();
    let est = expected_exit_time(PROBE.0, PROBE.1, 1.0, &one, &cfg)?;
    rows.push(Row {
        benchmark: "mc_exit_time",
        level: 0,
        n_x: None,
        n_t: None,
        paths: Some(a.paths),
        iterations: None,
        value: est.mean,
        error: Some(est.stderr),
        seconds: start.elapsed().as_secs_f64(),
    });

    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    };
    writeln!(out, "{HEADER}")?;
    for r in &rows {
        writeln!(out, "{}", r.csv())?;
    }
    out.flush()?;
    Ok(OK)
}
