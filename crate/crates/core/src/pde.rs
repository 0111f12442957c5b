//! Linear Cauchy–Dirichlet problem `D_t u + sigma^2/2 D_x^2 u + f = 0` on a
//! truncated half-line grid, discrete `D_x`, and time-weighted (Bielecki)
//! norms.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoundaryData, ScalarField2};

/// Uniform space-time lattice on `[0, x_max] x [0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub x_max: f64,
    pub n_x: usize,
    pub n_t: usize,
    pub horizon: f64,
}

impl Mesh {
    pub fn new(x_max: f64, n_x: usize, n_t: usize, horizon: f64) -> Result<Self> {
        if !(x_max.is_finite() && x_max > 0.0) {
            return Err(Error::Precondition(format!("x_max must be positive, got {x_max}")));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Precondition(format!("horizon must be positive, got {horizon}")));
        }
        if n_x < 3 {
            return Err(Error::Precondition(format!("n_x must be >= 3, got {n_x}")));
        }
        if n_t < 2 {
            return Err(Error::Precondition(format!("n_t must be >= 2, got {n_t}")));
        }
        Ok(Self {
            x_max,
            n_x,
            n_t,
            horizon,
        })
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.x_max / (self.n_x - 1) as f64
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.horizon / (self.n_t - 1) as f64
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        if i + 1 == self.n_x {
            self.x_max
        } else {
            i as f64 * self.dx()
        }
    }

    #[inline]
    pub fn t(&self, j: usize) -> f64 {
        if j + 1 == self.n_t {
            self.horizon
        } else {
            j as f64 * self.dt()
        }
    }

    pub fn len(&self) -> usize {
        self.n_x * self.n_t
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index of the node nearest to `x`, clamped to the grid.
    pub fn nearest_x(&self, x: f64) -> usize {
        let i = (x / self.dx()).round();
        if i <= 0.0 {
            0
        } else {
            (i as usize).min(self.n_x - 1)
        }
    }

    pub fn nearest_t(&self, t: f64) -> usize {
        let j = (t / self.dt()).round();
        if j <= 0.0 {
            0
        } else {
            (j as usize).min(self.n_t - 1)
        }
    }

    fn same_as(&self, other: &Mesh) -> bool {
        self.n_x == other.n_x
            && self.n_t == other.n_t
            && (self.x_max - other.x_max).abs() <= 1e-12 * self.x_max
            && (self.horizon - other.horizon).abs() <= 1e-12 * self.horizon
    }
}

/// Nodal values on a [`Mesh`], row `j` holding time level `t_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    mesh: Mesh,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(mesh: Mesh) -> Self {
        Self {
            mesh,
            values: vec![0.0; mesh.len()],
        }
    }

    pub fn from_fn(mesh: Mesh, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(mesh.len());
        for j in 0..mesh.n_t {
            let t = mesh.t(j);
            for i in 0..mesh.n_x {
                values.push(f(mesh.x(i), t));
            }
        }
        Self { mesh, values }
    }

    pub fn from_values(mesh: Mesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values for a {}x{} mesh, got {}",
                mesh.len(),
                mesh.n_t,
                mesh.n_x,
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite grid value at time level {}, node {}",
                k / mesh.n_x,
                k % mesh.n_x
            )));
        }
        Ok(Self { mesh, values })
    }

    #[inline]
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.values[j * self.mesh.n_x + i]
    }

    #[inline]
    pub fn row(&self, j: usize) -> &[f64] {
        let n = self.mesh.n_x;
        &self.values[j * n..(j + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            mesh: self.mesh,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Nodewise `self - other`.
    pub fn sub(&self, other: &GridFunction) -> Result<Self> {
        check_shape(self, other)?;
        Ok(Self {
            mesh: self.mesh,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Value at the nearest node.
    pub fn nearest(&self, x: f64, t: f64) -> f64 {
        self.get(self.mesh.nearest_t(t), self.mesh.nearest_x(x))
    }

    /// Bilinear interpolation, clamped to the grid.
    pub fn interpolate(&self, x: f64, t: f64) -> f64 {
        let m = &self.mesh;
        let (i, wx) = cell(x, m.dx(), m.n_x);
        let (j, wt) = cell(t, m.dt(), m.n_t);
        let a = self.get(j, i) * (1.0 - wx) + self.get(j, i + 1) * wx;
        let b = self.get(j + 1, i) * (1.0 - wx) + self.get(j + 1, i + 1) * wx;
        a * (1.0 - wt) + b * wt
    }

    /// CSV with header `x,t,u` (plus `du_dx` when `derivative` is given),
    /// row-major by time level.
    pub fn write_csv<W: Write>(&self, w: &mut W, derivative: Option<&GridFunction>) -> Result<()> {
        if let Some(d) = derivative {
            check_shape(self, d)?;
            writeln!(w, "x,t,u,du_dx")?;
        } else {
            writeln!(w, "x,t,u")?;
        }
        for j in 0..self.mesh.n_t {
            let t = self.mesh.t(j);
            for i in 0..self.mesh.n_x {
                let x = self.mesh.x(i);
                match derivative {
                    Some(d) => writeln!(w, "{x},{t},{},{}", self.get(j, i), d.get(j, i))?,
                    None => writeln!(w, "{x},{t},{}", self.get(j, i))?,
                }
            }
        }
        Ok(())
    }
}

fn cell(z: f64, h: f64, n: usize) -> (usize, f64) {
    let s = (z / h).clamp(0.0, (n - 1) as f64);
    let i = (s.floor() as usize).min(n - 2);
    (i, s - i as f64)
}

/// Reads a grid CSV written in the `x,t,<col>...` layout. Returns the mesh and
/// one value vector per data column, in header order, with the header names.
pub fn read_grid_csv<R: BufRead>(r: R) -> Result<(Mesh, Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("empty grid CSV".into()))??;
    let names: Vec<String> = header.trim().split(',').map(|s| s.trim().to_string()).collect();
    if names.len() < 3 || names[0] != "x" || names[1] != "t" {
        return Err(Error::Data(format!("unexpected grid CSV header `{header}`")));
    }
    let ncols = names.len() - 2;
    let mut xs = Vec::new();
    let mut ts = Vec::new();
    let mut cols = vec![Vec::new(); ncols];
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != names.len() {
            return Err(Error::Data(format!(
                "line {}: expected {} fields, got {}",
                lineno + 2,
                names.len(),
                fields.len()
            )));
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Data(format!("line {}: {e}", lineno + 2)))
        };
        xs.push(parse(fields[0])?);
        ts.push(parse(fields[1])?);
        for (c, f) in cols.iter_mut().zip(&fields[2..]) {
            c.push(parse(f)?);
        }
    }
    let n_x = match ts.iter().position(|&t| t != ts[0]) {
        Some(n) => n,
        None => ts.len(),
    };
    if n_x == 0 || ts.len() % n_x != 0 {
        return Err(Error::Data("grid CSV rows do not form a full lattice".into()));
    }
    let n_t = ts.len() / n_x;
    let mesh = Mesh::new(xs[n_x - 1], n_x, n_t, ts[ts.len() - 1])?;
    for (k, (&x, &t)) in xs.iter().zip(&ts).enumerate() {
        let (j, i) = (k / n_x, k % n_x);
        let tol = 1e-9 * (mesh.x_max + mesh.horizon);
        if (x - mesh.x(i)).abs() > tol || (t - mesh.t(j)).abs() > tol {
            return Err(Error::Data(format!(
                "grid CSV row {} is off the uniform lattice ({x}, {t})",
                k + 2
            )));
        }
    }
    Ok((mesh, names[2..].to_vec(), cols))
}

fn check_shape(a: &GridFunction, b: &GridFunction) -> Result<()> {
    if a.mesh.same_as(&b.mesh) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "{}x{} on [0,{}]x[0,{}] vs {}x{} on [0,{}]x[0,{}]",
            a.mesh.n_t,
            a.mesh.n_x,
            a.mesh.x_max,
            a.mesh.horizon,
            b.mesh.n_t,
            b.mesh.n_x,
            b.mesh.x_max,
            b.mesh.horizon
        )))
    }
}

/// Closure at the truncation boundary `x = x_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FarField {
    /// `u_N = 2 u_{N-1} - u_{N-2}`.
    LinearExtrapolation,
    /// The equation holds at `x_max` with `D_x^2 u = 0`.
    #[default]
    #[serde(alias = "zero_second_derivative")]
    ZeroCurvature,
    /// `u_N = u_{N-1}`.
    #[serde(alias = "homogeneous_neumann")]
    Neumann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    /// Time weighting, 1 = implicit Euler, 1/2 = Crank–Nicolson.
    pub theta: f64,
    pub far_field: FarField,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            theta: 1.0,
            far_field: FarField::default(),
        }
    }
}

impl SchemeConfig {
    pub fn implicit(far_field: FarField) -> Self {
        Self {
            theta: 1.0,
            far_field,
        }
    }

    fn check(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.theta) {
            Ok(())
        } else {
            Err(Error::Precondition(format!(
                "theta must lie in [0, 1], got {}",
                self.theta
            )))
        }
    }
}

/// Solves the linear problem with source field `f`.
pub fn solve_linear(
    sigma: &ScalarField2,
    f: &ScalarField2,
    boundary: &BoundaryData,
    mesh: &Mesh,
    scheme: &SchemeConfig,
) -> Result<GridFunction> {
    let mut values = Vec::with_capacity(mesh.len());
    for j in 0..mesh.n_t {
        let t = mesh.t(j);
        for i in 0..mesh.n_x {
            values.push(f.try_eval("source", mesh.x(i), t)?);
        }
    }
    let source = GridFunction {
        mesh: *mesh,
        values,
    };
    solve_linear_with_source(sigma, &source, boundary, scheme)
}

/// Solves the linear problem with a nodal source; the mesh is taken from
/// `source`.
///
/// Marches backward from `u(x, T) = terminal(x)` with `u(0, t) = lateral(t)`,
/// one tridiagonal solve per level.
pub fn solve_linear_with_source(
    sigma: &ScalarField2,
    source: &GridFunction,
    boundary: &BoundaryData,
    scheme: &SchemeConfig,
) -> Result<GridFunction> {
    scheme.check()?;
    let mesh = source.mesh;
    if (boundary.horizon() - mesh.horizon).abs() > 1e-12 * mesh.horizon {
        return Err(Error::Precondition(format!(
            "mesh horizon {} differs from boundary horizon {}",
            mesh.horizon,
            boundary.horizon()
        )));
    }
    let nx = mesh.n_x;
    let last = nx - 1;
    let dt = mesh.dt();
    let dx = mesh.dx();
    let theta = scheme.theta;

    let mut u = vec![0.0; mesh.len()];
    let top = mesh.n_t - 1;
    for i in 0..nx {
        u[top * nx + i] = boundary.terminal(mesh.x(i));
    }

    let diffusion = |j: usize| -> Result<Vec<f64>> {
        let t = mesh.t(j);
        (0..nx)
            .map(|i| {
                let s = sigma.try_eval("sigma", mesh.x(i), t)?;
                let s2 = s * s;
                if s2 > 0.0 {
                    Ok(0.5 * s2 * dt / (dx * dx))
                } else {
                    Err(Error::Precondition(format!(
                        "sigma^2 must be positive on the grid, got {s2} at x={}, t={t}",
                        mesh.x(i)
                    )))
                }
            })
            .collect()
    };

    let mut r_next = diffusion(top)?;
    let mut sub = vec![0.0; nx];
    let mut diag = vec![0.0; nx];
    let mut sup = vec![0.0; nx];
    let mut rhs = vec![0.0; nx];
    let mut work = vec![0.0; nx];

    for j in (0..top).rev() {
        let r_now = diffusion(j)?;
        let (head, tail) = u.split_at_mut((j + 1) * nx);
        let next = &tail[..nx];
        let cur = &mut head[j * nx..];
        let f_now = source.row(j);
        let f_next = source.row(j + 1);

        let left = boundary.lateral(mesh.t(j));
        cur[0] = left;

        // unknowns 1..=last in slots 0..n
        let n = match scheme.far_field {
            FarField::LinearExtrapolation => last - 1,
            _ => last,
        };
        for k in 0..n {
            let i = k + 1;
            let a = theta * r_now[i];
            let explicit = if i < last {
                (1.0 - theta) * r_next[i] * (next[i - 1] - 2.0 * next[i] + next[i + 1])
            } else {
                0.0
            };
            let src = dt * (theta * f_now[i] + (1.0 - theta) * f_next[i]);
            if i < last {
                sub[k] = -a;
                diag[k] = 1.0 + 2.0 * a;
                sup[k] = -a;
                rhs[k] = next[i] + explicit + src;
                if i == 1 {
                    rhs[k] += a * left;
                    sub[k] = 0.0;
                }
                if i == last - 1 && scheme.far_field == FarField::LinearExtrapolation {
                    // substitute u_N = 2 u_{N-1} - u_{N-2}
                    sub[k] = 0.0;
                    diag[k] = 1.0;
                    sup[k] = 0.0;
                    if i == 1 {
                        rhs[k] = next[i] + explicit + src;
                    }
                }
            } else {
                match scheme.far_field {
                    FarField::ZeroCurvature => {
                        sub[k] = 0.0;
                        diag[k] = 1.0;
                        rhs[k] = next[i] + src;
                    }
                    FarField::Neumann => {
                        sub[k] = -1.0;
                        diag[k] = 1.0;
                        rhs[k] = 0.0;
                    }
                    FarField::LinearExtrapolation => unreachable!(),
                }
                sup[k] = 0.0;
            }
        }
        thomas(&sub[..n], &diag[..n], &sup[..n], &mut rhs[..n], &mut work[..n])
            .map_err(|row| Error::Singular { level: j, row: row + 1 })?;
        cur[1..=n].copy_from_slice(&rhs[..n]);
        if scheme.far_field == FarField::LinearExtrapolation {
            cur[last] = 2.0 * cur[last - 1] - cur[last - 2];
        }
        if let Some(k) = cur[..nx].iter().position(|v| !v.is_finite()) {
            return Err(Error::Singular { level: j, row: k });
        }
        r_next = r_now;
    }
    Ok(GridFunction { mesh, values: u })
}

/// Thomas algorithm; `sub[0]` and `sup[n-1]` are ignored. On success the
/// solution overwrites `rhs`; on a vanishing pivot returns its row.
fn thomas(
    sub: &[f64],
    diag: &[f64],
    sup: &[f64],
    rhs: &mut [f64],
    c: &mut [f64],
) -> std::result::Result<(), usize> {
    let n = diag.len();
    if n == 0 {
        return Ok(());
    }
    let mut beta = diag[0];
    if beta.abs() < f64::MIN_POSITIVE || !beta.is_finite() {
        return Err(0);
    }
    rhs[0] /= beta;
    for i in 1..n {
        c[i - 1] = sup[i - 1] / beta;
        beta = diag[i] - sub[i] * c[i - 1];
        if beta.abs() < f64::MIN_POSITIVE || !beta.is_finite() {
            return Err(i);
        }
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
    Ok(())
}

/// Discrete `D_x`: central differences inside, second-order one-sided at both ends.
pub fn dx(g: &GridFunction) -> GridFunction {
    let m = g.mesh;
    let n = m.n_x;
    let inv = 1.0 / (2.0 * m.dx());
    let mut out = Vec::with_capacity(m.len());
    for j in 0..m.n_t {
        let r = g.row(j);
        out.push((-3.0 * r[0] + 4.0 * r[1] - r[2]) * inv);
        for i in 1..n - 1 {
            out.push((r[i + 1] - r[i - 1]) * inv);
        }
        out.push((3.0 * r[n - 1] - 4.0 * r[n - 2] + r[n - 3]) * inv);
    }
    GridFunction {
        mesh: m,
        values: out,
    }
}

/// `e^{-kappa (T - t_j)}` for every time level.
pub fn bielecki_weights(mesh: &Mesh, kappa: f64) -> Vec<f64> {
    (0..mesh.n_t)
        .map(|j| (-kappa * (mesh.horizon - mesh.t(j))).exp())
        .collect()
}

fn weighted_sup(g: &GridFunction, w: &[f64]) -> f64 {
    let n = g.mesh.n_x;
    g.values
        .chunks(n)
        .zip(w)
        .fold(0.0, |m, (row, wj)| {
            row.iter().fold(m, |m, v| m.max(wj * v.abs()))
        })
}

/// Weighted sup of `g`, plus the weighted sup of `gprime` when given.
pub fn bielecki_norm(g: &GridFunction, gprime: Option<&GridFunction>, kappa: f64) -> Result<f64> {
    if kappa.is_nan() || kappa < 0.0 {
        return Err(Error::Precondition(format!("kappa must be >= 0, got {kappa}")));
    }
    let w = bielecki_weights(&g.mesh, kappa);
    let mut norm = weighted_sup(g, &w);
    if let Some(d) = gprime {
        check_shape(g, d)?;
        norm += weighted_sup(d, &w);
    }
    Ok(norm)
}
