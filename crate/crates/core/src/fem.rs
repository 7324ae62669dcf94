//! Finite-element signal metrics `fᵀ D_s(x) f` for `s ∈ {0, 1}`.
//!
//! Three metrics are registered: `l2_lumped` (diagonal mass lumping),
//! `l2_p1` (exact L² norm of the piecewise-linear interpolant, via the
//! edge-midpoint rule) and `h1_p1` (`l2_p1` plus the cell-constant gradient
//! energy `Σ r_τ |∇f̃_τ|²`).

use std::fmt;
use std::sync::{Arc, LazyLock};

use serde::{Deserialize, Serialize};

use crate::error::{FshapeError, Result};
use crate::model::{
    bounding_diagonal, raw_frame, raw_frame_gradient, scatter_raw_frame_gradient, DiscreteFshape, Point,
    DEGENERACY_RATIO,
};
use crate::registry::Registry;

/// Sparse symmetric matrix in CSR form (both triangles stored).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetricMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymmetricMatrix {
    /// Sums duplicate entries. The caller supplies both `(i, j)` and `(j, i)`.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut col_idx: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            dim,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn from_diagonal(diag: Vec<f64>) -> Self {
        let dim = diag.len();
        Self {
            dim,
            row_ptr: (0..=dim).collect(),
            col_idx: (0..dim).collect(),
            values: diag,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.col_idx[k], self.values[k]))
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        (self.row_ptr[i]..self.row_ptr[i + 1])
            .find(|&k| self.col_idx[k] == j)
            .map_or(0.0, |k| self.values[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn is_diagonal(&self) -> bool {
        self.triplets().all(|(i, j, v)| i == j || v == 0.0)
    }

    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.dim) {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *o = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.matvec_into(x, &mut out);
        out
    }
}

/// `fᵀ D f`.
pub fn quadratic_form(d: &SparseSymmetricMatrix, f: &[f64]) -> f64 {
    d.matvec(f).iter().zip(f).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub relative_tolerance: f64,
    /// Defaults to `10 · P` when `None`.
    pub max_iterations: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            relative_tolerance: 1e-10,
            max_iterations: None,
        }
    }
}

/// Solves `D h = rhs` with default options.
pub fn solve_ds(d: &SparseSymmetricMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    solve_ds_with(d, rhs, &SolverOptions::default())
}

/// Jacobi-preconditioned conjugate gradients. Diagonal systems are divided
/// through directly.
pub fn solve_ds_with(d: &SparseSymmetricMatrix, rhs: &[f64], opts: &SolverOptions) -> Result<Vec<f64>> {
    let n = d.dim();
    if rhs.len() != n {
        return Err(FshapeError::ShapeMismatch(format!(
            "right-hand side of length {} for a {n}x{n} system",
            rhs.len()
        )));
    }
    let diag = d.diagonal();
    if d.is_diagonal() {
        return Ok(rhs.iter().zip(&diag).map(|(b, a)| b / a).collect());
    }
    let b_norm = norm(rhs);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(x);
    }
    let target = opts.relative_tolerance * b_norm;
    let max_iter = opts.max_iterations.unwrap_or(10 * n).max(1);
    let inv_diag: Vec<f64> = diag.iter().map(|a| 1.0 / a).collect();

    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut res = b_norm;
    for _ in 0..max_iter {
        d.matvec_into(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = norm(&r);
        if res <= target {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(FshapeError::SolverDiverged {
        iterations: max_iter,
        residual: res / b_norm,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Lumped,
    P1,
}

/// One Sobolev signal metric: assembly of `D_s(x)` on a fixed connectivity
/// and the gradient of `hᵀ D_s(x) h` with respect to the vertices.
pub trait SignalMetric: Send + Sync {
    fn name(&self) -> &'static str;
    fn order(&self) -> u8;
    fn scheme(&self) -> Scheme;
    fn assemble(&self, fs: &DiscreteFshape, x: &[Point]) -> Result<SparseSymmetricMatrix>;
    fn dx_quadratic_form(&self, fs: &DiscreteFshape, x: &[Point], h: &[f64]) -> Result<Vec<Point>>;
}

/// Per-cell d-volumes with the degeneracy check.
fn checked_cells<'a>(
    fs: &'a DiscreteFshape,
    x: &'a [Point],
) -> Result<impl Iterator<Item = (usize, &'a [usize], Point, f64)> + 'a> {
    if x.len() != fs.num_vertices() {
        return Err(FshapeError::ShapeMismatch(format!(
            "{} positions for {} vertices",
            x.len(),
            fs.num_vertices()
        )));
    }
    let dim_d = fs.dim_d();
    let threshold = DEGENERACY_RATIO * bounding_diagonal(x).powi(dim_d as i32);
    let mut out = Vec::with_capacity(fs.num_cells());
    for (t, cell) in fs.cells().enumerate() {
        let raw = raw_frame(x, cell);
        let vol = if dim_d == 1 { raw.norm() } else { 0.5 * raw.norm() };
        if !(vol >= threshold) || vol == 0.0 {
            return Err(FshapeError::DegenerateCell {
                cell: t,
                volume: vol,
                threshold,
            });
        }
        out.push((t, cell, raw, vol));
    }
    Ok(out.into_iter())
}

fn check_h(fs: &DiscreteFshape, h: &[f64]) -> Result<()> {
    if h.len() != fs.num_vertices() {
        return Err(FshapeError::ShapeMismatch(format!(
            "signal of length {} for {} vertices",
            h.len(),
            fs.num_vertices()
        )));
    }
    Ok(())
}

struct LumpedL2;

impl SignalMetric for LumpedL2 {
    fn name(&self) -> &'static str {
        "l2_lumped"
    }

    fn order(&self) -> u8 {
        0
    }

    fn scheme(&self) -> Scheme {
        Scheme::Lumped
    }

    fn assemble(&self, fs: &DiscreteFshape, x: &[Point]) -> Result<SparseSymmetricMatrix> {
        let share = 1.0 / (fs.dim_d() + 1) as f64;
        let mut diag = vec![0.0; fs.num_vertices()];
        for (_, cell, _, vol) in checked_cells(fs, x)? {
            for &k in cell {
                diag[k] += share * vol;
            }
        }
        Ok(SparseSymmetricMatrix::from_diagonal(diag))
    }

    fn dx_quadratic_form(&self, fs: &DiscreteFshape, x: &[Point], h: &[f64]) -> Result<Vec<Point>> {
        check_h(fs, h)?;
        let share = 1.0 / (fs.dim_d() + 1) as f64;
        let mut grad = vec![Point::zeros(); x.len()];
        for (_, cell, raw, _) in checked_cells(fs, x)? {
            let c: f64 = cell.iter().map(|&k| h[k] * h[k]).sum::<f64>() * share;
            let g = raw_frame_gradient(&raw, fs.dim_d(), c, &Point::zeros());
            scatter_raw_frame_gradient(x, cell, &g, &mut grad);
        }
        Ok(grad)
    }
}

/// P1 mass matrix divided by the cell volume: `[2 1; 1 2]/6` for segments,
/// `(1 + δ_ij)/12` for triangles.
fn unit_mass(dim_d: usize, i: usize, j: usize) -> f64 {
    match (dim_d, i == j) {
        (1, true) => 1.0 / 3.0,
        (1, false) => 1.0 / 6.0,
        (_, true) => 1.0 / 6.0,
        (_, false) => 1.0 / 12.0,
    }
}

fn push_element(triplets: &mut Vec<(usize, usize, f64)>, cell: &[usize], entry: impl Fn(usize, usize) -> f64) {
    for (a, &i) in cell.iter().enumerate() {
        for (b, &j) in cell.iter().enumerate() {
            triplets.push((i, j, entry(a, b)));
        }
    }
}

fn p1_mass_triplets(fs: &DiscreteFshape, x: &[Point]) -> Result<Vec<(usize, usize, f64)>> {
    let k = fs.dim_d() + 1;
    let mut triplets = Vec::with_capacity(fs.num_cells() * k * k);
    for (_, cell, _, vol) in checked_cells(fs, x)? {
        push_element(&mut triplets, cell, |a, b| vol * unit_mass(fs.dim_d(), a, b));
    }
    Ok(triplets)
}

fn p1_mass_dx(fs: &DiscreteFshape, x: &[Point], h: &[f64], grad: &mut [Point]) -> Result<()> {
    for (_, cell, raw, _) in checked_cells(fs, x)? {
        let mut c = 0.0;
        for (a, &i) in cell.iter().enumerate() {
            for (b, &j) in cell.iter().enumerate() {
                c += unit_mass(fs.dim_d(), a, b) * h[i] * h[j];
            }
        }
        let g = raw_frame_gradient(&raw, fs.dim_d(), c, &Point::zeros());
        scatter_raw_frame_gradient(x, cell, &g, grad);
    }
    Ok(())
}

struct P1L2;

impl SignalMetric for P1L2 {
    fn name(&self) -> &'static str {
        "l2_p1"
    }

    fn order(&self) -> u8 {
        0
    }

    fn scheme(&self) -> Scheme {
        Scheme::P1
    }

    fn assemble(&self, fs: &DiscreteFshape, x: &[Point]) -> Result<SparseSymmetricMatrix> {
        Ok(SparseSymmetricMatrix::from_triplets(
            fs.num_vertices(),
            p1_mass_triplets(fs, x)?,
        ))
    }

    fn dx_quadratic_form(&self, fs: &DiscreteFshape, x: &[Point], h: &[f64]) -> Result<Vec<Point>> {
        check_h(fs, h)?;
        let mut grad = vec![Point::zeros(); x.len()];
        p1_mass_dx(fs, x, h, &mut grad)?;
        Ok(grad)
    }
}

/// Edge vectors `v_i` with `r_τ ∇f̃_τ`-like combination `m = Σ f_i v_i`
/// for a triangle: `|∇f̃|² r = |m|² / (2 |a × b|)`.
#[inline]
fn triangle_stiffness_vectors(a: &Point, b: &Point) -> [Point; 3] {
    [a - b, *b, -a]
}

struct H1P1;

impl SignalMetric for H1P1 {
    fn name(&self) -> &'static str {
        "h1_p1"
    }

    fn order(&self) -> u8 {
        1
    }

    fn scheme(&self) -> Scheme {
        Scheme::P1
    }

    fn assemble(&self, fs: &DiscreteFshape, x: &[Point]) -> Result<SparseSymmetricMatrix> {
        let mut triplets = p1_mass_triplets(fs, x)?;
        for (_, cell, raw, vol) in checked_cells(fs, x)? {
            if fs.dim_d() == 1 {
                let inv = 1.0 / vol;
                push_element(&mut triplets, cell, |a, b| if a == b { inv } else { -inv });
            } else {
                let a = x[cell[1]] - x[cell[0]];
                let b = x[cell[2]] - x[cell[0]];
                let v = triangle_stiffness_vectors(&a, &b);
                let scale = 0.5 / raw.norm();
                push_element(&mut triplets, cell, |i, j| scale * v[i].dot(&v[j]));
            }
        }
        Ok(SparseSymmetricMatrix::from_triplets(fs.num_vertices(), triplets))
    }

    fn dx_quadratic_form(&self, fs: &DiscreteFshape, x: &[Point], h: &[f64]) -> Result<Vec<Point>> {
        check_h(fs, h)?;
        let mut grad = vec![Point::zeros(); x.len()];
        p1_mass_dx(fs, x, h, &mut grad)?;
        for (_, cell, raw, vol) in checked_cells(fs, x)? {
            if fs.dim_d() == 1 {
                // E = δ²/r with r = |raw|
                let delta = h[cell[1]] - h[cell[0]];
                let g = raw * (-delta * delta / (vol * vol * vol));
                grad[cell[1]] += g;
                grad[cell[0]] -= g;
            } else {
                let a = x[cell[1]] - x[cell[0]];
                let b = x[cell[2]] - x[cell[0]];
                let n_norm = raw.norm();
                let d1 = h[cell[1]] - h[cell[0]];
                let d2 = h[cell[2]] - h[cell[0]];
                let m = b * d1 - a * d2;
                let m2 = m.norm_squared();
                let ga = m * (-d2 / n_norm);
                let gb = m * (d1 / n_norm);
                grad[cell[1]] += ga;
                grad[cell[2]] += gb;
                grad[cell[0]] -= ga + gb;
                let g_raw = raw * (-m2 / (2.0 * n_norm * n_norm * n_norm));
                scatter_raw_frame_gradient(x, cell, &g_raw, &mut grad);
            }
        }
        Ok(grad)
    }
}

static SIGNAL_METRICS: LazyLock<Registry<dyn SignalMetric>> = LazyLock::new(|| {
    let mut reg: Registry<dyn SignalMetric> = Registry::new("signal metric");
    reg.register("l2_lumped", Arc::new(LumpedL2))
        .register("l2_p1", Arc::new(P1L2))
        .register("h1_p1", Arc::new(H1P1));
    reg
});

pub fn signal_metrics() -> &'static Registry<dyn SignalMetric> {
    &SIGNAL_METRICS
}

/// Sobolev order and discretization scheme of the signal metric.
#[derive(Clone)]
pub struct FunctionalMetric {
    metric: Arc<dyn SignalMetric>,
}

impl fmt::Debug for FunctionalMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FunctionalMetric({})", self.metric.name())
    }
}

impl PartialEq for FunctionalMetric {
    fn eq(&self, other: &Self) -> bool {
        self.name() == other.name()
    }
}

impl FunctionalMetric {
    pub fn new(order_s: u8, scheme: Scheme) -> Result<Self> {
        let name = match (order_s, scheme) {
            (0, Scheme::Lumped) => "l2_lumped",
            (0, Scheme::P1) => "l2_p1",
            (1, Scheme::P1) => "h1_p1",
            (1, Scheme::Lumped) => return Err(FshapeError::Config("the H1 metric requires the p1 scheme".into())),
            (s, _) => return Err(FshapeError::Config(format!("unsupported Sobolev order {s}"))),
        };
        Self::by_name(name)
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Ok(Self {
            metric: signal_metrics().get(name)?,
        })
    }

    pub fn l2_lumped() -> Self {
        Self::by_name("l2_lumped").expect("registered")
    }

    pub fn l2_p1() -> Self {
        Self::by_name("l2_p1").expect("registered")
    }

    pub fn h1() -> Self {
        Self::by_name("h1_p1").expect("registered")
    }

    pub fn name(&self) -> &'static str {
        self.metric.name()
    }

    pub fn order(&self) -> u8 {
        self.metric.order()
    }

    pub fn scheme(&self) -> Scheme {
        self.metric.scheme()
    }

    /// The L² metric with the same scheme (used to precondition the
    /// functional-momentum gradient).
    pub fn l2_counterpart(&self) -> Self {
        match self.scheme() {
            Scheme::Lumped => Self::l2_lumped(),
            Scheme::P1 => Self::l2_p1(),
        }
    }

    pub fn assemble(&self, fs: &DiscreteFshape, x: &[Point]) -> Result<SparseSymmetricMatrix> {
        self.metric.assemble(fs, x)
    }

    pub fn dx_quadratic_form(&self, fs: &DiscreteFshape, x: &[Point], h: &[f64]) -> Result<Vec<Point>> {
        self.metric.dx_quadratic_form(fs, x, h)
    }
}

pub fn assemble_d0_lumped(fs: &DiscreteFshape) -> Result<SparseSymmetricMatrix> {
    LumpedL2.assemble(fs, fs.vertices())
}

pub fn assemble_d0_p1(fs: &DiscreteFshape) -> Result<SparseSymmetricMatrix> {
    P1L2.assemble(fs, fs.vertices())
}

pub fn assemble_d1(fs: &DiscreteFshape) -> Result<SparseSymmetricMatrix> {
    H1P1.assemble(fs, fs.vertices())
}

/// `∂_x (hᵀ D_s(x) h)` at the vertices of `fs`.
pub fn dx_quadratic_form(fs: &DiscreteFshape, metric: &FunctionalMetric, h: &[f64]) -> Result<Vec<Point>> {
    metric.dx_quadratic_form(fs, fs.vertices(), h)
}
