//! Radial and Grassmann kernels, kernel convolutions and the gradient of the
//! kernel quadratic form `pᵀ K(x, x) p`.
//!
//! All sums are direct O(PQ) loops. Output rows are computed independently
//! (in parallel when rayon has threads) and every row accumulates in index
//! order, so results are identical from run to run.

use std::fmt;
use std::sync::{Arc, LazyLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FshapeError, Result};
use crate::model::Point;
use crate::registry::Registry;

/// Shape of a single radial term as a function of `t = |x - y|² / σ²`.
pub trait RadialFamily: Send + Sync {
    fn name(&self) -> &'static str;
    fn profile(&self, t: f64) -> f64;
    fn profile_derivative(&self, t: f64) -> f64;
}

struct Gaussian;

impl RadialFamily for Gaussian {
    fn name(&self) -> &'static str {
        "gaussian"
    }

    #[inline]
    fn profile(&self, t: f64) -> f64 {
        (-0.5 * t).exp()
    }

    #[inline]
    fn profile_derivative(&self, t: f64) -> f64 {
        -0.5 * (-0.5 * t).exp()
    }
}

struct Cauchy;

impl RadialFamily for Cauchy {
    fn name(&self) -> &'static str {
        "cauchy"
    }

    #[inline]
    fn profile(&self, t: f64) -> f64 {
        1.0 / (1.0 + t)
    }

    #[inline]
    fn profile_derivative(&self, t: f64) -> f64 {
        let d = 1.0 + t;
        -1.0 / (d * d)
    }
}

static RADIAL_FAMILIES: LazyLock<Registry<dyn RadialFamily>> = LazyLock::new(|| {
    let mut reg: Registry<dyn RadialFamily> = Registry::new("radial kernel family");
    reg.register("gaussian", Arc::new(Gaussian))
        .register("cauchy", Arc::new(Cauchy));
    reg
});

pub fn radial_families() -> &'static Registry<dyn RadialFamily> {
    &RADIAL_FAMILIES
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelTerm {
    pub weight: f64,
    pub sigma: f64,
}

/// Weighted sum of radial profiles of one family.
#[derive(Clone)]
pub struct RadialKernelSpec {
    family: Arc<dyn RadialFamily>,
    terms: Vec<KernelTerm>,
    // (weight, 1/σ²) per term
    scaled: Vec<(f64, f64)>,
}

impl fmt::Debug for RadialKernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RadialKernelSpec")
            .field("family", &self.family.name())
            .field("terms", &self.terms)
            .finish()
    }
}

impl PartialEq for RadialKernelSpec {
    fn eq(&self, other: &Self) -> bool {
        self.family.name() == other.family.name() && self.terms == other.terms
    }
}

impl RadialKernelSpec {
    pub fn new(family: &str, terms: Vec<KernelTerm>) -> Result<Self> {
        let family = radial_families().get(family)?;
        if terms.is_empty() {
            return Err(FshapeError::InvalidKernel("at least one term required".into()));
        }
        for t in &terms {
            if !(t.weight > 0.0 && t.weight.is_finite() && t.sigma > 0.0 && t.sigma.is_finite()) {
                return Err(FshapeError::InvalidKernel(format!(
                    "weights and widths must be positive, got weight {} sigma {}",
                    t.weight, t.sigma
                )));
            }
        }
        let scaled = terms.iter().map(|t| (t.weight, 1.0 / (t.sigma * t.sigma))).collect();
        Ok(Self { family, terms, scaled })
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        Self::new("gaussian", vec![KernelTerm { weight: 1.0, sigma }])
    }

    pub fn family(&self) -> &'static str {
        self.family.name()
    }

    pub fn terms(&self) -> &[KernelTerm] {
        &self.terms
    }

    /// Same kernel with every width multiplied by `factor`.
    pub fn with_scaled_widths(&self, factor: f64) -> Result<Self> {
        let terms = self
            .terms
            .iter()
            .map(|t| KernelTerm {
                weight: t.weight,
                sigma: t.sigma * factor,
            })
            .collect();
        Self::new(self.family.name(), terms)
    }

    /// Kernel value at squared distance `u`.
    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        self.scaled.iter().map(|&(w, s)| w * self.family.profile(u * s)).sum()
    }

    /// Derivative of the kernel with respect to the squared distance.
    #[inline]
    pub fn derivative(&self, u: f64) -> f64 {
        self.scaled
            .iter()
            .map(|&(w, s)| w * s * self.family.profile_derivative(u * s))
            .sum()
    }
}

/// `k(u)` for a squared distance `u ≥ 0`.
pub fn radial_eval(spec: &RadialKernelSpec, squared_distance: f64) -> f64 {
    spec.eval(squared_distance)
}

/// `out[i] = Σ_j k(|x_i − y_j|²) α_j`.
pub fn kernel_conv(spec: &RadialKernelSpec, x: &[Point], y: &[Point], alpha: &[Point]) -> Result<Vec<Point>> {
    if y.len() != alpha.len() {
        return Err(FshapeError::ShapeMismatch(format!(
            "{} source points but {} weights",
            y.len(),
            alpha.len()
        )));
    }
    Ok(x.par_iter()
        .map(|xi| {
            let mut acc = Point::zeros();
            for (yj, aj) in y.iter().zip(alpha) {
                acc += aj * spec.eval((xi - yj).norm_squared());
            }
            acc
        })
        .collect())
}

fn check_same_len(x: &[Point], p: &[Point]) -> Result<()> {
    if x.len() != p.len() {
        return Err(FshapeError::ShapeMismatch(format!(
            "{} points but {} momenta",
            x.len(),
            p.len()
        )));
    }
    Ok(())
}

/// `Σ_{k,l} k(|x_k − x_l|²) p_k·p_l`.
pub fn quad_form(spec: &RadialKernelSpec, x: &[Point], p: &[Point]) -> Result<f64> {
    let conv = kernel_conv(spec, x, x, p)?;
    Ok(p.iter().zip(&conv).map(|(pi, ci)| pi.dot(ci)).sum())
}

/// Gradient of [`quad_form`] with respect to every point.
pub fn quad_form_grad_x(spec: &RadialKernelSpec, x: &[Point], p: &[Point]) -> Result<Vec<Point>> {
    check_same_len(x, p)?;
    Ok(x.par_iter()
        .zip(p.par_iter())
        .map(|(xi, pi)| {
            let mut acc = Point::zeros();
            for (xj, pj) in x.iter().zip(p) {
                let diff = xi - xj;
                acc += diff * (spec.derivative(diff.norm_squared()) * pi.dot(pj));
            }
            acc * 4.0
        })
        .collect())
}

/// Signal kernel `k_f(a, b)` (radial profile of `(a − b)²`).
pub fn scalar_kernel_eval(spec: &RadialKernelSpec, a: f64, b: f64) -> f64 {
    let d = a - b;
    spec.eval(d * d)
}

/// `∂k_f(a, b)/∂a`.
pub fn scalar_kernel_grad(spec: &RadialKernelSpec, a: f64, b: f64) -> f64 {
    let d = a - b;
    2.0 * d * spec.derivative(d * d)
}

/// Kernel between two unit frames (normals or tangents).
pub trait GrassmannKernel: Send + Sync {
    fn name(&self) -> &'static str;
    fn eval(&self, u: &Point, v: &Point) -> f64;
    /// Ambient partial derivative with respect to `u` (not projected).
    fn partial_u(&self, u: &Point, v: &Point) -> Point;
}

struct UnorientedSquared;

impl GrassmannKernel for UnorientedSquared {
    fn name(&self) -> &'static str {
        "unoriented_squared"
    }

    #[inline]
    fn eval(&self, u: &Point, v: &Point) -> f64 {
        let c = u.dot(v);
        c * c
    }

    #[inline]
    fn partial_u(&self, u: &Point, v: &Point) -> Point {
        v * (2.0 * u.dot(v))
    }
}

struct OrientedLinear;

impl GrassmannKernel for OrientedLinear {
    fn name(&self) -> &'static str {
        "oriented_linear"
    }

    #[inline]
    fn eval(&self, u: &Point, v: &Point) -> f64 {
        u.dot(v)
    }

    #[inline]
    fn partial_u(&self, _u: &Point, v: &Point) -> Point {
        *v
    }
}

struct ConstantFrame;

impl GrassmannKernel for ConstantFrame {
    fn name(&self) -> &'static str {
        "constant"
    }

    #[inline]
    fn eval(&self, _u: &Point, _v: &Point) -> f64 {
        1.0
    }

    #[inline]
    fn partial_u(&self, _u: &Point, _v: &Point) -> Point {
        Point::zeros()
    }
}

static GRASSMANN_KERNELS: LazyLock<Registry<dyn GrassmannKernel>> = LazyLock::new(|| {
    let mut reg: Registry<dyn GrassmannKernel> = Registry::new("grassmann kernel mode");
    reg.register("unoriented_squared", Arc::new(UnorientedSquared))
        .register("oriented_linear", Arc::new(OrientedLinear))
        .register("constant", Arc::new(ConstantFrame));
    reg
});

pub fn grassmann_kernels() -> &'static Registry<dyn GrassmannKernel> {
    &GRASSMANN_KERNELS
}

#[derive(Clone)]
pub struct GrassmannKernelSpec {
    kernel: Arc<dyn GrassmannKernel>,
}

impl fmt::Debug for GrassmannKernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GrassmannKernelSpec({})", self.kernel.name())
    }
}

impl PartialEq for GrassmannKernelSpec {
    fn eq(&self, other: &Self) -> bool {
        self.mode() == other.mode()
    }
}

impl Default for GrassmannKernelSpec {
    fn default() -> Self {
        Self::new("unoriented_squared").expect("default grassmann kernel is registered")
    }
}

impl GrassmannKernelSpec {
    pub fn new(mode: &str) -> Result<Self> {
        Ok(Self {
            kernel: grassmann_kernels().get(mode)?,
        })
    }

    pub fn mode(&self) -> &'static str {
        self.kernel.name()
    }

    #[inline]
    pub fn eval(&self, u: &Point, v: &Point) -> f64 {
        self.kernel.eval(u, v)
    }

    #[inline]
    pub fn partial_u(&self, u: &Point, v: &Point) -> Point {
        self.kernel.partial_u(u, v)
    }
}

const UNIT_TOLERANCE: f64 = 1e-8;

fn check_unit(u: &Point) -> Result<()> {
    if (u.norm() - 1.0).abs() > UNIT_TOLERANCE {
        return Err(FshapeError::InvalidKernel(format!(
            "frame vector of norm {} is not unit",
            u.norm()
        )));
    }
    Ok(())
}

pub fn grassmann_eval(spec: &GrassmannKernelSpec, u: &Point, v: &Point) -> Result<f64> {
    check_unit(u)?;
    check_unit(v)?;
    Ok(spec.eval(u, v))
}

/// Gradient with respect to `u` projected onto the tangent space of the
/// unit sphere at `u`.
pub fn grassmann_grad(spec: &GrassmannKernelSpec, u: &Point, v: &Point) -> Result<Point> {
    check_unit(u)?;
    check_unit(v)?;
    let g = spec.partial_u(u, v);
    Ok(g - u * u.dot(&g))
}
