//! Functional-varifold fidelity between a deformed fshape and a target.
//!
//! Each cell becomes one weighted Dirac at its barycenter carrying its unit
//! frame and mean signal. The inner product of two such measures is
//! `Σ_{τ,τ'} k_p(c, c') k_f(s, s') k_t(u, u') w w'` and the fidelity is the
//! squared RKHS distance `⟨μ,μ⟩ − 2⟨μ,ν⟩ + ⟨ν,ν⟩`.

use rayon::prelude::*;

use crate::error::{FshapeError, Result};
use crate::kernels::{GrassmannKernelSpec, RadialKernelSpec};
use crate::model::{
    cell_geometry_of, raw_frame, raw_frame_gradient, scatter_raw_frame_gradient, DiscreteFshape, Point,
};

#[derive(Debug, Clone, PartialEq)]
pub struct VarifoldKernels {
    pub kp: RadialKernelSpec,
    pub kf: RadialKernelSpec,
    pub kt: GrassmannKernelSpec,
}

impl VarifoldKernels {
    /// Gaussian position and signal kernels with the given widths.
    pub fn gaussian(sigma_p: f64, sigma_f: f64, kt_mode: &str) -> Result<Self> {
        Ok(Self {
            kp: RadialKernelSpec::gaussian(sigma_p)?,
            kf: RadialKernelSpec::gaussian(sigma_f)?,
            kt: GrassmannKernelSpec::new(kt_mode)?,
        })
    }

    /// Widths used for the digits experiments (σ_p = 0.05, σ_f = 0.7).
    pub fn digits_preset() -> Self {
        Self::gaussian(0.05, 0.7, "unoriented_squared").expect("valid preset")
    }

    pub fn with_scaled_widths(&self, scale_p: f64, scale_f: f64) -> Result<Self> {
        Ok(Self {
            kp: self.kp.with_scaled_widths(scale_p)?,
            kf: self.kf.with_scaled_widths(scale_f)?,
            kt: self.kt.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteVarifold {
    pub centers: Vec<Point>,
    pub frames: Vec<Point>,
    pub weights: Vec<f64>,
    pub cell_signals: Vec<f64>,
}

impl DiscreteVarifold {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

pub fn to_varifold(fs: &DiscreteFshape) -> Result<DiscreteVarifold> {
    varifold_at(fs, fs.vertices(), fs.signals())
}

/// Varifold of `fs`'s connectivity at the given positions and signals.
pub fn varifold_at(fs: &DiscreteFshape, x: &[Point], f: &[f64]) -> Result<DiscreteVarifold> {
    if x.len() != fs.num_vertices() || f.len() != fs.num_vertices() {
        return Err(FshapeError::ShapeMismatch(format!(
            "{} positions and {} signals for {} vertices",
            x.len(),
            f.len(),
            fs.num_vertices()
        )));
    }
    let g = cell_geometry_of(fs, x, f)?;
    Ok(DiscreteVarifold {
        centers: g.centers,
        frames: g.frames,
        weights: g.volumes,
        cell_signals: g.cell_signals,
    })
}

#[inline]
fn pair_term(k: &VarifoldKernels, a: &DiscreteVarifold, i: usize, b: &DiscreteVarifold, j: usize) -> f64 {
    let d = a.cell_signals[i] - b.cell_signals[j];
    k.kp.eval((a.centers[i] - b.centers[j]).norm_squared())
        * k.kf.eval(d * d)
        * k.kt.eval(&a.frames[i], &b.frames[j])
        * a.weights[i]
        * b.weights[j]
}

pub fn fvar_inner(a: &DiscreteVarifold, b: &DiscreteVarifold, k: &VarifoldKernels) -> f64 {
    let rows: Vec<f64> = (0..a.len())
        .into_par_iter()
        .map(|i| (0..b.len()).map(|j| pair_term(k, a, i, b, j)).sum())
        .collect();
    rows.iter().sum()
}

/// `⟨μ,μ⟩ − 2⟨μ,ν⟩ + ⟨ν,ν⟩` without clamping.
pub fn fidelity_unclamped(source: &DiscreteVarifold, target: &DiscreteVarifold, k: &VarifoldKernels) -> f64 {
    fvar_inner(source, source, k) - 2.0 * fvar_inner(source, target, k) + fvar_inner(target, target, k)
}

/// Fidelity of `fs1` against `target`, clamped at zero.
pub fn fidelity(fs1: &DiscreteFshape, target: &DiscreteVarifold, k: &VarifoldKernels) -> Result<f64> {
    let mu = to_varifold(fs1)?;
    Ok(fidelity_unclamped(&mu, target, k).max(0.0))
}

/// Gradients of the fidelity with respect to vertex positions and signals.
pub fn grad_fidelity(
    fs1: &DiscreteFshape,
    target: &DiscreteVarifold,
    k: &VarifoldKernels,
) -> Result<(Vec<Point>, Vec<f64>)> {
    let fid = VarifoldFidelity::new(target.clone(), k.clone());
    let (_, gx, gf) = fid.value_and_gradient(fs1, fs1.vertices(), fs1.signals())?;
    Ok((gx, gf))
}

/// Derivatives of a cross-sum with respect to one cell's varifold data.
#[derive(Default, Clone, Copy)]
struct CellPartials {
    center: Point,
    frame: Point,
    weight: f64,
    signal: f64,
}

/// Fidelity against a fixed target with `⟨ν,ν⟩` computed once.
#[derive(Debug, Clone)]
pub struct VarifoldFidelity {
    target: DiscreteVarifold,
    kernels: VarifoldKernels,
    target_norm2: f64,
}

impl VarifoldFidelity {
    pub fn new(target: DiscreteVarifold, kernels: VarifoldKernels) -> Self {
        let target_norm2 = fvar_inner(&target, &target, &kernels);
        Self {
            target,
            kernels,
            target_norm2,
        }
    }

    pub fn target_norm2(&self) -> f64 {
        self.target_norm2
    }

    pub fn kernels(&self) -> &VarifoldKernels {
        &self.kernels
    }

    pub fn target(&self) -> &DiscreteVarifold {
        &self.target
    }

    /// Unclamped fidelity of `fs`'s connectivity at `(x, f)`.
    pub fn value(&self, fs: &DiscreteFshape, x: &[Point], f: &[f64]) -> Result<f64> {
        let mu = varifold_at(fs, x, f)?;
        Ok(
            fvar_inner(&mu, &mu, &self.kernels) - 2.0 * fvar_inner(&mu, &self.target, &self.kernels)
                + self.target_norm2,
        )
    }

    /// `(value, ∂_x, ∂_f)` of the unclamped fidelity.
    pub fn value_and_gradient(
        &self,
        fs: &DiscreteFshape,
        x: &[Point],
        f: &[f64],
    ) -> Result<(f64, Vec<Point>, Vec<f64>)> {
        let mu = varifold_at(fs, x, f)?;
        let k = &self.kernels;
        let nu = &self.target;
        let per_cell: Vec<(f64, CellPartials)> = (0..mu.len())
            .into_par_iter()
            .map(|i| {
                let (v_self, d_self) = cross_partials(k, &mu, i, &mu);
                let (v_tgt, d_tgt) = cross_partials(k, &mu, i, nu);
                let partials = CellPartials {
                    center: (d_self.center - d_tgt.center) * 2.0,
                    frame: (d_self.frame - d_tgt.frame) * 2.0,
                    weight: 2.0 * (d_self.weight - d_tgt.weight),
                    signal: 2.0 * (d_self.signal - d_tgt.signal),
                };
                (v_self - 2.0 * v_tgt, partials)
            })
            .collect();

        let value = per_cell.iter().map(|(v, _)| v).sum::<f64>() + self.target_norm2;
        let share = 1.0 / (fs.dim_d() + 1) as f64;
        let mut gx = vec![Point::zeros(); x.len()];
        let mut gf = vec![0.0; x.len()];
        for (cell, (_, d)) in fs.cells().zip(&per_cell) {
            let raw = raw_frame(x, cell);
            let g_raw = raw_frame_gradient(&raw, fs.dim_d(), d.weight, &d.frame);
            scatter_raw_frame_gradient(x, cell, &g_raw, &mut gx);
            for &v in cell {
                gx[v] += d.center * share;
                gf[v] += d.signal * share;
            }
        }
        Ok((value, gx, gf))
    }
}

/// `Σ_j T(i, j)` over cells `j` of `b` and its partials with respect to the
/// data of cell `i` of `a`.
fn cross_partials(k: &VarifoldKernels, a: &DiscreteVarifold, i: usize, b: &DiscreteVarifold) -> (f64, CellPartials) {
    let (c, u, w, s) = (a.centers[i], a.frames[i], a.weights[i], a.cell_signals[i]);
    let mut value = 0.0;
    let mut acc = CellPartials::default();
    for j in 0..b.len() {
        let diff = c - b.centers[j];
        let r2 = diff.norm_squared();
        let kp = k.kp.eval(r2);
        let dkp = k.kp.derivative(r2);
        let ds = s - b.cell_signals[j];
        let kf = k.kf.eval(ds * ds);
        let dkf = k.kf.derivative(ds * ds);
        let kt = k.kt.eval(&u, &b.frames[j]);
        let wj = b.weights[j];
        let term = kp * kf * kt * wj;
        value += term * w;
        acc.weight += term;
        acc.center += diff * (2.0 * dkp * kf * kt * w * wj);
        acc.signal += 2.0 * ds * dkf * kp * kt * w * wj;
        acc.frame += k.kt.partial_u(&u, &b.frames[j]) * (kp * kf * w * wj);
    }
    (value, acc)
}
