//! Closed-form reduction of the geodesic equations for centred spheres with
//! constant signal and radial momentum, used as an independent check of the
//! mesh pipeline.
//!
//! ```text
//! ḟ = pf / (γ_f r²)
//! ṙ = χ(r) ρ / γ_V
//! ρ̇ = −χ'(r) ρ² / (2γ_V) + pf² / (γ_f r³)
//! χ(r) = 4π (σ²/r²)(1 + e^{−2r²/σ²}) [1 − (σ²/r²) tanh(r²/σ²)]
//! ```
//!
//! This χ equals twice ∫_{S²} k(|r u − r e|²) dσ(u); a triangulated sphere
//! follows these equations when its deformation kernel has weight 2.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{FshapeError, Result};
use crate::fem::FunctionalMetric;
use crate::model::{DiscreteFshape, Point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SphereState {
    pub r: f64,
    pub f: f64,
    pub rho: f64,
    pub pf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereParams {
    pub gamma_v: f64,
    pub gamma_f: f64,
    pub sigma: f64,
}

// Below this value of r²/σ² the series of (z − tanh z)/z² is used; the
// direct formula loses about ε/z² to cancellation.
const SERIES_BELOW: f64 = 0.02;

/// `q(z) = (z − tanh z)/z²` and `q'(z)`.
fn q_and_derivative(z: f64) -> (f64, f64) {
    if z < SERIES_BELOW {
        let z2 = z * z;
        let q = z * (1.0 / 3.0 + z2 * (-2.0 / 15.0 + z2 * (17.0 / 315.0 - z2 * 62.0 / 2835.0)));
        let dq = 1.0 / 3.0 + z2 * (-6.0 / 15.0 + z2 * (85.0 / 315.0 - z2 * 434.0 / 2835.0));
        (q, dq)
    } else {
        let t = z.tanh();
        let q = (z - t) / (z * z);
        let dq = (z * t * t - 2.0 * (z - t)) / (z * z * z);
        (q, dq)
    }
}

/// Radial response of the Gaussian kernel `exp(−u/(2σ²))` on the sphere of
/// radius `r`.
pub fn chi(r: f64, sigma: f64) -> f64 {
    let z = r * r / (sigma * sigma);
    let (q, _) = q_and_derivative(z);
    4.0 * PI * (1.0 + (-2.0 * z).exp()) * q
}

/// `dχ/dr`.
pub fn chi_prime(r: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let z = r * r / s2;
    let (q, dq) = q_and_derivative(z);
    let e = (-2.0 * z).exp();
    4.0 * PI * ((1.0 + e) * dq - 2.0 * e * q) * (2.0 * r / s2)
}

fn rhs(s: &SphereState, p: &SphereParams) -> (f64, f64, f64) {
    let r2 = s.r * s.r;
    let df = s.pf / (p.gamma_f * r2);
    let dr = chi(s.r, p.sigma) * s.rho / p.gamma_v;
    let drho = -chi_prime(s.r, p.sigma) * s.rho * s.rho / (2.0 * p.gamma_v) + s.pf * s.pf / (p.gamma_f * r2 * s.r);
    (dr, df, drho)
}

/// `(ṙ, ḟ, ρ̇)` at a state.
pub fn sphere_velocity(s: &SphereState, p: &SphereParams) -> (f64, f64, f64) {
    rhs(s, p)
}

/// RK4 path on `[0, 1]` with `n_steps + 1` samples.
pub fn integrate_sphere(s0: SphereState, params: SphereParams, n_steps: usize) -> Result<Vec<SphereState>> {
    let positive = |v: f64| v > 0.0 && v.is_finite();
    if !positive(params.gamma_v) || !positive(params.gamma_f) || !positive(params.sigma) {
        return Err(FshapeError::Config(
            "gamma_V, gamma_f and sigma must be positive".into(),
        ));
    }
    if !positive(s0.r) || !s0.f.is_finite() || !s0.rho.is_finite() || !s0.pf.is_finite() {
        return Err(FshapeError::Config(format!("invalid initial sphere state {s0:?}")));
    }
    if n_steps == 0 {
        return Err(FshapeError::Config("n_steps must be positive".into()));
    }
    let h = 1.0 / n_steps as f64;
    let mut path = Vec::with_capacity(n_steps + 1);
    path.push(s0);
    let mut s = s0;
    let shifted = |s: &SphereState, k: (f64, f64, f64), a: f64| SphereState {
        r: s.r + a * k.0,
        f: s.f + a * k.1,
        rho: s.rho + a * k.2,
        pf: s.pf,
    };
    for step in 0..n_steps {
        let t = step as f64 * h;
        let collapsed = |s: &SphereState| {
            if s.r > 0.0 {
                Ok(())
            } else {
                Err(FshapeError::RadiusCollapse { t })
            }
        };
        let k1 = rhs(&s, &params);
        let s2 = shifted(&s, k1, 0.5 * h);
        collapsed(&s2)?;
        let k2 = rhs(&s2, &params);
        let s3 = shifted(&s, k2, 0.5 * h);
        collapsed(&s3)?;
        let k3 = rhs(&s3, &params);
        let s4 = shifted(&s, k3, h);
        collapsed(&s4)?;
        let k4 = rhs(&s4, &params);
        s = SphereState {
            r: s.r + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
            f: s.f + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
            rho: s.rho + h / 6.0 * (k1.2 + 2.0 * k2.2 + 2.0 * k3.2 + k4.2),
            pf: s.pf,
        };
        if !(s.r > 0.0) || !s.r.is_finite() || !s.rho.is_finite() {
            return Err(FshapeError::RadiusCollapse { t: t + h });
        }
        path.push(s);
    }
    Ok(path)
}

/// Number of sign changes of `ṙ` along a path.
pub fn radial_sign_changes(path: &[SphereState], params: &SphereParams) -> usize {
    let signs: Vec<f64> = path
        .iter()
        .map(|s| rhs(s, params).0)
        .filter(|v| *v != 0.0)
        .map(f64::signum)
        .collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Mesh momenta discretising a radial momentum density `ρ0` and a functional
/// momentum density `pf` (both per unit solid angle) on a sphere mesh of
/// radius `r0` centred at the origin: `p_k = ρ0 n̂_k A_k / r0²`,
/// `pf_k = pf A_k / r0²`, with `A_k` the lumped vertex areas.
pub fn sphere_mesh_momenta(fs: &DiscreteFshape, r0: f64, rho0: f64, pf: f64) -> Result<(Vec<Point>, Vec<f64>)> {
    if fs.dim_d() != 2 || fs.dim_n() != 3 {
        return Err(FshapeError::InvalidShape("sphere momenta need a surface in R³".into()));
    }
    let areas = FunctionalMetric::l2_lumped().assemble(fs, fs.vertices())?.diagonal();
    let r2 = r0 * r0;
    let p = fs
        .vertices()
        .iter()
        .zip(&areas)
        .map(|(x, a)| x.normalize() * (rho0 * a / r2))
        .collect();
    let pfs = areas.iter().map(|a| pf * a / r2).collect();
    Ok((p, pfs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const REFERENCE: SphereParams = SphereParams {
        gamma_v: 1.0,
        gamma_f: 5.0,
        sigma: 0.3,
    };

    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        #[allow(clippy::too_many_arguments)]
        fn rec(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                    + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
    }

    fn funk_hecke_chi(r: f64, sigma: f64) -> f64 {
        let k = |u: f64| u * (-(2.0 * r * r * (1.0 - u)) / (2.0 * sigma * sigma)).exp();
        4.0 * PI * adaptive_simpson(&k, -1.0, 1.0, 1e-14)
    }

    #[test]
    fn chi_is_positive_and_matches_quadrature() {
        for r in [0.1, 0.5, 1.0, 5.0] {
            let c = chi(r, 0.3);
            assert!(c > 0.0);
            assert_relative_eq!(c, funk_hecke_chi(r, 0.3), max_relative = 1e-8);
        }
        assert!(chi(5.0, 0.3) / chi(1.0, 0.3) < 0.05);
        // both branches of the series switch agree
        let r = 0.3 * SERIES_BELOW.sqrt();
        assert_relative_eq!(
            chi(r * (1.0 - 1e-9), 0.3),
            chi(r * (1.0 + 1e-9), 0.3),
            max_relative = 1e-8
        );
        assert_relative_eq!(chi(0.01, 0.3), funk_hecke_chi(0.01, 0.3), max_relative = 1e-8);
    }

    #[test]
    fn chi_prime_matches_finite_differences() {
        for r in [0.3, 1.0, 2.0, 0.03] {
            let h = 1e-5 * r;
            let fd = (chi(r + h, 0.3) - chi(r - h, 0.3)) / (2.0 * h);
            assert_relative_eq!(chi_prime(r, 0.3), fd, max_relative = 1e-8);
        }
    }

    #[test]
    fn chi_has_an_interior_maximum() {
        assert!(chi_prime(0.1, 0.3) > 0.0);
        assert!(chi_prime(2.0, 0.3) < 0.0);
        let grid: Vec<f64> = (1..400).map(|k| k as f64 * 0.01).collect();
        let changes = grid
            .windows(2)
            .filter(|w| chi_prime(w[0], 0.3).signum() != chi_prime(w[1], 0.3).signum())
            .count();
        assert_eq!(changes, 1);
    }

    #[test]
    fn chi_scaling() {
        for lambda in [0.5, 2.0, 7.0] {
            for r in [0.2, 1.0] {
                assert_relative_eq!(chi(lambda * r, lambda * 0.3), chi(r, 0.3), max_relative = 1e-13);
                assert_relative_eq!(
                    chi_prime(lambda * r, lambda * 0.3),
                    chi_prime(r, 0.3) / lambda,
                    max_relative = 1e-12
                );
            }
        }
    }

    #[test]
    fn fixed_point_and_recall_term() {
        let s0 = SphereState {
            r: 1.0,
            f: 0.4,
            rho: 0.0,
            pf: 0.0,
        };
        let path = integrate_sphere(s0, REFERENCE, 50).unwrap();
        assert!(path.iter().all(|s| *s == s0));

        let s0 = SphereState { pf: 0.5, ..s0 };
        let path = integrate_sphere(s0, REFERENCE, 50).unwrap();
        assert!(path[1].r > path[0].r);
        assert!(path.windows(2).all(|w| w[1].r > w[0].r));
        assert!(path.iter().all(|s| s.pf == 0.5));
    }

    #[test]
    fn contract_then_expand() {
        let s0 = SphereState {
            r: 0.5,
            f: 0.0,
            rho: -0.25,
            pf: -0.6,
        };
        let path = integrate_sphere(s0, REFERENCE, 1000).unwrap();
        assert_eq!(radial_sign_changes(&path, &REFERENCE), 1);
        let rmin = path.iter().map(|s| s.r).fold(f64::INFINITY, f64::min);
        assert!(rmin < s0.r && rmin < path.last().unwrap().r);
        // signal decreases monotonically since pf < 0
        assert!(path.windows(2).all(|w| w[1].f < w[0].f));
    }

    #[test]
    fn signal_quadrature_identity() {
        let s0 = SphereState {
            r: 0.5,
            f: 1.0,
            rho: -0.25,
            pf: -0.6,
        };
        let n = 2000;
        let path = integrate_sphere(s0, REFERENCE, n).unwrap();
        let h = 1.0 / n as f64;
        let g: Vec<f64> = path.iter().map(|s| 1.0 / (s.r * s.r)).collect();
        let integral = h * (g.iter().sum::<f64>() - 0.5 * (g[0] + g[n]));
        let predicted = s0.pf / REFERENCE.gamma_f * integral;
        assert!((path[n].f - s0.f - predicted).abs() < 1e-6);
    }

    #[test]
    fn rk4_self_convergence() {
        let s0 = SphereState {
            r: 0.5,
            f: 0.0,
            rho: -0.25,
            pf: -0.6,
        };
        let end = |n| *integrate_sphere(s0, REFERENCE, n).unwrap().last().unwrap();
        let (a, b, c) = (end(40), end(80), end(160));
        for (x, y, z) in [(a.r, b.r, c.r), (a.f, b.f, c.f), (a.rho, b.rho, c.rho)] {
            let d1 = (y - x).abs();
            let d2 = (z - y).abs();
            assert!(d2 < d1 / 16.0 * 1.2, "{d1} {d2}");
        }
    }

    #[test]
    fn collapse_is_reported() {
        let s0 = SphereState {
            r: 0.2,
            f: 0.0,
            rho: -50.0,
            pf: 0.0,
        };
        assert!(matches!(
            integrate_sphere(s0, REFERENCE, 10),
            Err(FshapeError::RadiusCollapse { .. })
        ));
    }
}
