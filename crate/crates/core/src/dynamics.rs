//! Reduced Hamiltonian flow of `(x, f, p, pf)`, its backward adjoint and
//! the gradient of the shooting objective.
//!
//! ```text
//! H_r = 1/(2γ_V) pᵀ K(x,x) p + 1/(2γ_f) pfᵀ D_s(x)⁻¹ pf
//! ẋ = K(x,x) p / γ_V
//! ḟ = D_s(x)⁻¹ pf / γ_f
//! ṗ = −∂_x(pᵀKp)/(2γ_V) + ∂_x(hᵀ D_s(x) h)/(2γ_f),   h = D_s(x)⁻¹ pf
//! ṗf = 0
//! ```
//!
//! Both directions use fixed-step RK4 on `[0, 1]`.

use std::fmt;
use std::sync::{Arc, LazyLock};

use crate::error::{FshapeError, Result};
use crate::fem::{quadratic_form, solve_ds, FunctionalMetric};
use crate::kernels::{kernel_conv, quad_form, quad_form_grad_x, RadialKernelSpec};
use crate::model::{AdjointState, DiscreteFshape, Point, ShootingState};
use crate::registry::Registry;
use crate::varifold::VarifoldFidelity;

/// How the state is reconstructed at interior RK stages of the backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageInterpolation {
    /// Average of the two stored samples.
    Linear,
    /// Cubic Hermite midpoint using the stored velocities.
    Hermite,
}

#[derive(Clone)]
pub struct DynamicsConfig {
    pub gamma_v: f64,
    pub gamma_f: f64,
    pub kernel: RadialKernelSpec,
    pub metric: FunctionalMetric,
    pub n_steps: usize,
    pub fd_epsilon: f64,
    pub adjoint: AdjointProduct,
    pub stage_interpolation: StageInterpolation,
}

impl fmt::Debug for DynamicsConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DynamicsConfig")
            .field("gamma_v", &self.gamma_v)
            .field("gamma_f", &self.gamma_f)
            .field("kernel", &self.kernel)
            .field("metric", &self.metric)
            .field("n_steps", &self.n_steps)
            .field("fd_epsilon", &self.fd_epsilon)
            .field("adjoint", &self.adjoint.name())
            .field("stage_interpolation", &self.stage_interpolation)
            .finish()
    }
}

/// Default central-difference step, `ε_mach^(1/3)`.
pub fn default_fd_epsilon() -> f64 {
    f64::EPSILON.cbrt()
}

impl DynamicsConfig {
    pub fn new(
        gamma_v: f64,
        gamma_f: f64,
        kernel: RadialKernelSpec,
        metric: FunctionalMetric,
        n_steps: usize,
    ) -> Result<Self> {
        let cfg = Self {
            gamma_v,
            gamma_f,
            kernel,
            metric,
            n_steps,
            fd_epsilon: default_fd_epsilon(),
            adjoint: AdjointProduct::default(),
            stage_interpolation: StageInterpolation::Hermite,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.gamma_v) || !positive(self.gamma_f) || !positive(self.fd_epsilon) {
            return Err(FshapeError::Config(
                "gamma_V, gamma_f and fd_epsilon must be positive".into(),
            ));
        }
        if self.n_steps < 2 {
            return Err(FshapeError::Config("n_steps must be at least 2".into()));
        }
        Ok(())
    }

    pub fn with_steps(&self, n_steps: usize) -> Self {
        Self {
            n_steps,
            ..self.clone()
        }
    }
}

/// The right-hand side `F` of the geodesic equations on a fixed connectivity.
pub struct GeodesicSystem<'a> {
    template: &'a DiscreteFshape,
    cfg: &'a DynamicsConfig,
}

impl<'a> GeodesicSystem<'a> {
    pub fn new(template: &'a DiscreteFshape, cfg: &'a DynamicsConfig) -> Self {
        Self { template, cfg }
    }

    pub fn template(&self) -> &DiscreteFshape {
        self.template
    }

    pub fn config(&self) -> &DynamicsConfig {
        self.cfg
    }

    fn check(&self, s: &ShootingState) -> Result<()> {
        let n = self.template.num_vertices();
        if s.x.len() != n || s.f.len() != n || s.p.len() != n || s.pf.len() != n {
            return Err(FshapeError::ShapeMismatch(format!(
                "state blocks do not match the {n}-vertex template"
            )));
        }
        Ok(())
    }

    /// `h = D_s(x)⁻¹ pf`.
    pub fn signal_velocity_potential(&self, x: &[Point], pf: &[f64]) -> Result<Vec<f64>> {
        let d = self.cfg.metric.assemble(self.template, x)?;
        solve_ds(&d, pf)
    }

    pub fn hamiltonian(&self, s: &ShootingState) -> Result<f64> {
        self.check(s)?;
        let geo = quad_form(&self.cfg.kernel, &s.x, &s.p)? / (2.0 * self.cfg.gamma_v);
        if s.pf.iter().all(|v| *v == 0.0) {
            return Ok(geo);
        }
        let h = self.signal_velocity_potential(&s.x, &s.pf)?;
        let sig: f64 = s.pf.iter().zip(&h).map(|(a, b)| a * b).sum();
        Ok(geo + sig / (2.0 * self.cfg.gamma_f))
    }

    pub fn rhs(&self, s: &ShootingState) -> Result<ShootingState> {
        self.check(s)?;
        let cfg = self.cfg;
        let inv_v = 1.0 / cfg.gamma_v;
        let xdot: Vec<Point> = kernel_conv(&cfg.kernel, &s.x, &s.x, &s.p)?
            .into_iter()
            .map(|v| v * inv_v)
            .collect();
        let mut pdot: Vec<Point> = quad_form_grad_x(&cfg.kernel, &s.x, &s.p)?
            .into_iter()
            .map(|g| g * (-0.5 * inv_v))
            .collect();
        let n = s.x.len();
        let fdot = if s.pf.iter().all(|v| *v == 0.0) {
            vec![0.0; n]
        } else {
            let h = self.signal_velocity_potential(&s.x, &s.pf)?;
            let dq = cfg.metric.dx_quadratic_form(self.template, &s.x, &h)?;
            let c = 0.5 / cfg.gamma_f;
            for (pd, g) in pdot.iter_mut().zip(dq) {
                *pd += g * c;
            }
            h.into_iter().map(|v| v / cfg.gamma_f).collect()
        };
        Ok(ShootingState {
            x: xdot,
            f: fdot,
            p: pdot,
            pf: vec![0.0; n],
        })
    }

    pub fn rhs_flat(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.rhs(&ShootingState::from_flat(z))?.to_flat())
    }
}

pub fn reduced_hamiltonian(s: &ShootingState, template: &DiscreteFshape, cfg: &DynamicsConfig) -> Result<f64> {
    GeodesicSystem::new(template, cfg).hamiltonian(s)
}

pub fn forward_rhs(s: &ShootingState, template: &DiscreteFshape, cfg: &DynamicsConfig) -> Result<ShootingState> {
    GeodesicSystem::new(template, cfg).rhs(s)
}

/// Samples of a geodesic at `t_k = k / n_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<ShootingState>,
}

impl Trajectory {
    pub fn n_steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn initial(&self) -> &ShootingState {
        &self.states[0]
    }

    pub fn last(&self) -> &ShootingState {
        self.states.last().expect("trajectory has at least one sample")
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.n_steps() as f64;
        (0..self.states.len()).map(move |k| k as f64 / n)
    }
}

fn axpy(y: &[f64], a: f64, x: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(yi, xi)| yi + a * xi).collect()
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|c| c.is_finite())
}

pub fn integrate_forward(s0: &ShootingState, template: &DiscreteFshape, cfg: &DynamicsConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let sys = GeodesicSystem::new(template, cfg);
    sys.check(s0)?;
    if !s0.is_finite() {
        return Err(FshapeError::NonFinite {
            step: 0,
            phase: "forward",
        });
    }
    let h = 1.0 / cfg.n_steps as f64;
    let mut states = Vec::with_capacity(cfg.n_steps + 1);
    states.push(s0.clone());
    let mut z = s0.to_flat();
    for step in 1..=cfg.n_steps {
        let k1 = sys.rhs_flat(&z)?;
        let k2 = sys.rhs_flat(&axpy(&z, 0.5 * h, &k1))?;
        let k3 = sys.rhs_flat(&axpy(&z, 0.5 * h, &k2))?;
        let k4 = sys.rhs_flat(&axpy(&z, h, &k3))?;
        for i in 0..z.len() {
            z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if !all_finite(&z) {
            return Err(FshapeError::NonFinite { step, phase: "forward" });
        }
        let mut s = ShootingState::from_flat(&z);
        s.pf.clone_from(&s0.pf);
        states.push(s);
    }
    Ok(Trajectory { states })
}

/// Strategy computing `dF(z)ᵀ w` without forming the Jacobian.
pub trait JacobianTransposeProduct: Send + Sync {
    fn name(&self) -> &'static str;
    /// `step` is the absolute central-difference step in state space.
    fn apply(&self, sys: &GeodesicSystem, z: &[f64], w: &[f64], step: f64) -> Result<Vec<f64>>;
}

/// One directional derivative per product: since `F = J ∇H_r` with `J` the
/// symplectic matrix, `dFᵀ w = Jᵀ · (d/dε) F(z + ε Jᵀ w)`.
struct HamiltonianDirectional;

impl JacobianTransposeProduct for HamiltonianDirectional {
    fn name(&self) -> &'static str {
        "hamiltonian_fd"
    }

    fn apply(&self, sys: &GeodesicSystem, z: &[f64], w: &[f64], step: f64) -> Result<Vec<f64>> {
        let half = z.len() / 2;
        // Jᵀ (w_q, w_p) = (−w_p, w_q)
        let mut v = Vec::with_capacity(z.len());
        v.extend(w[half..].iter().map(|c| -c));
        v.extend_from_slice(&w[..half]);
        let vmax = v.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        if vmax == 0.0 {
            return Ok(vec![0.0; z.len()]);
        }
        let eps = step / vmax;
        let fp = sys.rhs_flat(&axpy(z, eps, &v))?;
        let fm = sys.rhs_flat(&axpy(z, -eps, &v))?;
        let inv = 1.0 / (2.0 * eps);
        let mut out = Vec::with_capacity(z.len());
        out.extend((half..z.len()).map(|i| -(fp[i] - fm[i]) * inv));
        out.extend((0..half).map(|i| (fp[i] - fm[i]) * inv));
        Ok(out)
    }
}

/// `(dFᵀ w)_i = ∂/∂z_i ⟨w, F(z)⟩` by central differences along every
/// coordinate. Costs `2 · 8P` evaluations of `F`; meant for small problems
/// and for cross-checking.
struct ComponentwiseDifferences;

impl JacobianTransposeProduct for ComponentwiseDifferences {
    fn name(&self) -> &'static str {
        "componentwise_fd"
    }

    fn apply(&self, sys: &GeodesicSystem, z: &[f64], w: &[f64], step: f64) -> Result<Vec<f64>> {
        let dot = |a: &[f64]| a.iter().zip(w).map(|(x, y)| x * y).sum::<f64>();
        let mut out = vec![0.0; z.len()];
        let mut probe = z.to_vec();
        for i in 0..z.len() {
            probe[i] = z[i] + step;
            let plus = dot(&sys.rhs_flat(&probe)?);
            probe[i] = z[i] - step;
            let minus = dot(&sys.rhs_flat(&probe)?);
            probe[i] = z[i];
            out[i] = (plus - minus) / (2.0 * step);
        }
        Ok(out)
    }
}

static ADJOINT_PRODUCTS: LazyLock<Registry<dyn JacobianTransposeProduct>> = LazyLock::new(|| {
    let mut reg: Registry<dyn JacobianTransposeProduct> = Registry::new("adjoint product");
    reg.register("hamiltonian_fd", Arc::new(HamiltonianDirectional))
        .register("componentwise_fd", Arc::new(ComponentwiseDifferences));
    reg
});

pub fn adjoint_products() -> &'static Registry<dyn JacobianTransposeProduct> {
    &ADJOINT_PRODUCTS
}

#[derive(Clone)]
pub struct AdjointProduct(Arc<dyn JacobianTransposeProduct>);

impl AdjointProduct {
    pub fn by_name(name: &str) -> Result<Self> {
        Ok(Self(adjoint_products().get(name)?))
    }

    pub fn name(&self) -> &'static str {
        self.0.name()
    }
}

impl Default for AdjointProduct {
    fn default() -> Self {
        Self::by_name("hamiltonian_fd").expect("registered")
    }
}

impl fmt::Debug for AdjointProduct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AdjointProduct({})", self.name())
    }
}

fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, c| m.max(c.abs()))
}

/// Integrates `ẇ = −dF(z_t)ᵀ w` from `t = 1` (value `end`) back to `t = 0`.
pub fn integrate_adjoint_backward(
    traj: &Trajectory,
    end: &AdjointState,
    template: &DiscreteFshape,
    cfg: &DynamicsConfig,
) -> Result<AdjointState> {
    cfg.validate()?;
    let sys = GeodesicSystem::new(template, cfg);
    let n = traj.n_steps();
    if end.num_vertices() != template.num_vertices() {
        return Err(FshapeError::ShapeMismatch(
            "adjoint state does not match the template".into(),
        ));
    }
    let h = 1.0 / n as f64;
    if !(h > f64::EPSILON) {
        return Err(FshapeError::Config("backward step size underflow".into()));
    }
    let samples: Vec<Vec<f64>> = traj.states.iter().map(|s| s.to_flat()).collect();
    let velocities: Option<Vec<Vec<f64>>> = match cfg.stage_interpolation {
        StageInterpolation::Linear => None,
        StageInterpolation::Hermite => Some(samples.iter().map(|z| sys.rhs_flat(z)).collect::<Result<_>>()?),
    };
    let product = &cfg.adjoint.0;
    let g = |z: &[f64], w: &[f64]| -> Result<Vec<f64>> {
        let step = cfg.fd_epsilon * (1.0 + linf(z));
        Ok(product.apply(&sys, z, w, step)?.into_iter().map(|c| -c).collect())
    };

    let mut w = end.to_flat();
    for k in (1..=n).rev() {
        let (z_hi, z_lo) = (&samples[k], &samples[k - 1]);
        let mid: Vec<f64> = match &velocities {
            None => z_hi.iter().zip(z_lo).map(|(a, b)| 0.5 * (a + b)).collect(),
            Some(vel) => (0..z_hi.len())
                .map(|i| 0.5 * (z_hi[i] + z_lo[i]) + h / 8.0 * (vel[k - 1][i] - vel[k][i]))
                .collect(),
        };
        let k1 = g(z_hi, &w)?;
        let k2 = g(&mid, &axpy(&w, -0.5 * h, &k1))?;
        let k3 = g(&mid, &axpy(&w, -0.5 * h, &k2))?;
        let k4 = g(z_lo, &axpy(&w, -h, &k3))?;
        for i in 0..w.len() {
            w[i] -= h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if !all_finite(&w) {
            return Err(FshapeError::NonFinite {
                step: k,
                phase: "adjoint",
            });
        }
    }
    Ok(AdjointState::from_flat(&w))
}

/// Template, target fidelity and weights defining the objective
/// `J(p0, pf) = H_r(x0, f0, p0, pf) + γ_W g(x1, f1)`.
#[derive(Debug, Clone)]
pub struct ShootingProblem {
    pub template: DiscreteFshape,
    pub fidelity: VarifoldFidelity,
    pub gamma_w: f64,
    pub dynamics: DynamicsConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    pub energy: f64,
    pub fidelity: f64,
}

#[derive(Debug, Clone)]
pub struct ObjectiveGradient {
    pub value: ObjectiveValue,
    /// `∂J/∂p0`.
    pub grad_p0: Vec<Point>,
    /// Euclidean `∂J/∂pf`.
    pub grad_pf: Vec<f64>,
    /// `D_0(x0) ∂J/∂pf`, the L²-metric descent direction for `pf`.
    pub descent_pf: Vec<f64>,
    pub trajectory: Trajectory,
}

impl ShootingProblem {
    fn planar_mask(&self, v: &mut [Point]) {
        if self.template.dim_n() == 2 {
            for p in v {
                p.z = 0.0;
            }
        }
    }

    pub fn shoot(&self, p0: &[Point], pf: &[f64]) -> Result<Trajectory> {
        let s0 = ShootingState::from_template(&self.template, p0, pf)?;
        integrate_forward(&s0, &self.template, &self.dynamics)
    }

    fn value_from(&self, traj: &Trajectory) -> Result<ObjectiveValue> {
        let s0 = traj.initial();
        let energy = reduced_hamiltonian(s0, &self.template, &self.dynamics)?;
        let end = traj.last();
        let fidelity = self.fidelity.value(&self.template, &end.x, &end.f)?;
        Ok(ObjectiveValue {
            total: energy + self.gamma_w * fidelity,
            energy,
            fidelity,
        })
    }

    pub fn objective(&self, p0: &[Point], pf: &[f64]) -> Result<(ObjectiveValue, Trajectory)> {
        let traj = self.shoot(p0, pf)?;
        Ok((self.value_from(&traj)?, traj))
    }

    pub fn gradient(&self, p0: &[Point], pf: &[f64]) -> Result<ObjectiveGradient> {
        let traj = self.shoot(p0, pf)?;
        let value = self.value_from(&traj)?;
        let end = traj.last();
        let n = self.template.num_vertices();

        let (_, mut gx, gf) = self.fidelity.value_and_gradient(&self.template, &end.x, &end.f)?;
        self.planar_mask(&mut gx);
        let w = self.gamma_w;
        let adj_end = AdjointState {
            x: gx.into_iter().map(|g| g * w).collect(),
            f: gf.into_iter().map(|g| g * w).collect(),
            p: vec![Point::zeros(); n],
            pf: vec![0.0; n],
        };
        let adj0 = integrate_adjoint_backward(&traj, &adj_end, &self.template, &self.dynamics)?;

        let cfg = &self.dynamics;
        let x0 = self.template.vertices();
        let mut grad_p0: Vec<Point> = kernel_conv(&cfg.kernel, x0, x0, p0)?
            .into_iter()
            .zip(&adj0.p)
            .map(|(k, a)| k / cfg.gamma_v + a)
            .collect();
        self.planar_mask(&mut grad_p0);

        let sys = GeodesicSystem::new(&self.template, cfg);
        let h0 = if pf.iter().all(|v| *v == 0.0) {
            vec![0.0; n]
        } else {
            sys.signal_velocity_potential(x0, pf)?
        };
        let grad_pf: Vec<f64> = h0.iter().zip(&adj0.pf).map(|(h, a)| h / cfg.gamma_f + a).collect();
        let mass = cfg.metric.l2_counterpart().assemble(&self.template, x0)?;
        let descent_pf = mass.matvec(&grad_pf);
        Ok(ObjectiveGradient {
            value,
            grad_p0,
            grad_pf,
            descent_pf,
            trajectory: traj,
        })
    }

    /// `‖f1 − f0‖²` in the L² metric of the template (same scheme as the
    /// signal metric).
    pub fn signal_change_norm2(&self, traj: &Trajectory) -> Result<f64> {
        let diff: Vec<f64> = traj
            .last()
            .f
            .iter()
            .zip(&traj.initial().f)
            .map(|(a, b)| a - b)
            .collect();
        let mass = self
            .dynamics
            .metric
            .l2_counterpart()
            .assemble(&self.template, self.template.vertices())?;
        Ok(quadratic_form(&mass, &diff))
    }
}

/// Forward, fidelity gradient, backward adjoint and assembly of
/// `(∂J/∂p0, D_0 ∂J/∂pf)`.
pub fn gradient_of_objective(p0: &[Point], pf: &[f64], problem: &ShootingProblem) -> Result<ObjectiveGradient> {
    problem.gradient(p0, pf)
}

/// Adjoint gradient against central differences of `J` along random
/// directions of `(p0, pf)`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GradientCheck {
    /// `(analytic, finite difference)` directional derivatives.
    pub directional: Vec<(f64, f64)>,
    pub max_relative_error: f64,
}

/// Compares `⟨∇J, δ⟩` with `(J(m + hδ) − J(m − hδ)) / 2h` for `directions`
/// random unit-box directions `δ` at momenta `(p0, pf)`.
pub fn gradient_check(
    problem: &ShootingProblem,
    p0: &[Point],
    pf: &[f64],
    directions: usize,
    h: f64,
    seed: u64,
) -> Result<GradientCheck> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let grad = problem.gradient(p0, pf)?;
    let planar = problem.template.dim_n() == 2;
    let mut directional = Vec::with_capacity(directions);
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let dp: Vec<Point> = p0
            .iter()
            .map(|_| {
                let z = if planar { 0.0 } else { rng.gen_range(-1.0..=1.0) };
                Point::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0), z)
            })
            .collect();
        let df: Vec<f64> = pf.iter().map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let at = |s: f64| -> Result<f64> {
            let p: Vec<Point> = p0.iter().zip(&dp).map(|(a, d)| a + d * s).collect();
            let f: Vec<f64> = pf.iter().zip(&df).map(|(a, d)| a + d * s).collect();
            Ok(problem.objective(&p, &f)?.0.total)
        };
        let fd = (at(h)? - at(-h)?) / (2.0 * h);
        let analytic = grad.grad_p0.iter().zip(&dp).map(|(g, d)| g.dot(d)).sum::<f64>()
            + grad.grad_pf.iter().zip(&df).map(|(g, d)| g * d).sum::<f64>();
        let scale = fd.abs().max(analytic.abs());
        if scale > 0.0 {
            worst = worst.max((analytic - fd).abs() / scale);
        }
        directional.push((analytic, fd));
    }
    Ok(GradientCheck {
        directional,
        max_relative_error: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use crate::varifold::{to_varifold, VarifoldKernels};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(metric: FunctionalMetric) -> DynamicsConfig {
        DynamicsConfig::new(1.0, 2.0, RadialKernelSpec::gaussian(0.5).unwrap(), metric, 10).unwrap()
    }

    fn random_state(fs: &DiscreteFshape, seed: u64, amp_p: f64, amp_pf: f64) -> ShootingState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = fs.num_vertices();
        let p = (0..n)
            .map(|_| {
                Point::new(
                    rng.gen_range(-amp_p..=amp_p),
                    rng.gen_range(-amp_p..=amp_p),
                    rng.gen_range(-amp_p..=amp_p),
                )
            })
            .collect::<Vec<_>>();
        let pf = (0..n).map(|_| rng.gen_range(-amp_pf..=amp_pf)).collect::<Vec<_>>();
        ShootingState::from_template(fs, &p, &pf).unwrap()
    }

    #[test]
    fn hamiltonian_terms() {
        let fs = shapes::jitter(&shapes::icosphere(0, 1.0, |_| 0.0).unwrap(), 0.05, 0.3, 1);
        let c = cfg(FunctionalMetric::l2_p1());
        let zero = ShootingState::from_template(&fs, &vec![Point::zeros(); 12], &[0.0; 12]).unwrap();
        assert_eq!(reduced_hamiltonian(&zero, &fs, &c).unwrap(), 0.0);

        let mut s = random_state(&fs, 2, 0.5, 0.0);
        let geo = reduced_hamiltonian(&s, &fs, &c).unwrap();
        let q = quad_form(&c.kernel, &s.x, &s.p).unwrap();
        assert!((geo - q / 2.0).abs() < 1e-14 * geo);

        s.pf = vec![0.3; 12];
        let h1 = reduced_hamiltonian(&s, &fs, &c).unwrap() - geo;
        let mut c2 = c.clone();
        c2.gamma_f *= 2.0;
        let h2 = reduced_hamiltonian(&s, &fs, &c2).unwrap() - geo;
        assert!((h2 - 0.5 * h1).abs() < 1e-12 * h1);
    }

    #[test]
    fn zero_momenta_is_a_fixed_point() {
        let fs = shapes::icosphere(1, 1.0, |p| p.x).unwrap();
        let c = cfg(FunctionalMetric::h1());
        let s = ShootingState::from_template(&fs, &vec![Point::zeros(); 42], &[0.0; 42]).unwrap();
        let d = forward_rhs(&s, &fs, &c).unwrap();
        assert!(d.to_flat().iter().all(|v| *v == 0.0));
        let traj = integrate_forward(&s, &fs, &c).unwrap();
        assert_eq!(traj.states.len(), 11);
        assert!(traj.states.iter().all(|t| *t == s));
    }

    #[test]
    fn momentum_rhs_is_minus_hamiltonian_gradient() {
        let fs = shapes::jitter(&shapes::icosphere(0, 1.0, |_| 0.0).unwrap(), 0.05, 0.3, 3);
        for metric in [
            FunctionalMetric::l2_lumped(),
            FunctionalMetric::l2_p1(),
            FunctionalMetric::h1(),
        ] {
            let c = cfg(metric);
            let s = random_state(&fs, 4, 0.4, 0.5);
            let d = forward_rhs(&s, &fs, &c).unwrap();
            let scale = d.p.iter().map(|v| v.amax()).fold(0.0, f64::max);
            let step = 1e-5;
            for i in 0..fs.num_vertices() {
                for k in 0..3 {
                    let mut sp = s.clone();
                    let mut sm = s.clone();
                    sp.x[i][k] += step;
                    sm.x[i][k] -= step;
                    let fd = (reduced_hamiltonian(&sp, &fs, &c).unwrap() - reduced_hamiltonian(&sm, &fs, &c).unwrap())
                        / (2.0 * step);
                    assert!(
                        (d.p[i][k] + fd).abs() < 1e-6 * scale,
                        "{i},{k}: {} vs {}",
                        d.p[i][k],
                        -fd
                    );
                }
                let mut sp = s.clone();
                let mut sm = s.clone();
                sp.pf[i] += step;
                sm.pf[i] -= step;
                let fd = (reduced_hamiltonian(&sp, &fs, &c).unwrap() - reduced_hamiltonian(&sm, &fs, &c).unwrap())
                    / (2.0 * step);
                assert!((d.f[i] - fd).abs() < 1e-6 * d.f.iter().map(|v| v.abs()).fold(0.0, f64::max));
            }
        }
    }

    #[test]
    fn adjoint_products_agree() {
        let fs = shapes::jitter(&shapes::grid(3, 3, 1.0, 1.0, |p| p.x).unwrap(), 0.05, 0.2, 5);
        let c = cfg(FunctionalMetric::l2_p1());
        let sys = GeodesicSystem::new(&fs, &c);
        let z = random_state(&fs, 6, 0.3, 0.3).to_flat();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w: Vec<f64> = (0..z.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let step = 1e-5;
        let a = AdjointProduct::by_name("hamiltonian_fd")
            .unwrap()
            .0
            .apply(&sys, &z, &w, step)
            .unwrap();
        let b = AdjointProduct::by_name("componentwise_fd")
            .unwrap()
            .0
            .apply(&sys, &z, &w, step)
            .unwrap();
        let scale = linf(&b);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6 * scale, "{x} vs {y}");
        }
    }

    #[test]
    fn zero_adjoint_end_stays_zero() {
        let fs = shapes::grid(3, 3, 1.0, 1.0, |p| p.y).unwrap();
        let c = cfg(FunctionalMetric::l2_lumped());
        let traj = integrate_forward(&random_state(&fs, 8, 0.2, 0.2), &fs, &c).unwrap();
        let out = integrate_adjoint_backward(&traj, &AdjointState::zeros(9), &fs, &c).unwrap();
        assert!(out.to_flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_vanishes_at_the_global_minimum() {
        let fs = shapes::jitter(&shapes::grid(3, 3, 1.0, 1.0, |p| p.x).unwrap(), 0.05, 0.2, 9);
        let problem = ShootingProblem {
            fidelity: VarifoldFidelity::new(
                to_varifold(&fs).unwrap(),
                VarifoldKernels::gaussian(0.4, 0.5, "unoriented_squared").unwrap(),
            ),
            template: fs,
            gamma_w: 10.0,
            dynamics: cfg(FunctionalMetric::l2_p1()),
        };
        let g = problem.gradient(&vec![Point::zeros(); 9], &[0.0; 9]).unwrap();
        assert!(g.grad_p0.iter().all(|v| v.amax() < 1e-10));
        assert!(g.grad_pf.iter().all(|v| v.abs() < 1e-10));
        assert!(g.value.total.abs() < 1e-12);
    }

    #[test]
    fn without_fidelity_weight_gradient_is_the_energy_gradient() {
        let fs = shapes::jitter(&shapes::grid(3, 3, 1.0, 1.0, |p| p.x).unwrap(), 0.05, 0.2, 10);
        let tgt = shapes::jitter(&fs, 0.1, 0.5, 11);
        let c = cfg(FunctionalMetric::h1());
        let problem = ShootingProblem {
            fidelity: VarifoldFidelity::new(
                to_varifold(&tgt).unwrap(),
                VarifoldKernels::gaussian(0.4, 0.5, "unoriented_squared").unwrap(),
            ),
            template: fs.clone(),
            gamma_w: 0.0,
            dynamics: c.clone(),
        };
        let s = random_state(&fs, 12, 0.2, 0.2);
        let g = problem.gradient(&s.p, &s.pf).unwrap();
        let kp = kernel_conv(&c.kernel, fs.vertices(), fs.vertices(), &s.p).unwrap();
        for (a, b) in g.grad_p0.iter().zip(&kp) {
            assert!((a - b / c.gamma_v).amax() < 1e-13);
        }
        let h = GeodesicSystem::new(&fs, &c)
            .signal_velocity_potential(fs.vertices(), &s.pf)
            .unwrap();
        let d0 = FunctionalMetric::l2_p1().assemble(&fs, fs.vertices()).unwrap();
        let expected = d0.matvec(&h.iter().map(|v| v / c.gamma_f).collect::<Vec<_>>());
        for (a, b) in g.descent_pf.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn signal_independent_fidelity_keeps_functional_adjoint_zero() {
        let fs = shapes::jitter(&shapes::grid(3, 3, 1.0, 1.0, |_| 0.0).unwrap(), 0.05, 0.0, 13);
        let tgt = shapes::jitter(&fs, 0.1, 0.0, 14);
        let c = cfg(FunctionalMetric::l2_p1());
        // k_f constant: a Cauchy kernel with an enormous width
        let kernels = VarifoldKernels {
            kp: RadialKernelSpec::gaussian(0.4).unwrap(),
            kf: RadialKernelSpec::new(
                "cauchy",
                vec![crate::kernels::KernelTerm {
                    weight: 1.0,
                    sigma: 1e12,
                }],
            )
            .unwrap(),
            kt: crate::kernels::GrassmannKernelSpec::default(),
        };
        let fid = VarifoldFidelity::new(to_varifold(&tgt).unwrap(), kernels);
        let s = random_state(&fs, 15, 0.2, 0.0);
        let traj = integrate_forward(&s, &fs, &c).unwrap();
        let end = traj.last();
        let (_, gx, gf) = fid.value_and_gradient(&fs, &end.x, &end.f).unwrap();
        assert!(gf.iter().all(|v| v.abs() < 1e-20));
        let adj_end = AdjointState {
            x: gx,
            f: gf,
            p: vec![Point::zeros(); 9],
            pf: vec![0.0; 9],
        };
        let out = integrate_adjoint_backward(&traj, &adj_end, &fs, &c).unwrap();
        assert!(out.f.iter().chain(&out.pf).all(|v| *v == 0.0));
        assert!(out.p.iter().any(|v| v.amax() > 0.0));
    }
}
