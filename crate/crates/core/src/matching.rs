//! Registration by adaptive-step gradient descent on `(p0, pf)` with a
//! coarse-to-fine schedule of fidelity kernel widths.

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicsConfig, ObjectiveValue, ShootingProblem, Trajectory};
use crate::error::{FshapeError, Result};
use crate::fem::FunctionalMetric;
use crate::kernels::RadialKernelSpec;
use crate::model::{validate_fshape, DiscreteFshape, Point, ShootingState};
use crate::varifold::{to_varifold, VarifoldFidelity, VarifoldKernels};

/// One coarse-to-fine stage: fidelity widths are multiplied by
/// `(scale_p, scale_f)` for at most `iters` iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleStage {
    pub scale_p: f64,
    pub scale_f: f64,
    pub iters: usize,
}

#[derive(Debug, Clone)]
pub struct MatchConfig {
    pub gamma_w: f64,
    pub dynamics: DynamicsConfig,
    pub fidelity_kernels: VarifoldKernels,
    pub schedule: Vec<ScheduleStage>,
    pub step_init: f64,
    pub step_shrink: f64,
    pub step_grow: f64,
    pub grad_tol: f64,
}

/// Two stages, `(2σ_p, 2σ_f)` then `(σ_p, σ_f)`, 100 iterations each.
pub fn default_schedule() -> Vec<ScheduleStage> {
    vec![
        ScheduleStage {
            scale_p: 2.0,
            scale_f: 2.0,
            iters: 100,
        },
        ScheduleStage {
            scale_p: 1.0,
            scale_f: 1.0,
            iters: 100,
        },
    ]
}

impl MatchConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        gamma_v: f64,
        gamma_f: f64,
        gamma_w: f64,
        deformation_kernel: RadialKernelSpec,
        fidelity_kernels: VarifoldKernels,
        metric: FunctionalMetric,
        n_steps: usize,
        step_init: f64,
    ) -> Result<Self> {
        let cfg = Self {
            gamma_w,
            dynamics: DynamicsConfig::new(gamma_v, gamma_f, deformation_kernel, metric, n_steps)?,
            fidelity_kernels,
            schedule: default_schedule(),
            step_init,
            step_shrink: 0.5,
            step_grow: 1.2,
            grad_tol: 1e-8,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_schedule(mut self, schedule: Vec<ScheduleStage>) -> Result<Self> {
        self.schedule = schedule;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.dynamics.validate()?;
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.gamma_w) || !positive(self.step_init) {
            return Err(FshapeError::Config("gamma_W and step_init must be positive".into()));
        }
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) || !(self.step_grow >= 1.0 && self.step_grow.is_finite())
        {
            return Err(FshapeError::Config(
                "step_shrink must lie in (0, 1) and step_grow be at least 1".into(),
            ));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(FshapeError::Config("grad_tol must be non-negative".into()));
        }
        if self.schedule.is_empty() {
            return Err(FshapeError::Config("schedule must have at least one stage".into()));
        }
        if self
            .schedule
            .iter()
            .any(|s| !positive(s.scale_p) || !positive(s.scale_f))
        {
            return Err(FshapeError::Config("schedule scales must be positive".into()));
        }
        Ok(())
    }

    /// Shooting problem for `source → target` with the fidelity widths of
    /// one stage.
    pub fn problem(
        &self,
        source: &DiscreteFshape,
        target: &DiscreteFshape,
        stage: &ScheduleStage,
    ) -> Result<ShootingProblem> {
        let kernels = self.fidelity_kernels.with_scaled_widths(stage.scale_p, stage.scale_f)?;
        Ok(ShootingProblem {
            template: source.clone(),
            fidelity: VarifoldFidelity::new(to_varifold(target)?, kernels),
            gamma_w: self.gamma_w,
            dynamics: self.dynamics.clone(),
        })
    }

    /// Problem with the unscaled fidelity kernels.
    pub fn base_problem(&self, source: &DiscreteFshape, target: &DiscreteFshape) -> Result<ShootingProblem> {
        let unit = ScheduleStage {
            scale_p: 1.0,
            scale_f: 1.0,
            iters: 0,
        };
        self.problem(source, target, &unit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistoryEntry {
    pub stage: usize,
    pub iteration: usize,
    pub objective: f64,
    pub energy: f64,
    pub fidelity: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    MaxIterations,
    StepUnderflow,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::GradientTolerance => "gradient tolerance",
            StopReason::MaxIterations => "max iterations",
            StopReason::StepUnderflow => "step underflow",
        }
    }
}

#[derive(Debug, Clone)]
pub struct MatchResult {
    pub p0: Vec<Point>,
    pub pf: Vec<f64>,
    pub trajectory: Trajectory,
    /// Objective of the final iterate under the unscaled fidelity kernels.
    pub final_value: ObjectiveValue,
    /// Objective at zero momenta under the unscaled fidelity kernels.
    pub initial_value: ObjectiveValue,
    /// Accepted iterates (and the starting point of every stage).
    pub history: Vec<HistoryEntry>,
    pub converged: bool,
    pub reason: StopReason,
}

/// `(J, energy, fidelity)` at `(p0, pf)`.
pub fn objective(p0: &[Point], pf: &[f64], problem: &ShootingProblem) -> Result<ObjectiveValue> {
    Ok(problem.objective(p0, pf)?.0)
}

/// Forward geodesic from `source` with the given initial momenta.
pub fn shoot(source: &DiscreteFshape, p0: &[Point], pf: &[f64], cfg: &DynamicsConfig) -> Result<Trajectory> {
    let s0 = ShootingState::from_template(source, p0, pf)?;
    crate::dynamics::integrate_forward(&s0, source, cfg)
}

fn check_pair(source: &DiscreteFshape, target: &DiscreteFshape) -> Result<()> {
    for (name, fs) in [("source", source), ("target", target)] {
        if let Some(v) = validate_fshape(fs).first() {
            return Err(FshapeError::InvalidShape(format!("{name}: {v}")));
        }
    }
    if source.dim_d() != target.dim_d() || source.dim_n() != target.dim_n() {
        return Err(FshapeError::ShapeMismatch(format!(
            "source is (d={}, n={}) but target is (d={}, n={})",
            source.dim_d(),
            source.dim_n(),
            target.dim_d(),
            target.dim_n()
        )));
    }
    Ok(())
}

fn direction_norm(gp: &[Point], gf: &[f64]) -> f64 {
    (gp.iter().map(|g| g.norm_squared()).sum::<f64>() + gf.iter().map(|g| g * g).sum::<f64>()).sqrt()
}

/// Registers `source` onto `target`, starting from zero momenta.
pub fn match_fshapes(source: &DiscreteFshape, target: &DiscreteFshape, cfg: &MatchConfig) -> Result<MatchResult> {
    cfg.validate()?;
    check_pair(source, target)?;
    let n = source.num_vertices();
    let mut p0 = vec![Point::zeros(); n];
    let mut pf = vec![0.0; n];
    let base = cfg.base_problem(source, target)?;
    let initial_value = objective(&p0, &pf, &base)?;
    if !initial_value.total.is_finite() {
        return Err(FshapeError::NonFinite {
            step: 0,
            phase: "initial objective",
        });
    }

    let mut history = Vec::new();
    let mut reason = StopReason::MaxIterations;
    let min_step = 1e-12 * cfg.step_init;
    for (stage_idx, stage) in cfg.schedule.iter().enumerate() {
        let problem = cfg.problem(source, target, stage)?;
        let mut step = cfg.step_init;
        let mut grad = problem.gradient(&p0, &pf)?;
        history.push(HistoryEntry {
            stage: stage_idx,
            iteration: 0,
            objective: grad.value.total,
            energy: grad.value.energy,
            fidelity: grad.value.fidelity,
            step,
        });
        reason = StopReason::MaxIterations;
        for iter in 1..=stage.iters {
            let norm = direction_norm(&grad.grad_p0, &grad.descent_pf);
            if norm < cfg.grad_tol {
                reason = StopReason::GradientTolerance;
                break;
            }
            let current = grad.value.total;
            let accepted = loop {
                let cand_p: Vec<Point> = p0.iter().zip(&grad.grad_p0).map(|(p, g)| p - g * step).collect();
                let cand_f: Vec<f64> = pf.iter().zip(&grad.descent_pf).map(|(p, g)| p - g * step).collect();
                let value = match problem.objective(&cand_p, &cand_f) {
                    Ok((v, _)) => Some(v.total),
                    // An overshooting trial step may blow up or fold the mesh; shrink and retry.
                    Err(FshapeError::NonFinite { .. })
                    | Err(FshapeError::SolverDiverged { .. })
                    | Err(FshapeError::DegenerateCell { .. }) => None,
                    Err(e) => return Err(e),
                };
                if value.is_some_and(|v| v.is_finite() && v < current) {
                    break Some((cand_p, cand_f));
                }
                step *= cfg.step_shrink;
                if step < min_step {
                    break None;
                }
            };
            let Some((np, nf)) = accepted else {
                reason = StopReason::StepUnderflow;
                break;
            };
            p0 = np;
            pf = nf;
            grad = problem.gradient(&p0, &pf)?;
            debug!(
                "stage {stage_idx} iter {iter}: J = {:.6e} (energy {:.3e}, fidelity {:.3e}), step {step:.3e}",
                grad.value.total, grad.value.energy, grad.value.fidelity
            );
            history.push(HistoryEntry {
                stage: stage_idx,
                iteration: iter,
                objective: grad.value.total,
                energy: grad.value.energy,
                fidelity: grad.value.fidelity,
                step,
            });
            step *= cfg.step_grow;
        }
        info!(
            "stage {stage_idx} ({}): J = {:.6e} after {} accepted steps",
            reason.as_str(),
            grad.value.total,
            history.iter().filter(|h| h.stage == stage_idx).count() - 1
        );
        if reason == StopReason::StepUnderflow {
            break;
        }
    }

    let (final_value, trajectory) = base.objective(&p0, &pf)?;
    Ok(MatchResult {
        p0,
        pf,
        trajectory,
        final_value,
        initial_value,
        history,
        converged: reason == StopReason::GradientTolerance,
        reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    fn triangle_pair(shift: f64) -> (DiscreteFshape, DiscreteFshape) {
        let src = DiscreteFshape::triangles(
            vec![
                Point::new(0.0, 0.0, 0.0),
                Point::new(1.0, 0.0, 0.0),
                Point::new(0.0, 1.0, 0.0),
            ],
            vec![0.0, 0.5, 1.0],
            &[[0, 1, 2]],
        )
        .unwrap();
        let moved = src.vertices().iter().map(|v| v + Point::new(shift, 0.0, 0.0)).collect();
        let tgt = src.with_data(moved, src.signals().to_vec()).unwrap();
        (src, tgt)
    }

    fn config(step: f64, iters: usize) -> MatchConfig {
        MatchConfig::new(
            1.0,
            1.0,
            10.0,
            RadialKernelSpec::gaussian(0.5).unwrap(),
            VarifoldKernels::gaussian(0.3, 1.0, "unoriented_squared").unwrap(),
            FunctionalMetric::l2_p1(),
            10,
            step,
        )
        .unwrap()
        .with_schedule(vec![ScheduleStage {
            scale_p: 1.0,
            scale_f: 1.0,
            iters,
        }])
        .unwrap()
    }

    #[test]
    fn zero_momenta_give_pure_fidelity() {
        let (src, tgt) = triangle_pair(0.1);
        let cfg = config(1.0, 10);
        let problem = cfg.base_problem(&src, &tgt).unwrap();
        let v = objective(&[Point::zeros(); 3], &[0.0; 3], &problem).unwrap();
        assert_eq!(v.energy, 0.0);
        assert_eq!(v.total, cfg.gamma_w * v.fidelity);
        assert!(v.fidelity > 0.0);

        let same = cfg.base_problem(&src, &src).unwrap();
        let v = objective(&[Point::zeros(); 3], &[0.0; 3], &same).unwrap();
        assert!(v.total.abs() <= 1e-12 * same.fidelity.target_norm2());
    }

    #[test]
    fn objective_is_monotone_in_gamma_w() {
        let (src, tgt) = triangle_pair(0.1);
        let p = vec![Point::new(0.1, 0.0, 0.0); 3];
        let mut last = f64::NEG_INFINITY;
        for w in [1.0, 2.0, 5.0] {
            let mut cfg = config(1.0, 10);
            cfg.gamma_w = w;
            let v = objective(&p, &[0.0; 3], &cfg.base_problem(&src, &tgt).unwrap()).unwrap();
            assert!(v.total > last);
            last = v.total;
        }
    }

    #[test]
    fn translated_triangle_is_matched() {
        let (src, tgt) = triangle_pair(0.1);
        let res = match_fshapes(&src, &tgt, &config(1.0, 200)).unwrap();
        assert!(
            res.final_value.fidelity < 0.1 * res.initial_value.fidelity,
            "{:?} -> {:?}",
            res.initial_value,
            res.final_value
        );
        for w in res.history.windows(2) {
            assert!(w[1].objective < w[0].objective);
        }
        assert!(res.trajectory.states.iter().all(|s| s.pf == res.pf));
    }

    #[test]
    fn identical_shapes_stop_immediately() {
        let (src, _) = triangle_pair(0.0);
        let mut cfg = config(1.0, 50);
        cfg.grad_tol = 1e-9;
        let res = match_fshapes(&src, &src, &cfg).unwrap();
        assert!(res.converged);
        assert_eq!(res.history.len(), 1);
        assert!(res.p0.iter().all(|p| *p == Point::zeros()));
        assert!(res.final_value.total <= res.initial_value.total);
    }

    #[test]
    fn larger_gamma_w_never_fits_worse() {
        let blob = |c: (f64, f64)| {
            move |p: &Point| (-((p.x - c.0).powi(2) + (p.y - c.1).powi(2)) / (2.0 * 0.15f64.powi(2))).exp()
        };
        let src = shapes::grid(8, 8, 1.0, 1.0, blob((0.4, 0.45))).unwrap();
        let tgt = shapes::grid(8, 8, 1.0, 1.0, blob((0.6, 0.55))).unwrap();
        let mut last = f64::INFINITY;
        for gamma_w in [5.0, 25.0, 125.0] {
            let mut cfg = config(0.1, 40);
            cfg.gamma_w = gamma_w;
            cfg.fidelity_kernels = VarifoldKernels::gaussian(0.15, 0.7, "unoriented_squared").unwrap();
            let fid = match_fshapes(&src, &tgt, &cfg).unwrap().final_value.fidelity;
            assert!(fid <= last, "γ_W {gamma_w}: {fid} > {last}");
            last = fid;
        }
    }

    #[test]
    fn matching_is_deterministic() {
        let src = shapes::jitter(&shapes::grid(4, 4, 1.0, 1.0, |p| p.x).unwrap(), 0.02, 0.1, 3);
        let tgt = shapes::jitter(&src, 0.05, 0.3, 4);
        let cfg = config(1.0, 15);
        let a = match_fshapes(&src, &tgt, &cfg).unwrap();
        let b = match_fshapes(&src, &tgt, &cfg).unwrap();
        assert_eq!(a.p0, b.p0);
        assert_eq!(a.pf, b.pf);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        let (src, _) = triangle_pair(0.0);
        let curve = shapes::circle(8, 1.0, |_| 0.0).unwrap();
        assert!(matches!(
            match_fshapes(&src, &curve, &config(1.0, 5)),
            Err(FshapeError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = config(1.0, 5);
        cfg.step_shrink = 1.5;
        assert!(cfg.validate().is_err());
        assert!(config(1.0, 5).with_schedule(vec![]).is_err());
    }
}
