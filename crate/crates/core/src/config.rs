//! JSON run configuration and the run manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{AdjointProduct, StageInterpolation};
use crate::error::{FshapeError, Result};
use crate::fem::{FunctionalMetric, Scheme};
use crate::kernels::{KernelTerm, RadialKernelSpec};
use crate::matching::{HistoryEntry, MatchConfig, ScheduleStage};
use crate::varifold::VarifoldKernels;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: String,
    pub terms: Vec<KernelTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidelityConfig {
    pub sigma_p: f64,
    pub sigma_f: f64,
    pub kt_mode: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    pub s: u8,
    pub scheme: Scheme,
}

/// Every key is required and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "gamma_V")]
    pub gamma_v: f64,
    pub gamma_f: f64,
    #[serde(rename = "gamma_W")]
    pub gamma_w: f64,
    pub deformation_kernel: KernelConfig,
    pub fidelity: FidelityConfig,
    pub metric: MetricConfig,
    pub n_steps: usize,
    pub schedule: Vec<ScheduleStage>,
    pub step_init: f64,
    pub grad_tol: f64,
    pub fd_epsilon: f64,
}

/// Choices not carried by the JSON file (set on the command line).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SolverOptions {
    pub adjoint: String,
    pub stage_interpolation: String,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            adjoint: AdjointProduct::default().name().to_string(),
            stage_interpolation: "hermite".into(),
        }
    }
}

impl SolverOptions {
    pub fn interpolation(&self) -> Result<StageInterpolation> {
        match self.stage_interpolation.as_str() {
            "hermite" => Ok(StageInterpolation::Hermite),
            "linear" => Ok(StageInterpolation::Linear),
            other => Err(FshapeError::Config(format!(
                "unknown stage interpolation '{other}' (available: hermite, linear)"
            ))),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| FshapeError::Config(format!("{}: {e}", path.display())))
    }

    pub fn deformation_kernel(&self) -> Result<RadialKernelSpec> {
        RadialKernelSpec::new(&self.deformation_kernel.family, self.deformation_kernel.terms.clone())
    }

    pub fn fidelity_kernels(&self) -> Result<VarifoldKernels> {
        VarifoldKernels::gaussian(self.fidelity.sigma_p, self.fidelity.sigma_f, &self.fidelity.kt_mode)
    }

    pub fn metric(&self) -> Result<FunctionalMetric> {
        FunctionalMetric::new(self.metric.s, self.metric.scheme)
    }

    pub fn match_config(&self, options: &SolverOptions) -> Result<MatchConfig> {
        let mut cfg = MatchConfig::new(
            self.gamma_v,
            self.gamma_f,
            self.gamma_w,
            self.deformation_kernel()?,
            self.fidelity_kernels()?,
            self.metric()?,
            self.n_steps,
            self.step_init,
        )?;
        cfg.schedule = self.schedule.clone();
        cfg.grad_tol = self.grad_tol;
        cfg.dynamics.fd_epsilon = self.fd_epsilon;
        cfg.dynamics.adjoint = AdjointProduct::by_name(&options.adjoint)?;
        cfg.dynamics.stage_interpolation = options.interpolation()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

pub fn hash_file(path: &Path) -> Result<InputHash> {
    let bytes = std::fs::read(path)?;
    Ok(InputHash {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseTiming {
    pub phase: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: Option<RunConfig>,
    pub options: SolverOptions,
    pub inputs: Vec<InputHash>,
    pub timings: Vec<PhaseTiming>,
    pub objective_history: Vec<HistoryEntry>,
    pub summary: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, config: Option<RunConfig>, options: SolverOptions) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config,
            options,
            inputs: Vec::new(),
            timings: Vec::new(),
            objective_history: Vec::new(),
            summary: serde_json::Value::Null,
        }
    }

    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = std::time::Instant::now();
        let out = f()?;
        self.timings.push(PhaseTiming {
            phase: phase.into(),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const EXAMPLE: &str = r#"{
        "gamma_V": 1.0, "gamma_f": 0.5, "gamma_W": 10.0,
        "deformation_kernel": {"family": "gaussian", "terms": [{"weight": 1.0, "sigma": 0.3}, {"weight": 1.0, "sigma": 0.1}]},
        "fidelity": {"sigma_p": 0.1, "sigma_f": 0.5, "kt_mode": "unoriented_squared"},
        "metric": {"s": 1, "scheme": "p1"},
        "n_steps": 10,
        "schedule": [{"scale_p": 2.0, "scale_f": 2.0, "iters": 100}, {"scale_p": 1.0, "scale_f": 1.0, "iters": 100}],
        "step_init": 0.1, "grad_tol": 1e-6, "fd_epsilon": 1e-5
    }"#;

    #[test]
    fn parses_and_builds_a_match_config() {
        let c = RunConfig::from_json(EXAMPLE).unwrap();
        let m = c.match_config(&SolverOptions::default()).unwrap();
        assert_eq!(m.dynamics.metric.name(), "h1_p1");
        assert_eq!(m.dynamics.kernel.terms().len(), 2);
        assert_eq!(m.schedule.len(), 2);
        assert_eq!(m.dynamics.fd_epsilon, 1e-5);
        let back = RunConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_and_missing_keys_are_rejected() {
        let extra = EXAMPLE.replace("\"n_steps\": 10,", "\"n_steps\": 10, \"verbose\": true,");
        assert!(RunConfig::from_json(&extra).is_err());
        let nested = EXAMPLE.replace("\"s\": 1,", "\"s\": 1, \"order\": 2,");
        assert!(RunConfig::from_json(&nested).is_err());
        let missing = EXAMPLE.replace("\"fd_epsilon\": 1e-5", "\"fd_epsilon_x\": 1e-5");
        assert!(RunConfig::from_json(&missing).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let lumped_h1 = EXAMPLE.replace("\"scheme\": \"p1\"", "\"scheme\": \"lumped\"");
        let c = RunConfig::from_json(&lumped_h1).unwrap();
        assert!(c.match_config(&SolverOptions::default()).is_err());
        let bad_family = EXAMPLE.replace("\"gaussian\"", "\"laplace\"");
        let c = RunConfig::from_json(&bad_family).unwrap();
        assert!(matches!(
            c.match_config(&SolverOptions::default()),
            Err(FshapeError::UnknownStrategy { .. })
        ));
        let opts = SolverOptions {
            adjoint: "nope".into(),
            ..Default::default()
        };
        assert!(RunConfig::from_json(EXAMPLE).unwrap().match_config(&opts).is_err());
    }
}
