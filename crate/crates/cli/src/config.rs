//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use levydrift::drift_expr::DriftModel;
use levydrift::estimators::{BridgeConfig, EstimateOptions, LinearMethod, Method, SolverChoice};
use levydrift::levy_noise::NoiseConfig;
use levydrift::sde::SimConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    pub out: PathBuf,
    pub repetitions: usize,
    pub model: ModelConfig,
    /// `horizon` and `seed` are set per path by the runner.
    pub noise: NoiseConfig,
    pub sim: SimConfig,
    pub estimate: EstimateConfig,
    pub bridge: BridgeConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub efficiency: Option<EfficiencySection>,
    pub bench: BenchConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            out: PathBuf::from("out"),
            repetitions: 1,
            model: ModelConfig::default(),
            noise: NoiseConfig {
                scale: 0.0056,
                ..NoiseConfig::default()
            },
            sim: SimConfig::default(),
            estimate: EstimateConfig::default(),
            bridge: BridgeConfig::default(),
            efficiency: None,
            bench: BenchConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub drift: String,
    pub params: Vec<String>,
    /// Parameter that generates the paths.
    pub theta: Vec<f64>,
    /// Start point of the numerical fits.
    pub start: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            drift: "-2*x + sin(x + t)".into(),
            params: vec!["t".into()],
            theta: vec![1.0],
            start: vec![0.5],
        }
    }
}

impl ModelConfig {
    pub fn parse(&self) -> Result<DriftModel, CliError> {
        let names: Vec<&str> = self.params.iter().map(String::as_str).collect();
        let model = DriftModel::parse(&self.drift, &names).map_err(|e| CliError::Validation(format!("drift: {e}")))?;
        for (what, v) in [("theta", &self.theta), ("start", &self.start)] {
            if v.len() != names.len() {
                return Err(CliError::Validation(format!(
                    "model.{what} has {} value(s) for {} parameter(s)",
                    v.len(),
                    names.len()
                )));
            }
        }
        Ok(model)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub methods: Vec<Method>,
    pub solver: SolverChoice,
    pub linear: LinearMethod,
    pub omega: f64,
    pub linear_tol: f64,
    /// Precision of the Box-Wilson and Hooke-Jeeves searches.
    pub eps: f64,
    /// Smoothing of the minimax objective.
    pub beta: f64,
    /// Half-width of the scalar search interval around the start.
    pub bracket: f64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        let o = EstimateOptions::default();
        EstimateConfig {
            methods: ["L1", "L2", "Linf"].iter().map(|s| s.parse().unwrap()).collect(),
            solver: o.solver,
            linear: o.linear,
            omega: o.omega,
            linear_tol: o.linear_tol,
            eps: o.hooke_jeeves.eps,
            beta: o.beta,
            bracket: o.bracket,
        }
    }
}

impl EstimateConfig {
    pub fn options(&self) -> EstimateOptions {
        let mut o = EstimateOptions {
            solver: self.solver,
            linear: self.linear,
            omega: self.omega,
            linear_tol: self.linear_tol,
            beta: self.beta,
            bracket: self.bracket,
            ..EstimateOptions::default()
        };
        o.box_wilson.eps = self.eps;
        o.hooke_jeeves.eps = self.eps;
        o.hybrid.box_wilson.eps = self.eps;
        o.hybrid.hooke_jeeves.eps = self.eps;
        o
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EfficiencySection {
    /// Trajectories per stage (N).
    pub paths: usize,
    /// Observations per trajectory; `sim.n` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observations: Option<usize>,
    pub n0: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bridge_radius: Option<f64>,
    /// Also write the per-path deviations and score functionals.
    pub dump: bool,
}

impl Default for EfficiencySection {
    fn default() -> Self {
        EfficiencySection {
            paths: 100,
            observations: None,
            n0: 1,
            bridge_radius: None,
            dump: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub linear: LinearBench,
    pub optim: OptimBench,
}

/// Iterative solvers on the normal system of a quadratic-in-x drift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearBench {
    pub theta: Vec<f64>,
    pub start: Vec<f64>,
    pub n: usize,
    pub x0: f64,
    /// Largest jump; smaller than the main noise so that `x ↦ −x² − x`
    /// paths stay bounded.
    pub u_max: f64,
    pub omega: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seeds: usize,
}

impl Default for LinearBench {
    fn default() -> Self {
        LinearBench {
            theta: vec![-1.0, -1.0],
            start: vec![-0.3, -0.2],
            n: 700,
            x0: 0.0,
            u_max: 0.5,
            omega: 1.0,
            tol: 1e-8,
            max_iter: 10_000,
            seeds: 20,
        }
    }
}

/// Box-Wilson, Hooke-Jeeves and the hybrid on one least-squares fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimBench {
    pub drift: String,
    pub params: Vec<String>,
    pub theta: Vec<f64>,
    pub start: Vec<f64>,
    pub n: usize,
    pub x0: f64,
    pub eps: f64,
    pub seeds: usize,
}

impl Default for OptimBench {
    fn default() -> Self {
        OptimBench {
            drift: "-a*x + atan(x^2 + b)".into(),
            params: vec!["a".into(), "b".into()],
            theta: vec![1.0, 1.0],
            start: vec![0.3, 1.2],
            n: 5000,
            x0: 1.0,
            eps: 1e-5,
            seeds: 50,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks shared by every subcommand; returns the parsed drift.
    pub fn validate(&self) -> Result<DriftModel, CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        self.sim.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        self.noise.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        self.bridge.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        if !(self.estimate.eps > 0.0 && self.estimate.beta > 0.0 && self.estimate.bracket > 0.0) {
            return bad("estimate.eps, estimate.beta and estimate.bracket must be positive".into());
        }
        if !(self.estimate.omega > 0.0 && self.estimate.omega < 2.0) {
            return bad(format!("estimate.omega = {} must lie in (0, 2)", self.estimate.omega));
        }
        self.model.parse()
    }

    /// Noise of one path of `n` observations.
    pub fn path_noise(&self, n: usize, seed: u64) -> NoiseConfig {
        NoiseConfig {
            horizon: n as f64 * self.sim.h,
            seed,
            ..self.noise.clone()
        }
    }
}
