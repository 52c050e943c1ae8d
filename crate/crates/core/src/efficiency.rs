//! Monte Carlo check of how close an estimator comes to the information
//! bound: the spread of re-estimates on paths simulated at the estimate,
//! against the second moment of the score functional over bridge-filtered
//! paths.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use thiserror::Error;

use crate::drift_expr::DriftModel;
use crate::estimators::{estimate, BridgeConfig, EstimateOptions, EstimationError, Method};
use crate::levy_noise::{sample_jumps, sample_path, NoiseConfig, NoiseError};
use crate::malliavin::xi1_into;
use crate::sde::{
    euler_simulate, simulate_sensitivities, simulate_states, CompiledDrift, EvalBuffer, PathSpec,
    SdeError, SensitivityState, SimConfig, Trajectory,
};
use crate::seeds::{stream_rng, stream_seed};

#[derive(Debug, Error)]
pub enum EfficiencyError {
    #[error("invalid efficiency config: {0}")]
    Config(String),
    #[error("reference estimate failed: {0}")]
    Reference(EstimationError),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("estimation failed on all {0} variance paths")]
    NoEstimates(usize),
    #[error("no bridge path of {0} landed within the radius")]
    NoneAccepted(usize),
    #[error("zero information: the score vanishes on every accepted path")]
    ZeroInformation,
}

#[derive(Clone, Debug)]
pub struct EfficiencyConfig {
    /// Trajectories per Monte Carlo stage (N).
    pub paths: usize,
    /// Observations per trajectory (n); overrides `sim.n`.
    pub observations: usize,
    /// Grid index at which the score functional is evaluated.
    pub n0: usize,
    /// Bridge acceptance radius in state units. `None` takes 0.1 times the
    /// standard deviation of the reference increments.
    pub bridge_radius: Option<f64>,
    pub method: Method,
    /// Parameter that generates the reference path.
    pub theta0: Vec<f64>,
    /// Start point of the numerical fits.
    pub start: Vec<f64>,
    pub sim: SimConfig,
    pub noise: NoiseConfig,
    pub estimate: EstimateOptions,
    /// Bridge settings of the one-step estimators.
    pub bridge: BridgeConfig,
    pub seed: u64,
}

impl EfficiencyConfig {
    pub fn validate(&self, model: &DriftModel) -> Result<(), EfficiencyError> {
        let bad = |m: String| Err(EfficiencyError::Config(m));
        if self.paths < 2 {
            return bad(format!("need at least 2 paths, got {}", self.paths));
        }
        if self.n0 < 1 || self.n0 > self.observations {
            return bad(format!("n0 = {} must lie in 1..={}", self.n0, self.observations));
        }
        if let Some(r) = self.bridge_radius {
            if !(r > 0.0) {
                return bad(format!("bridge radius {r} must be positive"));
            }
        }
        if self.theta0.len() != model.dim() || self.start.len() != model.dim() {
            return bad(format!("theta0 and start need {} component(s)", model.dim()));
        }
        self.sim_config().validate()?;
        self.noise.validate()?;
        Ok(())
    }

    fn sim_config(&self) -> SimConfig {
        SimConfig {
            n: self.observations,
            ..self.sim.clone()
        }
    }

    fn noise_for(&self, horizon: f64, seed: u64) -> NoiseConfig {
        NoiseConfig {
            horizon,
            seed,
            ..self.noise.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EfficiencyReport {
    pub method: Method,
    pub theta_hat: Vec<f64>,
    /// `(1/N) Σ v vᵀ` with `v = √n (θ̂ᵏ − θ̂)`.
    pub s2: DMatrix<f64>,
    /// Mean outer product of the score functional over accepted bridge paths.
    pub j: DMatrix<f64>,
    /// `√(J s²)` in one dimension; square roots of the eigenvalues of
    /// `√J s² √J` (ascending) in general.
    pub efficiency: Vec<f64>,
    /// `1 / value²` for each efficiency value; 1 at the bound.
    pub reciprocal: Vec<f64>,
    pub acceptance_rate: f64,
    pub accepted: usize,
    pub radius: f64,
    pub target: f64,
    /// Variance paths whose estimate failed.
    pub failures: usize,
    /// Bridge paths accepted but with a degenerate score functional.
    pub degenerate: usize,
    /// Per-path `√n (θ̂ᵏ − θ̂)`, in path order.
    pub deviations: Vec<Vec<f64>>,
    /// Per-path score functionals of the accepted bridge paths, in path order.
    pub scores: Vec<Vec<f64>>,
}

pub const REPORT_CSV_HEADER: &str = "# levydrift efficiency v1";

impl EfficiencyReport {
    pub fn csv_header(dim: usize) -> String {
        let mut h = String::from("method");
        for j in 0..dim {
            write!(h, ",theta_hat_{j}").unwrap();
        }
        for j in 0..dim {
            write!(h, ",efficiency_{j},reciprocal_{j}").unwrap();
        }
        h.push_str(",acceptance_rate,accepted,radius,failures");
        h
    }

    pub fn csv_row(&self) -> String {
        let mut r = self.method.to_string();
        for v in &self.theta_hat {
            write!(r, ",{v}").unwrap();
        }
        for (e, q) in self.efficiency.iter().zip(&self.reciprocal) {
            write!(r, ",{e},{q}").unwrap();
        }
        write!(
            r,
            ",{},{},{},{}",
            self.acceptance_rate, self.accepted, self.radius, self.failures
        )
        .unwrap();
        r
    }

    pub fn summary(&self) -> String {
        let mut s = format!("{}: θ̂ = {:?}\n", self.method, self.theta_hat);
        writeln!(s, "  efficiency {:?} (reciprocal {:?})", self.efficiency, self.reciprocal).unwrap();
        writeln!(
            s,
            "  bridge: {} accepted, rate {:.4}, radius {:.4e} around {:.6}",
            self.accepted, self.acceptance_rate, self.radius, self.target
        )
        .unwrap();
        if self.failures > 0 {
            writeln!(s, "  {} variance path(s) skipped after failed estimates", self.failures).unwrap();
        }
        s
    }
}

/// Paths whose endpoint lies within `radius` of `target`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterResult {
    pub accepted: Vec<usize>,
    pub rate: f64,
}

pub fn bridge_filter(endpoints: &[f64], target: f64, radius: f64) -> FilterResult {
    let accepted: Vec<usize> = endpoints
        .iter()
        .enumerate()
        .filter(|(_, &x)| (x - target).abs() <= radius)
        .map(|(i, _)| i)
        .collect();
    let rate = if endpoints.is_empty() {
        0.0
    } else {
        accepted.len() as f64 / endpoints.len() as f64
    };
    FilterResult { accepted, rate }
}

/// Mean outer product of the rows.
fn mean_outer(rows: &[Vec<f64>], d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d, d);
    for r in rows {
        for j in 0..d {
            for l in 0..d {
                m[(j, l)] += r[j] * r[l];
            }
        }
    }
    m / rows.len().max(1) as f64
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let root = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&root) * e.eigenvectors.transpose()
}

/// Efficiency values from `s²` and `J`.
pub fn efficiency_values(s2: &DMatrix<f64>, j: &DMatrix<f64>) -> Vec<f64> {
    if s2.nrows() == 1 {
        return vec![(j[(0, 0)] * s2[(0, 0)]).max(0.0).sqrt()];
    }
    let rj = psd_sqrt(j);
    let m = &rj * s2 * &rj;
    let mut ev: Vec<f64> = SymmetricEigen::new((&m + m.transpose()) * 0.5)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn reciprocal(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| 1.0 / (v * v)).collect()
}

/// Information stage: `N` fresh paths up to `n0` at `theta`, filtered on
/// their endpoint, with the score functional of every accepted path.
struct InformationSample {
    scores: Vec<Vec<f64>>,
    accepted: usize,
    degenerate: usize,
}

fn information_paths(
    cfg: &EfficiencyConfig,
    model: &DriftModel,
    theta: &[f64],
    target: f64,
    radius: f64,
) -> Result<InformationSample, EfficiencyError> {
    let drift = CompiledDrift::new(model).map_err(SdeError::from)?;
    let d = model.dim();
    let sim = cfg.sim_config();
    let horizon = cfg.n0 as f64 * sim.h;
    let weight = cfg.noise.weight();
    let per_path: Vec<Result<(f64, Option<Vec<f64>>), SdeError>> = (0..cfg.paths)
        .into_par_iter()
        .map_init(
            || (EvalBuffer::default(), Vec::new(), Vec::new(), SensitivityState::new(sim.x0, d)),
            |(buf, jumps, states, state), k| {
                let mut rng = stream_rng(cfg.seed, "information", k as u64);
                sample_jumps(&mut rng, &cfg.noise, horizon, jumps);
                let spec = PathSpec {
                    jumps,
                    c_eff: cfg.noise.effective_drift(),
                    h: sim.h,
                    n: cfg.n0,
                    substeps: sim.substeps,
                    placement: sim.placement,
                };
                match simulate_states(&drift, buf, theta, sim.x0, &spec, states) {
                    Ok(()) => {}
                    // an exploding path never lands near a finite target
                    Err(SdeError::Explosion { .. }) => return Ok((f64::INFINITY, None)),
                    Err(e) => return Err(e),
                }
                let end = states[cfg.n0];
                if (end - target).abs() > radius {
                    return Ok((end, None));
                }
                simulate_sensitivities(&drift, buf, theta, sim.x0, &spec, &weight, state, |_, _| {})?;
                let mut xi = vec![0.0; d];
                Ok((end, xi1_into(state, &mut xi).ok().map(|_| xi)))
            },
        )
        .collect();
    let mut endpoints = Vec::with_capacity(cfg.paths);
    let mut xis = Vec::with_capacity(cfg.paths);
    for r in per_path {
        let (end, xi) = r?;
        endpoints.push(end);
        xis.push(xi);
    }
    let filter = bridge_filter(&endpoints, target, radius);
    let accepted = filter.accepted.len();
    let scores: Vec<Vec<f64>> = filter.accepted.iter().filter_map(|&i| xis[i].clone()).collect();
    Ok(InformationSample {
        degenerate: accepted - scores.len(),
        scores,
        accepted,
    })
}

fn increment_sd(traj: &Trajectory) -> f64 {
    let inc = traj.increments();
    let n = inc.len() as f64;
    let mean = inc.iter().sum::<f64>() / n;
    (inc.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
}

/// Run the efficiency check for `cfg.method`. Reference, variance and
/// information paths draw from disjoint seed streams of `cfg.seed`, one per
/// path, and every reduction follows path order.
pub fn run_efficiency(cfg: &EfficiencyConfig, model: &DriftModel) -> Result<EfficiencyReport, EfficiencyError> {
    cfg.validate(model)?;
    let sim = cfg.sim_config();
    let d = model.dim();
    let bridge_for = |tag: &str, k: usize| BridgeConfig {
        seed: stream_seed(cfg.seed, tag, k as u64),
        ..cfg.bridge.clone()
    };

    // (1) reference path and estimate
    let z = sample_path(&cfg.noise_for(sim.horizon(), stream_seed(cfg.seed, "reference", 0)))?;
    let reference = euler_simulate(model, &cfg.theta0, &z, &sim)?;
    let theta_hat = estimate(
        cfg.method,
        &reference,
        model,
        &cfg.estimate,
        &cfg.start,
        &cfg.noise,
        &bridge_for("reference-bridge", 0),
    )
    .map_err(EfficiencyError::Reference)?
    .theta_hat;

    // (2)-(3) re-estimate on N paths simulated at θ̂
    let root_n = (cfg.observations as f64).sqrt();
    let estimates: Vec<Option<Vec<f64>>> = (0..cfg.paths)
        .into_par_iter()
        .map(|k| {
            let z = sample_path(&cfg.noise_for(sim.horizon(), stream_seed(cfg.seed, "variance", k as u64))).ok()?;
            let traj = euler_simulate(model, &theta_hat, &z, &sim).ok()?;
            estimate(cfg.method, &traj, model, &cfg.estimate, &cfg.start, &cfg.noise, &bridge_for("variance-bridge", k))
                .ok()
                .map(|r| r.theta_hat.iter().zip(&theta_hat).map(|(a, b)| root_n * (a - b)).collect())
        })
        .collect();
    let failures = estimates.iter().filter(|e| e.is_none()).count();
    let deviations: Vec<Vec<f64>> = estimates.into_iter().flatten().collect();
    if deviations.is_empty() {
        return Err(EfficiencyError::NoEstimates(cfg.paths));
    }
    let s2 = mean_outer(&deviations, d);

    // (4)-(5) bridge-filtered score functionals at n0
    let target = reference.states[cfg.n0];
    let radius = cfg.bridge_radius.unwrap_or_else(|| 0.1 * increment_sd(&reference));
    let info = information_paths(cfg, model, &theta_hat, target, radius)?;
    if info.accepted == 0 {
        return Err(EfficiencyError::NoneAccepted(cfg.paths));
    }
    let j = mean_outer(&info.scores, d);
    if info.scores.is_empty() || j.amax() == 0.0 {
        return Err(EfficiencyError::ZeroInformation);
    }

    // (6)
    let efficiency = efficiency_values(&s2, &j);
    Ok(EfficiencyReport {
        method: cfg.method,
        theta_hat,
        reciprocal: reciprocal(&efficiency),
        efficiency,
        s2,
        j,
        acceptance_rate: info.accepted as f64 / cfg.paths as f64,
        accepted: info.accepted,
        radius,
        target,
        failures,
        degenerate: info.degenerate,
        deviations,
        scores: info.scores,
    })
}

/// Jackknife standard errors of the entries of `s²` and `J`.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    pub s2_se: DMatrix<f64>,
    pub j_se: DMatrix<f64>,
    /// Largest `SE / |entry|` over both matrices.
    pub max_relative_se: f64,
    /// Some relative standard error exceeds 20%.
    pub flagged: bool,
}

pub const RELATIVE_SE_LIMIT: f64 = 0.2;

/// Jackknife standard error of every entry of the mean outer product.
/// Fewer than three rows give an infinite error.
pub fn jackknife_outer_se(rows: &[Vec<f64>], d: usize) -> DMatrix<f64> {
    let n = rows.len();
    if n < 3 {
        return DMatrix::from_element(d, d, f64::INFINITY);
    }
    let full = mean_outer(rows, d) * n as f64;
    let nf = n as f64;
    let mut se = DMatrix::zeros(d, d);
    for j in 0..d {
        for l in 0..d {
            let total = full[(j, l)];
            let loo: Vec<f64> = rows.iter().map(|r| (total - r[j] * r[l]) / (nf - 1.0)).collect();
            let mean = loo.iter().sum::<f64>() / nf;
            let ss: f64 = loo.iter().map(|v| (v - mean) * (v - mean)).sum();
            se[(j, l)] = ((nf - 1.0) / nf * ss).sqrt();
        }
    }
    se
}

fn relative(se: &DMatrix<f64>, value: &DMatrix<f64>) -> f64 {
    se.iter()
        .zip(value.iter())
        .map(|(&s, &v)| if s == 0.0 { 0.0 } else { s / v.abs() })
        .fold(0.0, f64::max)
}

pub fn effective_sample_diagnostics(report: &EfficiencyReport) -> Diagnostics {
    let d = report.theta_hat.len();
    let s2_se = jackknife_outer_se(&report.deviations, d);
    let j_se = jackknife_outer_se(&report.scores, d);
    let max_relative_se = relative(&s2_se, &report.s2).max(relative(&j_se, &report.j));
    Diagnostics {
        s2_se,
        j_se,
        flagged: !(max_relative_se <= RELATIVE_SE_LIMIT),
        max_relative_se,
    }
}
