//! Drift parameter estimators: minimum-Lp residual fits, the least-squares
//! normal system for drifts affine in θ, and one-step corrections built
//! from bridge-conditioned score and information functionals.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drift_expr::{DriftModel, ExprError, Partial, Tape};
use crate::levy_noise::{sample_jumps, Jump, NoiseConfig, NoiseError};
use crate::malliavin::{xi1_into, xi2_into};
use crate::sde::{
    simulate_sensitivities, simulate_states, CompiledDrift, EvalBuffer, JumpPlacement, PathSpec,
    SdeError, SensitivityState, Trajectory,
};
use crate::seeds::stream_rng;
use crate::solvers::{
    armijo_minimax, box_wilson, chebyshev_ssor, direct_solve, hooke_jeeves, hybrid_minimize,
    powell_min_1d, sor, ssor_solve, BoxWilsonOptions, HookeJeevesOptions, HybridOptions,
    LinearSystem, MinimaxOptions, OptimReport, Residuals, SolverError,
};

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error(transparent)]
    Drift(#[from] ExprError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("trajectory has {0} point(s); at least 2 are needed")]
    TooShort(usize),
    #[error("degenerate normal system: {0}")]
    Degenerate(String),
    #[error("drift is not affine in the parameters")]
    NotAffine,
    #[error("information matrix unusable: {0}")]
    Information(String),
    #[error("only {used} of {intervals} intervals had enough accepted bridge paths")]
    InsufficientBridges { used: usize, intervals: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Which norm of the Euler residuals is minimized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossNorm {
    L1,
    L2,
    Linf,
}

impl LossNorm {
    pub const ALL: [LossNorm; 3] = [LossNorm::L1, LossNorm::L2, LossNorm::Linf];

    pub fn label(self) -> &'static str {
        match self {
            LossNorm::L1 => "L1",
            LossNorm::L2 => "L2",
            LossNorm::Linf => "Linf",
        }
    }
}

/// Estimator tag: a raw Lp fit or a one-step correction started from one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Lp(LossNorm),
    OneStep(LossNorm),
    Rao(LossNorm),
}

impl Method {
    pub fn base(self) -> LossNorm {
        match self {
            Method::Lp(p) | Method::OneStep(p) | Method::Rao(p) => p,
        }
    }

    pub fn needs_bridges(self) -> bool {
        !matches!(self, Method::Lp(_))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Lp(p) => f.write_str(p.label()),
            Method::OneStep(p) => write!(f, "OS-{}", p.label()),
            Method::Rao(p) => write!(f, "Rao-{}", p.label()),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        let (kind, norm) = match lower.split_once('-') {
            Some((k, n)) => (k, n),
            None => ("", lower.as_str()),
        };
        let p = match norm {
            "l1" => LossNorm::L1,
            "l2" => LossNorm::L2,
            "linf" | "l∞" | "lmax" => LossNorm::Linf,
            _ => return Err(format!("unknown estimator `{s}`")),
        };
        match kind {
            "" => Ok(Method::Lp(p)),
            "os" => Ok(Method::OneStep(p)),
            "rao" => Ok(Method::Rao(p)),
            _ => Err(format!("unknown estimator `{s}`")),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

/// Drift value and first parameter partials over an observed path.
pub struct ResidualModel<'a> {
    tape: Tape,
    states: &'a [f64],
    h: f64,
    dim: usize,
}

impl<'a> ResidualModel<'a> {
    pub fn new(model: &DriftModel, traj: &'a Trajectory) -> Result<ResidualModel<'a>, EstimationError> {
        if traj.states.len() < 2 {
            return Err(EstimationError::TooShort(traj.states.len()));
        }
        let mut partials = vec![Partial::value()];
        partials.extend((0..model.dim()).map(|j| Partial::new(0, &[j])));
        Ok(ResidualModel {
            tape: model.compile(&partials)?,
            states: &traj.states,
            h: traj.h(),
            dim: model.dim(),
        })
    }

    pub fn len(&self) -> usize {
        self.states.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `r_k = X_k − X_{k−1} − A_θ(X_{k−1}) h` for `k = 1..n`.
    pub fn residuals(&self, theta: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        let mut scratch = Vec::new();
        let mut v = vec![0.0; self.tape.outputs()];
        for (o, w) in out.iter_mut().zip(self.states.windows(2)) {
            self.tape.eval_into(w[0], theta, &mut scratch, &mut v)?;
            *o = w[1] - w[0] - v[0] * self.h;
        }
        Ok(())
    }

    pub fn loss(&self, theta: &[f64], p: LossNorm) -> Result<f64, ExprError> {
        let mut scratch = Vec::new();
        let mut v = vec![0.0; self.tape.outputs()];
        let mut acc = 0.0f64;
        for w in self.states.windows(2) {
            self.tape.eval_into(w[0], theta, &mut scratch, &mut v)?;
            let r = w[1] - w[0] - v[0] * self.h;
            match p {
                LossNorm::L1 => acc += r.abs(),
                LossNorm::L2 => acc += r * r,
                LossNorm::Linf => acc = acc.max(r.abs()),
            }
        }
        Ok(acc)
    }

    /// Loss as a plain objective; domain errors become NaN so the solvers
    /// report them as non-finite values.
    fn objective(&self, p: LossNorm) -> impl Fn(&[f64]) -> f64 + Sync + '_ {
        move |theta: &[f64]| self.loss(theta, p).unwrap_or(f64::NAN)
    }
}

impl Residuals for ResidualModel<'_> {
    fn len(&self) -> usize {
        self.states.len() - 1
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, theta: &[f64], out: &mut [f64]) {
        if self.residuals(theta, out).is_err() {
            out.iter_mut().for_each(|o| *o = f64::NAN);
        }
    }

    fn gradients(&self, theta: &[f64], indices: &[usize], out: &mut [Vec<f64>]) {
        let mut scratch = Vec::new();
        let mut v = vec![0.0; self.tape.outputs()];
        for (row, &i) in out.iter_mut().zip(indices) {
            match self.tape.eval_into(self.states[i], theta, &mut scratch, &mut v) {
                Ok(()) => {
                    for j in 0..self.dim {
                        row[j] = -v[1 + j] * self.h;
                    }
                }
                Err(_) => row.iter_mut().for_each(|r| *r = f64::NAN),
            }
        }
    }
}

/// `Σ r_k²`, `Σ |r_k|` or `max |r_k|` of the Euler residuals.
pub fn lp_loss(
    theta: &[f64],
    traj: &Trajectory,
    model: &DriftModel,
    p: LossNorm,
) -> Result<f64, EstimationError> {
    check_theta(model, theta)?;
    Ok(ResidualModel::new(model, traj)?.loss(theta, p)?)
}

fn check_theta(model: &DriftModel, theta: &[f64]) -> Result<(), EstimationError> {
    if theta.len() != model.dim() || theta.iter().any(|v| !v.is_finite()) {
        return Err(EstimationError::InvalidInput(format!(
            "parameter vector {theta:?} for a model with {} parameter(s)",
            model.dim()
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearMethod {
    Sor,
    Ssor,
    #[default]
    Chebyshev,
    Direct,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    /// Scalar: Powell (L1, L2) or minimax (L∞); affine drift with L2:
    /// normal system; otherwise hybrid (L1, L2) or minimax (L∞).
    #[default]
    Auto,
    Powell,
    NormalSystem,
    Hybrid,
    BoxWilson,
    HookeJeeves,
    Minimax,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateOptions {
    pub solver: SolverChoice,
    /// Powell searches `start ± bracket` in the scalar case.
    pub bracket: f64,
    pub scalar_tol: f64,
    pub linear: LinearMethod,
    pub omega: f64,
    pub linear_tol: f64,
    pub linear_max_iter: usize,
    pub box_wilson: BoxWilsonOptions,
    pub hooke_jeeves: HookeJeevesOptions,
    pub hybrid: HybridOptions,
    pub minimax: MinimaxOptions,
    pub beta: f64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            solver: SolverChoice::Auto,
            bracket: 1.0,
            scalar_tol: 1e-9,
            linear: LinearMethod::Chebyshev,
            omega: 1.2,
            linear_tol: 1e-12,
            linear_max_iter: 200_000,
            box_wilson: BoxWilsonOptions::default(),
            hooke_jeeves: HookeJeevesOptions::default(),
            hybrid: HybridOptions::default(),
            minimax: MinimaxOptions {
                anneal: true,
                ..MinimaxOptions::default()
            },
            beta: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverSummary {
    pub method: String,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

impl From<&OptimReport> for SolverSummary {
    fn from(r: &OptimReport) -> Self {
        SolverSummary {
            method: r.method(),
            iterations: r.rounds(),
            evaluations: r.evaluations(),
            converged: r.converged(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimationResult {
    pub theta_hat: Vec<f64>,
    pub method: Method,
    pub solver: SolverSummary,
    /// Loss of the base norm at `theta_hat`.
    pub loss: f64,
    pub elapsed_secs: f64,
}

impl EstimationResult {
    /// Header for [`EstimationResult::csv_row`] with `d` parameters.
    pub fn csv_header(names: &[String], with_time: bool) -> String {
        let mut s = String::from("method");
        for n in names {
            s.push_str(",theta_");
            s.push_str(n);
        }
        s.push_str(",loss,iterations,converged");
        if with_time {
            s.push_str(",wall_secs");
        }
        s
    }

    /// Wall time is optional so that outputs can be byte-reproducible.
    pub fn csv_row(&self, with_time: bool) -> String {
        let mut s = self.method.to_string();
        for v in &self.theta_hat {
            s.push_str(&format!(",{v}"));
        }
        s.push_str(&format!(",{},{},{}", self.loss, self.solver.iterations, self.solver.converged));
        if with_time {
            s.push_str(&format!(",{:.6}", self.elapsed_secs));
        }
        s
    }
}

/// `h·S` normal system for the polynomial drift `Σ_i θ_i x^{m+1−i}`
/// (highest power first), with `S_ij = Σ_k X_k^i X_{k+1}^j`. Row `i` is
/// `Σ_j h S_{p_i+p_j,0} θ_j = S_{p_i,1} − S_{p_i+1,0}`; for `m = 2` this is
/// `[S40 S30; S30 S20] h (a, b) = (S21 − S30, S11 − S20)`.
pub fn build_polynomial_normal_system(
    traj: &Trajectory,
    m: usize,
    h: f64,
) -> Result<LinearSystem, EstimationError> {
    if m == 0 {
        return Err(EstimationError::InvalidInput("polynomial degree must be at least 1".into()));
    }
    if traj.states.len() < m + 1 {
        return Err(EstimationError::TooShort(traj.states.len()));
    }
    let top = 2 * m;
    // s0[i] = S_{i,0}, s1[i] = S_{i,1}
    let mut s0 = vec![0.0; top + 1];
    let mut s1 = vec![0.0; m + 1];
    for w in traj.states.windows(2) {
        let mut p = 1.0;
        for i in 0..=top {
            s0[i] += p;
            if i <= m {
                s1[i] += p * w[1];
            }
            p *= w[0];
        }
    }
    let powers: Vec<usize> = (1..=m).rev().collect();
    let matrix = DMatrix::from_fn(m, m, |i, j| h * s0[powers[i] + powers[j]]);
    let rhs = DVector::from_fn(m, |i, _| s1[powers[i]] - s0[powers[i] + 1]);
    let tag = format!(
        "polynomial degree {m}: h*S(p_i+p_j,0) theta = S(p_i,1) - S(p_i+1,0), powers {powers:?}"
    );
    check_conditioning(&matrix)?;
    Ok(LinearSystem::new(matrix, rhs, tag)?)
}

/// Least-squares normal system for a drift `A_0(x) + Σ θ_j φ_j(x)`.
pub fn build_affine_normal_system(
    traj: &Trajectory,
    model: &DriftModel,
) -> Result<LinearSystem, EstimationError> {
    if !model.is_polynomial_in_theta() {
        return Err(EstimationError::NotAffine);
    }
    if traj.states.len() < 2 {
        return Err(EstimationError::TooShort(traj.states.len()));
    }
    let d = model.dim();
    let h = traj.h();
    let mut partials = vec![Partial::value()];
    partials.extend((0..d).map(|j| Partial::new(0, &[j])));
    let tape = model.compile(&partials)?;
    let zero = vec![0.0; d];
    let mut scratch = Vec::new();
    let mut v = vec![0.0; d + 1];
    let mut matrix = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    for w in traj.states.windows(2) {
        tape.eval_into(w[0], &zero, &mut scratch, &mut v)?;
        let target = w[1] - w[0] - v[0] * h;
        for i in 0..d {
            rhs[i] += v[1 + i] * target;
            for j in 0..d {
                matrix[(i, j)] += h * v[1 + i] * v[1 + j];
            }
        }
    }
    check_conditioning(&matrix)?;
    Ok(LinearSystem::new(matrix, rhs, format!("affine drift `{}`", model.source()))?)
}

fn check_conditioning(m: &DMatrix<f64>) -> Result<(), EstimationError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(EstimationError::Degenerate("non-finite sums".into()));
    }
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if !(max > 0.0) || min <= 1e-12 * max {
        return Err(EstimationError::Degenerate(format!(
            "eigenvalues range from {min:e} to {max:e}"
        )));
    }
    Ok(())
}

/// Minimize the Lp loss of the Euler residuals.
pub fn estimate_lp(
    traj: &Trajectory,
    model: &DriftModel,
    p: LossNorm,
    opts: &EstimateOptions,
    start: &[f64],
) -> Result<EstimationResult, EstimationError> {
    let clock = Instant::now();
    check_theta(model, start)?;
    let rm = ResidualModel::new(model, traj)?;
    let d = model.dim();
    let solver = match opts.solver {
        SolverChoice::Auto => match p {
            LossNorm::Linf => SolverChoice::Minimax,
            _ if d == 1 => SolverChoice::Powell,
            LossNorm::L2 if model.is_polynomial_in_theta() => SolverChoice::NormalSystem,
            _ => SolverChoice::Hybrid,
        },
        s => s,
    };
    let f = rm.objective(p);
    let (theta_hat, summary) = match solver {
        SolverChoice::Powell => {
            if d != 1 {
                return Err(EstimationError::InvalidInput("Powell search needs a scalar parameter".into()));
            }
            let (x, _) = powell_min_1d(
                |t| f(&[t]),
                (start[0] - opts.bracket, start[0] + opts.bracket),
                opts.scalar_tol,
            )?;
            (
                vec![x],
                SolverSummary {
                    method: "powell".into(),
                    iterations: 0,
                    evaluations: 0,
                    converged: true,
                },
            )
        }
        SolverChoice::NormalSystem => {
            if p != LossNorm::L2 {
                return Err(EstimationError::InvalidInput("the normal system minimizes the L2 loss only".into()));
            }
            let sys = build_affine_normal_system(traj, model)?;
            let x0 = DVector::from_column_slice(start);
            let report = match opts.linear {
                LinearMethod::Sor => sor(&sys, &x0, opts.omega, opts.linear_tol, opts.linear_max_iter)?,
                LinearMethod::Ssor => ssor_solve(&sys, &x0, opts.omega, opts.linear_tol, opts.linear_max_iter)?,
                LinearMethod::Chebyshev => {
                    chebyshev_ssor(&sys, &x0, opts.omega, opts.linear_tol, opts.linear_max_iter)?
                }
                LinearMethod::Direct => {
                    let x = direct_solve(&sys)?;
                    crate::solvers::SolveReport {
                        residual: sys.relative_residual(&x),
                        solution: x,
                        iterations: 0,
                        converged: true,
                        method: "direct".into(),
                    }
                }
            };
            (
                report.solution.iter().copied().collect(),
                SolverSummary {
                    method: report.method,
                    iterations: report.iterations,
                    evaluations: 0,
                    converged: report.converged,
                },
            )
        }
        SolverChoice::Minimax => {
            if p != LossNorm::Linf {
                return Err(EstimationError::InvalidInput("the minimax solver minimizes the L∞ loss only".into()));
            }
            let r = armijo_minimax(&rm, start, opts.beta, &opts.minimax)?;
            (r.point.clone(), SolverSummary::from(&r))
        }
        SolverChoice::Hybrid => {
            let r = hybrid_minimize(&f, start, &opts.hybrid)?;
            (r.point.clone(), SolverSummary::from(&r))
        }
        SolverChoice::BoxWilson => {
            let r = box_wilson(&f, start, &opts.box_wilson)?;
            (r.point.clone(), SolverSummary::from(&r))
        }
        SolverChoice::HookeJeeves => {
            let r = hooke_jeeves(&f, start, &opts.hooke_jeeves)?;
            (r.point.clone(), SolverSummary::from(&r))
        }
        SolverChoice::Auto => unreachable!("resolved above"),
    };
    let loss = rm.loss(&theta_hat, p)?;
    if !loss.is_finite() || theta_hat.iter().any(|v| !v.is_finite()) {
        return Err(EstimationError::Solver(SolverError::NonFinite { at: theta_hat }));
    }
    Ok(EstimationResult {
        theta_hat,
        method: Method::Lp(p),
        solver: summary,
        loss,
        elapsed_secs: clock.elapsed().as_secs_f64(),
    })
}

/// Where bridge paths come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeMode {
    /// `Pooled` when the scheme allows it, `Fresh` otherwise.
    #[default]
    Auto,
    /// Fresh paths for every interval.
    Fresh,
    /// One shared pool of simulated noise increments. With a single
    /// step-end substep the increment does not depend on the start point,
    /// so a path from `x` lands near `y` exactly when its increment lies in
    /// a window determined by `x`, `y` and `θ`. Every interval then reads
    /// its accepted paths off the same sorted pool.
    Pooled,
}

/// How bridge paths are simulated for the one-step estimators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeConfig {
    pub mode: BridgeMode,
    /// Increments in the shared pool.
    pub pool_size: usize,
    /// Paths simulated per observation interval and batch (M) in fresh mode.
    pub replicas: usize,
    /// Acceptance radius as a multiple of the standard deviation of the
    /// observed increments.
    pub radius_factor: f64,
    /// Absolute acceptance radius; overrides `radius_factor`.
    pub radius: Option<f64>,
    /// Simulate further batches until this many paths are accepted.
    pub min_accepted: usize,
    pub max_batches: usize,
    pub substeps: usize,
    pub placement: JumpPlacement,
    pub seed: u64,
    /// Relative ridge added to a near-singular information matrix.
    pub ridge: f64,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        BridgeConfig {
            mode: BridgeMode::Auto,
            pool_size: 200_000,
            replicas: 200,
            radius_factor: 0.1,
            radius: None,
            min_accepted: 2,
            max_batches: 1,
            substeps: 1,
            placement: JumpPlacement::StepEnd,
            seed: 0,
            ridge: 1e-8,
        }
    }
}

impl BridgeConfig {
    pub fn validate(&self) -> Result<(), EstimationError> {
        let bad = |m: &str| Err(EstimationError::InvalidInput(m.into()));
        if self.replicas == 0 || self.max_batches == 0 || self.substeps == 0 || self.pool_size == 0 {
            return bad("replicas, pool_size, max_batches and substeps must be positive");
        }
        if self.mode == BridgeMode::Pooled && !self.poolable() {
            return bad("pooled bridges need a single step-end substep");
        }
        if let Some(r) = self.radius {
            if !(r > 0.0) {
                return bad("bridge radius must be positive");
            }
        } else if !(self.radius_factor > 0.0) {
            return bad("bridge radius factor must be positive");
        }
        if !(self.ridge >= 0.0) {
            return bad("ridge must be non-negative");
        }
        Ok(())
    }

    fn poolable(&self) -> bool {
        self.substeps == 1 && self.placement == JumpPlacement::StepEnd
    }

    pub fn pooled(&self) -> bool {
        match self.mode {
            BridgeMode::Auto => self.poolable(),
            BridgeMode::Fresh => false,
            BridgeMode::Pooled => true,
        }
    }

    pub fn radius_for(&self, traj: &Trajectory) -> f64 {
        self.radius.unwrap_or_else(|| {
            let inc = traj.increments();
            let n = inc.len() as f64;
            let mean = inc.iter().sum::<f64>() / n;
            let var = inc.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
            self.radius_factor * var.sqrt()
        })
    }
}

/// Conditional score and information summed over observation intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct BridgeInformation {
    pub theta: Vec<f64>,
    /// `Σ_k E[Ξ¹ | interval k]`.
    pub score: DVector<f64>,
    /// `Σ_k (E[Ξ¹]E[Ξ¹]ᵀ − E[Ξ²])`, minus the observed log-likelihood Hessian.
    pub information: DMatrix<f64>,
    /// `Σ_k E[Ξ¹]E[Ξ¹]ᵀ`, the outer-product information.
    pub outer: DMatrix<f64>,
    pub intervals: usize,
    pub used_intervals: usize,
    pub simulated: usize,
    pub accepted: usize,
    pub degenerate: usize,
    pub radius: f64,
}

#[derive(Clone, Debug)]
struct IntervalStats {
    n: usize,
    sum1: Vec<f64>,
    sum11: Vec<f64>,
    sum2: Vec<f64>,
    simulated: usize,
    degenerate: usize,
}

struct BridgeWorker {
    buf: EvalBuffer,
    jumps: Vec<Jump>,
    states: Vec<f64>,
    state: SensitivityState,
    xi1: Vec<f64>,
    xi2: Vec<f64>,
}

struct BridgeSetup<'a> {
    drift: CompiledDrift,
    weight: crate::levy_noise::JumpWeight,
    noise: &'a NoiseConfig,
    cfg: &'a BridgeConfig,
    theta: &'a [f64],
    h: f64,
    radius: f64,
}

impl BridgeSetup<'_> {
    fn interval(&self, w: &mut BridgeWorker, k: usize, x: f64, y: f64) -> Result<IntervalStats, EstimationError> {
        let d = self.theta.len();
        let mut st = IntervalStats {
            n: 0,
            sum1: vec![0.0; d],
            sum11: vec![0.0; d * d],
            sum2: vec![0.0; d * d],
            simulated: 0,
            degenerate: 0,
        };
        let mut rng = stream_rng(self.cfg.seed, "bridge", k as u64);
        for _ in 0..self.cfg.max_batches {
            for _ in 0..self.cfg.replicas {
                sample_jumps(&mut rng, self.noise, self.h, &mut w.jumps);
                st.simulated += 1;
                let spec = PathSpec {
                    jumps: &w.jumps,
                    c_eff: self.noise.effective_drift(),
                    h: self.h,
                    n: 1,
                    substeps: self.cfg.substeps,
                    placement: self.cfg.placement,
                };
                match simulate_states(&self.drift, &mut w.buf, self.theta, x, &spec, &mut w.states) {
                    Ok(()) => {}
                    Err(SdeError::Explosion { .. }) => continue,
                    Err(e) => return Err(e.into()),
                }
                if (w.states[1] - y).abs() > self.radius {
                    continue;
                }
                simulate_sensitivities(
                    &self.drift,
                    &mut w.buf,
                    self.theta,
                    x,
                    &spec,
                    &self.weight,
                    &mut w.state,
                    |_, _| {},
                )?;
                if xi1_into(&w.state, &mut w.xi1).is_err() || xi2_into(&w.state, &mut w.xi2).is_err() {
                    st.degenerate += 1;
                    continue;
                }
                st.n += 1;
                for j in 0..d {
                    st.sum1[j] += w.xi1[j];
                    for l in 0..d {
                        st.sum11[j * d + l] += w.xi1[j] * w.xi1[l];
                        st.sum2[j * d + l] += w.xi2[j * d + l];
                    }
                }
            }
            if st.n >= self.cfg.min_accepted {
                break;
            }
        }
        Ok(st)
    }
}

/// Sorted one-step noise increments with prefix sums of the score and
/// information functionals of a path whose parameter sensitivity is 1 and
/// whose parameter Hessian is 0. For a general interval both functionals
/// follow from these by scaling: `Ξ¹ = a φ` and `Ξ² = a aᵀ ψ + H φ`.
struct IncrementPool {
    dz: Vec<f64>,
    /// Prefix sums of `φ`, `φ²` and `ψ`, one longer than `dz`.
    phi: Vec<f64>,
    phi2: Vec<f64>,
    psi: Vec<f64>,
    simulated: usize,
    degenerate: usize,
}

const POOL_CHUNK: usize = 4096;

/// `[ΔZ, φ, ψ]` of one step-end increment, `None` when degenerate.
fn unit_functionals(jumps: &[Jump], weight: &crate::levy_noise::JumpWeight) -> Option<[f64; 3]> {
    let mut st = SensitivityState::new(0.0, 1);
    st.theta_sens[0] = 1.0;
    for j in jumps {
        let w = weight.eval(j.u);
        st.x += j.u;
        st.mal += w.rho;
        st.mal2 += w.rho * w.rho_prime;
        st.mal3 += (w.rho_prime * w.rho_prime + w.rho * w.rho_second) * w.rho;
        st.jumps.add(&w);
    }
    let (mut xi1, mut xi2) = ([0.0], [0.0]);
    if xi1_into(&st, &mut xi1).is_err() || xi2_into(&st, &mut xi2).is_err() {
        return None;
    }
    Some([st.x, xi1[0], xi2[0]])
}

impl IncrementPool {
    fn build(noise: &NoiseConfig, h: f64, size: usize, seed: u64) -> IncrementPool {
        let weight = noise.weight();
        let chunks = size.div_ceil(POOL_CHUNK);
        let parts: Vec<(Vec<[f64; 3]>, usize)> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = stream_rng(seed, "bridge-pool", c as u64);
                let count = POOL_CHUNK.min(size - c * POOL_CHUNK);
                let mut jumps = Vec::new();
                let mut rows = Vec::with_capacity(count);
                let mut degenerate = 0;
                for _ in 0..count {
                    sample_jumps(&mut rng, noise, h, &mut jumps);
                    match unit_functionals(&jumps, &weight) {
                        Some(r) => rows.push(r),
                        None => degenerate += 1,
                    }
                }
                (rows, degenerate)
            })
            .collect();
        let degenerate = parts.iter().map(|p| p.1).sum();
        let mut rows: Vec<[f64; 3]> = parts.into_iter().flat_map(|p| p.0).collect();
        rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let prefix = |f: &dyn Fn(&[f64; 3]) -> f64| {
            let mut acc = 0.0;
            std::iter::once(0.0)
                .chain(rows.iter().map(|r| {
                    acc += f(r);
                    acc
                }))
                .collect::<Vec<f64>>()
        };
        IncrementPool {
            phi: prefix(&|r| r[1]),
            phi2: prefix(&|r| r[1] * r[1]),
            psi: prefix(&|r| r[2]),
            dz: rows.iter().map(|r| r[0]).collect(),
            simulated: size,
            degenerate,
        }
    }

    /// Count and sums of `φ`, `φ²`, `ψ` over increments in `[lo, hi]`.
    fn window(&self, lo: f64, hi: f64) -> (usize, f64, f64, f64) {
        let i = self.dz.partition_point(|&v| v < lo);
        let j = self.dz.partition_point(|&v| v <= hi);
        if j <= i {
            return (0, 0.0, 0.0, 0.0);
        }
        (
            j - i,
            self.phi[j] - self.phi[i],
            self.phi2[j] - self.phi2[i],
            self.psi[j] - self.psi[i],
        )
    }
}

impl BridgeSetup<'_> {
    fn pooled_interval(
        &self,
        w: &mut BridgeWorker,
        pool: &IncrementPool,
        x: f64,
        y: f64,
    ) -> Result<IntervalStats, EstimationError> {
        let d = self.theta.len();
        // the drift part of the step, from a jump-free pass
        let spec = PathSpec {
            jumps: &[],
            c_eff: self.noise.effective_drift(),
            h: self.h,
            n: 1,
            substeps: 1,
            placement: JumpPlacement::StepEnd,
        };
        simulate_sensitivities(&self.drift, &mut w.buf, self.theta, x, &spec, &self.weight, &mut w.state, |_, _| {})?;
        let target = y - w.state.x;
        let (n, s1, s11, s2) = pool.window(target - self.radius, target + self.radius);
        let a = &w.state.theta_sens;
        let hess = &w.state.theta_hess;
        let mut st = IntervalStats {
            n,
            sum1: a.iter().map(|v| v * s1).collect(),
            sum11: vec![0.0; d * d],
            sum2: vec![0.0; d * d],
            simulated: 0,
            degenerate: 0,
        };
        for j in 0..d {
            for l in 0..d {
                st.sum11[j * d + l] = a[j] * a[l] * s11;
                st.sum2[j * d + l] = a[j] * a[l] * s2 + hess[j * d + l] * s1;
            }
        }
        Ok(st)
    }
}

/// Simulate bridge paths on every observation interval at `theta` and sum
/// the conditional score and information. Intervals run in parallel with
/// their own random streams; the reduction follows interval order.
pub fn bridge_information(
    theta: &[f64],
    traj: &Trajectory,
    model: &DriftModel,
    noise: &NoiseConfig,
    cfg: &BridgeConfig,
) -> Result<BridgeInformation, EstimationError> {
    let pool = make_pool(traj, noise, cfg)?;
    bridge_information_in(theta, traj, model, noise, cfg, pool.as_ref())
}

fn make_pool(traj: &Trajectory, noise: &NoiseConfig, cfg: &BridgeConfig) -> Result<Option<IncrementPool>, EstimationError> {
    cfg.validate()?;
    noise.validate()?;
    if traj.states.len() < 2 {
        return Err(EstimationError::TooShort(traj.states.len()));
    }
    Ok(cfg
        .pooled()
        .then(|| IncrementPool::build(noise, traj.h(), cfg.pool_size, cfg.seed)))
}

fn bridge_information_in(
    theta: &[f64],
    traj: &Trajectory,
    model: &DriftModel,
    noise: &NoiseConfig,
    cfg: &BridgeConfig,
    pool: Option<&IncrementPool>,
) -> Result<BridgeInformation, EstimationError> {
    check_theta(model, theta)?;
    let d = model.dim();
    let setup = BridgeSetup {
        drift: CompiledDrift::new(model)?,
        weight: noise.weight(),
        noise,
        cfg,
        theta,
        h: traj.h(),
        radius: cfg.radius_for(traj),
    };
    let worker = || BridgeWorker {
        buf: EvalBuffer::default(),
        jumps: Vec::new(),
        states: Vec::with_capacity(2),
        state: SensitivityState::new(0.0, d),
        xi1: vec![0.0; d],
        xi2: vec![0.0; d * d],
    };
    let stats: Vec<IntervalStats> = traj
        .states
        .par_windows(2)
        .enumerate()
        .map_init(worker, |w, (k, win)| match pool {
            Some(p) => setup.pooled_interval(w, p, win[0], win[1]),
            None => setup.interval(w, k, win[0], win[1]),
        })
        .collect::<Result<_, _>>()?;
    let mut out = BridgeInformation {
        theta: theta.to_vec(),
        score: DVector::zeros(d),
        information: DMatrix::zeros(d, d),
        outer: DMatrix::zeros(d, d),
        intervals: stats.len(),
        used_intervals: 0,
        simulated: 0,
        accepted: 0,
        degenerate: 0,
        radius: setup.radius,
    };
    if let Some(p) = pool {
        out.simulated = p.simulated;
        out.degenerate = p.degenerate;
    }
    for st in &stats {
        out.simulated += st.simulated;
        out.accepted += st.n;
        out.degenerate += st.degenerate;
        if st.n < 2 {
            continue;
        }
        out.used_intervals += 1;
        let n = st.n as f64;
        let m1 = DVector::from_fn(d, |j, _| st.sum1[j] / n);
        let m11 = DMatrix::from_fn(d, d, |j, l| st.sum11[j * d + l] / n);
        let m2 = DMatrix::from_fn(d, d, |j, l| st.sum2[j * d + l] / n);
        // unbiased estimate of E[Ξ¹]E[Ξ¹]ᵀ: m mᵀ minus the variance of m
        let mm = &m1 * m1.transpose();
        let cov = (&m11 - &mm) * (n / (n - 1.0));
        let mm_unbiased = &mm - cov / n;
        out.score += &m1;
        out.information += &mm_unbiased - m2;
        out.outer += mm_unbiased;
    }
    if out.used_intervals == 0 {
        return Err(EstimationError::InsufficientBridges {
            used: 0,
            intervals: out.intervals,
        });
    }
    Ok(out)
}

/// Solve `I Δ = score`, adding `ridge·trace(I)` to the diagonal when `I`
/// is near singular.
pub fn newton_correction(
    info: &DMatrix<f64>,
    score: &DVector<f64>,
    ridge: f64,
) -> Result<DVector<f64>, EstimationError> {
    if info.iter().chain(score.iter()).any(|v| !v.is_finite()) {
        return Err(EstimationError::Information("non-finite entries".into()));
    }
    let sym = (info + info.transpose()) * 0.5;
    let trace = sym.trace();
    if !(trace > 0.0) {
        return Err(EstimationError::Information(format!("trace {trace:e} is not positive")));
    }
    let eig = SymmetricEigen::new(sym.clone()).eigenvalues;
    let min = eig.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let lambda = ridge * trace;
    let m = if min < lambda {
        if min + lambda <= 0.0 {
            return Err(EstimationError::Information(format!(
                "not positive definite (smallest eigenvalue {min:e})"
            )));
        }
        sym + DMatrix::identity(info.nrows(), info.nrows()) * lambda
    } else {
        sym
    };
    m.cholesky()
        .map(|c| c.solve(score))
        .ok_or_else(|| EstimationError::Information("Cholesky factorization failed".into()))
}

/// `θ_start + I⁻¹ ∇` with the full (Hessian) information.
pub fn one_step_from(info: &BridgeInformation, ridge: f64) -> Result<Vec<f64>, EstimationError> {
    let delta = newton_correction(&info.information, &info.score, ridge)?;
    Ok(info.theta.iter().zip(delta.iter()).map(|(t, d)| t + d).collect())
}

/// `θ_start + (Σ s sᵀ)⁻¹ ∇` with the outer-product information.
pub fn rao_step_from(info: &BridgeInformation, ridge: f64) -> Result<Vec<f64>, EstimationError> {
    let delta = newton_correction(&info.outer, &info.score, ridge)?;
    Ok(info.theta.iter().zip(delta.iter()).map(|(t, d)| t + d).collect())
}

fn corrected_result(
    theta_hat: Vec<f64>,
    method: Method,
    info: &BridgeInformation,
    traj: &Trajectory,
    model: &DriftModel,
    started: Instant,
) -> Result<EstimationResult, EstimationError> {
    let loss = lp_loss(&theta_hat, traj, model, method.base())?;
    Ok(EstimationResult {
        theta_hat,
        method,
        solver: SolverSummary {
            method: format!("bridge({} of {} intervals)", info.used_intervals, info.intervals),
            iterations: 1,
            evaluations: info.simulated,
            converged: true,
        },
        loss,
        elapsed_secs: started.elapsed().as_secs_f64(),
    })
}

/// One-step estimator started at `theta_start` (an estimate of the `base` norm).
pub fn one_step(
    theta_start: &[f64],
    base: LossNorm,
    traj: &Trajectory,
    model: &DriftModel,
    noise: &NoiseConfig,
    cfg: &BridgeConfig,
) -> Result<EstimationResult, EstimationError> {
    let clock = Instant::now();
    let info = bridge_information(theta_start, traj, model, noise, cfg)?;
    let theta = one_step_from(&info, cfg.ridge)?;
    corrected_result(theta, Method::OneStep(base), &info, traj, model, clock)
}

/// One-step estimator with the outer-product (Rao) information.
pub fn rao_one_step(
    theta_start: &[f64],
    base: LossNorm,
    traj: &Trajectory,
    model: &DriftModel,
    noise: &NoiseConfig,
    cfg: &BridgeConfig,
) -> Result<EstimationResult, EstimationError> {
    let clock = Instant::now();
    let info = bridge_information(theta_start, traj, model, noise, cfg)?;
    let theta = rao_step_from(&info, cfg.ridge)?;
    corrected_result(theta, Method::Rao(base), &info, traj, model, clock)
}

/// Both corrections from one set of bridge simulations.
pub fn one_step_pair(
    theta_start: &[f64],
    base: LossNorm,
    traj: &Trajectory,
    model: &DriftModel,
    noise: &NoiseConfig,
    cfg: &BridgeConfig,
) -> Result<PairResult, EstimationError> {
    let pool = make_pool(traj, noise, cfg)?;
    pair_in(theta_start, base, traj, model, noise, cfg, pool.as_ref())
}

type PairResult = (
    Result<EstimationResult, EstimationError>,
    Result<EstimationResult, EstimationError>,
);

fn pair_in(
    theta_start: &[f64],
    base: LossNorm,
    traj: &Trajectory,
    model: &DriftModel,
    noise: &NoiseConfig,
    cfg: &BridgeConfig,
    pool: Option<&IncrementPool>,
) -> Result<PairResult, EstimationError> {
    let clock = Instant::now();
    let info = bridge_information_in(theta_start, traj, model, noise, cfg, pool)?;
    let os = one_step_from(&info, cfg.ridge)
        .and_then(|t| corrected_result(t, Method::OneStep(base), &info, traj, model, clock));
    let rao = rao_step_from(&info, cfg.ridge)
        .and_then(|t| corrected_result(t, Method::Rao(base), &info, traj, model, clock));
    Ok((os, rao))
}

/// Run one estimator on a trajectory. One-step methods start from the
/// base Lp estimate computed here.
pub fn estimate(
    method: Method,
    traj: &Trajectory,
    model: &DriftModel,
    opts: &EstimateOptions,
    start: &[f64],
    noise: &NoiseConfig,
    bridge: &BridgeConfig,
) -> Result<EstimationResult, EstimationError> {
    let base = estimate_lp(traj, model, method.base(), opts, start)?;
    match method {
        Method::Lp(_) => Ok(base),
        Method::OneStep(p) => one_step(&base.theta_hat, p, traj, model, noise, bridge),
        Method::Rao(p) => rao_one_step(&base.theta_hat, p, traj, model, noise, bridge),
    }
}

/// Copy of an error that is reported to several estimators.
fn share_error(e: &EstimationError) -> EstimationError {
    match e {
        EstimationError::Information(s) => EstimationError::Information(s.clone()),
        EstimationError::InsufficientBridges { used, intervals } => EstimationError::InsufficientBridges {
            used: *used,
            intervals: *intervals,
        },
        EstimationError::Degenerate(s) => EstimationError::Degenerate(s.clone()),
        other => EstimationError::InvalidInput(other.to_string()),
    }
}

/// Run several estimators on one trajectory, sharing the base fits and the
/// bridge simulations between estimators with the same base norm. Results
/// come back in the order of `methods`.
pub fn estimate_many(
    methods: &[Method],
    traj: &Trajectory,
    model: &DriftModel,
    opts: &EstimateOptions,
    start: &[f64],
    noise: &NoiseConfig,
    bridge: &BridgeConfig,
) -> Vec<Result<EstimationResult, EstimationError>> {
    let mut out: Vec<Option<Result<EstimationResult, EstimationError>>> =
        methods.iter().map(|_| None).collect();
    // the pool does not depend on θ, so one serves every base norm
    let mut pool: Option<Result<Option<IncrementPool>, String>> = None;
    for p in LossNorm::ALL {
        let wanted: Vec<usize> = (0..methods.len()).filter(|&i| methods[i].base() == p).collect();
        if wanted.is_empty() {
            continue;
        }
        let base = estimate_lp(traj, model, p, opts, start);
        let needs_bridges = wanted.iter().any(|&i| methods[i].needs_bridges());
        let pair = match (&base, needs_bridges) {
            (Ok(b), true) => {
                let pl = pool.get_or_insert_with(|| make_pool(traj, noise, bridge).map_err(|e| e.to_string()));
                Some(match pl {
                    Ok(pl) => pair_in(&b.theta_hat, p, traj, model, noise, bridge, pl.as_ref()),
                    Err(e) => Err(EstimationError::InvalidInput(e.clone())),
                })
            }
            _ => None,
        };
        for &i in &wanted {
            let r = match (&base, methods[i]) {
                (Err(e), _) => Err(EstimationError::InvalidInput(format!("base {} fit failed: {e}", p.label()))),
                (Ok(b), Method::Lp(_)) => Ok(b.clone()),
                (Ok(_), m) => match pair.as_ref().expect("bridges simulated") {
                    Err(e) => Err(EstimationError::InvalidInput(format!("bridge simulation failed: {e}"))),
                    Ok((os, rao)) => {
                        let r = if matches!(m, Method::OneStep(_)) { os } else { rao };
                        match r {
                            Ok(v) => Ok(v.clone()),
                            Err(e) => Err(share_error(e)),
                        }
                    }
                },
            };
            out[i] = Some(r);
        }
    }
    out.into_iter().map(|r| r.expect("every method handled")).collect()
}
