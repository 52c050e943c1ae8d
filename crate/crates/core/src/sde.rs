//! Euler scheme for `dX = A_θ(X) dt + dZ` and exact derivatives of the
//! discrete scheme with respect to the parameters and to the jump sizes.
//!
//! Every sensitivity below is obtained by differentiating the Euler
//! recursion itself, so the simulated path and its derivatives are
//! consistent to rounding. Notation inside the recursions: `a = ∂θX`,
//! `H = ∂²θθX`, `b = DX`, `e = D²X`, `e3 = D³X`, `c = D∂θX`,
//! `c2 = D²∂θX`, `DH = D∂²θθX`; `A'`, `A_j`, `A'_jk` etc. are partials of the
//! drift at the pre-step state.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drift_expr::{DriftModel, ExprError, Partial, Tape};
use crate::levy_noise::{Jump, JumpWeight, NoiseError, NoisePath, WeightValues};

/// States beyond this magnitude abort the simulation.
pub const EXPLOSION_BOUND: f64 = 1e12;

#[derive(Debug, Error)]
pub enum SdeError {
    #[error("state exploded to {value} during observation interval {step}")]
    Explosion { step: usize, value: f64 },
    #[error("drift evaluation failed: {0}")]
    Drift(#[from] ExprError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("invalid simulation configuration: {0}")]
    Config(String),
    #[error("inputs do not belong together: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where a jump enters the Euler scheme within its substep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpPlacement {
    /// Drift over the whole substep from its left end, then add every jump
    /// of the substep: `X ← X + A(X)Δ + ΔZ`.
    #[default]
    StepEnd,
    /// Integrate the drift up to each jump time, add the jump, resume.
    ExactTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Observation step.
    pub h: f64,
    /// Number of observation intervals.
    pub n: usize,
    pub x0: f64,
    /// Euler substeps per observation interval.
    pub substeps: usize,
    pub placement: JumpPlacement,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            h: 1.0,
            n: 1000,
            x0: 1.0,
            substeps: 1,
            placement: JumpPlacement::StepEnd,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SdeError> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(SdeError::Config(format!("h = {} must be positive", self.h)));
        }
        if self.n == 0 {
            return Err(SdeError::Config("n must be at least 1".into()));
        }
        if self.substeps == 0 {
            return Err(SdeError::Config("substeps must be at least 1".into()));
        }
        if !self.x0.is_finite() {
            return Err(SdeError::Config("x0 must be finite".into()));
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.n as f64 * self.h
    }
}

/// Observed path `X_0 … X_n` on the grid `0, h, …, nh`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub theta: Vec<f64>,
    pub model: String,
    pub noise_seed: u64,
    pub alpha: f64,
    pub config: SimConfig,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn h(&self) -> f64 {
        self.config.h
    }

    /// Observation increments `X_k − X_{k−1}`.
    pub fn increments(&self) -> Vec<f64> {
        self.states.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Trajectory built from observed states alone (for estimation on
    /// external data).
    pub fn from_states(states: Vec<f64>, h: f64) -> Trajectory {
        let n = states.len().saturating_sub(1);
        Trajectory {
            times: (0..states.len()).map(|k| k as f64 * h).collect(),
            theta: Vec::new(),
            model: String::new(),
            noise_seed: 0,
            alpha: f64::NAN,
            config: SimConfig {
                h,
                n,
                x0: states.first().copied().unwrap_or(0.0),
                ..SimConfig::default()
            },
            states,
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), SdeError> {
        let theta: Vec<String> = self.theta.iter().map(|v| v.to_string()).collect();
        writeln!(out, "# levydrift trajectory v1")?;
        writeln!(
            out,
            "# model=\"{}\" theta=[{}] alpha={} h={} n={} seed={}",
            self.model,
            theta.join(";"),
            self.alpha,
            self.config.h,
            self.config.n,
            self.noise_seed
        )?;
        writeln!(out, "k,t,x")?;
        for (k, (t, x)) in self.times.iter().zip(&self.states).enumerate() {
            writeln!(out, "{k},{t},{x}")?;
        }
        Ok(())
    }
}

/// Drift and its partials compiled for repeated evaluation.
#[derive(Clone, Debug)]
pub struct CompiledDrift {
    value: Tape,
    jet: Tape,
    dim: usize,
}

/// Per-worker scratch space for [`CompiledDrift`].
#[derive(Clone, Debug, Default)]
pub struct EvalBuffer {
    scratch: Vec<f64>,
    out: Vec<f64>,
}

/// Partials of the drift at one point: `A, A', A'', A'''`, then
/// `A_j, A'_j, A''_j` per component, then `A_jk, A'_jk` for `j ≤ k`.
#[derive(Clone, Copy, Debug)]
pub struct Jet<'a> {
    v: &'a [f64],
    d: usize,
}

fn triangle_offset(d: usize, j: usize, k: usize) -> usize {
    let (j, k) = if j <= k { (j, k) } else { (k, j) };
    // entries before row j of the upper triangle: sum_{r<j} (d - r)
    j * d - j * j.saturating_sub(1) / 2 + (k - j)
}

impl<'a> Jet<'a> {
    #[inline]
    pub fn a(&self) -> f64 {
        self.v[0]
    }
    #[inline]
    pub fn ax(&self) -> f64 {
        self.v[1]
    }
    #[inline]
    pub fn axx(&self) -> f64 {
        self.v[2]
    }
    #[inline]
    pub fn axxx(&self) -> f64 {
        self.v[3]
    }
    /// `∂_{θj} ∂x^m A` for `m ≤ 2`.
    #[inline]
    pub fn at(&self, j: usize, m: usize) -> f64 {
        self.v[4 + 3 * j + m]
    }
    /// `∂_{θj}∂_{θk} ∂x^m A` for `m ≤ 1`.
    #[inline]
    pub fn att(&self, j: usize, k: usize, m: usize) -> f64 {
        self.v[4 + 3 * self.d + 2 * triangle_offset(self.d, j, k) + m]
    }
}

impl CompiledDrift {
    pub fn new(model: &DriftModel) -> Result<CompiledDrift, ExprError> {
        let d = model.dim();
        let mut partials: Vec<Partial> = (0..=3).map(Partial::dx).collect();
        for j in 0..d {
            for m in 0..=2 {
                partials.push(Partial::new(m, &[j]));
            }
        }
        for j in 0..d {
            for k in j..d {
                for m in 0..=1 {
                    partials.push(Partial::new(m, &[j, k]));
                }
            }
        }
        Ok(CompiledDrift {
            value: model.compile(&[Partial::value()])?,
            jet: model.compile(&partials)?,
            dim: d,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn value(&self, x: f64, theta: &[f64], buf: &mut EvalBuffer) -> Result<f64, ExprError> {
        buf.out.resize(1, 0.0);
        self.value.eval_into(x, theta, &mut buf.scratch, &mut buf.out)?;
        Ok(buf.out[0])
    }

    pub fn jet<'b>(
        &self,
        x: f64,
        theta: &[f64],
        buf: &'b mut EvalBuffer,
    ) -> Result<Jet<'b>, ExprError> {
        buf.out.resize(self.jet.outputs(), 0.0);
        self.jet.eval_into(x, theta, &mut buf.scratch, &mut buf.out)?;
        Ok(Jet {
            v: &buf.out,
            d: self.dim,
        })
    }
}

/// Path-level jump functionals `DZ, D²Z, D³Z, δ(1), Dδ(1)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct JumpDerivatives {
    pub dz: f64,
    pub d2z: f64,
    pub d3z: f64,
    pub delta: f64,
    pub d_delta: f64,
}

impl JumpDerivatives {
    #[inline]
    pub fn add(&mut self, w: &WeightValues) {
        self.dz += w.rho;
        self.d2z += w.rho * w.rho_prime;
        self.d3z += (w.rho_prime * w.rho_prime + w.rho * w.rho_second) * w.rho;
        self.delta -= w.g;
        self.d_delta -= w.g_prime * w.rho;
    }
}

/// Jump functionals of the whole path.
pub fn jump_derivatives(path: &NoisePath) -> JumpDerivatives {
    let w = path.config().weight();
    let mut acc = JumpDerivatives::default();
    for j in path.jumps() {
        acc.add(&w.eval(j.u));
    }
    acc
}

/// Jump functionals accumulated up to each of the given (sorted) times.
pub fn cumulative_jump_derivatives(path: &NoisePath, times: &[f64]) -> Vec<JumpDerivatives> {
    let w = path.config().weight();
    let jumps = path.jumps();
    let mut acc = JumpDerivatives::default();
    let mut i = 0;
    times
        .iter()
        .map(|&t| {
            while i < jumps.len() && jumps[i].t <= t {
                acc.add(&w.eval(jumps[i].u));
                i += 1;
            }
            acc
        })
        .collect()
}

/// Running state of the sensitivity recursion.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityState {
    pub t: f64,
    pub x: f64,
    /// `∂θX`.
    pub theta_sens: Vec<f64>,
    /// `∂²θθX`, row-major `d×d`.
    pub theta_hess: Vec<f64>,
    /// `DX`.
    pub mal: f64,
    /// `D²X`.
    pub mal2: f64,
    /// `D³X`.
    pub mal3: f64,
    /// `D∂θX`.
    pub mal_theta: Vec<f64>,
    /// `D²∂θX`.
    pub mal2_theta: Vec<f64>,
    /// `D∂²θθX`, row-major `d×d`.
    pub mal_theta_hess: Vec<f64>,
    pub jumps: JumpDerivatives,
}

impl SensitivityState {
    pub fn new(x0: f64, d: usize) -> SensitivityState {
        SensitivityState {
            t: 0.0,
            x: x0,
            theta_sens: vec![0.0; d],
            theta_hess: vec![0.0; d * d],
            mal: 0.0,
            mal2: 0.0,
            mal3: 0.0,
            mal_theta: vec![0.0; d],
            mal2_theta: vec![0.0; d],
            mal_theta_hess: vec![0.0; d * d],
            jumps: JumpDerivatives::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.theta_sens.len()
    }

    fn reset(&mut self, x0: f64) {
        self.t = 0.0;
        self.x = x0;
        for v in [
            &mut self.theta_sens,
            &mut self.theta_hess,
            &mut self.mal_theta,
            &mut self.mal2_theta,
            &mut self.mal_theta_hess,
        ] {
            v.iter_mut().for_each(|z| *z = 0.0);
        }
        self.mal = 0.0;
        self.mal2 = 0.0;
        self.mal3 = 0.0;
        self.jumps = JumpDerivatives::default();
    }

    /// One Euler drift step of length `tau`. Higher-order quantities are
    /// updated first so every right-hand side reads pre-step values.
    fn drift_step(&mut self, jet: &Jet, tau: f64, c_eff: f64) {
        let d = self.dim();
        let (a1, a2, a3) = (jet.ax(), jet.axx(), jet.axxx());
        let b = self.mal;
        let e = self.mal2;
        for j in 0..d {
            for k in j..d {
                let (aj, ak) = (self.theta_sens[j], self.theta_sens[k]);
                let (cj, ck) = (self.mal_theta[j], self.mal_theta[k]);
                let h = self.theta_hess[j * d + k];
                let inc = a3 * b * aj * ak
                    + a2 * (cj * ak + aj * ck)
                    + jet.at(j, 2) * b * ak
                    + jet.at(j, 1) * ck
                    + jet.at(k, 2) * b * aj
                    + jet.at(k, 1) * cj
                    + a2 * b * h
                    + a1 * self.mal_theta_hess[j * d + k]
                    + jet.att(j, k, 1) * b;
                let v = self.mal_theta_hess[j * d + k] + inc * tau;
                self.mal_theta_hess[j * d + k] = v;
                self.mal_theta_hess[k * d + j] = v;
            }
        }
        for j in 0..d {
            let (aj, cj) = (self.theta_sens[j], self.mal_theta[j]);
            let inc = a3 * b * b * aj
                + a2 * e * aj
                + 2.0 * a2 * b * cj
                + a1 * self.mal2_theta[j]
                + jet.at(j, 2) * b * b
                + jet.at(j, 1) * e;
            self.mal2_theta[j] += inc * tau;
        }
        self.mal3 += (a3 * b * b * b + 3.0 * a2 * b * e + a1 * self.mal3) * tau;
        for j in 0..d {
            let inc = a2 * b * self.theta_sens[j] + a1 * self.mal_theta[j] + jet.at(j, 1) * b;
            self.mal_theta[j] += inc * tau;
        }
        self.mal2 += (a2 * b * b + a1 * e) * tau;
        for j in 0..d {
            for k in j..d {
                let (aj, ak) = (self.theta_sens[j], self.theta_sens[k]);
                let inc = a2 * aj * ak
                    + jet.at(j, 1) * ak
                    + jet.at(k, 1) * aj
                    + a1 * self.theta_hess[j * d + k]
                    + jet.att(j, k, 0);
                let v = self.theta_hess[j * d + k] + inc * tau;
                self.theta_hess[j * d + k] = v;
                self.theta_hess[k * d + j] = v;
            }
        }
        self.mal += a1 * b * tau;
        for j in 0..d {
            self.theta_sens[j] += (a1 * self.theta_sens[j] + jet.at(j, 0)) * tau;
        }
        self.x += (jet.a() + c_eff) * tau;
    }

    #[inline]
    fn jump(&mut self, u: f64, w: &WeightValues) {
        self.x += u;
        self.mal += w.rho;
        self.mal2 += w.rho * w.rho_prime;
        self.mal3 += (w.rho_prime * w.rho_prime + w.rho * w.rho_second) * w.rho;
        self.jumps.add(w);
    }

    fn is_finite(&self) -> bool {
        let scalars = [self.x, self.mal, self.mal2, self.mal3];
        scalars.iter().all(|v| v.is_finite())
            && self
                .theta_sens
                .iter()
                .chain(&self.theta_hess)
                .chain(&self.mal_theta)
                .chain(&self.mal2_theta)
                .chain(&self.mal_theta_hess)
                .all(|v| v.is_finite())
    }
}

/// Jump input and time grid for one simulation.
#[derive(Clone, Copy, Debug)]
pub struct PathSpec<'a> {
    /// Jumps sorted by time; those outside `(0, n·h]` are ignored.
    pub jumps: &'a [Jump],
    pub c_eff: f64,
    pub h: f64,
    pub n: usize,
    pub substeps: usize,
    pub placement: JumpPlacement,
}

enum Event {
    Drift(f64),
    Jump(f64),
    Observe(usize, f64),
}

/// Walk the Euler grid, emitting drift steps, jumps and observations in order.
fn walk<F>(spec: &PathSpec, mut f: F) -> Result<(), SdeError>
where
    F: FnMut(Event) -> Result<(), SdeError>,
{
    let dt = spec.h / spec.substeps as f64;
    let jumps = spec.jumps;
    let mut next = jumps.partition_point(|j| j.t <= 0.0);
    f(Event::Observe(0, 0.0))?;
    for k in 0..spec.n {
        let base = k as f64 * spec.h;
        for s in 0..spec.substeps {
            let t0 = base + s as f64 * dt;
            let t1 = if s + 1 == spec.substeps {
                (k + 1) as f64 * spec.h
            } else {
                base + (s + 1) as f64 * dt
            };
            match spec.placement {
                JumpPlacement::StepEnd => {
                    f(Event::Drift(dt))?;
                    while next < jumps.len() && jumps[next].t <= t1 {
                        f(Event::Jump(jumps[next].u))?;
                        next += 1;
                    }
                }
                JumpPlacement::ExactTime => {
                    let mut cur = t0;
                    while next < jumps.len() && jumps[next].t <= t1 {
                        let tj = jumps[next].t;
                        if tj > cur {
                            f(Event::Drift(tj - cur))?;
                            cur = tj;
                        }
                        f(Event::Jump(jumps[next].u))?;
                        next += 1;
                    }
                    if t1 > cur {
                        f(Event::Drift(t1 - cur))?;
                    }
                }
            }
        }
        f(Event::Observe(k + 1, (k + 1) as f64 * spec.h))?;
    }
    Ok(())
}

fn guard(x: f64, step: usize) -> Result<(), SdeError> {
    if x.is_finite() && x.abs() <= EXPLOSION_BOUND {
        Ok(())
    } else {
        Err(SdeError::Explosion { step, value: x })
    }
}

/// Observed states only; `out` receives `X_0 … X_n`.
pub fn simulate_states(
    drift: &CompiledDrift,
    buf: &mut EvalBuffer,
    theta: &[f64],
    x0: f64,
    spec: &PathSpec,
    out: &mut Vec<f64>,
) -> Result<(), SdeError> {
    out.clear();
    let mut x = x0;
    let mut step = 0;
    walk(spec, |ev| {
        match ev {
            Event::Drift(tau) => {
                x += (drift.value(x, theta, buf)? + spec.c_eff) * tau;
                guard(x, step)?;
            }
            Event::Jump(u) => x += u,
            Event::Observe(k, _) => {
                guard(x, step)?;
                out.push(x);
                step = k;
            }
        }
        Ok(())
    })
}

/// Run the full sensitivity recursion, calling `observe` at every grid
/// point. `state` is reset to `x0` first and holds the final values.
#[allow(clippy::too_many_arguments)]
pub fn simulate_sensitivities<F>(
    drift: &CompiledDrift,
    buf: &mut EvalBuffer,
    theta: &[f64],
    x0: f64,
    spec: &PathSpec,
    weight: &JumpWeight,
    state: &mut SensitivityState,
    mut observe: F,
) -> Result<(), SdeError>
where
    F: FnMut(usize, &SensitivityState),
{
    if state.dim() != drift.dim() {
        *state = SensitivityState::new(x0, drift.dim());
    }
    state.reset(x0);
    let mut step = 0;
    walk(spec, |ev| {
        match ev {
            Event::Drift(tau) => {
                let jet = drift.jet(state.x, theta, buf)?;
                state.drift_step(&jet, tau, spec.c_eff);
                guard(state.x, step)?;
            }
            Event::Jump(u) => state.jump(u, &weight.eval(u)),
            Event::Observe(k, t) => {
                state.t = t;
                guard(state.x, step)?;
                if !state.is_finite() {
                    return Err(SdeError::Explosion {
                        step,
                        value: f64::INFINITY,
                    });
                }
                observe(k, state);
                step = k;
            }
        }
        Ok(())
    })
}

fn check_inputs(
    model: &DriftModel,
    theta: &[f64],
    noise: &NoisePath,
    cfg: &SimConfig,
) -> Result<(), SdeError> {
    cfg.validate()?;
    if theta.len() != model.dim() {
        return Err(SdeError::Drift(ExprError::ParamCount {
            expected: model.dim(),
            got: theta.len(),
        }));
    }
    if noise.horizon() < cfg.horizon() * (1.0 - 1e-12) {
        return Err(SdeError::Mismatch(format!(
            "noise horizon {} is shorter than n·h = {}",
            noise.horizon(),
            cfg.horizon()
        )));
    }
    Ok(())
}

fn spec_for<'a>(noise: &'a NoisePath, cfg: &SimConfig) -> PathSpec<'a> {
    PathSpec {
        jumps: noise.jumps(),
        c_eff: noise.c_eff(),
        h: cfg.h,
        n: cfg.n,
        substeps: cfg.substeps,
        placement: cfg.placement,
    }
}

pub fn euler_simulate(
    model: &DriftModel,
    theta: &[f64],
    noise: &NoisePath,
    cfg: &SimConfig,
) -> Result<Trajectory, SdeError> {
    check_inputs(model, theta, noise, cfg)?;
    let drift = CompiledDrift::new(model)?;
    let mut states = Vec::with_capacity(cfg.n + 1);
    simulate_states(
        &drift,
        &mut EvalBuffer::default(),
        theta,
        cfg.x0,
        &spec_for(noise, cfg),
        &mut states,
    )?;
    Ok(Trajectory {
        times: (0..=cfg.n).map(|k| k as f64 * cfg.h).collect(),
        states,
        theta: theta.to_vec(),
        model: model.source().to_string(),
        noise_seed: noise.config().seed,
        alpha: noise.config().alpha,
        config: cfg.clone(),
    })
}

/// Sensitivities at every observation time of a simulated trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityPath {
    pub points: Vec<SensitivityState>,
}

impl SensitivityPath {
    pub fn at(&self, k: usize) -> Option<&SensitivityState> {
        self.points.get(k)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn propagate_sensitivities(
    model: &DriftModel,
    theta: &[f64],
    noise: &NoisePath,
    traj: &Trajectory,
) -> Result<SensitivityPath, SdeError> {
    let cfg = &traj.config;
    check_inputs(model, theta, noise, cfg)?;
    if traj.theta != theta || traj.model != model.source() {
        return Err(SdeError::Mismatch(
            "trajectory was simulated with a different model or parameter".into(),
        ));
    }
    let drift = CompiledDrift::new(model)?;
    let mut state = SensitivityState::new(cfg.x0, model.dim());
    let mut points = Vec::with_capacity(cfg.n + 1);
    simulate_sensitivities(
        &drift,
        &mut EvalBuffer::default(),
        theta,
        cfg.x0,
        &spec_for(noise, cfg),
        &noise.config().weight(),
        &mut state,
        |_, s| points.push(s.clone()),
    )?;
    for (p, &x) in points.iter().zip(&traj.states) {
        if (p.x - x).abs() > 1e-9 * (1.0 + x.abs()) {
            return Err(SdeError::Mismatch(format!(
                "trajectory state {x} differs from re-simulated {} at t = {}",
                p.x, p.t
            )));
        }
    }
    Ok(SensitivityPath { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_noise::{sample_path, NoiseConfig, WeightKind};

    fn noise(horizon: f64, seed: u64) -> NoisePath {
        sample_path(&NoiseConfig {
            horizon,
            seed,
            scale: 0.05,
            ..NoiseConfig::default()
        })
        .unwrap()
    }

    fn cfg(n: usize, substeps: usize, placement: JumpPlacement) -> SimConfig {
        SimConfig {
            h: 0.5,
            n,
            x0: 0.3,
            substeps,
            placement,
        }
    }

    #[test]
    fn triangle_layout_is_dense() {
        for d in 1..5 {
            let mut seen = vec![];
            for j in 0..d {
                for k in j..d {
                    seen.push(triangle_offset(d, j, k));
                    assert_eq!(triangle_offset(d, j, k), triangle_offset(d, k, j));
                }
            }
            let expect: Vec<usize> = (0..d * (d + 1) / 2).collect();
            assert_eq!(seen, expect);
        }
    }

    #[test]
    fn zero_drift_follows_noise() {
        let m = DriftModel::parse("0*a", &["a"]).unwrap();
        let z = noise(10.0, 1);
        for placement in [JumpPlacement::StepEnd, JumpPlacement::ExactTime] {
            let c = cfg(20, 3, placement);
            let tr = euler_simulate(&m, &[1.0], &z, &c).unwrap();
            for (k, x) in tr.states.iter().enumerate() {
                let expect = c.x0 + z.increment(0.0, k as f64 * c.h).unwrap();
                assert!((x - expect).abs() < 1e-12);
            }
            let s = propagate_sensitivities(&m, &[1.0], &z, &tr).unwrap();
            let cum = cumulative_jump_derivatives(&z, &tr.times);
            for (p, j) in s.points.iter().zip(&cum) {
                assert_eq!(p.theta_sens, vec![0.0]);
                assert_eq!(p.mal_theta, vec![0.0]);
                assert!((p.mal - j.dz).abs() < 1e-12);
                assert!((p.mal2 - j.d2z).abs() < 1e-12);
                assert!((p.mal3 - j.d3z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_linear_decay() {
        let m = DriftModel::parse("-x", &[] as &[&str]).unwrap();
        let z = NoisePath::from_jumps(NoiseConfig { horizon: 10.0, ..NoiseConfig::default() }, 0.0, vec![])
            .unwrap();
        let c = SimConfig { h: 1.0, n: 10, x0: 1.0, substeps: 4, placement: JumpPlacement::StepEnd };
        let tr = euler_simulate(&m, &[], &z, &c).unwrap();
        for (k, x) in tr.states.iter().enumerate() {
            let expect = (1.0f64 - 0.25).powi((4 * k) as i32);
            assert!((x - expect).abs() < 1e-15 * (1.0 + expect));
        }
    }

    #[test]
    fn explosion_is_reported() {
        let m = DriftModel::parse("x^2", &[] as &[&str]).unwrap();
        let z = NoisePath::from_jumps(NoiseConfig { horizon: 100.0, ..NoiseConfig::default() }, 0.0, vec![])
            .unwrap();
        let c = SimConfig { h: 1.0, n: 100, x0: 2.0, substeps: 1, placement: JumpPlacement::StepEnd };
        match euler_simulate(&m, &[], &z, &c) {
            Err(SdeError::Explosion { step, .. }) => assert!(step < 10),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = DriftModel::parse("-a*x", &["a"]).unwrap();
        let z = noise(1.0, 2);
        assert!(euler_simulate(&m, &[1.0], &z, &cfg(0, 1, JumpPlacement::StepEnd)).is_err());
        assert!(euler_simulate(&m, &[1.0], &z, &cfg(1, 0, JumpPlacement::StepEnd)).is_err());
        assert!(euler_simulate(&m, &[1.0, 2.0], &z, &cfg(2, 1, JumpPlacement::StepEnd)).is_err());
        // noise too short for n·h
        assert!(euler_simulate(&m, &[1.0], &z, &cfg(3, 1, JumpPlacement::StepEnd)).is_err());
        let tr = euler_simulate(&m, &[1.0], &z, &cfg(2, 1, JumpPlacement::StepEnd)).unwrap();
        assert!(propagate_sensitivities(&m, &[1.1], &z, &tr).is_err());
    }

    #[test]
    fn additive_parameters_have_zero_parameter_hessian() {
        // the second parameter derivative of X vanishes only when neither
        // A'' nor the mixed partials A'_j feed it
        let m = DriftModel::parse("-x + a + 2*b", &["a", "b"]).unwrap();
        let z = noise(5.0, 3);
        let th = [0.5, 0.1];
        let tr = euler_simulate(&m, &th, &z, &cfg(10, 2, JumpPlacement::ExactTime)).unwrap();
        let s = propagate_sensitivities(&m, &th, &z, &tr).unwrap();
        for p in &s.points {
            assert!(p.theta_hess.iter().all(|&v| v == 0.0));
            assert!(p.mal_theta_hess.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn affine_drift_parameter_hessian_matches_differences() {
        let m = DriftModel::parse("a*x^3 + b*x^2 + c*x", &["a", "b", "c"]).unwrap();
        let z = noise(5.0, 3);
        let th = [-0.5, 0.1, -1.0];
        let c = cfg(10, 2, JumpPlacement::ExactTime);
        let sens_at = |t: &[f64]| {
            let tr = euler_simulate(&m, t, &z, &c).unwrap();
            propagate_sensitivities(&m, t, &z, &tr).unwrap()
        };
        let base = sens_at(&th);
        let step = 1e-5;
        for k in 0..3 {
            let mut up = th;
            up[k] += step;
            let mut dn = th;
            dn[k] -= step;
            let (su, sd) = (sens_at(&up), sens_at(&dn));
            let last = c.n;
            for j in 0..3 {
                let fd = (su.points[last].theta_sens[j] - sd.points[last].theta_sens[j]) / (2.0 * step);
                let exact = base.points[last].theta_hess[j * 3 + k];
                assert!((fd - exact).abs() < 1e-6 * (1.0 + exact.abs()), "{j}{k}: {fd} {exact}");
            }
        }
    }

    #[test]
    fn single_flat_jump_functionals() {
        let c = NoiseConfig { weight: WeightKind::Linear, horizon: 1.0, ..NoiseConfig::default() };
        let u = 0.3;
        let path = NoisePath::from_jumps(c.clone(), 0.0, vec![Jump { t: 0.5, u }]).unwrap();
        let j = jump_derivatives(&path);
        assert!((j.dz - u).abs() < 1e-15);
        assert!((j.d2z - u).abs() < 1e-15);
        assert!((j.d3z - u).abs() < 1e-15);
        assert!((j.delta - c.alpha).abs() < 1e-12);
        assert!(j.d_delta.abs() < 1e-12);
        let empty = NoisePath::from_jumps(c, 0.0, vec![]).unwrap();
        assert_eq!(jump_derivatives(&empty), JumpDerivatives::default());
    }

    #[test]
    fn deterministic_given_inputs() {
        let m = DriftModel::parse("-2*x + sin(x + t)", &["t"]).unwrap();
        let z = noise(20.0, 4);
        let c = cfg(40, 2, JumpPlacement::StepEnd);
        let a = euler_simulate(&m, &[1.0], &z, &c).unwrap();
        let b = euler_simulate(&m, &[1.0], &z, &c).unwrap();
        assert_eq!(a, b);
        let sa = propagate_sensitivities(&m, &[1.0], &z, &a).unwrap();
        let sb = propagate_sensitivities(&m, &[1.0], &z, &b).unwrap();
        assert_eq!(sa, sb);
    }

    #[test]
    fn csv_has_schema_header() {
        let m = DriftModel::parse("-a*x", &["a"]).unwrap();
        let z = noise(2.0, 5);
        let tr = euler_simulate(&m, &[1.0], &z, &cfg(4, 1, JumpPlacement::StepEnd)).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# levydrift trajectory v1");
        assert_eq!(lines[2], "k,t,x");
        assert_eq!(lines.len(), 3 + 5);
    }
}
