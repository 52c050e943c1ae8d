use super::{check_finite, OptimReport, PhaseReport, SolverError, Termination};

/// A finite family of residual functions `Q_i(θ)`.
pub trait Residuals: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dim(&self) -> usize;

    fn eval(&self, theta: &[f64], out: &mut [f64]);

    /// Gradients of the residuals listed in `indices`, one row per index.
    /// The default takes central differences of [`Residuals::eval`].
    fn gradients(&self, theta: &[f64], indices: &[usize], out: &mut [Vec<f64>]) {
        let mut up = vec![0.0; self.len()];
        let mut dn = vec![0.0; self.len()];
        let mut p = theta.to_vec();
        for j in 0..theta.len() {
            let h = 1e-6 * (1.0 + theta[j].abs());
            p[j] = theta[j] + h;
            self.eval(&p, &mut up);
            p[j] = theta[j] - h;
            self.eval(&p, &mut dn);
            p[j] = theta[j];
            for (row, &i) in out.iter_mut().zip(indices) {
                row[j] = (up[i] - dn[i]) / (2.0 * h);
            }
        }
    }
}

type BoxedResidual = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Residuals given as separate closures.
pub struct FnResiduals {
    dim: usize,
    fs: Vec<BoxedResidual>,
}

impl FnResiduals {
    pub fn new(dim: usize) -> Self {
        FnResiduals { dim, fs: Vec::new() }
    }

    pub fn with(mut self, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.fs.push(Box::new(f));
        self
    }
}

impl Residuals for FnResiduals {
    fn len(&self) -> usize {
        self.fs.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, theta: &[f64], out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.fs) {
            *o = f(theta);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinimaxOptions {
    /// Descent steps per smoothing stage.
    pub max_iter: usize,
    /// Stationarity tolerance on the descent direction and on accepted steps.
    pub tol: f64,
    /// Residuals within `active_tol · max(F, 1)` of the maximum count as active.
    pub active_tol: f64,
    /// Run three stages with β divided by 10 between them.
    pub anneal: bool,
    pub min_step: f64,
}

impl Default for MinimaxOptions {
    fn default() -> Self {
        MinimaxOptions {
            max_iter: 2000,
            tol: 1e-10,
            active_tol: 1e-8,
            anneal: false,
            min_step: 1e-14,
        }
    }
}

const ARMIJO_C: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;

struct Smoothed<'a, R: ?Sized> {
    res: &'a R,
    beta: f64,
    buf: Vec<f64>,
    evaluations: usize,
}

impl<R: Residuals + ?Sized> Smoothed<'_, R> {
    fn value(&mut self, theta: &[f64]) -> Result<f64, SolverError> {
        self.evaluations += 1;
        self.res.eval(theta, &mut self.buf);
        let b2 = self.beta * self.beta;
        let mut m = f64::NEG_INFINITY;
        for &q in &self.buf {
            check_finite(q, theta)?;
            m = m.max((q * q + b2).sqrt());
        }
        Ok(m)
    }
}

/// Point of least norm in the convex hull of `g` (Gilbert's iteration).
fn min_norm_hull(g: &[Vec<f64>]) -> Vec<f64> {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut x = g[0].clone();
    for _ in 0..500 {
        let (i, _) = g
            .iter()
            .enumerate()
            .map(|(i, gi)| (i, dot(&x, gi)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let diff: Vec<f64> = x.iter().zip(&g[i]).map(|(a, b)| a - b).collect();
        let num = dot(&x, &diff);
        let den = dot(&diff, &diff);
        if num <= 1e-15 * dot(&x, &x).max(1e-300) || den == 0.0 {
            break;
        }
        let gamma = (num / den).min(1.0);
        for (xv, dv) in x.iter_mut().zip(&diff) {
            *xv -= gamma * dv;
        }
    }
    x
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn stage<R: Residuals + ?Sized>(
    res: &R,
    theta: &mut Vec<f64>,
    beta: f64,
    opts: &MinimaxOptions,
) -> Result<(f64, PhaseReport), SolverError> {
    let d = theta.len();
    let mut sm = Smoothed {
        res,
        beta,
        buf: vec![0.0; res.len()],
        evaluations: 0,
    };
    let mut f = sm.value(theta)?;
    let mut rounds = 0;
    let mut line_steps = 0;
    let mut termination = Termination::MaxIter;
    'outer: while rounds < opts.max_iter {
        rounds += 1;
        let vals: Vec<f64> = sm
            .buf
            .iter()
            .map(|q| (q * q + beta * beta).sqrt())
            .collect();
        let qs = sm.buf.clone();
        let mut active_tol = opts.active_tol * f.max(1.0);
        // widen the active set when no direction from it descends
        for _ in 0..4 {
            let active: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] >= f - active_tol).collect();
            let mut grads = vec![vec![0.0; d]; active.len()];
            res.gradients(theta, &active, &mut grads);
            for (row, &i) in grads.iter_mut().zip(&active) {
                let s = qs[i] / vals[i];
                for v in row.iter_mut() {
                    *v *= s;
                }
                for &v in row.iter() {
                    check_finite(v, theta)?;
                }
            }
            let hull = min_norm_hull(&grads);
            if norm(&hull) <= opts.tol {
                termination = Termination::Converged;
                break 'outer;
            }
            let mut avg = vec![0.0; d];
            for row in &grads {
                for (a, v) in avg.iter_mut().zip(row) {
                    *a += v / grads.len() as f64;
                }
            }
            for dir in [avg, hull] {
                let g2: f64 = dir.iter().map(|v| v * v).sum();
                if g2 == 0.0 {
                    continue;
                }
                let mut t = 1.0;
                while t >= opts.min_step {
                    let cand: Vec<f64> = theta.iter().zip(&dir).map(|(x, g)| x - t * g).collect();
                    let fc = sm.value(&cand)?;
                    line_steps += 1;
                    if fc <= f - ARMIJO_C * t * g2 {
                        let moved = t * g2.sqrt();
                        *theta = cand;
                        f = fc;
                        if moved <= opts.tol * (1.0 + norm(theta)) {
                            termination = Termination::Converged;
                            break 'outer;
                        }
                        continue 'outer;
                    }
                    t *= BACKTRACK;
                }
            }
            active_tol *= 10.0;
        }
        termination = Termination::Stalled;
        break;
    }
    // leave the residual buffer consistent with the returned point
    let f = sm.value(theta)?;
    Ok((
        f,
        PhaseReport {
            method: "armijo_minimax",
            rounds,
            evaluations: sm.evaluations,
            line_steps,
            termination,
        },
    ))
}

/// Minimize `max_i √(Q_i(θ)² + β²)` by steepest descent over the active
/// residuals with Armijo backtracking. With `anneal`, β is divided by 10
/// twice and each stage starts from the previous result.
pub fn armijo_minimax<R: Residuals + ?Sized>(
    res: &R,
    theta0: &[f64],
    beta: f64,
    opts: &MinimaxOptions,
) -> Result<OptimReport, SolverError> {
    if !(beta > 0.0) || res.is_empty() || theta0.len() != res.dim() || theta0.is_empty() {
        return Err(SolverError::InvalidInput(format!(
            "minimax needs β > 0, residuals, and a start of length {}",
            res.dim()
        )));
    }
    let stages = if opts.anneal { 3 } else { 1 };
    let mut theta = theta0.to_vec();
    let mut phases = Vec::with_capacity(stages);
    let mut value = f64::NAN;
    for s in 0..stages {
        let b = beta / 10f64.powi(s as i32);
        let (v, phase) = stage(res, &mut theta, b, opts)?;
        value = v;
        phases.push(phase);
    }
    Ok(OptimReport {
        point: theta,
        value,
        phases,
    })
}
