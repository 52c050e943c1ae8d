use rayon::prelude::*;

use super::{check_finite, OptimReport, PhaseReport, SolverError, Termination};

#[derive(Clone, Debug, PartialEq)]
pub struct BoxWilsonOptions {
    /// Half-width of the factorial design per component (one value is
    /// broadcast to all components).
    pub delta: Vec<f64>,
    /// Proportion coefficient of the line movement.
    pub q: f64,
    /// Stop when the regression-coefficient norm is at most `eps`.
    pub eps: f64,
    pub max_iter: usize,
    /// Halve `q` while the first line step fails, double it after long
    /// lines; stop (stalled) once `q` would fall below `min_q`.
    pub adapt_q: bool,
    pub min_q: f64,
}

impl Default for BoxWilsonOptions {
    fn default() -> Self {
        BoxWilsonOptions {
            delta: vec![0.05],
            q: 1.0,
            eps: 1e-5,
            max_iter: 500,
            adapt_q: true,
            min_q: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HookeJeevesOptions {
    pub step0: f64,
    pub shrink: f64,
    pub eps: f64,
    pub max_iter: usize,
}

impl Default for HookeJeevesOptions {
    fn default() -> Self {
        HookeJeevesOptions {
            step0: 0.1,
            shrink: 0.5,
            eps: 1e-5,
            max_iter: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HybridOptions {
    pub box_wilson: BoxWilsonOptions,
    /// The Box-Wilson phase stops once `‖b‖ ≤ coarse_rel · ‖b₀‖`.
    pub coarse_rel: f64,
    /// Pattern-search settings; `step0` caps the first step.
    pub hooke_jeeves: HookeJeevesOptions,
}

impl Default for HybridOptions {
    fn default() -> Self {
        HybridOptions {
            box_wilson: BoxWilsonOptions::default(),
            coarse_rel: 1e-2,
            hooke_jeeves: HookeJeevesOptions {
                step0: 0.01,
                ..HookeJeevesOptions::default()
            },
        }
    }
}

/// Signs of the two-level design: the full factorial for `d ≤ 4`, above
/// that a fraction whose extra columns are interaction products of the
/// first four.
fn factorial_design(d: usize) -> Result<Vec<Vec<f64>>, SolverError> {
    let base = d.min(4);
    let generators: Vec<Vec<usize>> = (1u32..16)
        .filter(|m| m.count_ones() >= 2)
        .map(|m| (0..4).filter(|b| m & (1 << b) != 0).collect())
        .collect();
    if d > base + generators.len() {
        return Err(SolverError::InvalidInput(format!(
            "factorial design supports at most {} components",
            base + generators.len()
        )));
    }
    let rows = 1usize << base;
    Ok((0..rows)
        .map(|r| {
            let mut s: Vec<f64> = (0..base)
                .map(|j| if r & (1 << j) != 0 { 1.0 } else { -1.0 })
                .collect();
            for g in generators.iter().take(d - base) {
                s.push(g.iter().map(|&j| s[j]).product());
            }
            s
        })
        .collect())
}

fn broadcast(v: &[f64], d: usize) -> Result<Vec<f64>, SolverError> {
    match v.len() {
        1 => Ok(vec![v[0]; d]),
        n if n == d => Ok(v.to_vec()),
        n => Err(SolverError::InvalidInput(format!(
            "{n} step sizes for {d} components"
        ))),
    }
}

struct Counted<'a, F> {
    f: &'a F,
    evaluations: usize,
}

impl<F> Counted<'_, F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn eval(&mut self, x: &[f64]) -> Result<f64, SolverError> {
        self.evaluations += 1;
        check_finite((self.f)(x), x)
    }
}

/// Regression coefficients of the two-level design around `x`, in natural
/// units: `b_j = Σ_rows s_j f / (rows · δ_j)`.
pub fn factorial_regression<F>(f: &F, x: &[f64], delta: &[f64]) -> Result<Vec<f64>, SolverError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let delta = broadcast(delta, x.len())?;
    regression_coefficients(f, x, &delta, &factorial_design(x.len())?)
}

fn regression_coefficients<F>(
    f: &F,
    x: &[f64],
    delta: &[f64],
    design: &[Vec<f64>],
) -> Result<Vec<f64>, SolverError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let values: Vec<f64> = design
        .par_iter()
        .map(|s| {
            let p: Vec<f64> = x.iter().zip(s).zip(delta).map(|((x, s), d)| x + s * d).collect();
            check_finite(f(&p), &p)
        })
        .collect::<Result<_, _>>()?;
    let rows = design.len() as f64;
    Ok((0..x.len())
        .map(|j| {
            design.iter().zip(&values).map(|(s, v)| s[j] * v).sum::<f64>() / (rows * delta[j])
        })
        .collect())
}

fn box_wilson_phase<F>(
    f: &F,
    theta0: &[f64],
    opts: &BoxWilsonOptions,
    coarse_rel: Option<f64>,
) -> Result<(Vec<f64>, f64, PhaseReport, f64), SolverError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = theta0.len();
    if d == 0 || !(opts.q > 0.0) || !(opts.eps > 0.0) {
        return Err(SolverError::InvalidInput("Box-Wilson needs d ≥ 1, q > 0, eps > 0".into()));
    }
    let delta = broadcast(&opts.delta, d)?;
    if delta.iter().any(|v| !(*v > 0.0)) {
        return Err(SolverError::InvalidInput("design steps must be positive".into()));
    }
    let design = factorial_design(d)?;
    let mut counted = Counted { f, evaluations: 0 };
    let mut x = theta0.to_vec();
    let mut fx = counted.eval(&x)?;
    let mut q = opts.q;
    let mut line_steps = 0;
    let mut threshold = opts.eps;
    let mut termination = Termination::MaxIter;
    let mut rounds = 0;
    let mut last_move = f64::INFINITY;
    while rounds < opts.max_iter {
        rounds += 1;
        let b = regression_coefficients(f, &x, &delta, &design)?;
        counted.evaluations += design.len();
        let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rounds == 1 {
            if let Some(rel) = coarse_rel {
                threshold = threshold.max(rel * norm);
            }
        }
        if norm <= threshold {
            termination = Termination::Converged;
            break;
        }
        // the regression stays valid while q shrinks, so a failed first
        // step is retried on the same line
        let mut best = (x.clone(), fx);
        let mut k = 1usize;
        loop {
            let cand: Vec<f64> = (0..d)
                .map(|j| x[j] - k as f64 * q * b[j] * delta[j])
                .collect();
            let fc = counted.eval(&cand)?;
            line_steps += 1;
            if fc < best.1 {
                best = (cand, fc);
                k += 1;
                if k > 1000 {
                    break;
                }
            } else if k == 1 && opts.adapt_q && q * 0.5 >= opts.min_q {
                q *= 0.5;
            } else {
                break;
            }
        }
        if best.1 < fx {
            if opts.adapt_q && k > 8 {
                q *= 2.0;
            }
            last_move = best.0.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            (x, fx) = best;
        } else {
            termination = Termination::Stalled;
            break;
        }
    }
    Ok((
        x,
        fx,
        PhaseReport {
            method: "box_wilson",
            rounds,
            evaluations: counted.evaluations,
            line_steps,
            termination,
        },
        last_move,
    ))
}

/// Gradient descent with the gradient replaced by the regression
/// coefficients of a two-level factorial design.
pub fn box_wilson<F>(
    f: &F,
    theta0: &[f64],
    opts: &BoxWilsonOptions,
) -> Result<OptimReport, SolverError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let (point, value, phase, _) = box_wilson_phase(f, theta0, opts, None)?;
    Ok(OptimReport {
        point,
        value,
        phases: vec![phase],
    })
}

fn explore<F>(
    counted: &mut Counted<'_, F>,
    mut x: Vec<f64>,
    mut fx: f64,
    step: f64,
) -> Result<(Vec<f64>, f64), SolverError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    for j in 0..x.len() {
        let orig = x[j];
        x[j] = orig + step;
        let up = counted.eval(&x)?;
        if up < fx {
            fx = up;
            continue;
        }
        x[j] = orig - step;
        let dn = counted.eval(&x)?;
        if dn < fx {
            fx = dn;
            continue;
        }
        x[j] = orig;
    }
    Ok((x, fx))
}

/// Pattern search: exploratory coordinate moves, pattern moves that
/// repeat a successful displacement, and step shrinking on failure.
pub fn hooke_jeeves<F>(
    f: &F,
    theta0: &[f64],
    opts: &HookeJeevesOptions,
) -> Result<OptimReport, SolverError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if theta0.is_empty()
        || !(opts.step0 > opts.eps && opts.eps > 0.0)
        || !(opts.shrink > 0.0 && opts.shrink < 1.0)
    {
        return Err(SolverError::InvalidInput(
            "Hooke-Jeeves needs step0 > eps > 0 and 0 < shrink < 1".into(),
        ));
    }
    let mut counted = Counted { f, evaluations: 0 };
    let mut base = theta0.to_vec();
    let mut fbase = counted.eval(&base)?;
    let mut step = opts.step0;
    let mut rounds = 0;
    let mut line_steps = 0;
    let mut termination = Termination::MaxIter;
    // max_iter bounds exploratory cycles and pattern moves together
    while rounds + line_steps < opts.max_iter {
        if step < opts.eps {
            termination = Termination::Converged;
            break;
        }
        rounds += 1;
        let (mut x, mut fx) = explore(&mut counted, base.clone(), fbase, step)?;
        if fx < fbase {
            loop {
                if rounds + line_steps >= opts.max_iter {
                    base = x;
                    fbase = fx;
                    break;
                }
                let pattern: Vec<f64> = x.iter().zip(&base).map(|(n, o)| 2.0 * n - o).collect();
                base = x.clone();
                fbase = fx;
                let fp = counted.eval(&pattern)?;
                line_steps += 1;
                let (x2, f2) = explore(&mut counted, pattern, fp, step)?;
                if f2 < fbase {
                    x = x2;
                    fx = f2;
                } else {
                    break;
                }
            }
        } else {
            step *= opts.shrink;
        }
    }
    if termination == Termination::MaxIter && step < opts.eps {
        termination = Termination::Converged;
    }
    Ok(OptimReport {
        point: base,
        value: fbase,
        phases: vec![PhaseReport {
            method: "hooke_jeeves",
            rounds,
            evaluations: counted.evaluations,
            line_steps,
            termination,
        }],
    })
}

/// First pattern-search step of the hybrid, relative to the last
/// Box-Wilson move.
const HANDOFF: f64 = 0.1;

/// Box-Wilson to a coarse tolerance, then Hooke-Jeeves from its result,
/// starting at a tenth of the last Box-Wilson move (kept within
/// `[2·eps, step0]`).
pub fn hybrid_minimize<F>(
    f: &F,
    theta0: &[f64],
    opts: &HybridOptions,
) -> Result<OptimReport, SolverError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let (coarse, _, first, last_move) = box_wilson_phase(f, theta0, &opts.box_wilson, Some(opts.coarse_rel))?;
    let hj = &opts.hooke_jeeves;
    let step0 = (HANDOFF * last_move).clamp(2.0 * hj.eps, hj.step0);
    let fine = hooke_jeeves(f, &coarse, &HookeJeevesOptions { step0, ..hj.clone() })?;
    let mut phases = vec![first];
    phases.extend(fine.phases);
    Ok(OptimReport {
        point: fine.point,
        value: fine.value,
        phases,
    })
}
