use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use super::SolverError;

/// Symmetric system `R x = f`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// Where the system came from, e.g. the sums that built it.
    pub tag: String,
}

impl LinearSystem {
    pub fn new(
        matrix: DMatrix<f64>,
        rhs: DVector<f64>,
        tag: impl Into<String>,
    ) -> Result<LinearSystem, SolverError> {
        let d = matrix.nrows();
        if d == 0 || matrix.ncols() != d || rhs.len() != d {
            return Err(SolverError::InvalidInput(format!(
                "matrix {}x{} with rhs of length {}",
                matrix.nrows(),
                matrix.ncols(),
                rhs.len()
            )));
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        for i in 0..d {
            for j in i + 1..d {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-12 * scale {
                    return Err(SolverError::InvalidInput(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if matrix.iter().chain(rhs.iter()).any(|v| !v.is_finite()) {
            return Err(SolverError::InvalidInput("non-finite entries".into()));
        }
        Ok(LinearSystem {
            matrix,
            rhs,
            tag: tag.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    /// `‖f − R x‖ / ‖f‖` (absolute when `f = 0`).
    pub fn relative_residual(&self, x: &DVector<f64>) -> f64 {
        let r = (&self.rhs - &self.matrix * x).norm();
        let nf = self.rhs.norm();
        if nf > 0.0 {
            r / nf
        } else {
            r
        }
    }

    fn check_diagonal(&self) -> Result<(), SolverError> {
        match (0..self.dim()).find(|&i| self.matrix[(i, i)] == 0.0) {
            Some(i) => Err(SolverError::ZeroDiagonal(i)),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub solution: DVector<f64>,
    pub iterations: usize,
    /// Final relative residual.
    pub residual: f64,
    pub converged: bool,
    pub method: String,
}

impl SolveReport {
    pub const CSV_HEADER: &'static str = "method,iterations,residual,converged,solution";

    pub fn csv_row(&self) -> String {
        let mut s = format!(
            "{},{},{:e},{},",
            self.method, self.iterations, self.residual, self.converged
        );
        for (i, v) in self.solution.iter().enumerate() {
            if i > 0 {
                s.push(';');
            }
            let _ = write!(s, "{v}");
        }
        s
    }
}

fn check_omega(omega: f64) -> Result<(), SolverError> {
    if omega > 0.0 && omega < 2.0 {
        Ok(())
    } else {
        Err(SolverError::InvalidInput(format!("omega = {omega} must lie in (0, 2)")))
    }
}

fn sweep_row(sys: &LinearSystem, x: &mut DVector<f64>, omega: f64, i: usize) {
    let r = &sys.matrix;
    let mut s = sys.rhs[i];
    for j in 0..sys.dim() {
        if j != i {
            s -= r[(i, j)] * x[j];
        }
    }
    x[i] = (1.0 - omega) * x[i] + omega * s / r[(i, i)];
}

fn forward(sys: &LinearSystem, x: &mut DVector<f64>, omega: f64) {
    for i in 0..sys.dim() {
        sweep_row(sys, x, omega, i);
    }
}

fn backward(sys: &LinearSystem, x: &mut DVector<f64>, omega: f64) {
    for i in (0..sys.dim()).rev() {
        sweep_row(sys, x, omega, i);
    }
}

fn ssor_step(sys: &LinearSystem, x: &mut DVector<f64>, omega: f64) {
    forward(sys, x, omega);
    backward(sys, x, omega);
}

/// Drive `step` until the relative residual reaches `tol`.
fn iterate<F>(
    sys: &LinearSystem,
    x0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
    method: &str,
    mut step: F,
) -> Result<SolveReport, SolverError>
where
    F: FnMut(&mut DVector<f64>, usize),
{
    let mut x = x0.clone();
    let mut history = vec![sys.relative_residual(&x)];
    if history[0] <= tol {
        return Ok(SolveReport {
            solution: x,
            iterations: 0,
            residual: history[0],
            converged: true,
            method: method.into(),
        });
    }
    for it in 1..=max_iter {
        step(&mut x, it);
        let res = sys.relative_residual(&x);
        if !res.is_finite() {
            return Err(SolverError::Diverged { iterations: it });
        }
        history.push(res);
        if res <= tol {
            return Ok(SolveReport {
                solution: x,
                iterations: it,
                residual: res,
                converged: true,
                method: method.into(),
            });
        }
        if it >= 10 && res > 10.0 * history[it - 10] {
            return Err(SolverError::Diverged { iterations: it });
        }
    }
    Ok(SolveReport {
        residual: *history.last().unwrap(),
        solution: x,
        iterations: max_iter,
        converged: false,
        method: method.into(),
    })
}

/// Successive over-relaxation with forward sweeps only.
pub fn sor(
    sys: &LinearSystem,
    x0: &DVector<f64>,
    omega: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SolveReport, SolverError> {
    check_omega(omega)?;
    sys.check_diagonal()?;
    iterate(sys, x0, tol, max_iter, "sor", |x, _| forward(sys, x, omega))
}

/// Symmetric SOR: a forward sweep followed by a backward sweep per iteration.
pub fn ssor_solve(
    sys: &LinearSystem,
    x0: &DVector<f64>,
    omega: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SolveReport, SolverError> {
    check_omega(omega)?;
    sys.check_diagonal()?;
    iterate(sys, x0, tol, max_iter, "ssor", |x, _| ssor_step(sys, x, omega))
}

/// The SSOR step written as `x ← G x + c`, with `G` assembled column by
/// column from sweeps of the homogeneous system.
pub fn ssor_iteration_matrix(
    sys: &LinearSystem,
    omega: f64,
) -> Result<(DMatrix<f64>, DVector<f64>), SolverError> {
    check_omega(omega)?;
    sys.check_diagonal()?;
    let d = sys.dim();
    let homogeneous = LinearSystem {
        matrix: sys.matrix.clone(),
        rhs: DVector::zeros(d),
        tag: String::new(),
    };
    let mut g = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut e = DVector::zeros(d);
        e[j] = 1.0;
        ssor_step(&homogeneous, &mut e, omega);
        g.set_column(j, &e);
    }
    let mut c = DVector::zeros(d);
    ssor_step(sys, &mut c, omega);
    Ok((g, c))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralRadius {
    pub rho: f64,
    /// False when power iteration did not settle and `rho` is the bound `‖G‖∞`.
    pub converged: bool,
}

/// Largest eigenvalue magnitude by power iteration, restarting from a new
/// vector if the iterate collapses.
pub fn spectral_radius(g: &DMatrix<f64>) -> Result<SpectralRadius, SolverError> {
    let d = g.nrows();
    if d == 0 || g.ncols() != d {
        return Err(SolverError::InvalidInput("spectral radius needs a square matrix".into()));
    }
    let bound = (0..d)
        .map(|i| g.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if bound == 0.0 {
        return Ok(SpectralRadius {
            rho: 0.0,
            converged: true,
        });
    }
    const CAP: usize = 20_000;
    for restart in 0..d.max(1) + 1 {
        // deterministic start vectors with all components present
        let mut v = DVector::from_fn(d, |i, _| {
            1.0 + ((i + 1) as f64 * (0.618_033_988_75 + restart as f64 * 0.414_213_562)).fract()
        });
        v /= v.norm();
        let mut prev = f64::NAN;
        let mut stable = 0;
        for _ in 0..CAP {
            // two steps at once so that ±ρ pairs give a steady ratio
            let w = g * (g * &v);
            let n = w.norm();
            if n == 0.0 || !n.is_finite() {
                break;
            }
            let est = n.sqrt();
            v = w / n;
            if (est - prev).abs() <= 1e-13 * est.max(1e-300) {
                stable += 1;
                if stable >= 3 {
                    return Ok(SpectralRadius {
                        rho: est,
                        converged: true,
                    });
                }
            } else {
                stable = 0;
            }
            prev = est;
        }
        if prev.is_finite() && prev > 0.0 {
            break;
        }
    }
    Ok(SpectralRadius {
        rho: bound,
        converged: false,
    })
}

/// SSOR accelerated by the three-layer Chebyshev recurrence:
/// `μ₀ = 1, μ₁ = ρ, μ_m = (2/(ρ μ_{m−1}) − 1/μ_{m−2})⁻¹`,
/// `y^m = 2μ_m/(ρ μ_{m−1}) (G y^{m−1} + c) − μ_m/μ_{m−2} y^{m−2}`.
pub fn chebyshev_ssor(
    sys: &LinearSystem,
    x0: &DVector<f64>,
    omega: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SolveReport, SolverError> {
    let (g, _) = ssor_iteration_matrix(sys, omega)?;
    let sr = spectral_radius(&g)?;
    let rho = sr.rho;
    if rho >= 1.0 {
        return Err(SolverError::SpectralRadius(rho));
    }
    let method = if sr.converged {
        "chebyshev_ssor"
    } else {
        "chebyshev_ssor(rho bound)"
    };
    let mut prev = x0.clone();
    let (mut mu_prev2, mut mu_prev) = (1.0f64, rho);
    iterate(sys, x0, tol, max_iter, method, |y, m| {
        let mut gy = y.clone();
        ssor_step(sys, &mut gy, omega);
        if m == 1 || rho == 0.0 {
            prev = y.clone();
            *y = gy;
            return;
        }
        let mu = 1.0 / (2.0 / (rho * mu_prev) - 1.0 / mu_prev2);
        let next = gy * (2.0 * mu / (rho * mu_prev)) - &prev * (mu / mu_prev2);
        prev = std::mem::replace(y, next);
        mu_prev2 = mu_prev;
        mu_prev = mu;
    })
}

/// Dense direct solve: Cholesky, falling back to LU.
pub fn direct_solve(sys: &LinearSystem) -> Result<DVector<f64>, SolverError> {
    if let Some(ch) = sys.matrix.clone().cholesky() {
        return Ok(ch.solve(&sys.rhs));
    }
    sys.matrix
        .clone()
        .lu()
        .solve(&sys.rhs)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or(SolverError::Singular)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn system(m: &[f64], f: &[f64]) -> LinearSystem {
        let d = f.len();
        LinearSystem::new(
            DMatrix::from_row_slice(d, d, m),
            DVector::from_row_slice(f),
            "test",
        )
        .unwrap()
    }

    #[test]
    fn identity_converges_in_one_iteration() {
        let sys = system(&[1.0, 0.0, 0.0, 1.0], &[3.0, -2.0]);
        let x0 = DVector::from_row_slice(&[0.3, 0.1]);
        for rep in [
            sor(&sys, &x0, 1.0, 1e-12, 50).unwrap(),
            ssor_solve(&sys, &x0, 1.0, 1e-12, 50).unwrap(),
            chebyshev_ssor(&sys, &x0, 1.0, 1e-12, 50).unwrap(),
        ] {
            assert_eq!(rep.iterations, 1, "{}", rep.method);
            assert_eq!(rep.solution, sys.rhs);
        }
    }

    #[test]
    fn spectral_radius_examples() {
        let diag = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.2]);
        assert!((spectral_radius(&diag).unwrap().rho - 0.5).abs() < 1e-10);
        let sym = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!((spectral_radius(&sym).unwrap().rho - 3.0).abs() < 1e-10);
        let flip = DMatrix::from_row_slice(2, 2, &[0.0, 0.7, 0.7, 0.0]);
        assert!((spectral_radius(&flip).unwrap().rho - 0.7).abs() < 1e-10);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        assert!((spectral_radius(&rot).unwrap().rho - 0.5).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_systems() {
        assert!(LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]),
            DVector::zeros(2),
            ""
        )
        .is_err());
        let zero_diag = system(&[0.0, 1.0, 1.0, 1.0], &[1.0, 1.0]);
        let x0 = DVector::zeros(2);
        assert!(matches!(
            ssor_solve(&zero_diag, &x0, 1.0, 1e-8, 10),
            Err(SolverError::ZeroDiagonal(0))
        ));
        let ok = system(&[2.0, 0.0, 0.0, 2.0], &[1.0, 1.0]);
        assert!(ssor_solve(&ok, &x0, 2.0, 1e-8, 10).is_err());
    }

    #[test]
    fn divergence_is_detected() {
        // indefinite system: SSOR does not converge
        let sys = system(&[1.0, 3.0, 3.0, 1.0], &[1.0, 0.0]);
        let r = ssor_solve(&sys, &DVector::zeros(2), 1.0, 1e-10, 200);
        assert!(matches!(r, Err(SolverError::Diverged { .. })));
    }

    #[test]
    fn csv_row_format() {
        let rep = SolveReport {
            solution: DVector::from_row_slice(&[-1.0, 0.5]),
            iterations: 6,
            residual: 1e-9,
            converged: true,
            method: "ssor".into(),
        };
        assert_eq!(rep.csv_row(), "ssor,6,1e-9,true,-1;0.5");
    }
}
