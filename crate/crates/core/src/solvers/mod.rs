//! Numerical machinery used by the estimators: scalar minimization and
//! root finding, relaxation methods for symmetric linear systems,
//! derivative-free descent, and a smoothed discrete-minimax solver.

mod linear;
mod minimax;
mod scalar;
mod search;

use thiserror::Error;

pub use linear::{
    chebyshev_ssor, direct_solve, sor, spectral_radius, ssor_iteration_matrix, ssor_solve,
    LinearSystem, SolveReport, SpectralRadius,
};
pub use minimax::{armijo_minimax, FnResiduals, MinimaxOptions, Residuals};
pub use scalar::{powell_min_1d, steffensen_root};
pub use search::{
    box_wilson, factorial_regression, hooke_jeeves, hybrid_minimize, BoxWilsonOptions, HookeJeevesOptions,
    HybridOptions,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("objective is not finite at {at:?}")]
    NonFinite { at: Vec<f64> },
    #[error("iteration stalled: {0}")]
    Stall(String),
    #[error("no convergence after {iterations} iterations")]
    MaxIter { iterations: usize },
    #[error("zero diagonal entry in row {0}")]
    ZeroDiagonal(usize),
    #[error("iteration diverged after {iterations} iterations")]
    Diverged { iterations: usize },
    #[error("spectral radius {0} is not below 1")]
    SpectralRadius(f64),
    #[error("matrix is singular")]
    Singular,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// How a multivariate search ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIter,
    /// Line search could not find a decrease; the point is the best found.
    Stalled,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIter => "max_iter",
            Termination::Stalled => "stalled",
        }
    }
}

/// Outcome of one phase of a multivariate search.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseReport {
    pub method: &'static str,
    /// Outer iterations: factorial rounds, exploratory cycles or descent steps.
    pub rounds: usize,
    pub evaluations: usize,
    /// Trial points along search lines (Box-Wilson, Armijo) or pattern moves.
    pub line_steps: usize,
    pub termination: Termination,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimReport {
    pub point: Vec<f64>,
    pub value: f64,
    pub phases: Vec<PhaseReport>,
}

impl OptimReport {
    pub fn rounds(&self) -> usize {
        self.phases.iter().map(|p| p.rounds).sum()
    }

    pub fn evaluations(&self) -> usize {
        self.phases.iter().map(|p| p.evaluations).sum()
    }

    pub fn line_steps(&self) -> usize {
        self.phases.iter().map(|p| p.line_steps).sum()
    }

    pub fn converged(&self) -> bool {
        self.phases
            .last()
            .is_some_and(|p| p.termination == Termination::Converged)
    }

    pub fn termination(&self) -> Termination {
        self.phases
            .last()
            .map_or(Termination::Converged, |p| p.termination)
    }

    pub fn method(&self) -> String {
        self.phases
            .iter()
            .map(|p| p.method)
            .collect::<Vec<_>>()
            .join("+")
    }
}

fn check_finite(v: f64, at: &[f64]) -> Result<f64, SolverError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(SolverError::NonFinite { at: at.to_vec() })
    }
}
