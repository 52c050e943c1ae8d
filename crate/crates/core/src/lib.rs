//! Drift parameter estimation for stochastic differential equations driven
//! by truncated alpha-stable jump noise.

pub mod drift_expr;
pub mod levy_noise;
pub mod sde;
pub mod malliavin;
pub mod seeds;
pub mod solvers;
pub mod estimators;
pub mod efficiency;
