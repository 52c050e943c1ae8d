//! Score and information functionals built from the sensitivity state.
//!
//! With `a = ∂θX`, `b = DX`, `c = D∂θX`, `e = D²X` and `δ = δ(1)`, the
//! Skorokhod integral of a weight `G` is `δ(G) = Gδ − DG`, and
//!
//! ```text
//! Ξ¹_j  = δ(a_j / b) = a_j δ/b + a_j e/b² − c_j/b
//! Ξ²_jk = δ( (δ(a_j a_k / b) + ∂²θjθk X) / b )
//! ```
//!
//! so that `E[Ξ¹ | X = y] = ∂θ log p(y)` and
//! `E[Ξ² | X = y] − E[Ξ¹|y] E[Ξ¹|y]ᵀ = ∂²θθ log p(y)`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::sde::{SensitivityPath, SensitivityState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MalliavinError {
    #[error("degenerate path at t = {t}: DX = 0 (no effective jump)")]
    Degenerate { t: f64 },
    #[error("non-finite functional at t = {t}")]
    NonFinite { t: f64 },
    #[error("grid index {0} is beyond the sensitivity path")]
    OutOfRange(usize),
}

/// Score and information functionals at one grid time.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSample {
    pub xi1: DVector<f64>,
    pub xi2: DMatrix<f64>,
    pub t: f64,
    pub theta: Vec<f64>,
}

fn nondegenerate(s: &SensitivityState) -> Result<f64, MalliavinError> {
    if s.mal == 0.0 {
        return Err(MalliavinError::Degenerate { t: s.t });
    }
    Ok(s.mal)
}

fn finite(v: &[f64], t: f64) -> Result<(), MalliavinError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(MalliavinError::NonFinite { t })
    }
}

/// Ξ¹ into `out` (length d).
pub fn xi1_into(s: &SensitivityState, out: &mut [f64]) -> Result<(), MalliavinError> {
    let b = nondegenerate(s)?;
    let w = s.jumps.delta / b + s.mal2 / (b * b);
    for (o, (a, c)) in out.iter_mut().zip(s.theta_sens.iter().zip(&s.mal_theta)) {
        *o = a * w - c / b;
    }
    finite(out, s.t)
}

/// Unsymmetrized Ξ² into `out` (row-major d×d).
pub fn xi2_raw_into(s: &SensitivityState, out: &mut [f64]) -> Result<(), MalliavinError> {
    let b = nondegenerate(s)?;
    let d = s.dim();
    let (delta, ddelta) = (s.jumps.delta, s.jumps.d_delta);
    let (e, e3) = (s.mal2, s.mal3);
    let (b2, b3) = (b * b, b * b * b);
    let outer = delta / b + e / b2;
    let a = &s.theta_sens;
    let c = &s.mal_theta;
    let c2 = &s.mal2_theta;
    for j in 0..d {
        for k in 0..d {
            let p = a[j] * a[k];
            let dp = c[j] * a[k] + a[j] * c[k];
            let d2p = c2[j] * a[k] + 2.0 * c[j] * c[k] + a[j] * c2[k];
            // δ(P/b) and its stochastic derivative
            let int = p * delta / b - dp / b + p * e / b2;
            let d_int = dp * delta / b + p * ddelta / b - d2p / b
                + 2.0 * dp * e / b2
                + p * (e3 - delta * e) / b2
                - 2.0 * p * e * e / b3;
            let h = s.theta_hess[j * d + k];
            let dh = s.mal_theta_hess[j * d + k];
            out[j * d + k] = -(d_int + dh) / b + outer * (int + h);
        }
    }
    finite(out, s.t)
}

/// Symmetrized Ξ² into `out`; returns the relative asymmetry of the raw
/// matrix, `‖R − Rᵀ‖ / ‖R‖`.
pub fn xi2_into(s: &SensitivityState, out: &mut [f64]) -> Result<f64, MalliavinError> {
    xi2_raw_into(s, out)?;
    let d = s.dim();
    let (mut skew, mut norm) = (0.0, 0.0);
    for j in 0..d {
        for k in 0..d {
            norm += out[j * d + k] * out[j * d + k];
        }
        for k in j + 1..d {
            let (u, v) = (out[j * d + k], out[k * d + j]);
            skew += 2.0 * (u - v) * (u - v);
            let m = 0.5 * (u + v);
            out[j * d + k] = m;
            out[k * d + j] = m;
        }
    }
    Ok(if norm > 0.0 { (skew / norm).sqrt() } else { 0.0 })
}

fn point(s: &SensitivityPath, k: usize) -> Result<&SensitivityState, MalliavinError> {
    s.at(k).ok_or(MalliavinError::OutOfRange(k))
}

/// Score functional at grid index `k`.
pub fn xi1(s: &SensitivityPath, k: usize) -> Result<DVector<f64>, MalliavinError> {
    let p = point(s, k)?;
    let mut v = DVector::zeros(p.dim());
    xi1_into(p, v.as_mut_slice())?;
    Ok(v)
}

/// Information functional at grid index `k`, symmetrized.
pub fn xi2(s: &SensitivityPath, k: usize) -> Result<DMatrix<f64>, MalliavinError> {
    let p = point(s, k)?;
    let d = p.dim();
    let mut buf = vec![0.0; d * d];
    xi2_into(p, &mut buf)?;
    Ok(DMatrix::from_row_slice(d, d, &buf))
}

pub fn score_sample(
    s: &SensitivityPath,
    k: usize,
    theta: &[f64],
) -> Result<ScoreSample, MalliavinError> {
    Ok(ScoreSample {
        xi1: xi1(s, k)?,
        xi2: xi2(s, k)?,
        t: point(s, k)?.t,
        theta: theta.to_vec(),
    })
}
