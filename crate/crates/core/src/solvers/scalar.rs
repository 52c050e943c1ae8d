use super::{check_finite, SolverError};

const GOLDEN: f64 = 0.381_966_011_250_105_1;

/// Minimize `f` on `[lo, hi]` by parabolic interpolation safeguarded with
/// golden-section steps (Brent's scheme). Returns `(argmin, value)`.
pub fn powell_min_1d<F>(mut f: F, bracket: (f64, f64), tol: f64) -> Result<(f64, f64), SolverError>
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = bracket;
    if !(a < b && a.is_finite() && b.is_finite()) || !(tol > 0.0) {
        return Err(SolverError::InvalidInput(format!(
            "bracket ({a}, {b}) with tolerance {tol}"
        )));
    }
    let mut eval = |x: f64| check_finite(f(x), &[x]);
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = eval(x)?;
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    for _ in 0..500 {
        let m = 0.5 * (a + b);
        let tol1 = 2.0 * f64::EPSILON * x.abs() + tol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            return Ok((x, fx));
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            e = d;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = eval(u)?;
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            (v, fv) = (w, fw);
            (w, fw) = (x, fx);
            (x, fx) = (u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv) = (w, fw);
                (w, fw) = (u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    Ok((x, fx))
}

/// Root of `q` by Steffensen's iteration
/// `x ← x − q(x)² / (q(x + q(x)) − q(x))`.
pub fn steffensen_root<F>(mut q: F, x0: f64, tol: f64, max_iter: usize) -> Result<f64, SolverError>
where
    F: FnMut(f64) -> f64,
{
    let mut x = x0;
    for _ in 0..=max_iter {
        let fx = check_finite(q(x), &[x])?;
        if fx.abs() <= tol {
            return Ok(x);
        }
        let denom = check_finite(q(x + fx), &[x + fx])? - fx;
        if denom == 0.0 || (denom.abs() < f64::MIN_POSITIVE) {
            return Err(SolverError::Stall(format!("difference quotient vanished at {x}")));
        }
        let next = x - fx * fx / denom;
        if !next.is_finite() {
            return Err(SolverError::Stall(format!("step overflowed at {x}")));
        }
        x = next;
    }
    Err(SolverError::MaxIter {
        iterations: max_iter,
    })
}
