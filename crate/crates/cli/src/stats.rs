//! Aggregates over repeated estimates.

use levydrift::estimators::Method;

/// Summary of one estimator over the successful runs. For vector
/// parameters the per-run error is the largest absolute component error.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub method: Method,
    pub runs: usize,
    pub failures: usize,
    pub mean: Vec<f64>,
    /// Mean of the per-run errors.
    pub mad: f64,
    /// Root mean square of the per-run errors.
    pub rmse: f64,
}

pub fn run_error(theta_hat: &[f64], truth: &[f64]) -> f64 {
    theta_hat
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// `estimates` holds one entry per run, `None` for failed runs.
pub fn aggregate(method: Method, estimates: &[Option<Vec<f64>>], truth: &[f64]) -> Aggregate {
    let ok: Vec<&Vec<f64>> = estimates.iter().flatten().collect();
    let n = ok.len() as f64;
    let d = truth.len();
    let mut mean = vec![0.0; d];
    let (mut mad, mut ms) = (0.0, 0.0);
    for t in &ok {
        for (m, v) in mean.iter_mut().zip(t.iter()) {
            *m += v;
        }
        let e = run_error(t, truth);
        mad += e;
        ms += e * e;
    }
    Aggregate {
        method,
        runs: ok.len(),
        failures: estimates.len() - ok.len(),
        mean: mean.iter().map(|m| m / n).collect(),
        mad: mad / n,
        rmse: (ms / n).sqrt(),
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_and_vector_errors() {
        let m: Method = "L2".parse().unwrap();
        let a = aggregate(m, &[Some(vec![1.5]), None, Some(vec![0.0])], &[1.0]);
        assert_eq!((a.runs, a.failures), (2, 1));
        assert_eq!(a.mean, vec![0.75]);
        assert_eq!(a.mad, 0.75);
        assert!((a.rmse - (1.25f64 / 2.0).sqrt()).abs() < 1e-15);
        let v = aggregate(m, &[Some(vec![1.0, 3.0]), Some(vec![1.5, 2.0])], &[1.0, 2.0]);
        assert_eq!(v.mad, 0.75);
        // one run: the aggregate is that run
        let one = aggregate(m, &[Some(vec![1.25, 1.5])], &[1.0, 2.0]);
        assert_eq!(one.mean, vec![1.25, 1.5]);
        assert_eq!(one.mad, 0.5);
        assert_eq!(one.rmse, 0.5);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
