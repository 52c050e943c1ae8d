//! Relaxation solvers against a dense direct solve, and the derivative-free
//! searches against known minima.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use levydrift::solvers::{
    box_wilson, chebyshev_ssor, direct_solve, factorial_regression, hooke_jeeves, hybrid_minimize, ssor_solve,
    BoxWilsonOptions, HookeJeevesOptions, HybridOptions, LinearSystem,
};

fn spd(d: usize, entries: &[f64], shift: f64) -> LinearSystem {
    let a = DMatrix::from_iterator(d, d, entries.iter().copied().take(d * d));
    let m = &a * a.transpose() + DMatrix::identity(d, d) * shift;
    let f = DVector::from_iterator(d, entries.iter().rev().copied().take(d));
    LinearSystem::new(m, f, "random").unwrap()
}

fn systems() -> impl Strategy<Value = LinearSystem> {
    (1usize..=6, prop::collection::vec(-1.0f64..1.0, 36), 0.05f64..2.0)
        .prop_map(|(d, e, s)| spd(d, &e, s))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn relaxation_agrees_with_direct_solve(sys in systems(), omega in 0.6f64..1.6) {
        let exact = direct_solve(&sys).unwrap();
        let x0 = DVector::zeros(sys.dim());
        let s = ssor_solve(&sys, &x0, omega, 1e-13, 100_000).unwrap();
        let c = chebyshev_ssor(&sys, &x0, omega, 1e-13, 100_000).unwrap();
        prop_assert!(s.converged && c.converged);
        let scale = 1.0 + exact.amax();
        prop_assert!((&s.solution - &exact).amax() <= 1e-8 * scale, "{:?} vs {}", s, exact);
        prop_assert!((&c.solution - &exact).amax() <= 1e-8 * scale, "{:?} vs {}", c, exact);
        prop_assert!(c.iterations <= s.iterations, "chebyshev {} ssor {}", c.iterations, s.iterations);
    }

    #[test]
    fn regression_gradient_of_affine_functions(g in prop::collection::vec(-5.0f64..5.0, 3),
                                               x in prop::collection::vec(-2.0f64..2.0, 3)) {
        let gc = g.clone();
        let f = move |p: &[f64]| gc.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() + 1.0;
        let b = factorial_regression(&f, &x, &[0.25, 0.1, 0.5]).unwrap();
        for j in 0..3 {
            prop_assert!((b[j] - g[j]).abs() <= 1e-12 * (1.0 + g[j].abs()));
        }
    }

    #[test]
    fn hooke_jeeves_never_increases(a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let f = |p: &[f64]| (p[0] * p[0] - p[1]).powi(2) + (p[0] - 0.5).abs() + (3.0 * p[1]).sin();
        let r = hooke_jeeves(&f, &[a, b], &HookeJeevesOptions::default()).unwrap();
        prop_assert!(r.value <= f(&[a, b]));
    }
}

#[test]
fn pattern_moves_share_the_iteration_budget() {
    // from this start the pattern moves creep along the kink without end
    let f = |p: &[f64]| (p[0] * p[0] - p[1]).powi(2) + (p[0] - 0.5).abs() + (3.0 * p[1]).sin();
    let opts = HookeJeevesOptions::default();
    let r = hooke_jeeves(&f, &[-1.094, 0.541], &opts).unwrap();
    let phase = &r.phases[0];
    assert!(phase.rounds + phase.line_steps <= opts.max_iter);
    assert!(r.value < f(&[-1.094, 0.541]));
}

#[test]
fn hybrid_not_worse_than_box_wilson_on_bowls() {
    for seed in 0..20u64 {
        let c = [0.3 + 0.1 * seed as f64, 1.0 - 0.05 * seed as f64];
        let f = move |p: &[f64]| (p[0] - c[0]).powi(2) + 3.0 * (p[1] - c[1]).powi(2) + (p[0] * p[1]).cos();
        let bw = box_wilson(&f, &[0.0, 0.0], &BoxWilsonOptions::default()).unwrap();
        let hy = hybrid_minimize(&f, &[0.0, 0.0], &HybridOptions::default()).unwrap();
        assert!(hy.value <= bw.value + 1e-12, "seed {seed}: hybrid {} box-wilson {}", hy.value, bw.value);
    }
}
