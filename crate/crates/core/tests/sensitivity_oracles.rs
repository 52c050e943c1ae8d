//! Sensitivities checked against finite differences: in θ on the same
//! noise path, and in the jump sizes along the flow generated by ϱ, which
//! is what the stochastic derivative D differentiates along.

use levydrift::drift_expr::DriftModel;
use levydrift::levy_noise::{sample_path, Jump, JumpWeight, NoiseConfig, NoisePath, WeightKind};
use levydrift::malliavin::{xi1_into, xi2_raw_into};
use levydrift::sde::{
    cumulative_jump_derivatives, euler_simulate, propagate_sensitivities, JumpPlacement,
    SensitivityState, SimConfig,
};

const MODELS: [(&str, &[&str], &[f64]); 4] = [
    ("-2*x + sin(x + t)", &["t"], &[1.0]),
    ("-a*x + atan(x^2 + b)", &["a", "b"], &[1.0, 1.0]),
    ("-a*x + atan(b + x^2) + c/sqrt(1 + x^2)", &["a", "b", "c"], &[2.0, 1.5, 0.1]),
    ("a*x^2 + b*x", &["a", "b"], &[-0.3, -0.8]),
];

fn noise(seed: u64, kind: WeightKind) -> NoisePath {
    sample_path(&NoiseConfig {
        horizon: 6.0,
        seed,
        scale: 0.02,
        weight: kind,
        ..NoiseConfig::default()
    })
    .unwrap()
}

fn cfg(placement: JumpPlacement) -> SimConfig {
    SimConfig {
        h: 0.5,
        n: 12,
        x0: 0.4,
        substeps: 3,
        placement,
    }
}

/// Move every jump size along du/dε = ϱ(u) by classical RK4.
fn flow(path: &NoisePath, w: &JumpWeight, eps: f64) -> NoisePath {
    let steps = 64;
    let hstep = eps / steps as f64;
    let r = |u: f64| w.eval(u).rho;
    let jumps = path
        .jumps()
        .iter()
        .map(|j| {
            let mut u = j.u;
            for _ in 0..steps {
                let k1 = r(u);
                let k2 = r(u + 0.5 * hstep * k1);
                let k3 = r(u + 0.5 * hstep * k2);
                let k4 = r(u + hstep * k3);
                u += hstep * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
            }
            Jump { t: j.t, u }
        })
        .collect();
    NoisePath::from_jumps(path.config().clone(), path.c_eff(), jumps).unwrap()
}

fn final_state(m: &DriftModel, th: &[f64], z: &NoisePath, c: &SimConfig) -> SensitivityState {
    let tr = euler_simulate(m, th, z, c).unwrap();
    propagate_sensitivities(m, th, z, &tr).unwrap().points.pop().unwrap()
}

fn close(label: &str, exact: f64, fd: f64, tol: f64) {
    assert!(
        (exact - fd).abs() <= tol * (1.0 + exact.abs()),
        "{label}: exact {exact}, difference quotient {fd}"
    );
}

#[test]
fn theta_sensitivities_match_same_path_differences() {
    for (src, params, th) in MODELS {
        let m = DriftModel::parse(src, params).unwrap();
        for placement in [JumpPlacement::StepEnd, JumpPlacement::ExactTime] {
            let z = noise(21, WeightKind::Quadratic);
            let c = cfg(placement);
            let tr = euler_simulate(&m, th, &z, &c).unwrap();
            let s = propagate_sensitivities(&m, th, &z, &tr).unwrap();
            let dstep = 1e-4;
            for j in 0..th.len() {
                let mut up = th.to_vec();
                up[j] += dstep;
                let mut dn = th.to_vec();
                dn[j] -= dstep;
                let tu = euler_simulate(&m, &up, &z, &c).unwrap();
                let td = euler_simulate(&m, &dn, &z, &c).unwrap();
                let su = propagate_sensitivities(&m, &up, &z, &tu).unwrap();
                let sd = propagate_sensitivities(&m, &dn, &z, &td).unwrap();
                for k in 0..=c.n {
                    let fd = (tu.states[k] - td.states[k]) / (2.0 * dstep);
                    close(&format!("{src} dX/dθ{j} at {k}"), s.points[k].theta_sens[j], fd, 1e-4);
                    let d = th.len();
                    for i in 0..d {
                        let fd2 = (su.points[k].theta_sens[i] - sd.points[k].theta_sens[i]) / (2.0 * dstep);
                        close("d2X/dθdθ", s.points[k].theta_hess[i * d + j], fd2, 1e-4);
                        let fd3 = (su.points[k].mal_theta[i] - sd.points[k].mal_theta[i]) / (2.0 * dstep);
                        close("D d2X/dθdθ", s.points[k].mal_theta_hess[i * d + j], fd3, 1e-4);
                    }
                }
            }
        }
    }
}

#[test]
fn stochastic_derivatives_match_flow_differences() {
    for kind in [WeightKind::Quadratic, WeightKind::Linear] {
        for (src, params, th) in MODELS {
            let m = DriftModel::parse(src, params).unwrap();
            for placement in [JumpPlacement::StepEnd, JumpPlacement::ExactTime] {
                let z = noise(5, kind);
                let w = z.config().weight();
                let c = cfg(placement);
                let s0 = final_state(&m, th, &z, &c);
                // small step: ϱϱ' is only C¹ at the ramp edges of the weight
                let eps = 1e-6;
                let sp = final_state(&m, th, &flow(&z, &w, eps), &c);
                let sm = final_state(&m, th, &flow(&z, &w, -eps), &c);
                let fd = |f: fn(&SensitivityState) -> f64| (f(&sp) - f(&sm)) / (2.0 * eps);
                let tol = 1e-5;
                close("DX", s0.mal, fd(|s| s.x), tol);
                close("D2X", s0.mal2, fd(|s| s.mal), tol);
                close("D3X", s0.mal3, fd(|s| s.mal2), tol);
                close("DZ->D2Z", s0.jumps.d2z, fd(|s| s.jumps.dz), tol);
                close("D2Z->D3Z", s0.jumps.d3z, fd(|s| s.jumps.d2z), tol);
                close("D delta", s0.jumps.d_delta, fd(|s| s.jumps.delta), tol);
                for j in 0..th.len() {
                    let fdj = |f: &dyn Fn(&SensitivityState) -> f64| (f(&sp) - f(&sm)) / (2.0 * eps);
                    close("D dX/dθ", s0.mal_theta[j], fdj(&|s| s.theta_sens[j]), tol);
                    close("D2 dX/dθ", s0.mal2_theta[j], fdj(&|s| s.mal_theta[j]), tol);
                }
                let cum = cumulative_jump_derivatives(&z, &[c.h * c.n as f64]);
                close("DZ sum", cum[0].dz, (flow(&z, &w, eps).jumps().iter().map(|j| j.u).sum::<f64>()
                    - flow(&z, &w, -eps).jumps().iter().map(|j| j.u).sum::<f64>()) / (2.0 * eps), tol);
            }
        }
    }
}

/// Ξ¹ and Ξ² rebuilt from the defining rule δ(F) = F·δ(1) − DF, with D
/// taken as a flow difference quotient of the path quantities.
#[test]
fn functionals_match_skorokhod_rule_with_numerical_d() {
    for (src, params, th) in MODELS {
        let m = DriftModel::parse(src, params).unwrap();
        let d = th.len();
        let z = noise(8, WeightKind::Quadratic);
        let w = z.config().weight();
        let c = cfg(JumpPlacement::StepEnd);
        let at = |eps: f64| final_state(&m, th, &flow(&z, &w, eps), &c);
        let s0 = at(0.0);
        let eps = 1e-3;
        let mut xi1 = vec![0.0; d];
        xi1_into(&s0, &mut xi1).unwrap();
        let mut xi2 = vec![0.0; d * d];
        xi2_raw_into(&s0, &mut xi2).unwrap();
        // score: δ(a_j / b)
        let ratio = |s: &SensitivityState, j: usize| s.theta_sens[j] / s.mal;
        for j in 0..d {
            let dr = (ratio(&at(eps), j) - ratio(&at(-eps), j)) / (2.0 * eps);
            let oracle = ratio(&s0, j) * s0.jumps.delta - dr;
            close("xi1", xi1[j], oracle, 1e-5);
        }
        // information: δ(W/b) with W = δ(a_j a_k / b) + H_jk, nested differences
        let inner = |e0: f64, j: usize, k: usize| {
            let s = at(e0);
            let g = |s: &SensitivityState| s.theta_sens[j] * s.theta_sens[k] / s.mal;
            let h = 1e-3;
            let dg = (g(&at(e0 + h)) - g(&at(e0 - h))) / (2.0 * h);
            (g(&s) * s.jumps.delta - dg + s.theta_hess[j * d + k]) / s.mal
        };
        for j in 0..d {
            for k in 0..d {
                let big = 2e-2;
                // fourth-order difference to keep the nested truncation error small
                let dw = (-inner(2.0 * big, j, k) + 8.0 * inner(big, j, k) - 8.0 * inner(-big, j, k)
                    + inner(-2.0 * big, j, k))
                    / (12.0 * big);
                let oracle = inner(0.0, j, k) * s0.jumps.delta - dw;
                close(&format!("{src} xi2[{j}{k}]"), xi2[j * d + k], oracle, 1e-4);
            }
        }
    }
}
