//! Acceptance criteria 1-6. Run with
//! `cargo test --release -p levydrift-cli --test acceptance -- --nocapture`
//! to see one PASS/FAIL line per criterion.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use levydrift::drift_expr::{DriftModel, Partial};
use levydrift::estimators::{build_polynomial_normal_system, LossNorm, Method, ResidualModel};
use levydrift::levy_noise::{sample_jumps, sample_path, Jump, JumpWeight, NoiseConfig, NoisePath};
use levydrift::malliavin::{xi1_into, xi2_into, MalliavinError};
use levydrift::sde::{
    euler_simulate, propagate_sensitivities, simulate_sensitivities, simulate_states, CompiledDrift, EvalBuffer,
    JumpPlacement, PathSpec, SensitivityState, SimConfig,
};
use levydrift::seeds::stream_rng;
use levydrift::solvers::{
    armijo_minimax, chebyshev_ssor, direct_solve, ssor_solve, LinearSystem, MinimaxOptions,
};
use levydrift_cli::bench::{run_linear_bench, run_optim_bench};
use levydrift_cli::config::{EfficiencySection, ExperimentConfig, ModelConfig};
use levydrift_cli::run::{run_efficiencies, run_estimates};
use levydrift_cli::stats::{median, Aggregate};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

struct Verdict {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
    secs: f64,
}

fn timed(id: u8, name: &'static str, f: impl FnOnce() -> (bool, String)) -> Verdict {
    let t = Instant::now();
    let (pass, detail) = f();
    let v = Verdict {
        id,
        name,
        pass,
        detail,
        secs: t.elapsed().as_secs_f64(),
    };
    println!(
        "criterion {} ({}): {} in {:.1}s\n    {}",
        v.id,
        v.name,
        if v.pass { "PASS" } else { "FAIL" },
        v.secs,
        v.detail.replace('\n', "\n    ")
    );
    v
}

fn methods(names: &[&str]) -> Vec<Method> {
    names.iter().map(|s| s.parse().unwrap()).collect()
}

// ---------------------------------------------------------------- 1

fn linear_solvers() -> (bool, String) {
    let cfg = ExperimentConfig::default();
    let res = match run_linear_bench(&cfg) {
        Ok(r) => r,
        Err(e) => return (false, format!("bench failed: {e}")),
    };
    let med = |m| res.median_iterations(m);
    let (sor, ssor, cheb) = (med("sor"), med("ssor"), med("chebyshev_ssor"));
    let worst = ["sor", "ssor", "chebyshev_ssor"]
        .iter()
        .flat_map(|m| res.rows.iter().filter(move |r| r.case == "polynomial" && r.method == *m))
        .map(|r| if r.error.is_some() || !r.converged { f64::INFINITY } else { r.max_error })
        .fold(0.0, f64::max);
    let pass = worst <= 1e-5 && cheb <= ssor && ssor <= sor && cheb <= 8.0;
    (
        pass,
        format!(
            "median iterations SOR {sor} SSOR {ssor} Chebyshev {cheb}; largest distance to direct solve {worst:.2e}; {} divergent paths redrawn",
            res.skipped
        ),
    )
}

// ---------------------------------------------------------------- 2

fn searches() -> (bool, String) {
    let cfg = ExperimentConfig::default();
    let rows = match run_optim_bench(&cfg) {
        Ok(r) => r,
        Err(e) => return (false, format!("bench failed: {e}")),
    };
    let seeds = cfg.bench.optim.seeds;
    let truth = &cfg.bench.optim.theta;
    let (mut close, mut fewer) = (0, 0);
    let (mut hy_rounds, mut hj_rounds) = (vec![], vec![]);
    for s in 0..seeds as u64 {
        let get = |m: &str| rows.iter().find(|r| r.seed == s && r.method == m).and_then(|r| r.report.as_ref().ok());
        let (Some(hy), Some(hj)) = (get("hybrid"), get("hooke_jeeves")) else {
            continue;
        };
        close += hy.point.iter().zip(truth).all(|(a, b)| (a - b).abs() <= 0.05) as usize;
        fewer += (hy.rounds() < hj.rounds()) as usize;
        hy_rounds.push(hy.rounds() as f64);
        hj_rounds.push(hj.rounds() as f64);
    }
    let pass = close * 10 >= 8 * seeds && fewer * 10 >= 7 * seeds;
    (
        pass,
        format!(
            "hybrid within 0.05 on {close}/{seeds} seeds (need 80%); fewer rounds than Hooke-Jeeves on {fewer}/{seeds} (need 70%); median rounds hybrid {} vs Hooke-Jeeves {}",
            median(&hy_rounds),
            median(&hj_rounds)
        ),
    )
}

// ---------------------------------------------------------------- 3

fn scalar_experiment() -> (bool, String) {
    let mut cfg = ExperimentConfig {
        repetitions: 300,
        ..ExperimentConfig::default()
    };
    cfg.estimate.methods = methods(&["L1", "L2", "Linf", "OS-L1", "OS-L2", "OS-Linf", "Rao-L1", "Rao-Linf"]);
    let model = cfg.validate().unwrap();
    let run = match run_estimates(&cfg, &model) {
        Ok(r) => r,
        Err(e) => return (false, format!("estimation failed: {e}")),
    };
    let aggs = run.aggregates(&cfg.model.theta);
    let mad = |name: &str| aggs.iter().find(|a| a.method.to_string() == name).map_or(f64::NAN, |a| a.mad);
    let mut lines = vec![aggs
        .iter()
        .map(|a: &Aggregate| format!("{} {:.4} ({} failed)", a.method, a.mad, a.failures))
        .collect::<Vec<_>>()
        .join(", ")];
    let mut pass = true;
    for p in ["L1", "L2", "Linf"] {
        let ok = mad(&format!("OS-{p}")) < mad(p);
        pass &= ok;
        lines.push(format!("(a) MAD OS-{p} < {p}: {ok}"));
    }
    for p in ["L1", "Linf"] {
        let ok = mad(&format!("Rao-{p}")) <= mad(p);
        pass &= ok;
        lines.push(format!("(b) MAD Rao-{p} <= {p}: {ok}"));
    }

    cfg.estimate.methods = methods(&["L1", "OS-L1", "Linf", "OS-Linf"]);
    cfg.efficiency = Some(EfficiencySection {
        paths: 100,
        ..EfficiencySection::default()
    });
    let eff = match run_efficiencies(&cfg, &model) {
        Ok(r) => r,
        Err(e) => return (false, format!("efficiency setup failed: {e}")),
    };
    let recip = |name: &str| {
        eff.iter()
            .find(|(m, _)| m.to_string() == name)
            .and_then(|(_, r)| r.as_ref().ok())
            .map_or(f64::NAN, |r| r.reciprocal[0])
    };
    for (_, r) in &eff {
        if let Err(e) = r {
            lines.push(format!("efficiency failure: {e}"));
        }
    }
    for p in ["L1", "Linf"] {
        let (os, raw) = (recip(&format!("OS-{p}")), recip(p));
        let ok = os > raw;
        pass &= ok;
        lines.push(format!("(c) reciprocal efficiency OS-{p} {os:.4} > {p} {raw:.4}: {ok}"));
    }
    (pass, lines.join("\n"))
}

// ---------------------------------------------------------------- 4

fn multi_parameter(drift: &str, params: &[&str], theta: &[f64], n: usize) -> (Vec<Aggregate>, String) {
    let mut cfg = ExperimentConfig {
        repetitions: 300,
        model: ModelConfig {
            drift: drift.into(),
            params: params.iter().map(|s| s.to_string()).collect(),
            theta: theta.to_vec(),
            start: theta.iter().map(|v| v + 0.2).collect(),
        },
        ..ExperimentConfig::default()
    };
    cfg.sim.n = n;
    cfg.estimate.methods = methods(&["L1", "L2", "Linf"]);
    let model = cfg.validate().unwrap();
    let aggs = run_estimates(&cfg, &model).unwrap().aggregates(theta);
    let text = aggs
        .iter()
        .map(|a| format!("{} mean {:.4?} MAD {:.4} ({} failed)", a.method, a.mean, a.mad, a.failures))
        .collect::<Vec<_>>()
        .join("; ");
    (aggs, text)
}

fn consistency() -> (bool, String) {
    let mut pass = true;
    let mut lines = vec![];
    let cases: [(&str, &[&str], &[f64], usize); 2] = [
        ("-2*x + atan(x^2 + a) + b/sqrt(1 + x^2)", &["a", "b"], &[1.0, 1.0], 2000),
        ("a*x^3 + b*x^2 + c*x", &["a", "b", "c"], &[-0.2, -0.3, -0.6], 1000),
    ];
    for (i, (drift, params, theta, n)) in cases.into_iter().enumerate() {
        let (aggs, text) = multi_parameter(drift, params, theta, n);
        lines.push(format!("{drift}: {text}"));
        for a in aggs.iter().take(2) {
            let ok = a.runs > 0 && a.mean.iter().zip(theta).all(|(m, t)| (m - t).abs() <= 0.1);
            pass &= ok;
            if !ok {
                lines.push(format!("  {} mean outside 0.1", a.method));
            }
        }
        if i == 0 {
            let ok = aggs[0].mad < aggs[2].mad;
            pass &= ok;
            lines.push(format!("  MAD L1 < Linf: {ok}"));
        }
    }
    (pass, lines.join("\n"))
}

// ---------------------------------------------------------------- 5

fn symbolic_derivatives() -> Result<String, String> {
    // every node type: constants, x, parameters, + - * / ^, unary minus, each function
    let src = "a*sin(x) - cos(b*x)/(2 + x^2) + atan(a*x) * exp(-x/3) + log(1 + b^2 + x^2) + sqrt(3 + a*x) - abs(x - b)^1.5 + x^-1";
    let m = DriftModel::parse(src, &["a", "b"]).map_err(|e| e.to_string())?;
    let f = |p: &Partial, x: f64, th: &[f64]| m.eval_partial(p, x, th).unwrap();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for &(x, a, b) in &[(0.7, 0.3, -0.4), (1.9, -0.2, 0.8), (-0.6, 0.5, 0.1), (2.5, 0.1, -1.3)] {
        let th = [a, b];
        // first and second partials against central differences of the order below
        let lower = [Partial::value(), Partial::dx(1), Partial::new(0, &[0]), Partial::new(0, &[1])];
        for base in &lower {
            for wrt in 0..3 {
                let (xo, mut ps) = (base.x_order(), base.params().to_vec());
                let target = if wrt == 0 {
                    Partial::new(xo + 1, &ps)
                } else {
                    ps.push(wrt - 1);
                    Partial::new(xo, &ps)
                };
                let h = 1e-5;
                let (up, dn) = if wrt == 0 {
                    (f(base, x + h, &th), f(base, x - h, &th))
                } else {
                    let mut tu = th;
                    let mut td = th;
                    tu[wrt - 1] += h;
                    td[wrt - 1] -= h;
                    (f(base, x, &tu), f(base, x, &td))
                };
                let fd = (up - dn) / (2.0 * h);
                let exact = f(&target, x, &th);
                let rel = (exact - fd).abs() / exact.abs().max(1.0);
                worst = worst.max(rel);
                checked += 1;
                if rel > 1e-6 {
                    return Err(format!("{target} at x={x}: exact {exact}, difference {fd}"));
                }
            }
        }
    }
    Ok(format!("symbolic partials: {checked} checks, worst relative gap {worst:.1e}"))
}

fn test_noise(seed: u64) -> NoisePath {
    sample_path(&NoiseConfig {
        horizon: 6.0,
        seed,
        scale: 0.02,
        ..NoiseConfig::default()
    })
    .unwrap()
}

fn test_sim() -> SimConfig {
    SimConfig {
        h: 0.5,
        n: 12,
        x0: 0.4,
        substeps: 3,
        placement: JumpPlacement::StepEnd,
    }
}

fn theta_sensitivity() -> Result<String, String> {
    let m = DriftModel::parse("-a*x + atan(b + x^2) + c/sqrt(1 + x^2)", &["a", "b", "c"]).unwrap();
    let th = [2.0, 1.5, 0.1];
    let (z, c) = (test_noise(3), test_sim());
    let tr = euler_simulate(&m, &th, &z, &c).unwrap();
    let s = propagate_sensitivities(&m, &th, &z, &tr).unwrap();
    let mut worst = 0.0f64;
    for j in 0..3 {
        let h = 1e-5;
        let mut up = th;
        let mut dn = th;
        up[j] += h;
        dn[j] -= h;
        let tu = euler_simulate(&m, &up, &z, &c).unwrap();
        let td = euler_simulate(&m, &dn, &z, &c).unwrap();
        for k in 0..=c.n {
            let fd = (tu.states[k] - td.states[k]) / (2.0 * h);
            let exact = s.points[k].theta_sens[j];
            let rel = (exact - fd).abs() / exact.abs().max(1e-3);
            worst = worst.max(rel);
            if rel > 1e-4 {
                return Err(format!("dX/dθ{j} at step {k}: {exact} vs {fd}"));
            }
        }
    }
    Ok(format!("parameter sensitivities: worst relative gap {worst:.1e}"))
}

/// Move every jump size along du/dε = ϱ(u) by classical RK4.
fn flow(path: &NoisePath, w: &JumpWeight, eps: f64) -> NoisePath {
    let steps = 64;
    let hs = eps / steps as f64;
    let r = |u: f64| w.eval(u).rho;
    let jumps = path
        .jumps()
        .iter()
        .map(|j| {
            let mut u = j.u;
            for _ in 0..steps {
                let k1 = r(u);
                let k2 = r(u + 0.5 * hs * k1);
                let k3 = r(u + 0.5 * hs * k2);
                let k4 = r(u + hs * k3);
                u += hs * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
            }
            Jump { t: j.t, u }
        })
        .collect();
    NoisePath::from_jumps(path.config().clone(), path.c_eff(), jumps).unwrap()
}

fn d_operator_chain() -> Result<String, String> {
    let m = DriftModel::parse("-a*x + atan(x^2 + b)", &["a", "b"]).unwrap();
    let th = [1.0, 1.0];
    let (z, c) = (test_noise(5), test_sim());
    let w = z.config().weight();
    let last = |z: &NoisePath| -> SensitivityState {
        let tr = euler_simulate(&m, &th, z, &c).unwrap();
        propagate_sensitivities(&m, &th, z, &tr).unwrap().points.pop().unwrap()
    };
    let s0 = last(&z);
    let eps = 1e-6;
    let (sp, sm) = (last(&flow(&z, &w, eps)), last(&flow(&z, &w, -eps)));
    let fd = |f: fn(&SensitivityState) -> f64| (f(&sp) - f(&sm)) / (2.0 * eps);
    let checks: [(&str, f64, f64); 5] = [
        ("DX", s0.mal, fd(|s| s.x)),
        ("D2X", s0.mal2, fd(|s| s.mal)),
        ("D3X", s0.mal3, fd(|s| s.mal2)),
        ("D2Z", s0.jumps.d2z, fd(|s| s.jumps.dz)),
        ("D3Z", s0.jumps.d3z, fd(|s| s.jumps.d2z)),
    ];
    for (name, exact, diff) in checks {
        if (exact - diff).abs() > 1e-5 * (1.0 + exact.abs()) {
            return Err(format!("{name}: {exact} vs flow difference {diff}"));
        }
    }
    Ok("D chain DZ -> D2Z -> D3Z and DX -> D2X -> D3X matches flow differences".into())
}

fn no_jump_path() -> Result<String, String> {
    let m = DriftModel::parse("-a*x", &["a"]).unwrap();
    let c = test_sim();
    let cfg = NoiseConfig {
        horizon: c.h * c.n as f64,
        ..NoiseConfig::default()
    };
    let z = NoisePath::from_jumps(cfg, 0.0, vec![]).unwrap();
    let tr = euler_simulate(&m, &[1.0], &z, &c).unwrap();
    let s = propagate_sensitivities(&m, &[1.0], &z, &tr).unwrap();
    let last = s.points.last().unwrap();
    if last.jumps.delta != 0.0 {
        return Err(format!("δ(1) = {} on a jump-free path", last.jumps.delta));
    }
    match xi1_into(last, &mut [0.0]) {
        Err(MalliavinError::Degenerate { .. }) => Ok("jump-free path: δ(1) = 0 and Ξ reports degeneracy".into()),
        other => Err(format!("expected a degenerate-path error, got {other:?}")),
    }
}

fn random_spd_systems() -> Result<String, String> {
    let mut rng = stream_rng(7, "acceptance-spd", 0);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let d = rng.random_range(2..=8);
        let g = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let a = g.transpose() * &g + DMatrix::identity(d, d) * (0.5 + d as f64 * rng.random::<f64>());
        let b = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
        let sys = LinearSystem::new(a, b, "random").unwrap();
        let exact = direct_solve(&sys).unwrap();
        let omega = rng.random_range(0.8..1.5);
        let x0 = DVector::zeros(d);
        for r in [ssor_solve(&sys, &x0, omega, 1e-13, 100_000), chebyshev_ssor(&sys, &x0, omega, 1e-13, 100_000)] {
            let r = r.map_err(|e| format!("system {i}: {e}"))?;
            let err = (&r.solution - &exact).amax();
            worst = worst.max(err);
            if err > 1e-8 {
                return Err(format!("system {i} ({}): distance {err:e} to the direct solve", r.method));
            }
        }
    }
    Ok(format!("100 random SPD systems: SSOR and Chebyshev within {worst:.1e} of direct"))
}

/// Minimize `f` over a box by repeated grid refinement.
fn grid_argmin(f: &dyn Fn(&[f64]) -> f64, center: &[f64], mut half: f64, levels: usize) -> Vec<f64> {
    let d = center.len();
    let k = 21usize;
    let mut c = center.to_vec();
    for _ in 0..levels {
        let mut best = (f64::INFINITY, c.clone());
        for idx in 0..k.pow(d as u32) {
            let mut p = c.clone();
            let mut r = idx;
            for v in p.iter_mut() {
                *v += half * (2.0 * (r % k) as f64 / (k - 1) as f64 - 1.0);
                r /= k;
            }
            let v = f(&p);
            if v < best.0 {
                best = (v, p);
            }
        }
        c = best.1;
        half *= 0.2;
    }
    c
}

fn normal_system_vs_grid() -> Result<String, String> {
    let m = DriftModel::parse("a*x^2 + b*x", &["a", "b"]).unwrap();
    let z = sample_path(&NoiseConfig {
        horizon: 300.0,
        seed: 4,
        u_max: 0.5,
        scale: 0.0056,
        ..NoiseConfig::default()
    })
    .unwrap();
    let sim = SimConfig {
        n: 300,
        x0: 0.0,
        ..SimConfig::default()
    };
    let tr = euler_simulate(&m, &[-1.0, -1.0], &z, &sim).map_err(|e| e.to_string())?;
    let sys = build_polynomial_normal_system(&tr, 2, 1.0).map_err(|e| e.to_string())?;
    let exact = direct_solve(&sys).unwrap();
    let rm = ResidualModel::new(&m, &tr).unwrap();
    let grid = grid_argmin(&|t| rm.loss(t, LossNorm::L2).unwrap(), &[-1.0, -1.0], 1.0, 7);
    let gap = (exact[0] - grid[0]).abs().max((exact[1] - grid[1]).abs());
    if gap > 1e-4 {
        return Err(format!("normal system {exact:?} vs grid {grid:?}"));
    }
    Ok(format!("normal system vs grid argmin of L2 loss: gap {gap:.1e}"))
}

fn minimax_vs_grid() -> Result<String, String> {
    let m = DriftModel::parse("-2*x + sin(x + t)", &["t"]).unwrap();
    let z = sample_path(&NoiseConfig {
        horizon: 200.0,
        seed: 9,
        scale: 0.0056,
        ..NoiseConfig::default()
    })
    .unwrap();
    let sim = SimConfig {
        n: 200,
        ..SimConfig::default()
    };
    let tr = euler_simulate(&m, &[1.0], &z, &sim).unwrap();
    let rm = ResidualModel::new(&m, &tr).unwrap();
    let opts = MinimaxOptions {
        anneal: true,
        ..MinimaxOptions::default()
    };
    let rep = armijo_minimax(&rm, &[0.5], 1e-3, &opts).map_err(|e| e.to_string())?;
    let loss = |t: &[f64]| rm.loss(t, LossNorm::Linf).unwrap();
    let grid = grid_argmin(&loss, &[1.0], 1.0, 8);
    let gap = (rep.point[0] - grid[0]).abs();
    let excess = loss(&rep.point) - loss(&grid);
    if gap > 1e-4 && excess > 1e-8 {
        return Err(format!("minimax {} vs grid {} (loss excess {excess:e})", rep.point[0], grid[0]));
    }
    Ok(format!("Armijo minimax vs grid scan of L-infinity loss: gap {gap:.1e}"))
}

fn cli_determinism() -> Result<String, String> {
    let cfg = "repetitions = 2\n[sim]\nn = 200\n[estimate]\nmethods = [\"L1\", \"OS-L2\", \"Linf\"]\n[bridge]\npool_size = 20000\n";
    let outputs: Vec<Vec<(String, Vec<u8>)>> = ["1", "3"]
        .iter()
        .map(|w| {
            let dir = tempfile::tempdir().unwrap();
            fs::write(dir.path().join("c.toml"), cfg).unwrap();
            for cmd in ["simulate", "estimate"] {
                let st = Command::new(env!("CARGO_BIN_EXE_levydrift"))
                    .current_dir(dir.path())
                    .args(["--config", "c.toml", "--out", "out", "--seed", "42", "--workers", w, cmd])
                    .output()
                    .unwrap();
                assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
            }
            read_dir(&dir.path().join("out"))
        })
        .collect();
    if outputs[0] != outputs[1] {
        return Err("outputs differ between runs".into());
    }
    Ok(format!("CLI: {} output files byte-identical across runs", outputs[0].len()))
}

fn read_dir(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn property_suite() -> (bool, String) {
    let t = Instant::now();
    let checks: [fn() -> Result<String, String>; 8] = [
        symbolic_derivatives,
        theta_sensitivity,
        d_operator_chain,
        no_jump_path,
        random_spd_systems,
        normal_system_vs_grid,
        minimax_vs_grid,
        cli_determinism,
    ];
    let mut pass = true;
    let mut lines = vec![];
    for c in checks {
        match c() {
            Ok(s) => lines.push(s),
            Err(e) => {
                pass = false;
                lines.push(format!("FAILED: {e}"));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    pass &= secs < 60.0;
    lines.push(format!("suite time {secs:.1}s (limit 60s)"));
    (pass, lines.join("\n"))
}

// ---------------------------------------------------------------- 6

/// 8-point Gauss-Legendre nodes and weights on [-1, 1].
const GL: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
];

/// Log characteristic function per unit time of the symmetric jump law,
/// `2·scale·∫(cos ξu − 1) u^{−1−α} du` over `[eps_cut, u_max]`, integrated
/// in `s = ln u`.
struct LevyExponent {
    nodes: Vec<(f64, f64)>,
}

impl LevyExponent {
    fn new(noise: &NoiseConfig) -> LevyExponent {
        let (lo, hi) = (noise.eps_cut.ln(), noise.u_max.ln());
        let panels = 400;
        let w = (hi - lo) / panels as f64;
        let mut nodes = Vec::with_capacity(panels * GL.len());
        for p in 0..panels {
            let mid = lo + (p as f64 + 0.5) * w;
            for (x, wt) in GL {
                let s = mid + 0.5 * w * x;
                let u = s.exp();
                nodes.push((u, 2.0 * noise.scale * 0.5 * w * wt * u.powf(-noise.alpha)));
            }
        }
        LevyExponent { nodes }
    }

    fn eval(&self, xi: f64) -> f64 {
        self.nodes
            .iter()
            .map(|&(u, w)| {
                let s = (0.5 * xi * u).sin();
                -2.0 * s * s * w
            })
            .sum()
    }
}

/// `P(|X_h − y| ≤ r)` for the Euler scheme of `dX = −a X dt + dZ` with
/// `m` substeps and step-end jumps: `X_h = βᵐx + Σ_s β^{m−1−s}(c dt + ΔZ_s)`
/// with `β = 1 − a dt`, so the law follows from the jump characteristic
/// function by Fourier inversion against the box kernel.
fn box_probability(psi: &LevyExponent, noise: &NoiseConfig, a: f64, x: f64, y: f64, r: f64, m: usize, h: f64) -> f64 {
    let dt = h / m as f64;
    let beta = 1.0 - a * dt;
    let weights: Vec<f64> = (0..m).map(|s| beta.powi((m - 1 - s) as i32)).collect();
    let mean = beta.powi(m as i32) * x + noise.effective_drift() * dt * weights.iter().sum::<f64>();
    let shift = y - mean;
    let xi_max = 90.0;
    let steps = 18_000;
    let dxi = xi_max / steps as f64;
    let integrand = |xi: f64| {
        if xi == 0.0 {
            return r;
        }
        let log_phi: f64 = weights.iter().map(|&w| dt * psi.eval(w * xi)).sum();
        log_phi.exp() * (xi * shift).cos() * (xi * r).sin() / xi
    };
    let mut sum = integrand(0.0) + integrand(xi_max);
    for k in 1..steps {
        sum += integrand(k as f64 * dxi) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    2.0 / std::f64::consts::PI * sum * dxi / 3.0
}

fn information_identity() -> (bool, String) {
    let noise = NoiseConfig {
        scale: 0.0056,
        ..NoiseConfig::default()
    };
    let model = DriftModel::parse("-a*x", &["a"]).unwrap();
    let drift = CompiledDrift::new(&model).unwrap();
    let weight = noise.weight();
    let (a, x, h, substeps, r, target_paths) = (1.0, 1.0, 1.0, 20usize, 0.01, 2000usize);
    let y = (1.0 - a * h / substeps as f64).powi(substeps as i32) * x;

    // bridge side
    let mut rng = stream_rng(2024, "information-identity", 0);
    let (mut jumps, mut states) = (Vec::new(), Vec::new());
    let mut buf = EvalBuffer::default();
    let mut st = SensitivityState::new(x, 1);
    let (mut x1, mut x2) = ([0.0], [0.0]);
    let (mut v1, mut v2) = (Vec::new(), Vec::new());
    let (mut simulated, mut inside, mut degenerate) = (0usize, 0usize, 0usize);
    while v1.len() < target_paths {
        sample_jumps(&mut rng, &noise, h, &mut jumps);
        simulated += 1;
        let spec = PathSpec {
            jumps: &jumps,
            c_eff: noise.effective_drift(),
            h,
            n: 1,
            substeps,
            placement: JumpPlacement::StepEnd,
        };
        simulate_states(&drift, &mut buf, &[a], x, &spec, &mut states).unwrap();
        if (states[1] - y).abs() > r {
            continue;
        }
        inside += 1;
        simulate_sensitivities(&drift, &mut buf, &[a], x, &spec, &weight, &mut st, |_, _| {}).unwrap();
        if xi1_into(&st, &mut x1).is_err() || xi2_into(&st, &mut x2).is_err() {
            degenerate += 1;
            continue;
        }
        v1.push(x1[0]);
        v2.push(x2[0]);
    }
    let n = v1.len() as f64;
    let m1 = v1.iter().sum::<f64>() / n;
    let m2 = v2.iter().sum::<f64>() / n;
    let bridge = m2 - m1 * m1;
    // delta method: influence of one path on m2 − m1²
    let infl: Vec<f64> = v1.iter().zip(&v2).map(|(p, q)| q - 2.0 * m1 * p).collect();
    let im = infl.iter().sum::<f64>() / n;
    let se = (infl.iter().map(|v| (v - im).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    let se1 = (v1.iter().map(|v| (v - m1).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();

    // finite-difference side, same box kernel, exact law
    let psi = LevyExponent::new(&noise);
    let log_p = |a: f64| box_probability(&psi, &noise, a, x, y, r, substeps, h).ln();
    let delta = 0.02;
    let (lm, l0, lp) = (log_p(a - delta), log_p(a), log_p(a + delta));
    let fd = (lp - 2.0 * l0 + lm) / (delta * delta);
    let score = (lp - lm) / (2.0 * delta);
    let p_box = l0.exp();
    let hit = inside as f64 / simulated as f64;
    let hit_se = (hit * (1.0 - hit) / simulated as f64).sqrt();

    let diff = (bridge - fd).abs();
    let pass = diff <= 3.0 * se && (hit - p_box).abs() <= 4.0 * hit_se;
    (
        pass,
        format!(
            "mean Ξ² − (mean Ξ¹)² = {bridge:.3} ± {se:.3} over {} paths ({degenerate} degenerate); finite difference of log box probability {fd:.3}; |gap| {diff:.3} vs 3 SE {:.3}\nscore: bridge mean Ξ¹ {m1:.3} ± {se1:.3} vs difference {score:.3}; box probability {p_box:.5} vs simulated hit rate {hit:.5} ± {hit_se:.5}",
            v1.len(),
            3.0 * se
        ),
    )
}

/// `LEVYDRIFT_CRITERIA=2,6` restricts the run to the listed criteria.
fn selected(id: u8) -> bool {
    match std::env::var("LEVYDRIFT_CRITERIA") {
        Ok(list) => list.split(',').any(|s| s.trim().parse() == Ok(id)),
        Err(_) => true,
    }
}

#[test]
fn acceptance_criteria() {
    let all: [(u8, &'static str, fn() -> (bool, String)); 6] = [
        (1, "iterative linear solvers", linear_solvers),
        (2, "derivative-free searches", searches),
        (3, "scalar experiment orderings", scalar_experiment),
        (4, "multi-parameter consistency", consistency),
        (5, "property suite", property_suite),
        (6, "information identity", information_identity),
    ];
    let verdicts: Vec<Verdict> = all
        .into_iter()
        .filter(|(id, ..)| selected(*id))
        .map(|(id, name, f)| timed(id, name, f))
        .collect();
    println!("\nsummary");
    for v in &verdicts {
        println!("  criterion {}: {}", v.id, if v.pass { "PASS" } else { "FAIL" });
    }
    let failed: Vec<u8> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
