//! Solver benchmarks: iterative linear solvers on normal systems, and the
//! derivative-free searches on a least-squares fit.

use std::fs;

use levydrift::drift_expr::DriftModel;
use levydrift::estimators::{build_polynomial_normal_system, LossNorm, ResidualModel};
use levydrift::levy_noise::sample_path;
use levydrift::sde::{euler_simulate, SimConfig, Trajectory};
use levydrift::seeds::{stream_rng, stream_seed};
use levydrift::solvers::{
    box_wilson, chebyshev_ssor, direct_solve, hooke_jeeves, hybrid_minimize, sor, ssor_solve, BoxWilsonOptions,
    HookeJeevesOptions, HybridOptions, LinearSystem, OptimReport, SolveReport, SolverError,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, LinearBench, OptimBench};
use crate::output::{cell, join, Csv};
use crate::stats::median;
use crate::CliError;

pub const LINEAR_METHODS: [&str; 4] = ["sor", "ssor", "chebyshev_ssor", "direct"];
pub const OPTIM_METHODS: [&str; 3] = ["box_wilson", "hooke_jeeves", "hybrid"];

/// Polynomial drift `c0·x^d + … + c{d-1}·x` with generated names.
pub fn polynomial_model(d: usize) -> DriftModel {
    let names: Vec<String> = (0..d).map(|i| format!("c{i}")).collect();
    let terms: Vec<String> = (0..d).map(|i| format!("c{i}*x^{}", d - i)).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    DriftModel::parse(&terms.join(" + "), &refs).expect("generated drift parses")
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearRow {
    /// `polynomial`, `identity` or `random_spd`.
    pub case: &'static str,
    pub seed: u64,
    pub method: &'static str,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    /// Largest component distance from the direct solution.
    pub max_error: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default)]
pub struct LinearBenchResult {
    pub rows: Vec<LinearRow>,
    /// Seeds whose path left the domain of the drift.
    pub skipped: usize,
}

impl LinearBenchResult {
    /// Median iteration count of `method` on the polynomial systems.
    pub fn median_iterations(&self, method: &str) -> f64 {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.case == "polynomial" && r.method == method && r.error.is_none())
            .map(|r| r.iterations as f64)
            .collect();
        median(&v)
    }

    pub fn max_error(&self, method: &str) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| if r.error.is_some() { f64::INFINITY } else { r.max_error })
            .fold(0.0, f64::max)
    }
}

fn solve_all(case: &'static str, seed: u64, sys: &LinearSystem, x0: &DVector<f64>, b: &LinearBench) -> Vec<LinearRow> {
    let direct = direct_solve(sys);
    let reports: [(&'static str, Result<SolveReport, SolverError>); 3] = [
        ("sor", sor(sys, x0, b.omega, b.tol, b.max_iter)),
        ("ssor", ssor_solve(sys, x0, b.omega, b.tol, b.max_iter)),
        ("chebyshev_ssor", chebyshev_ssor(sys, x0, b.omega, b.tol, b.max_iter)),
    ];
    let mut rows = Vec::with_capacity(4);
    let row = |method, iterations, residual, converged, max_error, error| LinearRow {
        case,
        seed,
        method,
        iterations,
        residual,
        converged,
        max_error,
        error,
    };
    let direct = match direct {
        Ok(x) => {
            rows.push(row("direct", 0, sys.relative_residual(&x), true, 0.0, None));
            x
        }
        Err(e) => {
            let msg = e.to_string();
            rows.push(row("direct", 0, f64::NAN, false, f64::NAN, Some(msg.clone())));
            for (m, _) in reports {
                rows.push(row(m, 0, f64::NAN, false, f64::NAN, Some(msg.clone())));
            }
            return rows;
        }
    };
    for (m, r) in reports {
        rows.push(match r {
            Ok(r) => row(m, r.iterations, r.residual, r.converged, (&r.solution - &direct).amax(), None),
            Err(e) => row(m, 0, f64::NAN, false, f64::NAN, Some(e.to_string())),
        });
    }
    // direct first in the table is awkward to read; keep the iterative ones first
    rows.rotate_left(1);
    rows
}

/// Path of the linear benchmark from noise stream `attempt`.
pub fn linear_path(cfg: &ExperimentConfig, attempt: u64) -> Result<Trajectory, String> {
    let b = &cfg.bench.linear;
    let sim = SimConfig {
        n: b.n,
        x0: b.x0,
        ..cfg.sim.clone()
    };
    let mut noise = cfg.path_noise(b.n, stream_seed(cfg.seed, "bench-linear", attempt));
    noise.u_max = b.u_max;
    let z = sample_path(&noise).map_err(|e| e.to_string())?;
    euler_simulate(&polynomial_model(b.theta.len()), &b.theta, &z, &sim).map_err(|e| e.to_string())
}

pub fn run_linear_bench(cfg: &ExperimentConfig) -> Result<LinearBenchResult, CliError> {
    let b = &cfg.bench.linear;
    let d = b.theta.len();
    if d == 0 || b.start.len() != d {
        return Err(CliError::Validation("bench.linear.theta and start need the same nonzero length".into()));
    }
    if b.n == 0 || b.seeds == 0 || !(b.tol > 0.0) || !(b.omega > 0.0 && b.omega < 2.0) {
        return Err(CliError::Validation("bench.linear needs n, seeds, tol > 0 and omega in (0, 2)".into()));
    }
    let mut out = LinearBenchResult::default();
    let x0 = DVector::from_column_slice(&b.start);
    let mut attempt = 0u64;
    let mut done = 0;
    while done < b.seeds {
        if attempt as usize >= 10 * b.seeds {
            return Err(CliError::Runtime(format!(
                "only {done} of {} linear-bench paths stayed finite",
                b.seeds
            )));
        }
        let traj = linear_path(cfg, attempt);
        attempt += 1;
        let Ok(traj) = traj else {
            out.skipped += 1;
            continue;
        };
        let sys = build_polynomial_normal_system(&traj, d, cfg.sim.h).map_err(|e| CliError::Runtime(e.to_string()))?;
        out.rows.extend(solve_all("polynomial", attempt - 1, &sys, &x0, b));
        done += 1;
    }
    let id = LinearSystem::new(DMatrix::identity(d, d), DVector::from_element(d, 1.0), "identity")
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    out.rows.extend(solve_all("identity", 0, &id, &x0, b));
    let mut rng = stream_rng(cfg.seed, "bench-spd", 0);
    let m = 5;
    let g = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
    let spd = g.transpose() * &g + DMatrix::identity(m, m) * m as f64;
    let rhs = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
    let spd = LinearSystem::new(spd, rhs, "random_spd").map_err(|e| CliError::Runtime(e.to_string()))?;
    out.rows.extend(solve_all("random_spd", 0, &spd, &DVector::zeros(m), b));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimRow {
    pub seed: u64,
    pub method: &'static str,
    pub report: Result<OptimReport, String>,
}

pub fn optim_model(b: &OptimBench) -> Result<DriftModel, CliError> {
    let names: Vec<&str> = b.params.iter().map(String::as_str).collect();
    let model = DriftModel::parse(&b.drift, &names).map_err(|e| CliError::Validation(format!("bench.optim.drift: {e}")))?;
    if b.theta.len() != names.len() || b.start.len() != names.len() {
        return Err(CliError::Validation("bench.optim.theta and start must match params".into()));
    }
    if b.n == 0 || b.seeds == 0 || !(b.eps > 0.0) {
        return Err(CliError::Validation("bench.optim needs n, seeds and eps > 0".into()));
    }
    Ok(model)
}

/// Options of the three searches at precision `eps`.
pub fn search_options(eps: f64) -> (BoxWilsonOptions, HookeJeevesOptions, HybridOptions) {
    let mut hy = HybridOptions::default();
    hy.box_wilson.eps = eps;
    hy.hooke_jeeves.eps = eps;
    (
        BoxWilsonOptions {
            eps,
            ..Default::default()
        },
        HookeJeevesOptions {
            eps,
            ..Default::default()
        },
        hy,
    )
}

pub fn run_optim_bench(cfg: &ExperimentConfig) -> Result<Vec<OptimRow>, CliError> {
    let b = &cfg.bench.optim;
    let model = optim_model(b)?;
    let sim = SimConfig {
        n: b.n,
        x0: b.x0,
        ..cfg.sim.clone()
    };
    let (bw, hj, hy) = search_options(b.eps);
    let rows: Vec<Vec<OptimRow>> = (0..b.seeds as u64)
        .into_par_iter()
        .map(|s| {
            let fail = |e: String| OPTIM_METHODS.iter().map(|&method| OptimRow { seed: s, method, report: Err(e.clone()) }).collect();
            let z = match sample_path(&cfg.path_noise(b.n, stream_seed(cfg.seed, "bench-optim", s))) {
                Ok(z) => z,
                Err(e) => return fail(e.to_string()),
            };
            let traj = match euler_simulate(&model, &b.theta, &z, &sim) {
                Ok(t) => t,
                Err(e) => return fail(e.to_string()),
            };
            let rm = match ResidualModel::new(&model, &traj) {
                Ok(r) => r,
                Err(e) => return fail(e.to_string()),
            };
            let f = |t: &[f64]| rm.loss(t, LossNorm::L2).unwrap_or(f64::INFINITY);
            let err = |r: Result<OptimReport, SolverError>| r.map_err(|e| e.to_string());
            vec![
                OptimRow { seed: s, method: "box_wilson", report: err(box_wilson(&f, &b.start, &bw)) },
                OptimRow { seed: s, method: "hooke_jeeves", report: err(hooke_jeeves(&f, &b.start, &hj)) },
                OptimRow { seed: s, method: "hybrid", report: err(hybrid_minimize(&f, &b.start, &hy)) },
            ]
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

pub fn cmd_bench(cfg: &ExperimentConfig) -> Result<(), CliError> {
    cfg.validate()?;
    let linear = run_linear_bench(cfg)?;
    let optim = run_optim_bench(cfg)?;
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("config.toml"), cfg.to_toml())?;

    let mut csv = Csv::new("bench-linear", "case,seed,method,iterations,residual,converged,max_error,error");
    for r in &linear.rows {
        csv.row(&format!(
            "{},{},{},{},{:e},{},{:e},{}",
            r.case,
            r.seed,
            r.method,
            r.iterations,
            r.residual,
            r.converged,
            r.max_error,
            r.error.as_deref().map(cell).unwrap_or_default()
        ));
    }
    csv.write(&cfg.out.join("bench_linear.csv"))?;
    println!("linear solvers ({} paths, {} skipped):", cfg.bench.linear.seeds, linear.skipped);
    for m in &LINEAR_METHODS[..3] {
        println!(
            "  {m:<15} median iterations {:>6.1}  max error {:.2e}",
            linear.median_iterations(m),
            linear.max_error(m)
        );
    }

    let names: Vec<String> = cfg.bench.optim.params.iter().map(|n| format!("theta_{n}")).collect();
    let mut csv = Csv::new(
        "bench-optim",
        &format!("seed,method,rounds,evaluations,converged,{},loss,error", names.join(",")),
    );
    let d = names.len();
    for r in &optim {
        csv.row(&match &r.report {
            Ok(rep) => format!(
                "{},{},{},{},{},{},{},",
                r.seed,
                r.method,
                rep.rounds(),
                rep.evaluations(),
                rep.converged(),
                join(&rep.point),
                rep.value
            ),
            Err(e) => format!("{},{},,,{},,{}", r.seed, r.method, ",".repeat(d - 1), cell(e)),
        });
    }
    csv.write(&cfg.out.join("bench_optim.csv"))?;
    println!("searches ({} paths):", cfg.bench.optim.seeds);
    for m in OPTIM_METHODS {
        let rounds: Vec<f64> = optim
            .iter()
            .filter_map(|r| (r.method == m).then_some(r.report.as_ref().ok()).flatten())
            .map(|r| r.rounds() as f64)
            .collect();
        println!("  {m:<13} median rounds {:>6.1}  failures {}", median(&rounds), cfg.bench.optim.seeds - rounds.len());
    }
    Ok(())
}
