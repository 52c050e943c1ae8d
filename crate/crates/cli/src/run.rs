//! The simulate, estimate and efficiency subcommands.
//!
//! Path `r` of a run uses noise seed `stream_seed(seed, "path", r)` and
//! bridge seed `stream_seed(seed, "bridge", r)`, so simulate and estimate
//! see the same paths and adding estimators never moves a stream.

use std::fs;
use std::path::Path;

use levydrift::drift_expr::DriftModel;
use levydrift::efficiency::{effective_sample_diagnostics, run_efficiency, EfficiencyConfig, EfficiencyReport};
use levydrift::estimators::{estimate_many, BridgeConfig, EstimationResult, Method};
use levydrift::levy_noise::sample_path;
use levydrift::sde::{euler_simulate, Trajectory};
use levydrift::seeds::stream_seed;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::output::{cell, join, trajectory_plot_script, Csv};
use crate::stats::{aggregate, Aggregate};
use crate::CliError;

pub fn path_seed(cfg: &ExperimentConfig, rep: usize) -> u64 {
    stream_seed(cfg.seed, "path", rep as u64)
}

pub fn simulate_path(cfg: &ExperimentConfig, model: &DriftModel, rep: usize) -> Result<Trajectory, String> {
    let z = sample_path(&cfg.path_noise(cfg.sim.n, path_seed(cfg, rep))).map_err(|e| e.to_string())?;
    euler_simulate(model, &cfg.model.theta, &z, &cfg.sim).map_err(|e| format!("simulation: {e}"))
}

fn prepare_out(cfg: &ExperimentConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", cfg.out.display())))?;
    fs::write(cfg.out.join("config.toml"), cfg.to_toml())?;
    Ok(())
}

pub fn cmd_simulate(cfg: &ExperimentConfig, plot: bool) -> Result<(), CliError> {
    let model = cfg.validate()?;
    prepare_out(cfg)?;
    let paths: Vec<Result<Trajectory, String>> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|r| simulate_path(cfg, &model, r))
        .collect();
    for (r, p) in paths.into_iter().enumerate() {
        let traj = p.map_err(|e| CliError::Runtime(format!("path {r}: {e}")))?;
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).map_err(|e| CliError::Runtime(e.to_string()))?;
        fs::write(cfg.out.join(format!("trajectory_{r}.csv")), buf)?;
        let mut inc = Csv::new("increments", "k,t,dx");
        for (k, dx) in traj.increments().iter().enumerate() {
            inc.row(&format!("{},{},{dx}", k + 1, traj.times[k + 1]));
        }
        inc.write(&cfg.out.join(format!("increments_{r}.csv")))?;
    }
    if plot {
        let script = trajectory_plot_script("trajectory_0.csv", "increments_0.csv", "trajectory_0.png");
        fs::write(cfg.out.join("trajectory.gp"), script)?;
    }
    println!("wrote {} path(s) to {}", cfg.repetitions, cfg.out.display());
    Ok(())
}

/// Results of every estimator on every path, path-major.
pub struct EstimateRun {
    pub methods: Vec<Method>,
    pub rows: Vec<Vec<Result<EstimationResult, String>>>,
}

impl EstimateRun {
    pub fn estimates(&self, i: usize) -> Vec<Option<Vec<f64>>> {
        self.rows
            .iter()
            .map(|r| r[i].as_ref().ok().map(|e| e.theta_hat.clone()))
            .collect()
    }

    pub fn aggregates(&self, truth: &[f64]) -> Vec<Aggregate> {
        (0..self.methods.len())
            .map(|i| aggregate(self.methods[i], &self.estimates(i), truth))
            .collect()
    }
}

pub fn run_estimates(cfg: &ExperimentConfig, model: &DriftModel) -> Result<EstimateRun, CliError> {
    if cfg.estimate.methods.is_empty() {
        return Err(CliError::Validation("estimate.methods is empty".into()));
    }
    let opts = cfg.estimate.options();
    let methods = cfg.estimate.methods.clone();
    let rows = (0..cfg.repetitions)
        .into_par_iter()
        .map(|r| {
            let traj = match simulate_path(cfg, model, r) {
                Ok(t) => t,
                Err(e) => return methods.iter().map(|_| Err(e.clone())).collect(),
            };
            let bridge = BridgeConfig {
                seed: stream_seed(cfg.seed, "bridge", r as u64),
                ..cfg.bridge.clone()
            };
            let noise = cfg.path_noise(cfg.sim.n, path_seed(cfg, r));
            estimate_many(&methods, &traj, model, &opts, &cfg.model.start, &noise, &bridge)
                .into_iter()
                .map(|x| x.map_err(|e| e.to_string()))
                .collect()
        })
        .collect();
    Ok(EstimateRun { methods, rows })
}

pub fn cmd_estimate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let model = cfg.validate()?;
    let run = run_estimates(cfg, &model)?;
    prepare_out(cfg)?;
    let names = &cfg.model.params;
    let thetas: Vec<String> = names.iter().map(|n| format!("theta_{n}")).collect();
    let mut per_run = Csv::new(
        "estimates",
        &format!("rep,path_seed,method,{},loss,iterations,converged,error", thetas.join(",")),
    );
    for (r, row) in run.rows.iter().enumerate() {
        for (m, res) in run.methods.iter().zip(row) {
            let line = match res {
                Ok(e) => format!(
                    "{r},{},{m},{},{},{},{},",
                    path_seed(cfg, r),
                    join(&e.theta_hat),
                    e.loss,
                    e.solver.iterations,
                    e.solver.converged
                ),
                Err(err) => format!("{r},{},{m},{},,,,{}", path_seed(cfg, r), ",".repeat(names.len() - 1), cell(err)),
            };
            per_run.row(&line);
        }
    }
    per_run.write(&cfg.out.join("estimates.csv"))?;
    let means: Vec<String> = names.iter().map(|n| format!("mean_{n}")).collect();
    let mut summary = Csv::new("estimate-summary", &format!("method,runs,failures,{},mad,rmse", means.join(",")));
    for a in run.aggregates(&cfg.model.theta) {
        summary.row(&format!("{},{},{},{},{},{}", a.method, a.runs, a.failures, join(&a.mean), a.mad, a.rmse));
        println!(
            "{:<9} runs {:>4}  failures {:>3}  mean {:?}  MAD {:.5}  RMSE {:.5}",
            a.method.to_string(),
            a.runs,
            a.failures,
            a.mean,
            a.mad,
            a.rmse
        );
    }
    summary.write(&cfg.out.join("summary.csv"))?;
    Ok(())
}

pub fn efficiency_config(cfg: &ExperimentConfig, method: Method) -> Result<EfficiencyConfig, CliError> {
    let sec = cfg
        .efficiency
        .clone()
        .ok_or_else(|| CliError::Validation("the efficiency subcommand needs an [efficiency] section".into()))?;
    Ok(EfficiencyConfig {
        paths: sec.paths,
        observations: sec.observations.unwrap_or(cfg.sim.n),
        n0: sec.n0,
        bridge_radius: sec.bridge_radius,
        method,
        theta0: cfg.model.theta.clone(),
        start: cfg.model.start.clone(),
        sim: cfg.sim.clone(),
        noise: cfg.noise.clone(),
        estimate: cfg.estimate.options(),
        bridge: cfg.bridge.clone(),
        seed: cfg.seed,
    })
}

pub fn run_efficiencies(
    cfg: &ExperimentConfig,
    model: &DriftModel,
) -> Result<Vec<(Method, Result<EfficiencyReport, String>)>, CliError> {
    if cfg.estimate.methods.is_empty() {
        return Err(CliError::Validation("estimate.methods is empty".into()));
    }
    let configs: Vec<EfficiencyConfig> = cfg
        .estimate
        .methods
        .iter()
        .map(|&m| efficiency_config(cfg, m))
        .collect::<Result<_, _>>()?;
    if let Some(c) = configs.first() {
        c.validate(model).map_err(|e| CliError::Validation(e.to_string()))?;
    }
    Ok(configs
        .iter()
        .map(|c| (c.method, run_efficiency(c, model).map_err(|e| e.to_string())))
        .collect())
}

fn dump_paths(dir: &Path, report: &EfficiencyReport) -> Result<(), CliError> {
    let d = report.theta_hat.len();
    let cols: Vec<String> = (0..d).map(|j| format!("v_{j}")).collect();
    let mut csv = Csv::new("efficiency-paths", &format!("kind,index,{}", cols.join(",")));
    for (i, v) in report.deviations.iter().enumerate() {
        csv.row(&format!("deviation,{i},{}", join(v)));
    }
    for (i, v) in report.scores.iter().enumerate() {
        csv.row(&format!("score,{i},{}", join(v)));
    }
    csv.write(&dir.join(format!("efficiency_paths_{}.csv", report.method)))
}

pub fn cmd_efficiency(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let model = cfg.validate()?;
    let results = run_efficiencies(cfg, &model)?;
    prepare_out(cfg)?;
    let d = model.dim();
    let mut csv = Csv::new("efficiency", &format!("{},error", EfficiencyReport::csv_header(d)));
    let mut failed = 0;
    for (m, r) in &results {
        match r {
            Ok(rep) => {
                csv.row(&format!("{},", rep.csv_row()));
                print!("{}", rep.summary());
                let diag = effective_sample_diagnostics(rep);
                if diag.flagged {
                    println!("  warning: relative Monte Carlo error up to {:.0}%", 100.0 * diag.max_relative_se);
                }
                if cfg.efficiency.as_ref().is_some_and(|s| s.dump) {
                    dump_paths(&cfg.out, rep)?;
                }
            }
            Err(e) => {
                failed += 1;
                csv.row(&format!("{m}{},{}", ",".repeat(3 * d + 4), cell(e)));
                println!("{m}: failed: {e}");
            }
        }
    }
    csv.write(&cfg.out.join("efficiency.csv"))?;
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} estimator(s) failed")));
    }
    Ok(())
}
