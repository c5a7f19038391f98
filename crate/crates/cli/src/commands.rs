use std::collections::BTreeMap;
use std::fmt;
use std::io;

use rayon::prelude::*;
use serde_json::{json, Value};

use ricker_core::branching::{one_step_origin_bound, BranchingModel};
use ricker_core::deterministic::{
    classify_coexistence, find_invariant_box, fixed_points, mutual_invasibility, CycleOptions,
    GridSpec,
};
use ricker_core::lab::{
    ar_approximation, covariance_ratios, cycle_support_study, fit_records, fit_retention,
    retention_check, CycleStudyOptions, QsdMethod, RetentionOptions, SweepRecord,
};
use ricker_core::qsd::{
    default_cap, expected_lifetime, lambda_upper_bound, monte_carlo_qsd, power_iterate_qsd,
    StateDistribution, TruncatedChain,
};
use ricker_core::rng::RngStreams;
use ricker_core::{lab, Error as CoreError, ModelParams, NormedState, PopulationState, Species};

use crate::config::{ConfigError, Experiment, RunConfig};
use crate::output::{opt, Output};

pub const NO_COEXISTENCE: &str = "notice: no coexistence fixed point for these parameters";

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(CoreError),
    Io(io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(CoreError::InvalidParameter { .. }) => 2,
            CliError::Core(CoreError::NonConvergence { .. }) => 3,
            CliError::Core(CoreError::Infeasible(_) | CoreError::CapTooSmall { .. }) => 4,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => f.write_str(msg),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

/// What a command prints once its files are written.
pub struct Report {
    pub stdout: String,
    pub notices: Vec<String>,
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialise")
}

fn err_value<T: serde::Serialize>(r: &Result<T, CoreError>) -> Value {
    match r {
        Ok(v) => to_value(v),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

pub fn analyze(cfg: &RunConfig, out: &Output) -> Result<Report, CliError> {
    let params = cfg.params()?;
    let fps = fixed_points(&params);
    let mut notices = Vec::new();
    if fps.coexistence.is_none() {
        notices.push(NO_COEXISTENCE.to_string());
    }
    let stability = classify_coexistence(&params);
    let invariant_box = if fps.coexistence.is_some() {
        find_invariant_box(&params, &GridSpec::default())?
    } else {
        None
    };
    let ar = if matches!(&stability, Ok(c) if c.jacobian_spectral_radius < 1.0) {
        Some(err_value(&ar_approximation(&params)))
    } else {
        None
    };
    let body = json!({
        "params": params,
        "fixed_points": fps,
        "mutual_invasibility": mutual_invasibility(&params),
        "coexistence": fps.coexistence.is_some(),
        "notice": notices.first(),
        "stability": err_value(&stability),
        "invariant_box": invariant_box,
        "one_step_origin_bound": one_step_origin_bound(&params),
        "lambda_upper_bound": lambda_upper_bound(&params),
        "ar_model": ar,
    });
    let stdout = out.json("analyze.json", body)?;
    Ok(Report { stdout, notices })
}

pub fn simulate(cfg: &RunConfig, out: &Output, seed: u64) -> Result<Report, CliError> {
    let params = cfg.params()?;
    let model = BranchingModel::new(params)?;
    let s = &cfg.simulate;
    let initial = PopulationState::new(s.initial_m, s.initial_n);
    let streams = RngStreams::new(seed);
    let runs = (0..s.n_trajectories)
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.stream(i as u64);
            if i < s.save_paths {
                let tr = model.simulate(initial, &mut rng, s.max_steps)?;
                Ok((tr.lifetime, Some(tr.states)))
            } else {
                Ok((model.lifetime(initial, &mut rng, s.max_steps), None))
            }
        })
        .collect::<Result<Vec<_>, CoreError>>()?;

    for (i, (_, path)) in runs.iter().enumerate() {
        if let Some(states) = path {
            out.csv(
                &format!("trajectories/traj_{i:05}.csv"),
                "t,m,n",
                states.iter().enumerate().map(|(t, st)| format!("{t},{},{}", st.m, st.n)),
            )?;
        }
    }
    let lifetimes: Vec<u64> = runs.iter().filter_map(|(l, _)| *l).collect();
    let censored = runs.len() - lifetimes.len();
    let mut hist = BTreeMap::new();
    for &l in &lifetimes {
        *hist.entry(l).or_insert(0u64) += 1;
    }
    out.csv(
        "lifetime_histogram.csv",
        "lifetime,count",
        hist.iter().map(|(l, c)| format!("{l},{c}")),
    )?;
    let (mean, se) = mean_se(&lifetimes);

    let mut pmfs = serde_json::Map::new();
    for (species, name) in [(Species::U, "u"), (Species::V, "v")] {
        match model.exact_transition_pmf(initial, species) {
            Ok(pmf) => {
                out.csv(
                    &format!("pmf_{name}.csv"),
                    "k,prob",
                    pmf.probs().iter().enumerate().map(|(k, p)| format!("{k},{p}")),
                )?;
                pmfs.insert(
                    name.into(),
                    json!({ "mean": pmf.mean(), "variance": pmf.variance(), "tail": pmf.tail() }),
                );
            }
            Err(e) => {
                pmfs.insert(name.into(), json!({ "error": e.to_string() }));
            }
        }
    }
    let body = json!({
        "params": model.params(),
        "initial": initial,
        "max_steps": s.max_steps,
        "n_trajectories": s.n_trajectories,
        "extinct": lifetimes.len(),
        "censored": censored,
        "mean_lifetime": mean,
        "mean_lifetime_se": se,
        "one_step_pmf": pmfs,
    });
    let stdout = out.json("simulate.json", body)?;
    Ok(Report {
        stdout,
        notices: Vec::new(),
    })
}

/// Mean and standard error; `None` when undefined.
fn mean_se(xs: &[u64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().map(|&x| x as f64).sum::<f64>() / n;
    if xs.len() < 2 {
        return (Some(mean), None);
    }
    let var = xs.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some((var / n).sqrt()))
}

fn summary(dist: &StateDistribution, params: &ModelParams) -> Value {
    let fp = fixed_points(params).coexistence;
    let mean = dist.mean_normed(params);
    json!({
        "qsd_mean": mean,
        "qsd_cov": dist.cov_normed(params),
        "dist_to_fp": fp.map(|p| p.dist(&mean)),
    })
}

fn write_distribution(out: &Output, dist: &StateDistribution) -> io::Result<()> {
    out.csv(
        "qsd.csv",
        "m,n,pi",
        dist.entries().iter().map(|(s, p)| format!("{},{},{p}", s.m, s.n)),
    )?;
    Ok(())
}

pub fn qsd(cfg: &RunConfig, out: &Output, seed: u64) -> Result<Report, CliError> {
    let params = cfg.params()?;
    let model = BranchingModel::new(params.clone())?;
    let q = &cfg.qsd;
    let mut notices = Vec::new();
    let matrix = || -> Result<(TruncatedChain, ricker_core::qsd::QsdEstimate), CoreError> {
        let chain = match q.cap {
            Some(cap) => TruncatedChain::build(&model, cap, q.overflow_budget)?,
            None => TruncatedChain::build_adaptive(&model, q.overflow_budget, q.max_states)?,
        };
        let est = power_iterate_qsd(&chain, &cfg.power_options())?;
        Ok((chain, est))
    };
    let use_matrix = match q.method {
        QsdMethod::Matrix => true,
        QsdMethod::MonteCarlo => false,
        QsdMethod::Auto => {
            let cap = q.cap.unwrap_or_else(|| default_cap(&params));
            cap * cap <= q.max_states
        }
    };
    let solved = if use_matrix {
        match matrix() {
            Err(CoreError::Infeasible(msg)) if q.method == QsdMethod::Auto => {
                notices.push(format!("notice: matrix method infeasible ({msg}); using particles"));
                None
            }
            other => Some(other?),
        }
    } else {
        None
    };
    let body = match solved {
        Some((chain, est)) => {
            if !est.irreducible {
                notices.push(
                    "warning: truncated chain has more than one closed class; the QSD may depend on the start"
                        .to_string(),
                );
            }
            let dist = chain.distribution(&est.pi);
            write_distribution(out, &dist)?;
            json!({
                "method": QsdMethod::Matrix,
                "params": params,
                "lambda": est.lambda,
                "escape": est.escape,
                "residual": est.residual,
                "iterations": est.iterations,
                "irreducible": est.irreducible,
                "lifetime": expected_lifetime(est.lambda).ok(),
                "cap": chain.cap(),
                "states": chain.rows().len(),
                "nonzeros": chain.nnz(),
                "leak": chain.leak_stats(),
                "lambda_upper_bound": lambda_upper_bound(&params),
                "summary": summary(&dist, &params),
            })
        }
        None => {
            let mc = monte_carlo_qsd(&model, &cfg.mc_options(), &RngStreams::new(seed))?;
            write_distribution(out, &mc.distribution)?;
            json!({
                "method": QsdMethod::MonteCarlo,
                "params": params,
                "lambda": mc.lambda,
                "lambda_se": mc.lambda_se,
                "lifetime": expected_lifetime(mc.lambda).ok(),
                "restarts": mc.restarts,
                "n_particles": mc.n_particles,
                "steps_recorded": mc.steps_recorded,
                "lambda_upper_bound": lambda_upper_bound(&params),
                "summary": summary(&mc.distribution, &params),
            })
        }
    };
    let stdout = out.json("qsd_summary.json", body)?;
    Ok(Report { stdout, notices })
}

pub const SWEEP_HEADER: &str = "K,lambda,lifetime,qsd_mean_x,qsd_mean_y,cov_xx,cov_xy,cov_yy,dist_to_fp,strip_mass_x,strip_mass_y,box_mass";

fn sweep_row(r: &SweepRecord) -> String {
    let t = r.tightness.as_ref();
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        r.k,
        r.lambda,
        r.lifetime,
        r.qsd_mean.x,
        r.qsd_mean.y,
        r.qsd_cov[0][0],
        r.qsd_cov[0][1],
        r.qsd_cov[1][1],
        opt(r.distance_to_fixed_point),
        opt(t.map(|t| t.strip_mass_x)),
        opt(t.map(|t| t.strip_mass_y)),
        opt(t.map(|t| t.box_mass)),
    )
}

fn non_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0])
}

pub fn sweep(cfg: &RunConfig, out: &Output, seed: u64) -> Result<Report, CliError> {
    let base = cfg.params()?;
    let w = &cfg.sweep;
    let streams = RngStreams::new(seed);
    let opts = cfg.sweep_options(w.method);
    let outcomes = lab::sweep_k(&base, &w.k_list, &opts, &streams.derive(0))?;
    let records: Vec<SweepRecord> = outcomes.iter().filter_map(|o| o.record.clone()).collect();
    if records.is_empty() {
        let cause = outcomes.into_iter().find_map(|o| o.cause);
        return Err(cause
            .map(CliError::Core)
            .unwrap_or_else(|| CliError::Config("sweep produced no cells".into())));
    }
    let mut notices: Vec<String> = outcomes
        .iter()
        .filter_map(|o| o.error.as_ref().map(|e| format!("warning: cell K = {} failed: {e}", o.k)))
        .collect();
    out.csv("sweep.csv", SWEEP_HEADER, records.iter().map(sweep_row))?;

    let mut experiments = serde_json::Map::new();
    for exp in &w.experiments {
        let (name, value) = match exp {
            Experiment::Scaling => ("scaling", err_value(&fit_records(&records))),
            Experiment::Tightness => ("tightness", tightness_summary(&records)),
            Experiment::Retention => ("retention", retention(cfg, &base, &streams.derive(1))),
            Experiment::Ar => ("ar", ar_summary(&records)),
        };
        if let Some(e) = value.get("error").and_then(Value::as_str) {
            notices.push(format!("warning: experiment {name} failed: {e}"));
        }
        experiments.insert(name.into(), value);
    }
    let body = json!({
        "params": base,
        "K_list": w.k_list,
        "options": opts,
        "cells": outcomes,
        "experiments": experiments,
    });
    let stdout = out.json("sweep_summary.json", body)?;
    Ok(Report { stdout, notices })
}

fn tightness_summary(records: &[SweepRecord]) -> Value {
    let reports: Vec<_> = records.iter().filter_map(|r| r.tightness.map(|t| (r.k, t))).collect();
    if reports.is_empty() {
        return json!({ "error": "no coexistence fixed point to centre the box on" });
    }
    let sx: Vec<f64> = reports.iter().map(|(_, t)| t.strip_mass_x).collect();
    let sy: Vec<f64> = reports.iter().map(|(_, t)| t.strip_mass_y).collect();
    json!({
        "strip_x_non_increasing": non_increasing(&sx),
        "strip_y_non_increasing": non_increasing(&sy),
        "cells": reports.iter().map(|(k, t)| json!({ "K": k, "report": t })).collect::<Vec<_>>(),
    })
}

fn retention(cfg: &RunConfig, base: &ModelParams, streams: &RngStreams) -> Value {
    let w = &cfg.sweep;
    let run = || -> Result<Value, CoreError> {
        let at_first = base.at_k(w.k_list[0])?;
        let inv = find_invariant_box(&at_first, &GridSpec::default())?
            .ok_or_else(|| CoreError::NotApplicable("no verified invariant box".into()))?;
        let steps = w.retention_steps.unwrap_or(inv.iterate);
        let opts = RetentionOptions {
            grid_per_axis: w.retention_grid,
            n_samples: w.retention_samples,
            margin_fraction: w.retention_margin,
            confidence: w.confidence,
        };
        let results = w
            .k_list
            .iter()
            .enumerate()
            .map(|(i, &k)| retention_check(&base.at_k(k)?, &inv.rect, steps, &opts, &streams.derive(i as u64)))
            .collect::<Result<Vec<_>, _>>()?;
        let fit = fit_retention(&results, w.confidence)?;
        Ok(json!({
            "box": inv,
            "n_steps": steps,
            "results": results,
            "fit": fit,
        }))
    };
    run().unwrap_or_else(|e| json!({ "error": e.to_string() }))
}

fn ar_summary(records: &[SweepRecord]) -> Value {
    let cells: Vec<Value> = records
        .iter()
        .map(|r| match ar_approximation(&r.params) {
            Ok(ar) => json!({
                "K": r.k,
                "predicted_cov": ar.stationary_cov,
                "measured_cov": r.qsd_cov,
                "ratios_xx_yy_trace": covariance_ratios(&r.qsd_cov, &ar.stationary_cov),
                "spectral_radius": ar.spectral_radius,
                "lyapunov_residual": ar.lyapunov_residual,
            }),
            Err(e) => json!({ "K": r.k, "error": e.to_string() }),
        })
        .collect();
    json!({ "cells": cells })
}

pub fn cycles(cfg: &RunConfig, out: &Output, seed: u64) -> Result<Report, CliError> {
    let params = cfg.params()?;
    let c = &cfg.cycles;
    let opts = CycleStudyOptions {
        radius: c.radius,
        cycle: CycleOptions {
            burn_in: c.burn_in,
            max_period: c.max_period,
            tol: c.tol,
        },
        start: NormedState::new(c.x0, c.y0),
        sweep: cfg.sweep_options(c.method),
    };
    let report = cycle_support_study(&params, &c.k_list, &opts, &RngStreams::new(seed).derive(2))?;
    out.csv(
        "cycles.csv",
        "K,mass_near_cycle",
        report.masses.iter().map(|m| format!("{},{}", m.k, opt(m.mass))),
    )?;
    let mut notices = vec![format!("note: {}", report.note)];
    notices.extend(
        report
            .masses
            .iter()
            .filter_map(|m| m.error.as_ref().map(|e| format!("warning: cell K = {} failed: {e}", m.k))),
    );
    let body = json!({ "params": params, "study": report });
    let stdout = out.json("cycles_summary.json", body)?;
    Ok(Report { stdout, notices })
}
