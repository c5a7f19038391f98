//! Particle estimate of the QSD: every absorbed particle jumps onto the
//! current state of a survivor chosen uniformly at random.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::StateDistribution;
use crate::branching::BranchingModel;
use crate::deterministic::fixed_points;
use crate::error::{Error, Result};
use crate::model::{ModelParams, PopulationState};
use crate::rng::RngStreams;

const MAX_RESTARTS: u32 = 8;
const BATCHES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McOptions {
    pub n_particles: usize,
    pub t_max: usize,
    /// Steps discarded before occupation and survival are recorded.
    pub burn_in: usize,
    /// Common starting state; near the coexistence point when absent.
    pub initial: Option<PopulationState>,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            n_particles: 10_000,
            t_max: 1_000,
            burn_in: 200,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McQsd {
    /// Time-averaged occupation of the particle cloud.
    pub distribution: StateDistribution,
    /// Mean per-step survival fraction.
    pub lambda: f64,
    /// Batch-means standard error of `lambda`.
    pub lambda_se: f64,
    /// Runs abandoned because every particle died in the same step.
    pub restarts: u32,
    pub n_particles: usize,
    pub steps_recorded: usize,
}

/// Lattice point nearest to the coexistence point, or to `(1/K, 1/K̃)`.
pub(crate) fn default_start(params: &ModelParams) -> PopulationState {
    let p = fixed_points(params)
        .coexistence
        .unwrap_or(crate::model::NormedState::new(1.0, 1.0));
    let m = (p.x / params.k).round().max(1.0) as u64;
    let n = (p.y / params.k_tilde).round().max(1.0) as u64;
    PopulationState::new(m, n)
}

pub fn monte_carlo_qsd(model: &BranchingModel, opts: &McOptions, streams: &RngStreams) -> Result<McQsd> {
    if opts.n_particles < 100 {
        return Err(Error::Precondition(format!(
            "n_particles must be >= 100, got {}",
            opts.n_particles
        )));
    }
    if opts.t_max <= opts.burn_in {
        return Err(Error::Precondition("t_max must exceed burn_in".into()));
    }
    let start = opts.initial.unwrap_or_else(|| default_start(model.params()));
    if !start.is_interior() {
        return Err(Error::Precondition("initial state must have m, n >= 1".into()));
    }
    let mut n = opts.n_particles;
    for restarts in 0..=MAX_RESTARTS {
        if let Some(mut out) = run(model, opts, start, n, streams) {
            out.restarts = restarts;
            return Ok(out);
        }
        n *= 2;
    }
    Err(Error::Infeasible(format!(
        "every particle died in one step even with {} particles",
        n / 2
    )))
}

fn run(
    model: &BranchingModel,
    opts: &McOptions,
    start: PopulationState,
    n: usize,
    streams: &RngStreams,
) -> Option<McQsd> {
    let resample = streams.derive(n as u64);
    let mut particles = vec![start; n];
    let mut counts: HashMap<PopulationState, u64> = HashMap::new();
    let mut survival = Vec::with_capacity(opts.t_max - opts.burn_in);
    for t in 0..opts.t_max {
        particles.par_iter_mut().enumerate().for_each(|(i, s)| {
            *s = model.step(*s, &mut streams.cell(i as u64, t as u64));
        });
        let alive: Vec<usize> = (0..n).filter(|&i| particles[i].is_interior()).collect();
        if alive.is_empty() {
            return None;
        }
        if alive.len() < n {
            let mut rng = resample.cell(0, t as u64);
            for i in 0..n {
                if !particles[i].is_interior() {
                    particles[i] = particles[alive[rng.random_range(0..alive.len())]];
                }
            }
        }
        if t >= opts.burn_in {
            survival.push(alive.len() as f64 / n as f64);
            for s in &particles {
                *counts.entry(*s).or_default() += 1;
            }
        }
    }
    let total = (survival.len() * n) as f64;
    let distribution = StateDistribution::new(
        counts
            .into_iter()
            .map(|(s, c)| (s, c as f64 / total))
            .collect(),
    );
    let (lambda, lambda_se) = batch_means(&survival);
    Some(McQsd {
        distribution,
        lambda,
        lambda_se,
        restarts: 0,
        n_particles: n,
        steps_recorded: survival.len(),
    })
}

/// Mean and batch-means standard error of a correlated series.
pub(crate) fn batch_means(xs: &[f64]) -> (f64, f64) {
    let len = xs.len();
    let mean = xs.iter().sum::<f64>() / len as f64;
    let batches = BATCHES.min(len);
    if batches < 2 {
        return (mean, f64::NAN);
    }
    let size = len / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let mb = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - mb).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (mean, (var / batches as f64).sqrt())
}
