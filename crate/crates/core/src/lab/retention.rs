//! How likely the chain is to sit in a neighbourhood of an invariant set `C`
//! after `N` steps, started from lattice points of `C`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::{clopper_pearson, linear_fit, LinearFit};
use crate::branching::BranchingModel;
use crate::error::{Error, Result};
use crate::model::{ModelParams, NormedState, PopulationState, Rect, Species};
use crate::rng::RngStreams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionOptions {
    /// Start points per axis, spread evenly over the lattice points of `C`.
    pub grid_per_axis: usize,
    /// Trials per start point.
    pub n_samples: usize,
    /// `U(C)` is `C` inflated by this fraction of its diagonal.
    pub margin_fraction: f64,
    pub confidence: f64,
}

impl Default for RetentionOptions {
    fn default() -> Self {
        Self {
            grid_per_axis: 5,
            n_samples: 10_000,
            margin_fraction: 0.05,
            confidence: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartRetention {
    pub state: PopulationState,
    pub start: NormedState,
    pub retained: u64,
    pub trials: u64,
    pub retention: f64,
    /// Clopper–Pearson lower confidence limit.
    pub lower: f64,
    /// Chernoff lower bound on one-step retention, when `N = 1`.
    pub one_step_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionResult {
    #[serde(rename = "K")]
    pub k: f64,
    pub set: Rect,
    pub neighborhood: Rect,
    pub n_steps: usize,
    pub points: Vec<StartRetention>,
    /// Index into `points` of the lowest retention.
    pub worst: usize,
}

impl RetentionResult {
    pub fn worst_point(&self) -> &StartRetention {
        &self.points[self.worst]
    }
}

/// Evenly spread subset of the integers in `[lo/k, hi/k]`.
fn lattice_axis(lo: f64, hi: f64, k: f64, count: usize) -> Vec<u64> {
    let first = (lo / k - 1e-9).ceil().max(1.0) as u64;
    let last = (hi / k + 1e-9).floor() as u64;
    if last < first || count == 0 {
        return Vec::new();
    }
    let span = last - first;
    let mut out: Vec<u64> = if count == 1 {
        vec![first + span / 2]
    } else {
        (0..count)
            .map(|i| first + ((span as f64) * i as f64 / (count - 1) as f64).round() as u64)
            .collect()
    };
    out.dedup();
    out
}

/// Upper bound on `P(one step leaves u)` from the Chernoff tails of both
/// coordinates.
pub fn one_step_escape_bound(model: &BranchingModel, state: PopulationState, u: &Rect) -> Result<f64> {
    let params = model.params();
    let p = params.normed(state);
    let image = model.conditional_mean(p);
    let mut total = 0.0;
    for (species, coord, mean, lo, hi) in [
        (Species::U, p.x, image.x, u.x_lo, u.x_hi),
        (Species::V, p.y, image.y, u.y_lo, u.y_hi),
    ] {
        let parents = coord / params.inhibition(species);
        total += if hi > mean {
            model.deviation_bound(hi - mean, p, species)?
        } else {
            1.0
        };
        total += if lo < mean {
            let z = lo / coord;
            (-parents * model.entropy_function(z, p, species)?).exp()
        } else {
            1.0
        };
    }
    Ok(total.min(1.0))
}

/// Empirical `P{(X_N, Y_N) ∈ U(C) | (X_0, Y_0) = s}` over a grid of `s ∈ C`.
pub fn retention_check(
    params: &ModelParams,
    set: &Rect,
    n_steps: usize,
    opts: &RetentionOptions,
    streams: &RngStreams,
) -> Result<RetentionResult> {
    if n_steps == 0 || opts.n_samples == 0 {
        return Err(Error::Precondition("N and n_samples must be >= 1".into()));
    }
    if !set.is_inside_open_quadrant() {
        return Err(Error::Precondition("C must lie inside the open quadrant".into()));
    }
    let model = BranchingModel::new(params.clone())?;
    let u = set.inflate_in_quadrant(opts.margin_fraction * set.diagonal());
    let ms = lattice_axis(set.x_lo, set.x_hi, params.k, opts.grid_per_axis);
    let ns = lattice_axis(set.y_lo, set.y_hi, params.k_tilde, opts.grid_per_axis);
    if ms.is_empty() || ns.is_empty() {
        return Err(Error::Precondition(format!(
            "C holds no lattice point at K = {}, K~ = {}",
            params.k, params.k_tilde
        )));
    }
    let starts: Vec<PopulationState> = ms
        .iter()
        .flat_map(|&m| ns.iter().map(move |&n| PopulationState::new(m, n)))
        .collect();
    let points = starts
        .iter()
        .enumerate()
        .map(|(idx, &state)| {
            let retained = (0..opts.n_samples as u64)
                .into_par_iter()
                .filter(|&trial| {
                    let mut rng = streams.cell(idx as u64, trial);
                    let mut s = state;
                    for _ in 0..n_steps {
                        s = model.step(s, &mut rng);
                        if !s.is_interior() {
                            return false;
                        }
                    }
                    u.contains(&params.normed(s))
                })
                .count() as u64;
            let trials = opts.n_samples as u64;
            let (lower, _) = clopper_pearson(retained, trials, opts.confidence)?;
            let one_step_bound = if n_steps == 1 {
                Some(1.0 - one_step_escape_bound(&model, state, &u)?)
            } else {
                None
            };
            Ok(StartRetention {
                state,
                start: params.normed(state),
                retained,
                trials,
                retention: retained as f64 / trials as f64,
                lower,
                one_step_bound,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let worst = points
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.retention.total_cmp(&b.1.retention))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(RetentionResult {
        k: params.k,
        set: *set,
        neighborhood: u,
        n_steps,
        points,
        worst,
    })
}

/// Exponential rate of escape across `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionFit {
    /// `(K, worst retention, escape rate used)`; zero observed escapes are
    /// replaced by the upper confidence limit of the escape probability.
    pub points: Vec<(f64, f64, f64)>,
    /// Largest `w` with `retention ≥ 1 − e^{−w/K}` at every `K`.
    pub w_hat: f64,
    /// Least-squares line of `−ln(escape)` against `1/K`.
    pub slope_fit: Option<LinearFit>,
}

pub fn fit_retention(results: &[RetentionResult], confidence: f64) -> Result<RetentionFit> {
    if results.is_empty() {
        return Err(Error::Fit("no retention results".into()));
    }
    let mut points = Vec::with_capacity(results.len());
    for r in results {
        let w = r.worst_point();
        let escape = if w.retained < w.trials {
            1.0 - w.retention
        } else {
            1.0 - clopper_pearson(w.retained, w.trials, confidence)?.0
        };
        points.push((r.k, w.retention, escape));
    }
    let w_hat = points
        .iter()
        .map(|(k, _, e)| -k * e.ln())
        .fold(f64::INFINITY, f64::min);
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().map(|(k, _, e)| (1.0 / k, -e.ln())).unzip();
    let slope_fit = linear_fit(&xs, &ys).ok();
    Ok(RetentionFit {
        points,
        w_hat,
        slope_fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deterministic::{find_invariant_box, GridSpec};

    #[test]
    fn lattice_axis_spreads_points() {
        assert_eq!(lattice_axis(0.2, 1.0, 0.1, 3), vec![2, 6, 10]);
        assert_eq!(lattice_axis(0.21, 0.29, 0.1, 3), Vec::<u64>::new());
        assert_eq!(lattice_axis(0.2, 0.3, 0.1, 5), vec![2, 3]);
    }

    #[test]
    fn one_step_retention_respects_chernoff_bound() {
        let params = ModelParams::with_equal_k(1.2, 1.2, 0.1, 0.5, 0.5).unwrap();
        let c = find_invariant_box(&params, &GridSpec::default()).unwrap().unwrap().rect;
        let opts = RetentionOptions {
            grid_per_axis: 3,
            n_samples: 4_000,
            ..Default::default()
        };
        let res = retention_check(&params, &c, 1, &opts, &RngStreams::new(5)).unwrap();
        for p in &res.points {
            let bound = p.one_step_bound.unwrap();
            let se = (p.retention * (1.0 - p.retention) / p.trials as f64).sqrt();
            assert!(p.retention + 3.0 * se + 1e-12 >= bound, "{p:?}");
        }
        let again = retention_check(&params, &c, 1, &opts, &RngStreams::new(5)).unwrap();
        assert_eq!(res, again);
    }

    #[test]
    fn zero_escapes_use_confidence_limit() {
        let p = StartRetention {
            state: PopulationState::new(1, 1),
            start: NormedState::new(0.01, 0.01),
            retained: 100_000,
            trials: 100_000,
            retention: 1.0,
            lower: 0.99996,
            one_step_bound: None,
        };
        let r = RetentionResult {
            k: 0.01,
            set: Rect::square(0.5, 1.0),
            neighborhood: Rect::square(0.4, 1.1),
            n_steps: 1,
            points: vec![p],
            worst: 0,
        };
        let fit = fit_retention(&[r], 0.95).unwrap();
        let esc = fit.points[0].2;
        assert!(esc > 0.0 && esc < 1e-4);
        assert!(fit.w_hat > 0.0);
        assert!(fit.slope_fit.is_none());
    }
}
