use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::{linear_fit, LinearFit};
use crate::branching::BranchingModel;
use crate::deterministic::fixed_points;
use crate::error::{Error, Result};
use crate::model::{ModelParams, NormedState, Rect};
use crate::qsd::{
    default_cap, expected_lifetime, monte_carlo_qsd, power_iterate_qsd, McOptions, PowerOptions,
    StateDistribution, TruncatedChain, DEFAULT_OVERFLOW_BUDGET,
};
use crate::rng::RngStreams;

/// Largest state space handed to the matrix method.
pub const MATRIX_STATE_LIMIT: usize = 400_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QsdMethod {
    Matrix,
    MonteCarlo,
    /// Matrix while `cap²` fits the state limit, particles beyond.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub method: QsdMethod,
    pub max_states: usize,
    pub overflow_budget: f64,
    pub power: PowerOptions,
    pub monte_carlo: McOptions,
    /// Half side of the box around the coexistence point.
    pub box_half_width: f64,
    pub strip_width: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            method: QsdMethod::Auto,
            max_states: MATRIX_STATE_LIMIT,
            overflow_budget: DEFAULT_OVERFLOW_BUDGET,
            power: PowerOptions::default(),
            monte_carlo: McOptions::default(),
            box_half_width: 1.0,
            strip_width: 0.05,
        }
    }
}

/// QSD summary at one value of `K = K̃`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    #[serde(rename = "K")]
    pub k: f64,
    pub params: ModelParams,
    pub method: QsdMethod,
    pub lambda: f64,
    /// `1 − λ`, computed from the per-state absorption and overflow mass.
    pub escape: f64,
    /// Matrix residual, or the Monte Carlo standard error of `λ`.
    pub lambda_error: f64,
    pub lifetime: f64,
    pub cap: Option<usize>,
    pub qsd_mean: NormedState,
    pub qsd_cov: [[f64; 2]; 2],
    pub distance_to_fixed_point: Option<f64>,
    /// Absent when there is no coexistence point to centre the box on.
    pub tightness: Option<TightnessReport>,
    #[serde(skip)]
    pub distribution: StateDistribution,
}

/// One cell of a sweep; failures are kept in place so the sweep carries on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    #[serde(rename = "K")]
    pub k: f64,
    pub record: Option<SweepRecord>,
    pub error: Option<String>,
    #[serde(skip)]
    pub cause: Option<Error>,
}

/// Disjoint split of the QSD mass: `{x < w}`, `{y < w, x ≥ w}`, the box
/// minus both strips, and the rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TightnessReport {
    pub rect: Rect,
    pub strip_width: f64,
    pub strip_mass_x: f64,
    pub strip_mass_y: f64,
    pub box_mass: f64,
    pub remainder: f64,
    /// Mass outside the box, strips included.
    pub mass_outside: f64,
}

impl TightnessReport {
    pub fn total(&self) -> f64 {
        self.strip_mass_x + self.strip_mass_y + self.box_mass + self.remainder
    }
}

/// `[x* ± h] × [y* ± h]`, with lower edges raised to `floor` when they would
/// leave the open quadrant.
pub fn default_box(params: &ModelParams, half_width: f64, floor: f64) -> Result<Rect> {
    let fp = fixed_points(params)
        .coexistence
        .ok_or_else(|| Error::Precondition("no coexistence fixed point".into()))?;
    Ok(Rect::new(
        (fp.x - half_width).max(floor),
        fp.x + half_width,
        (fp.y - half_width).max(floor),
        fp.y + half_width,
    ))
}

pub fn tightness_report(
    dist: &StateDistribution,
    params: &ModelParams,
    rect: &Rect,
    strip_width: f64,
) -> Result<TightnessReport> {
    if !rect.is_inside_open_quadrant() {
        return Err(Error::Precondition(format!(
            "box {rect:?} must lie strictly inside the open quadrant"
        )));
    }
    if !(strip_width > 0.0) {
        return Err(Error::Precondition("strip width must be > 0".into()));
    }
    let w = strip_width;
    let strip_x = dist.mass_where(params, |p| p.x < w);
    let strip_y = dist.mass_where(params, |p| p.y < w && p.x >= w);
    let box_mass = dist.mass_where(params, |p| p.x >= w && p.y >= w && rect.contains(&p));
    let remainder = dist.mass_where(params, |p| p.x >= w && p.y >= w && !rect.contains(&p));
    let mass_outside = dist.mass_where(params, |p| !rect.contains(&p));
    Ok(TightnessReport {
        rect: *rect,
        strip_width,
        strip_mass_x: strip_x,
        strip_mass_y: strip_y,
        box_mass,
        remainder,
        mass_outside,
    })
}

struct QsdSolution {
    method: QsdMethod,
    lambda: f64,
    escape: f64,
    lambda_error: f64,
    cap: Option<usize>,
    distribution: StateDistribution,
}

fn solve(model: &BranchingModel, opts: &SweepOptions, streams: &RngStreams) -> Result<QsdSolution> {
    let matrix = || -> Result<QsdSolution> {
        let chain = TruncatedChain::build_adaptive(model, opts.overflow_budget, opts.max_states)?;
        let est = power_iterate_qsd(&chain, &opts.power)?;
        Ok(QsdSolution {
            method: QsdMethod::Matrix,
            lambda: est.lambda,
            escape: est.escape,
            lambda_error: est.residual,
            cap: Some(chain.cap()),
            distribution: chain.distribution(&est.pi),
        })
    };
    let particles = || -> Result<QsdSolution> {
        let mc = monte_carlo_qsd(model, &opts.monte_carlo, streams)?;
        Ok(QsdSolution {
            method: QsdMethod::MonteCarlo,
            lambda: mc.lambda,
            escape: 1.0 - mc.lambda,
            lambda_error: mc.lambda_se,
            cap: None,
            distribution: mc.distribution,
        })
    };
    match opts.method {
        QsdMethod::Matrix => matrix(),
        QsdMethod::MonteCarlo => particles(),
        QsdMethod::Auto => {
            let cap = default_cap(model.params());
            if cap * cap > opts.max_states {
                return particles();
            }
            match matrix() {
                Err(Error::Infeasible(_)) => particles(),
                other => other,
            }
        }
    }
}

/// QSD summary of `base` with `K = K̃ = k`.
pub fn qsd_record(base: &ModelParams, k: f64, opts: &SweepOptions, streams: &RngStreams) -> Result<SweepRecord> {
    let params = base.at_k(k)?;
    let model = BranchingModel::new(params.clone())?;
    let sol = solve(&model, opts, streams)?;
    expected_lifetime(sol.lambda)?;
    let lifetime = 1.0 / sol.escape;
    let qsd_mean = sol.distribution.mean_normed(&params);
    let qsd_cov = sol.distribution.cov_normed(&params);
    let fp = fixed_points(&params).coexistence;
    let tightness = match default_box(&params, opts.box_half_width, opts.strip_width) {
        Ok(rect) => Some(tightness_report(&sol.distribution, &params, &rect, opts.strip_width)?),
        Err(_) => None,
    };
    Ok(SweepRecord {
        k,
        params,
        method: sol.method,
        lambda: sol.lambda,
        escape: sol.escape,
        lambda_error: sol.lambda_error,
        lifetime,
        cap: sol.cap,
        qsd_mean,
        qsd_cov,
        distance_to_fixed_point: fp.map(|p| qsd_mean.dist(&p)),
        tightness,
        distribution: sol.distribution,
    })
}

/// QSD summaries along a decreasing list of `K = K̃`.
///
/// Cell `i` draws from `streams.derive(i)`, so results do not depend on
/// which cells run concurrently.
pub fn sweep_k(
    base: &ModelParams,
    k_values: &[f64],
    opts: &SweepOptions,
    streams: &RngStreams,
) -> Result<Vec<SweepOutcome>> {
    if k_values.is_empty() {
        return Err(Error::Precondition("K list is empty".into()));
    }
    if k_values.iter().any(|k| !(*k > 0.0) || !k.is_finite()) {
        return Err(Error::Precondition("K values must be finite and > 0".into()));
    }
    if k_values.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Precondition("K values must be strictly decreasing".into()));
    }
    Ok(k_values
        .par_iter()
        .enumerate()
        .map(|(i, &k)| match qsd_record(base, k, opts, &streams.derive(i as u64)) {
            Ok(rec) => SweepOutcome {
                k,
                record: Some(rec),
                error: None,
                cause: None,
            },
            Err(e) => SweepOutcome {
                k,
                record: None,
                error: Some(e.to_string()),
                cause: Some(e),
            },
        })
        .collect())
}

/// Fit of `−ln(1 − λ)` against `1/K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    /// Fitted slope `û`.
    pub u_hat: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `(1/K, −ln(1 − λ), residual)` for every point used.
    pub points: Vec<(f64, f64, f64)>,
}

/// Least-squares line through `(1/K, −ln(1 − λ))`.
pub fn fit_lambda_scaling(points: &[(f64, f64)]) -> Result<ScalingFit> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(k, esc)| *k > 0.0 && *esc > 0.0 && *esc < 1.0)
        .map(|(k, esc)| (1.0 / k, -esc.ln()))
        .collect();
    if usable.len() < 3 {
        return Err(Error::Fit(format!(
            "need 3 or more points with 0 < lambda < 1, got {}",
            usable.len()
        )));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = usable.iter().copied().unzip();
    let LinearFit {
        slope,
        intercept,
        r_squared,
    } = linear_fit(&xs, &ys)?;
    Ok(ScalingFit {
        u_hat: slope,
        intercept,
        r_squared,
        points: usable
            .iter()
            .map(|(x, y)| (*x, *y, y - intercept - slope * x))
            .collect(),
    })
}

/// [`fit_lambda_scaling`] on the `(K, 1 − λ)` pairs of sweep records.
pub fn fit_records(records: &[SweepRecord]) -> Result<ScalingFit> {
    let pts: Vec<(f64, f64)> = records.iter().map(|r| (r.k, r.escape)).collect();
    fit_lambda_scaling(&pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PopulationState;

    #[test]
    fn synthetic_scaling_recovers_rate() {
        let pts: Vec<(f64, f64)> = [0.5f64, 0.3, 0.2, 0.1]
            .iter()
            .map(|k| (*k, (-2.0 / k).exp()))
            .collect();
        let fit = fit_lambda_scaling(&pts).unwrap();
        assert!((fit.u_hat - 2.0).abs() < 1e-10);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(fit.points.iter().all(|p| p.2.abs() < 1e-10));
        assert!(fit_lambda_scaling(&[(0.2, 0.1), (0.2, 0.2), (0.2, 0.3)]).is_err());
        assert!(fit_lambda_scaling(&pts[..2]).is_err());
    }

    #[test]
    fn tightness_partition() {
        let params = ModelParams::with_equal_k(1.2, 1.2, 0.02, 0.5, 0.5).unwrap();
        let dist = StateDistribution::new(vec![
            (PopulationState::new(1, 40), 0.1),
            (PopulationState::new(40, 1), 0.2),
            (PopulationState::new(40, 40), 0.3),
            (PopulationState::new(200, 40), 0.4),
        ]);
        let rect = default_box(&params, 1.0, 0.05).unwrap();
        let t = tightness_report(&dist, &params, &rect, 0.05).unwrap();
        assert!((t.strip_mass_x - 0.1).abs() < 1e-15);
        assert!((t.strip_mass_y - 0.2).abs() < 1e-15);
        assert!((t.box_mass - 0.3).abs() < 1e-15);
        assert!((t.remainder - 0.4).abs() < 1e-15);
        assert!((t.total() - 1.0).abs() < 1e-15);
        assert!((t.mass_outside - 0.7).abs() < 1e-15);
        assert!(tightness_report(&dist, &params, &Rect::square(0.0, 1.0), 0.05).is_err());
    }

    #[test]
    fn sweep_validates_and_orders() {
        let base = ModelParams::with_equal_k(1.2, 1.2, 0.3, 0.5, 0.5).unwrap();
        let s = RngStreams::new(3);
        let opts = SweepOptions::default();
        assert!(sweep_k(&base, &[0.2, 0.3], &opts, &s).is_err());
        assert!(sweep_k(&base, &[0.3, -0.1], &opts, &s).is_err());
        let out = sweep_k(&base, &[0.4, 0.3], &opts, &s).unwrap();
        let recs: Vec<&SweepRecord> = out.iter().map(|o| o.record.as_ref().unwrap()).collect();
        assert_eq!(recs[0].k, 0.4);
        assert!(recs[1].lambda > recs[0].lambda);
        assert!(recs.iter().all(|r| r.method == QsdMethod::Matrix && r.lifetime >= 1.0));
        assert!((recs[1].tightness.unwrap().total() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_cells_are_recorded() {
        let base = ModelParams::with_equal_k(1.2, 1.2, 0.3, 0.5, 0.5).unwrap();
        let opts = SweepOptions {
            method: QsdMethod::Matrix,
            max_states: 100,
            ..Default::default()
        };
        let out = sweep_k(&base, &[0.3], &opts, &RngStreams::new(1)).unwrap();
        assert!(out[0].record.is_none());
        assert!(out[0].error.as_ref().unwrap().contains("states"));
    }
}
