//! The deterministic Ricker competition map
//!
//! ```text
//! F(x, y) = ( x·exp(r − x − b_eff·y),  y·exp(r̃ − a_eff·x − y) )
//! ```
//!
//! with `b_eff = b·K/K̃` and `a_eff = a·K̃/K`. For `K = K̃` this is the plain
//! two-species Ricker map. Everything here is a pure function of the
//! parameters.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::model::{ModelParams, NormedState, Rect};

/// 2×2 matrix in row-major order.
pub type Mat2 = [[f64; 2]; 2];

/// Residual tolerance every reported fixed point must meet.
pub const FIXED_POINT_TOL: f64 = 1e-10;
/// Half-width of the band `|ρ − 1| < NON_HYPERBOLIC_BAND` classified as non-hyperbolic.
pub const NON_HYPERBOLIC_BAND: f64 = 1e-6;

/// One step of the one-species Ricker map `x ↦ x·exp(r − K x)`.
pub fn step_1d(x: f64, r: f64, k: f64) -> Result<f64> {
    ensure_finite("x", x)?;
    ensure_finite("r", r)?;
    ensure_finite("K", k)?;
    if k <= 0.0 {
        return Err(Error::Domain(format!("K must be > 0, got {k}")));
    }
    if x < 0.0 {
        return Err(Error::Domain(format!("x must be >= 0, got {x}")));
    }
    Ok(x * (r - k * x).exp())
}

/// The normed competition map `F`.
#[inline]
pub fn map_f(p: NormedState, params: &ModelParams) -> NormedState {
    NormedState::new(
        p.x * (params.r - p.x - params.b_eff() * p.y).exp(),
        p.y * (params.r_tilde - params.a_eff() * p.x - p.y).exp(),
    )
}

/// Analytic Jacobian of [`map_f`] at `p`.
pub fn jacobian(p: NormedState, params: &ModelParams) -> Mat2 {
    let (ae, be) = (params.a_eff(), params.b_eff());
    let e1 = (params.r - p.x - be * p.y).exp();
    let e2 = (params.r_tilde - ae * p.x - p.y).exp();
    [
        [e1 * (1.0 - p.x), -be * p.x * e1],
        [-ae * p.y * e2, e2 * (1.0 - p.y)],
    ]
}

pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

pub fn transpose(a: &Mat2) -> Mat2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

/// Maximum absolute row sum, the operator norm induced by the sup norm.
pub fn norm_inf(a: &Mat2) -> f64 {
    (a[0][0].abs() + a[0][1].abs()).max(a[1][0].abs() + a[1][1].abs())
}

/// Eigenvalues of a real 2×2 matrix as `(re, im)` pairs.
pub fn eigenvalues(a: &Mat2) -> [(f64, f64); 2] {
    let tr = a[0][0] + a[1][1];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let disc = 0.25 * tr * tr - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        [(0.5 * tr + s, 0.0), (0.5 * tr - s, 0.0)]
    } else {
        let s = (-disc).sqrt();
        [(0.5 * tr, s), (0.5 * tr, -s)]
    }
}

pub fn spectral_radius(a: &Mat2) -> f64 {
    eigenvalues(a)
        .iter()
        .map(|(re, im)| re.hypot(*im))
        .fold(0.0, f64::max)
}

/// The four candidate fixed points of `F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub origin: NormedState,
    pub axis_x: NormedState,
    pub axis_y: NormedState,
    pub coexistence: Option<NormedState>,
    /// `ab = 1`: the coexistence formula is undefined.
    pub degenerate: bool,
    /// Largest `|F(p) − p|_∞` over the reported points.
    pub max_residual: f64,
}

/// Closed-form coexistence point, `None` when `ab = 1`.
fn coexistence_formula(params: &ModelParams) -> Option<NormedState> {
    let det = 1.0 - params.a * params.b;
    if det == 0.0 {
        return None;
    }
    Some(NormedState::new(
        (params.r - params.b_eff() * params.r_tilde) / det,
        (params.r_tilde - params.a_eff() * params.r) / det,
    ))
}

pub fn fixed_points(params: &ModelParams) -> FixedPointReport {
    let origin = NormedState::ORIGIN;
    let axis_x = NormedState::new(params.r, 0.0);
    let axis_y = NormedState::new(0.0, params.r_tilde);
    let formula = coexistence_formula(params);
    let coexistence = formula.filter(|p| p.x > 0.0 && p.y > 0.0);
    let max_residual = [Some(origin), Some(axis_x), Some(axis_y), coexistence]
        .into_iter()
        .flatten()
        .map(|p| map_f(p, params).dist_inf(&p))
        .fold(0.0, f64::max);
    FixedPointReport {
        origin,
        axis_x,
        axis_y,
        coexistence,
        degenerate: formula.is_none(),
        max_residual,
    }
}

/// `ab < 1` and each species can invade the other's single-species equilibrium.
pub fn mutual_invasibility(params: &ModelParams) -> bool {
    params.a * params.b < 1.0
        && params.r > params.b_eff() * params.r_tilde
        && params.r_tilde > params.a_eff() * params.r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stability {
    Attracting,
    Repelling,
    NonHyperbolic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityClass {
    pub class: Stability,
    pub jacobian_spectral_radius: f64,
    /// Verdict of the closed-form inequality chain.
    pub condition_satisfied: bool,
    /// Whether the inequality chain and the spectral radius give the same answer.
    pub criteria_agree: bool,
    pub fixed_point: NormedState,
    pub jacobian: Mat2,
    /// The three members `lower ≤ middle < upper` of the inequality chain.
    pub chain: [f64; 3],
}

/// Stability of the coexistence fixed point.
///
/// The closed-form condition
/// `2(1−b)r̃ + 2(1−a)r − 4(1−ab) ≤ (r − b r̃)(r̃ − a r) < (1−b)r̃ + (1−a)r`
/// is evaluated with the effective coefficients and cross-checked with the
/// spectral radius of the analytic Jacobian.
pub fn classify_coexistence(params: &ModelParams) -> Result<StabilityClass> {
    if !mutual_invasibility(params) {
        return Err(Error::NotInvasible);
    }
    let fp = fixed_points(params)
        .coexistence
        .ok_or_else(|| Error::Precondition("no coexistence fixed point".into()))?;
    let (a, b, r, rt) = (params.a_eff(), params.b_eff(), params.r, params.r_tilde);
    let lower = 2.0 * (1.0 - b) * rt + 2.0 * (1.0 - a) * r - 4.0 * (1.0 - a * b);
    let middle = (r - b * rt) * (rt - a * r);
    let upper = (1.0 - b) * rt + (1.0 - a) * r;
    let condition_satisfied = lower <= middle && middle < upper;

    let jac = jacobian(fp, params);
    let rho = spectral_radius(&jac);
    let class = if (rho - 1.0).abs() < NON_HYPERBOLIC_BAND {
        Stability::NonHyperbolic
    } else if condition_satisfied {
        Stability::Attracting
    } else {
        Stability::Repelling
    };
    Ok(StabilityClass {
        class,
        jacobian_spectral_radius: rho,
        condition_satisfied,
        criteria_agree: condition_satisfied == (rho < 1.0),
        fixed_point: fp,
        jacobian: jac,
        chain: [lower, middle, upper],
    })
}

/// `[p0, F(p0), ..., F^steps(p0)]`.
pub fn iterate_orbit(
    p0: NormedState,
    params: &ModelParams,
    steps: usize,
) -> Result<Vec<NormedState>> {
    if steps == 0 {
        return Err(Error::Precondition("orbit length must be >= 1".into()));
    }
    if !p0.in_first_quadrant() {
        return Err(Error::Domain(format!("{p0:?} is not in the first quadrant")));
    }
    let mut orbit = Vec::with_capacity(steps + 1);
    orbit.push(p0);
    let mut p = p0;
    for step in 1..=steps {
        p = map_f(p, params);
        if !p.is_finite() {
            return Err(Error::OrbitDivergence { step });
        }
        orbit.push(p);
    }
    Ok(orbit)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleOptions {
    pub burn_in: usize,
    pub max_period: usize,
    pub tol: f64,
}

impl Default for CycleOptions {
    fn default() -> Self {
        Self {
            burn_in: 10_000,
            max_period: 64,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cycle {
    pub period: usize,
    pub points: Vec<NormedState>,
}

/// Smallest period (up to `max_period`) the orbit of `p0` settles on after
/// the burn-in, or `None`.
pub fn detect_cycle(
    params: &ModelParams,
    p0: NormedState,
    opts: &CycleOptions,
) -> Result<Option<Cycle>> {
    if opts.max_period == 0 {
        return Err(Error::Precondition("max_period must be >= 1".into()));
    }
    if !p0.in_first_quadrant() {
        return Err(Error::Domain(format!("{p0:?} is not in the first quadrant")));
    }
    let mut p = p0;
    for step in 1..=opts.burn_in {
        p = map_f(p, params);
        if !p.is_finite() {
            return Err(Error::OrbitDivergence { step });
        }
    }
    let mut points = Vec::with_capacity(opts.max_period);
    points.push(p);
    let mut q = p;
    for period in 1..=opts.max_period {
        q = map_f(q, params);
        if !q.is_finite() {
            return Err(Error::OrbitDivergence {
                step: opts.burn_in + period,
            });
        }
        if q.dist(&p) < opts.tol {
            return Ok(Some(Cycle { period, points }));
        }
        points.push(q);
    }
    Ok(None)
}

/// Resolution of the verification grid: `points_per_axis²` samples per box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points_per_axis: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points_per_axis: 101,
        }
    }
}

/// Outcome of a grid verification of `F^N(C) ⊂ interior(C)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxCheck {
    /// Smallest distance from a grid image to the complement of `C`.
    pub grid_margin: f64,
    /// Largest sup-norm of `D(F^N)` seen on the grid.
    pub lipschitz: f64,
    /// Safety allowance `spacing × lipschitz × 2`.
    pub allowance: f64,
}

impl BoxCheck {
    /// Lower bound on `d(Cᶜ, F^N(C))`, positive when the check passes.
    pub fn certified_margin(&self) -> f64 {
        self.grid_margin - self.allowance
    }

    pub fn passed(&self) -> bool {
        self.certified_margin() > 0.0
    }
}

/// Grid check of `F^N(C) ⊂ C` with a Lipschitz safety allowance.
pub fn verify_box(params: &ModelParams, c: &Rect, iterate: usize, grid: &GridSpec) -> BoxCheck {
    let n = grid.points_per_axis.max(2);
    let dx = (c.x_hi - c.x_lo) / (n - 1) as f64;
    let dy = (c.y_hi - c.y_lo) / (n - 1) as f64;
    let mut grid_margin = f64::INFINITY;
    let mut lipschitz: f64 = 0.0;
    for i in 0..n {
        let x = c.x_lo + dx * i as f64;
        for j in 0..n {
            let y = c.y_lo + dy * j as f64;
            let mut p = NormedState::new(x, y);
            let mut d: Mat2 = [[1.0, 0.0], [0.0, 1.0]];
            for _ in 0..iterate {
                d = mat_mul(&jacobian(p, params), &d);
                p = map_f(p, params);
            }
            let gap = if p.is_finite() {
                c.inner_distance(&p)
            } else {
                f64::NEG_INFINITY
            };
            grid_margin = grid_margin.min(gap);
            lipschitz = lipschitz.max(norm_inf(&d));
        }
    }
    let allowance = dx.max(dy) * lipschitz * 2.0;
    BoxCheck {
        grid_margin,
        lipschitz,
        allowance,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantSetResult {
    pub rect: Rect,
    /// Iterate `N` for which `F^N(C) ⊂ C` was verified.
    pub iterate: usize,
    /// Certified lower bound on `d(Cᶜ, F^N(C))`.
    pub margin: f64,
}

const LOWER_FRACTIONS: [f64; 12] = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05, 0.02, 0.01];
const UPPER_FRACTIONS: [f64; 10] = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1];

/// Candidate rectangles, scanned in a fixed order: widest upper edge first,
/// and for each upper edge the highest lower edge first.
///
/// Lower edges are fractions of the coexistence point; upper edges
/// interpolate between the coexistence point and 1.05 times the global image
/// bound `e^{r−1}` of each coordinate.
fn candidate_boxes(params: &ModelParams) -> Result<Vec<Rect>> {
    if !mutual_invasibility(params) {
        return Err(Error::NotInvasible);
    }
    let fp = fixed_points(params)
        .coexistence
        .ok_or_else(|| Error::Precondition("no coexistence fixed point".into()))?;
    let top_x = 1.05 * (params.r - 1.0).exp();
    let top_y = 1.05 * (params.r_tilde - 1.0).exp();
    let mut out = Vec::with_capacity(LOWER_FRACTIONS.len() * UPPER_FRACTIONS.len());
    for &hi in &UPPER_FRACTIONS {
        for &lo in &LOWER_FRACTIONS {
            out.push(Rect::new(
                lo * fp.x,
                fp.x + hi * (top_x - fp.x).max(0.05 * fp.x),
                lo * fp.y,
                fp.y + hi * (top_y - fp.y).max(0.05 * fp.y),
            ));
        }
    }
    Ok(out)
}

/// First rectangle of the candidate family with `F(C) ⊂ C` verified on the grid.
pub fn find_invariant_box(
    params: &ModelParams,
    grid: &GridSpec,
) -> Result<Option<InvariantSetResult>> {
    for rect in candidate_boxes(params)? {
        let check = verify_box(params, &rect, 1, grid);
        if check.passed() {
            return Ok(Some(InvariantSetResult {
                rect,
                iterate: 1,
                margin: check.certified_margin(),
            }));
        }
    }
    Ok(None)
}

/// Smallest `N ≤ max_n` (and first candidate for that `N`) such that
/// `F^N(C₁)` lies at a certified positive distance from the complement of `C₁`.
pub fn find_contracting_set(
    params: &ModelParams,
    max_n: usize,
    grid: &GridSpec,
) -> Result<Option<InvariantSetResult>> {
    if max_n == 0 {
        return Err(Error::Precondition("max_N must be >= 1".into()));
    }
    let candidates = candidate_boxes(params)?;
    for iterate in 1..=max_n {
        for rect in &candidates {
            let check = verify_box(params, rect, iterate, grid);
            if check.passed() {
                return Ok(Some(InvariantSetResult {
                    rect: *rect,
                    iterate,
                    margin: check.certified_margin(),
                }));
            }
        }
    }
    Ok(None)
}

/// Mean of the first `steps` points `x_0, ..., x_{steps-1}` of the 1-D
/// Ricker orbit (compensated summation).
pub fn time_average_1d(x0: f64, r: f64, k: f64, steps: usize) -> Result<f64> {
    if !(x0 > 0.0) || !(r > 0.0) || !(k > 0.0) {
        return Err(Error::Domain("x0, r and K must be > 0".into()));
    }
    if steps == 0 {
        return Err(Error::Precondition("T must be >= 1".into()));
    }
    let mut x = x0;
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for _ in 0..steps {
        let t = sum + x;
        comp += if sum.abs() >= x.abs() {
            (sum - t) + x
        } else {
            (x - t) + sum
        };
        sum = t;
        x = step_1d(x, r, k)?;
    }
    Ok((sum + comp) / steps as f64)
}
