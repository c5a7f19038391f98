//! Quasi-stationary distributions of the chain killed on the axes.
//!
//! The restricted transition matrix `Q` is sub-stochastic; its dominant left
//! eigenpair `λ π = π Q` is the QSD and the per-step survival probability
//! under it. [`power_iterate_qsd`] works on anything implementing
//! [`SubStochastic`]; [`monte_carlo_qsd`] is an independent particle estimate.

mod chain;
mod particles;
mod power;

pub use chain::{default_cap, ChainRow, LeakStats, TruncatedChain, DEFAULT_OVERFLOW_BUDGET};
pub use particles::{monte_carlo_qsd, McOptions, McQsd};
pub use power::{conditioned_step, power_iterate_qsd, PowerOptions, QsdEstimate};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::branching::one_step_origin_bound;
use crate::error::{Error, Result};
use crate::model::{ModelParams, NormedState, PopulationState};

/// A nonnegative square matrix with row sums at most one, seen through the
/// operations the eigen-solver needs.
pub trait SubStochastic {
    fn dim(&self) -> usize;

    /// `out = v Q`.
    fn left_mul(&self, v: &[f64], out: &mut [f64]);

    /// `1 − Σ_j Q[i, j]`.
    fn deficit(&self, i: usize) -> f64;

    /// Whether the positive entries single out one communicating class that
    /// every state can reach. States outside it are transient and carry no
    /// QSD mass, so the dominant eigenpair is then unique.
    fn is_irreducible(&self) -> bool;
}

/// Row-compressed sparse matrix, for small hand-built chains.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut row_ptr = vec![0];
        let (mut cols, mut vals) = (Vec::new(), Vec::new());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Domain(format!("row {i} has {} entries, expected {n}", row.len())));
            }
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Domain(format!("row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if sum > 1.0 + 1e-12 {
                return Err(Error::Domain(format!("row {i} sums to {sum} > 1")));
            }
            for (j, &v) in row.iter().enumerate() {
                if v > 0.0 {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            n,
            row_ptr,
            cols,
            vals,
        })
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.vals[range].iter().copied())
    }

    /// States from which `target` can be reached.
    fn reaching(&self, bwd: &[Vec<usize>], target: usize) -> usize {
        let mut seen = vec![false; self.n];
        let mut stack = vec![target];
        seen[target] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for &j in &bwd[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count
    }
}

impl SubStochastic for SparseMatrix {
    fn dim(&self) -> usize {
        self.n
    }

    fn left_mul(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &w) in v.iter().enumerate() {
            for (j, q) in self.row(i) {
                out[j] += w * q;
            }
        }
    }

    fn deficit(&self, i: usize) -> f64 {
        (1.0 - self.row(i).map(|(_, q)| q).sum::<f64>()).max(0.0)
    }

    fn is_irreducible(&self) -> bool {
        if self.n == 0 {
            return false;
        }
        let mut bwd = vec![Vec::new(); self.n];
        for i in 0..self.n {
            for (j, _) in self.row(i) {
                bwd[j].push(i);
            }
        }
        (0..self.n).any(|t| self.reaching(&bwd, t) == self.n)
    }
}

/// A probability law on lattice states, sorted by state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StateDistribution {
    entries: Vec<(PopulationState, f64)>,
}

impl StateDistribution {
    pub fn new(mut entries: Vec<(PopulationState, f64)>) -> Self {
        entries.sort_by_key(|e| e.0);
        Self { entries }
    }

    pub fn entries(&self) -> &[(PopulationState, f64)] {
        &self.entries
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn mass_where(&self, params: &ModelParams, pred: impl Fn(NormedState) -> bool) -> f64 {
        self.entries
            .iter()
            .filter(|(s, _)| pred(params.normed(*s)))
            .fold(0.0, |acc, e| acc + e.1)
    }

    pub fn mean_normed(&self, params: &ModelParams) -> NormedState {
        let (mut x, mut y) = (0.0, 0.0);
        for (s, w) in &self.entries {
            let p = params.normed(*s);
            x += w * p.x;
            y += w * p.y;
        }
        NormedState::new(x, y)
    }

    /// Covariance in normed coordinates, `[[xx, xy], [xy, yy]]`.
    pub fn cov_normed(&self, params: &ModelParams) -> [[f64; 2]; 2] {
        let mu = self.mean_normed(params);
        let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
        for (s, w) in &self.entries {
            let p = params.normed(*s);
            let (dx, dy) = (p.x - mu.x, p.y - mu.y);
            xx += w * dx * dx;
            xy += w * dx * dy;
            yy += w * dy * dy;
        }
        [[xx, xy], [xy, yy]]
    }

    /// `½ Σ |p − q|` over the union of supports.
    pub fn total_variation(&self, other: &StateDistribution) -> f64 {
        let mut diff: BTreeMap<PopulationState, f64> = BTreeMap::new();
        for (s, w) in &self.entries {
            *diff.entry(*s).or_default() += w;
        }
        for (s, w) in &other.entries {
            *diff.entry(*s).or_default() -= w;
        }
        0.5 * diff.values().map(|d| d.abs()).sum::<f64>()
    }
}

/// `1 − δ^{1/K + 1/K̃}`, a rough upper bound on `λ`.
pub fn lambda_upper_bound(params: &ModelParams) -> f64 {
    1.0 - one_step_origin_bound(params)
}

/// Mean absorption time `1/(1 − λ)` from a QSD start.
pub fn expected_lifetime(lambda: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::Domain(format!("lambda must lie in [0, 1), got {lambda}")));
    }
    Ok(1.0 / (1.0 - lambda))
}
