//! The transition matrix of the chain restricted to `1 ≤ m, n ≤ cap`.
//!
//! Given the current state the two species reproduce independently, so every
//! row of `Q` is an outer product `P(U' = ·) ⊗ P(V' = ·)`. Rows are stored in
//! that factored form: two short vectors per state instead of `cap²` entries.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{StateDistribution, SubStochastic};
use crate::branching::{BranchingModel, Pmf};
use crate::error::{Error, Result};
use crate::model::{ModelParams, PopulationState, Species};

/// Default per-row budget for mass pushed beyond the cap.
pub const DEFAULT_OVERFLOW_BUDGET: f64 = 1e-8;
/// Row entries below this are not stored (their mass is booked as truncation).
const ENTRY_CUTOFF: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRow {
    /// `P(U' = u_first + i)` for the stored `i`.
    u_first: usize,
    u: Vec<f64>,
    v_first: usize,
    v: Vec<f64>,
    /// `P(U' = 0 or V' = 0)`.
    pub absorption: f64,
    /// `P(U' > cap or V' > cap, both positive)`.
    pub overflow: f64,
    /// Mass of unstored tiny entries.
    pub truncation: f64,
}

impl ChainRow {
    pub fn row_sum(&self) -> f64 {
        self.u.iter().sum::<f64>() * self.v.iter().sum::<f64>()
    }

    /// Exact deficit `1 − row_sum`, without cancellation.
    pub fn deficit(&self) -> f64 {
        self.absorption + self.overflow + self.truncation
    }
}

/// Keep `pmf[1..=cap]`, trimmed of tiny leading/trailing entries.
fn restrict(pmf: &Pmf, cap: usize) -> (usize, Vec<f64>, f64) {
    let hi = cap.min(pmf.len().saturating_sub(1));
    if hi < 1 {
        return (1, Vec::new(), 0.0);
    }
    let slice = &pmf.probs()[1..=hi];
    let first = slice.iter().position(|p| *p >= ENTRY_CUTOFF);
    let last = slice.iter().rposition(|p| *p >= ENTRY_CUTOFF);
    match (first, last) {
        (Some(a), Some(b)) => {
            let dropped = slice[..a].iter().chain(&slice[b + 1..]).fold(0.0, |acc, p| acc + p);
            (a + 1, slice[a..=b].to_vec(), dropped)
        }
        _ => (1, Vec::new(), slice.iter().fold(0.0, |acc, p| acc + p)),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruncatedChain {
    cap: usize,
    params: ModelParams,
    overflow_budget: f64,
    rows: Vec<ChainRow>,
}

/// Summary of where the per-row deficits go.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakStats {
    pub max_overflow: f64,
    pub max_overflow_state: PopulationState,
    pub min_absorption: f64,
    pub max_truncation: f64,
}

impl TruncatedChain {
    /// Build `Q` on `{1..cap}²`; fails if any row pushes more than
    /// `overflow_budget` beyond the cap.
    pub fn build(model: &BranchingModel, cap: usize, overflow_budget: f64) -> Result<Self> {
        if cap == 0 {
            return Err(Error::Precondition("cap must be >= 1".into()));
        }
        let rows: Vec<ChainRow> = (0..cap * cap)
            .into_par_iter()
            .map(|i| {
                let s = PopulationState::new((i / cap + 1) as u64, (i % cap + 1) as u64);
                let pu = model.exact_transition_pmf(s, Species::U)?;
                let pv = model.exact_transition_pmf(s, Species::V)?;
                let (u_first, u, trunc_u) = restrict(&pu, cap);
                let (v_first, v, trunc_v) = restrict(&pv, cap);
                let (u0, v0) = (pu.get(0), pv.get(0));
                let (au, av) = (pu.mass_above(cap), pv.mass_above(cap));
                let su: f64 = u.iter().sum();
                let absorption = u0 + v0 - u0 * v0;
                let overflow = au * (1.0 - v0) + su * av;
                let truncation = trunc_u * (1.0 - v0) + su * trunc_v;
                Ok(ChainRow {
                    u_first,
                    u,
                    v_first,
                    v,
                    absorption,
                    overflow,
                    truncation,
                })
            })
            .collect::<Result<_>>()?;
        let chain = Self {
            cap,
            params: model.params().clone(),
            overflow_budget,
            rows,
        };
        let stats = chain.leak_stats();
        if stats.max_overflow > overflow_budget {
            return Err(Error::CapTooSmall {
                cap,
                m: stats.max_overflow_state.m as usize,
                n: stats.max_overflow_state.n as usize,
                leak: stats.max_overflow,
                budget: overflow_budget,
            });
        }
        Ok(chain)
    }

    /// Start from [`default_cap`] and grow by half until the overflow budget
    /// holds; gives up once `cap²` would exceed `max_states`.
    pub fn build_adaptive(
        model: &BranchingModel,
        overflow_budget: f64,
        max_states: usize,
    ) -> Result<Self> {
        let mut cap = default_cap(model.params());
        loop {
            if cap * cap > max_states {
                return Err(Error::Infeasible(format!(
                    "cap {cap} needs {} states, more than the limit {max_states}",
                    cap * cap
                )));
            }
            match Self::build(model, cap, overflow_budget) {
                Err(Error::CapTooSmall { .. }) => cap += cap.div_ceil(2),
                other => return other,
            }
        }
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn overflow_budget(&self) -> f64 {
        self.overflow_budget
    }

    pub fn rows(&self) -> &[ChainRow] {
        &self.rows
    }

    pub fn index(&self, s: PopulationState) -> Option<usize> {
        let (m, n) = (s.m as usize, s.n as usize);
        (1..=self.cap)
            .contains(&m)
            .then_some(())
            .filter(|_| (1..=self.cap).contains(&n))
            .map(|_| (m - 1) * self.cap + (n - 1))
    }

    pub fn state(&self, i: usize) -> PopulationState {
        PopulationState::new((i / self.cap + 1) as u64, (i % self.cap + 1) as u64)
    }

    /// `Q[(m, n), (m', n')]`.
    pub fn entry(&self, from: PopulationState, to: PopulationState) -> f64 {
        let (Some(i), Some(_)) = (self.index(from), self.index(to)) else {
            return 0.0;
        };
        let row = &self.rows[i];
        let (a, b) = (to.m as usize, to.n as usize);
        let pu = a
            .checked_sub(row.u_first)
            .and_then(|k| row.u.get(k))
            .copied()
            .unwrap_or(0.0);
        let pv = b
            .checked_sub(row.v_first)
            .and_then(|k| row.v.get(k))
            .copied()
            .unwrap_or(0.0);
        pu * pv
    }

    pub fn leak_stats(&self) -> LeakStats {
        let mut stats = LeakStats {
            max_overflow: 0.0,
            max_overflow_state: PopulationState::new(1, 1),
            min_absorption: f64::INFINITY,
            max_truncation: 0.0,
        };
        for (i, row) in self.rows.iter().enumerate() {
            if row.overflow > stats.max_overflow {
                stats.max_overflow = row.overflow;
                stats.max_overflow_state = self.state(i);
            }
            stats.min_absorption = stats.min_absorption.min(row.absorption);
            stats.max_truncation = stats.max_truncation.max(row.truncation);
        }
        stats
    }

    /// Number of stored nonzero entries of `Q`.
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(|r| r.u.len() * r.v.len()).sum()
    }

    pub fn distribution(&self, pi: &[f64]) -> StateDistribution {
        StateDistribution::new(
            pi.iter()
                .enumerate()
                .map(|(i, &p)| (self.state(i), p))
                .collect(),
        )
    }
}

/// Three times the single-species equilibrium `r/K` on the larger axis.
pub fn default_cap(params: &ModelParams) -> usize {
    let scale = (params.r / params.k).max(params.r_tilde / params.k_tilde);
    ((3.0 * scale).ceil() as usize).max(2)
}

impl SubStochastic for TruncatedChain {
    fn dim(&self) -> usize {
        self.rows.len()
    }

    fn left_mul(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let cap = self.cap;
        for (row, &w) in self.rows.iter().zip(v) {
            if w == 0.0 {
                continue;
            }
            let vlen = row.v.len();
            for (k, pu) in row.u.iter().enumerate() {
                let c = w * pu;
                let start = (row.u_first + k - 1) * cap + row.v_first - 1;
                for (o, pv) in out[start..start + vlen].iter_mut().zip(&row.v) {
                    *o += c * pv;
                }
            }
        }
    }

    fn deficit(&self, i: usize) -> f64 {
        self.rows[i].deficit()
    }

    fn is_irreducible(&self) -> bool {
        let cap = self.cap;
        let rect = |i: usize| {
            let r = &self.rows[i];
            (r.u_first, r.u_first + r.u.len(), r.v_first, r.v_first + r.v.len())
        };
        // (1, 1) reachable from everywhere, by fixpoint over rectangles
        let mut reaches = vec![false; cap * cap];
        reaches[0] = true;
        loop {
            let mut prefix = vec![0u32; (cap + 1) * (cap + 1)];
            for a in 0..cap {
                for b in 0..cap {
                    prefix[(a + 1) * (cap + 1) + b + 1] = prefix[a * (cap + 1) + b + 1]
                        + prefix[(a + 1) * (cap + 1) + b]
                        - prefix[a * (cap + 1) + b]
                        + reaches[a * cap + b] as u32;
                }
            }
            let count = |a0: usize, a1: usize, b0: usize, b1: usize| {
                let (a0, a1, b0, b1) = (a0 - 1, a1 - 1, b0 - 1, b1 - 1);
                prefix[a1 * (cap + 1) + b1] + prefix[a0 * (cap + 1) + b0]
                    - prefix[a0 * (cap + 1) + b1]
                    - prefix[a1 * (cap + 1) + b0]
            };
            let mut changed = false;
            for i in 0..cap * cap {
                if reaches[i] {
                    continue;
                }
                let (a0, a1, b0, b1) = rect(i);
                if a1 > a0 && b1 > b0 && count(a0, a1, b0, b1) > 0 {
                    reaches[i] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        reaches.iter().all(|r| *r)
    }
}
