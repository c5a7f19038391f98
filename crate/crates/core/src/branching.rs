//! Size-dependent two-species branching process.
//!
//! Given `(U_t, V_t) = (m, n)`, each of the `m` parents independently keeps
//! its whole litter with probability `p = exp(−K(m + b n))`, and a kept
//! litter is drawn from `q`. The conditional law of one parent's offspring is
//! therefore `p q_k` for `k ≥ 1` and `1 − p(1 − q_0)` at zero. Species `V`
//! is the same with `exp(−K̃(a m + n))` and `q̃`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deterministic::map_f;
use crate::error::{Error, Result};
use crate::large_deviation::ThinnedLitter;
use crate::model::{ModelParams, NormedState, PopulationState, Species};
use crate::offspring::{sample_binomial, OffspringDistribution, OffspringKind, TAIL_CUTOFF};
use crate::rng::RngStreams;

/// Largest pmf support we are willing to materialise.
pub const PMF_RESOLUTION_BUDGET: usize = 1 << 22;

/// Binomial mixing weights below this are dropped (and booked as tail mass).
const WEIGHT_CUTOFF: f64 = 1e-18;

/// Whole-litter survival probability of `species` in `state`.
pub fn litter_survival_prob(state: PopulationState, params: &ModelParams, species: Species) -> f64 {
    let (m, n) = (state.m as f64, state.n as f64);
    match species {
        Species::U => (-params.k * (m + params.b * n)).exp(),
        Species::V => (-params.k_tilde * (params.a * m + n)).exp(),
    }
}

/// The same factor in normed coordinates: `exp(−x − b_eff y)` resp. `exp(−y − a_eff x)`.
pub fn litter_survival_normed(p: NormedState, params: &ModelParams, species: Species) -> f64 {
    match species {
        Species::U => (-p.x - params.b_eff() * p.y).exp(),
        Species::V => (-p.y - params.a_eff() * p.x).exp(),
    }
}

/// `δ = 2^{−ln 2}`, the minimum of `(1 − e^{−x})^x` over `x > 0` (attained at `x = ln 2`).
pub fn delta_constant() -> f64 {
    let ln2 = std::f64::consts::LN_2;
    (-ln2 * ln2).exp()
}

/// `δ^{1/K + 1/K̃}`: lower bound on the one-step probability of jumping
/// from any interior state straight to the origin.
pub fn one_step_origin_bound(params: &ModelParams) -> f64 {
    delta_constant().powf(1.0 / params.k + 1.0 / params.k_tilde)
}

/// Rate `L = min(K, K̃)·min(1, a, b)` with `L(m + n) ≤ min(K(m + bn), K̃(am + n))`.
pub fn minorization_rate(params: &ModelParams) -> f64 {
    params.k.min(params.k_tilde) * 1f64.min(params.a).min(params.b)
}

/// A pmf on `{0, 1, ..., len−1}` plus a bound on the mass dropped beyond it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pmf {
    probs: Vec<f64>,
    tail: f64,
}

impl Pmf {
    pub fn new(probs: Vec<f64>, tail: f64) -> Self {
        Self { probs, tail }
    }

    pub fn get(&self, k: usize) -> f64 {
        self.probs.get(k).copied().unwrap_or(0.0)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Upper bound on the mass beyond the stored support.
    pub fn tail(&self) -> f64 {
        self.tail
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(k, p)| k as f64 * p)
            .sum()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.probs
            .iter()
            .enumerate()
            .map(|(k, p)| (k as f64 - mean).powi(2) * p)
            .sum()
    }

    /// Mass strictly above `k`, including the dropped tail.
    pub fn mass_above(&self, k: usize) -> f64 {
        self.probs.iter().skip(k + 1).sum::<f64>() + self.tail
    }
}

/// A recorded run of the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// States from the initial one up to and including the first non-interior state.
    pub states: Vec<PopulationState>,
    /// First `t` with `U_t = 0` or `V_t = 0`; `None` if the run was cut at `max_steps`.
    pub lifetime: Option<u64>,
    /// Stream the run drew from, when it came from an ensemble.
    pub stream: Option<u64>,
}

/// Model constants together with the two base offspring laws.
#[derive(Debug, Clone)]
pub struct BranchingModel {
    params: ModelParams,
    law_u: OffspringDistribution,
    law_v: OffspringDistribution,
}

impl BranchingModel {
    pub fn new(params: ModelParams) -> Result<Self> {
        params.validate()?;
        let law_u = OffspringDistribution::for_species(&params, Species::U)?;
        let law_v = OffspringDistribution::for_species(&params, Species::V)?;
        Ok(Self {
            params,
            law_u,
            law_v,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn law(&self, species: Species) -> &OffspringDistribution {
        match species {
            Species::U => &self.law_u,
            Species::V => &self.law_v,
        }
    }

    pub fn litter_survival_prob(&self, state: PopulationState, species: Species) -> f64 {
        litter_survival_prob(state, &self.params, species)
    }

    /// Conditional pmf of one parent's offspring count.
    pub fn offspring_pmf_conditional(
        &self,
        k: u64,
        state: PopulationState,
        species: Species,
    ) -> f64 {
        let p = self.litter_survival_prob(state, species);
        let q = self.law(species);
        if k == 0 {
            1.0 - p * (1.0 - q.q0())
        } else {
            p * q.pmf(k)
        }
    }

    /// Thinned single-litter law at a normed state, for mgf and entropy computations.
    pub fn litter(&self, p: NormedState, species: Species) -> ThinnedLitter<'_> {
        ThinnedLitter::new(
            self.law(species),
            litter_survival_normed(p, &self.params, species),
        )
    }

    /// Log-mgf `c(s) = ln(1 − p + p S(s))` of one thinned litter.
    pub fn mgf_conditional(&self, s: f64, p: NormedState, species: Species) -> Result<f64> {
        self.litter(p, species).log_mgf(s)
    }

    /// Legendre transform `c*(z) = sup_s [z s − c(s)]`.
    pub fn entropy_function(&self, z: f64, p: NormedState, species: Species) -> Result<f64> {
        self.litter(p, species).entropy(z)
    }

    /// Chernoff bound `exp(−(x/K) c*(a/x + f_1(x, y)))` on the probability that
    /// the normed coordinate exceeds its conditional mean by more than `a`.
    pub fn deviation_bound(&self, a: f64, p: NormedState, species: Species) -> Result<f64> {
        if !(a > 0.0) {
            return Err(Error::Domain(format!("deviation a must be > 0, got {a}")));
        }
        let coord = p.coord(species);
        if !(coord > 0.0) {
            return Err(Error::Domain(format!(
                "population coordinate must be > 0, got {coord}"
            )));
        }
        let litter = self.litter(p, species);
        let z = a / coord + litter.mean();
        let rate = litter.entropy(z)?;
        Ok((-(coord / self.params.inhibition(species)) * rate).exp())
    }

    /// Conditional mean of the normed next state; identical to the map `F`.
    pub fn conditional_mean(&self, p: NormedState) -> NormedState {
        map_f(p, &self.params)
    }

    /// Conditional variances `(v_x, v_y)` of the normed next state.
    pub fn conditional_variance(&self, p: NormedState) -> (f64, f64) {
        let one = |coord: f64, species: Species| {
            let k = self.params.inhibition(species);
            let surv = litter_survival_normed(p, &self.params, species);
            let law = self.law(species);
            let mu = law.mean();
            k * coord * surv * (law.variance() + mu * mu * (1.0 - surv))
        };
        (one(p.x, Species::U), one(p.y, Species::V))
    }

    /// Exact probability of jumping straight to `(0, 0)` from `state`.
    pub fn origin_jump_probability(&self, state: PopulationState) -> f64 {
        let zero_u = self.offspring_pmf_conditional(0, state, Species::U);
        let zero_v = self.offspring_pmf_conditional(0, state, Species::V);
        zero_u.powf(state.m as f64) * zero_v.powf(state.n as f64)
    }

    /// Law of `Σ_{j=1}^{m} ξ_j` (resp. the `n` litters of `V`) given `state`.
    ///
    /// Closed-form laws are evaluated as a binomial mixture over the number of
    /// surviving litters; finite pmfs by repeated convolution of the thinned
    /// single-parent law.
    pub fn exact_transition_pmf(&self, state: PopulationState, species: Species) -> Result<Pmf> {
        let parents = state.count(species);
        let p = self.litter_survival_prob(state, species);
        let law = self.law(species);
        if parents == 0 {
            return Ok(Pmf::new(vec![1.0], 0.0));
        }
        match law.kind() {
            OffspringKind::Finite { .. } => convolution_pmf(law, p, parents),
            _ => mixture_pmf(law, p, parents),
        }
    }

    /// One transition of the chain.
    pub fn step<R: Rng + ?Sized>(&self, state: PopulationState, rng: &mut R) -> PopulationState {
        let next = |species: Species, rng: &mut R| {
            let parents = state.count(species);
            if parents == 0 {
                return 0;
            }
            let p = self.litter_survival_prob(state, species);
            let kept = sample_binomial(parents, p, rng);
            self.law(species).sample_sum(kept, rng)
        };
        let m = next(Species::U, rng);
        let n = next(Species::V, rng);
        PopulationState::new(m, n)
    }

    /// Run until either species is extinct or `max_steps` transitions were made.
    pub fn simulate<R: Rng + ?Sized>(
        &self,
        initial: PopulationState,
        rng: &mut R,
        max_steps: u64,
    ) -> Result<Trajectory> {
        if max_steps == 0 {
            return Err(Error::Precondition("max_steps must be >= 1".into()));
        }
        let mut states = vec![initial];
        if !initial.is_interior() {
            return Ok(Trajectory {
                states,
                lifetime: Some(0),
                stream: None,
            });
        }
        let mut s = initial;
        for t in 1..=max_steps {
            s = self.step(s, rng);
            states.push(s);
            if !s.is_interior() {
                return Ok(Trajectory {
                    states,
                    lifetime: Some(t),
                    stream: None,
                });
            }
        }
        Ok(Trajectory {
            states,
            lifetime: None,
            stream: None,
        })
    }

    /// Lifetime only, without recording the path.
    pub fn lifetime<R: Rng + ?Sized>(
        &self,
        initial: PopulationState,
        rng: &mut R,
        max_steps: u64,
    ) -> Option<u64> {
        if !initial.is_interior() {
            return Some(0);
        }
        let mut s = initial;
        for t in 1..=max_steps {
            s = self.step(s, rng);
            if !s.is_interior() {
                return Some(t);
            }
        }
        None
    }

    /// `count` independent runs; run `i` draws from stream `i`, so the result
    /// does not depend on the thread schedule.
    pub fn simulate_ensemble(
        &self,
        initial: PopulationState,
        streams: &RngStreams,
        count: usize,
        max_steps: u64,
    ) -> Result<Vec<Trajectory>> {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = streams.stream(i as u64);
                let mut tr = self.simulate(initial, &mut rng, max_steps)?;
                tr.stream = Some(i as u64);
                Ok(tr)
            })
            .collect()
    }
}

fn binomial_log_weights(parents: u64, p: f64) -> Vec<(u64, f64)> {
    use statrs::function::factorial::ln_binomial;
    if p >= 1.0 {
        return vec![(parents, 1.0)];
    }
    if p <= 0.0 {
        return vec![(0, 1.0)];
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    (0..=parents)
        .map(|j| {
            let lw = ln_binomial(parents, j) + j as f64 * lp + (parents - j) as f64 * lq;
            (j, lw.exp())
        })
        .collect()
}

/// Successive-term ratio bound `P(s+1)/P(s)` for the sum of `j` litters, valid for
/// every `s' ≥ s` once `s` is past the mode.
fn ratio_bound(law: &OffspringDistribution, j: u64, s: u64) -> f64 {
    let (jf, sf) = (j as f64, s as f64);
    match law.kind() {
        OffspringKind::Poisson { mean } => jf * mean / (sf + 1.0),
        OffspringKind::ShiftedPoisson { nu } => {
            if s < j {
                f64::INFINITY
            } else {
                jf * nu / (sf - jf + 1.0)
            }
        }
        OffspringKind::Geometric { theta } => theta * (sf + jf) / (sf + 1.0),
        OffspringKind::Finite { .. } => f64::INFINITY,
    }
}

fn mixture_pmf(law: &OffspringDistribution, p: f64, parents: u64) -> Result<Pmf> {
    let mut dropped = 0.0;
    let weights: Vec<(u64, f64)> = binomial_log_weights(parents, p)
        .into_iter()
        .filter(|&(_, w)| {
            let keep = w >= WEIGHT_CUTOFF;
            if !keep {
                dropped += w;
            }
            keep
        })
        .collect();
    let j_max = weights.iter().map(|&(j, _)| j).max().unwrap_or(0);
    let top_mean = j_max as f64 * law.mean();
    let mut probs = Vec::new();
    let mut s = 0u64;
    loop {
        let ps: f64 = weights
            .iter()
            .map(|&(j, w)| w * law.sum_pmf_closed(j, s).unwrap_or(0.0))
            .sum();
        probs.push(ps);
        if s as f64 >= top_mean {
            let rho = ratio_bound(law, j_max, s);
            if rho < 1.0 {
                let tail = ps * rho / (1.0 - rho);
                if tail <= TAIL_CUTOFF {
                    return Ok(Pmf::new(probs, tail + dropped));
                }
            }
        }
        s += 1;
        if probs.len() >= PMF_RESOLUTION_BUDGET {
            return Err(Error::Resolution {
                budget: PMF_RESOLUTION_BUDGET,
            });
        }
    }
}

fn convolution_pmf(law: &OffspringDistribution, p: f64, parents: u64) -> Result<Pmf> {
    let support = law.max_support().unwrap_or(0) as usize;
    let mut single: Vec<f64> = (0..=support as u64).map(|k| p * law.pmf(k)).collect();
    single[0] = 1.0 - p * (1.0 - law.q0());
    let mut acc = vec![1.0];
    let mut dropped = 0.0;
    for _ in 0..parents {
        let mut next = vec![0.0; acc.len() + single.len() - 1];
        if next.len() > PMF_RESOLUTION_BUDGET {
            return Err(Error::Resolution {
                budget: PMF_RESOLUTION_BUDGET,
            });
        }
        for (i, a) in acc.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (k, q) in single.iter().enumerate() {
                next[i + k] += a * q;
            }
        }
        dropped += crate::offspring::trim_tail(&mut next, TAIL_CUTOFF - dropped);
        acc = next;
    }
    Ok(Pmf::new(acc, dropped))
}
