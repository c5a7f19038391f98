//! Base offspring laws `q`, parametrised by their mean `e^r`.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson, weighted::WeightedIndex};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{ModelParams, OffspringLaw, Species};

/// Tolerance on `Σ q_k = 1` for user supplied pmfs.
pub const PMF_SUM_TOL: f64 = 1e-12;
/// Tolerance on `mean = e^r` for user supplied pmfs.
pub const MEAN_TOL: f64 = 1e-9;
/// Tail mass below which trailing pmf entries are dropped.
pub const TAIL_CUTOFF: f64 = 1e-14;

#[derive(Debug, Clone)]
pub enum OffspringKind {
    Poisson { mean: f64 },
    /// `q_k = (1 − θ) θ^k`.
    Geometric { theta: f64 },
    /// `1 + Poisson(nu)`.
    ShiftedPoisson { nu: f64 },
    Finite { pmf: Vec<f64>, sampler: WeightedIndex<f64> },
}

/// A base offspring law together with its first two moments.
#[derive(Debug, Clone)]
pub struct OffspringDistribution {
    kind: OffspringKind,
    mean: f64,
    variance: f64,
}

impl OffspringDistribution {
    pub fn poisson(mean: f64) -> Result<Self> {
        check_mean(mean)?;
        Ok(Self {
            kind: OffspringKind::Poisson { mean },
            mean,
            variance: mean,
        })
    }

    pub fn geometric(mean: f64) -> Result<Self> {
        check_mean(mean)?;
        let theta = mean / (1.0 + mean);
        Ok(Self {
            kind: OffspringKind::Geometric { theta },
            mean,
            variance: mean * (1.0 + mean),
        })
    }

    pub fn shifted_poisson(mean: f64) -> Result<Self> {
        check_mean(mean)?;
        if mean < 1.0 {
            return Err(Error::Domain(format!(
                "shifted Poisson law needs mean >= 1, got {mean}"
            )));
        }
        Ok(Self {
            kind: OffspringKind::ShiftedPoisson { nu: mean - 1.0 },
            mean,
            variance: mean - 1.0,
        })
    }

    /// Finite pmf on `{0, ..., len−1}`; must sum to one and have mean `expected_mean`.
    pub fn finite(pmf: &[f64], expected_mean: f64) -> Result<Self> {
        if pmf.iter().any(|q| !q.is_finite() || *q < 0.0) {
            return Err(Error::Domain("pmf entries must be finite and >= 0".into()));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > PMF_SUM_TOL {
            return Err(Error::Domain(format!("pmf sums to {total}, expected 1")));
        }
        let mut pmf = pmf.to_vec();
        trim_tail(&mut pmf, TAIL_CUTOFF);
        let mean: f64 = pmf.iter().enumerate().map(|(k, q)| k as f64 * q).sum();
        if (mean - expected_mean).abs() > MEAN_TOL * expected_mean.max(1.0) {
            return Err(Error::Domain(format!(
                "pmf mean {mean} differs from e^r = {expected_mean}"
            )));
        }
        let second: f64 = pmf
            .iter()
            .enumerate()
            .map(|(k, q)| (k * k) as f64 * q)
            .sum();
        let sampler = WeightedIndex::new(&pmf)
            .map_err(|e| Error::Domain(format!("pmf not sampleable: {e}")))?;
        Ok(Self {
            kind: OffspringKind::Finite { pmf, sampler },
            mean,
            variance: second - mean * mean,
        })
    }

    /// Law of the given species, with mean `e^r` (resp. `e^r̃`).
    pub fn for_species(params: &ModelParams, species: Species) -> Result<Self> {
        let mean = params.growth(species).exp();
        match &params.offspring {
            OffspringLaw::Poisson => Self::poisson(mean),
            OffspringLaw::Geometric => Self::geometric(mean),
            OffspringLaw::ShiftedPoisson => Self::shifted_poisson(mean),
            OffspringLaw::Finite { u, v } => match species {
                Species::U => Self::finite(u, mean),
                Species::V => Self::finite(v, mean),
            },
        }
    }

    pub fn kind(&self) -> &OffspringKind {
        &self.kind
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// `q_k`.
    pub fn pmf(&self, k: u64) -> f64 {
        match &self.kind {
            OffspringKind::Poisson { mean } => poisson_pmf(*mean, k),
            OffspringKind::Geometric { theta } => (1.0 - theta) * theta.powf(k as f64),
            OffspringKind::ShiftedPoisson { nu } => {
                if k == 0 {
                    0.0
                } else {
                    poisson_pmf(*nu, k - 1)
                }
            }
            OffspringKind::Finite { pmf, .. } => pmf.get(k as usize).copied().unwrap_or(0.0),
        }
    }

    pub fn q0(&self) -> f64 {
        self.pmf(0)
    }

    /// Largest `k` with `q_k > 0`, if the support is finite.
    pub fn max_support(&self) -> Option<u64> {
        match &self.kind {
            OffspringKind::Finite { pmf, .. } => Some(pmf.len().saturating_sub(1) as u64),
            _ => None,
        }
    }

    /// Supremum of the region where `S(s) = E e^{sξ}` is finite.
    pub fn mgf_abscissa(&self) -> f64 {
        match &self.kind {
            OffspringKind::Geometric { theta } => -theta.ln(),
            _ => f64::INFINITY,
        }
    }

    /// `(ln S, ln S', ln S'')` at `s`.
    pub fn ln_mgf_derivatives(&self, s: f64) -> Result<(f64, f64, f64)> {
        if !s.is_finite() || s >= self.mgf_abscissa() {
            return Err(Error::Domain(format!(
                "s = {s} outside the mgf convergence region (< {})",
                self.mgf_abscissa()
            )));
        }
        let es = s.exp();
        Ok(match &self.kind {
            OffspringKind::Poisson { mean } => {
                let ln_s = mean * (es - 1.0);
                let ln_d1 = ln_s + mean.ln() + s;
                let ln_d2 = ln_s + (mean * es + mean * mean * es * es).ln();
                (ln_s, ln_d1, ln_d2)
            }
            OffspringKind::ShiftedPoisson { nu } => {
                let ln_s = s + nu * (es - 1.0);
                let lin = 1.0 + nu * es;
                (ln_s, ln_s + lin.ln(), ln_s + (lin * lin + nu * es).ln())
            }
            OffspringKind::Geometric { theta } => {
                let te = theta * es;
                let ln_1m = (1.0 - theta).ln();
                let ln_den = (-te).ln_1p();
                let ln_s = ln_1m - ln_den;
                let ln_d1 = ln_1m + te.ln() - 2.0 * ln_den;
                let ln_d2 = ln_1m + te.ln() + te.ln_1p() - 3.0 * ln_den;
                (ln_s, ln_d1, ln_d2)
            }
            OffspringKind::Finite { pmf, .. } => {
                let lse = |power: i32| {
                    let terms: Vec<f64> = pmf
                        .iter()
                        .enumerate()
                        .filter(|(k, q)| **q > 0.0 && (power == 0 || *k > 0))
                        .map(|(k, q)| {
                            let weight = if power == 0 { 0.0 } else { power as f64 * (k as f64).ln() };
                            q.ln() + s * k as f64 + weight
                        })
                        .collect();
                    log_sum_exp(&terms)
                };
                (lse(0), lse(1), lse(2))
            }
        })
    }

    /// Total offspring of `parents` independent full litters.
    pub fn sample_sum<R: Rng + ?Sized>(&self, parents: u64, rng: &mut R) -> u64 {
        if parents == 0 {
            return 0;
        }
        match &self.kind {
            OffspringKind::Poisson { mean } => sample_poisson(parents as f64 * mean, rng),
            OffspringKind::ShiftedPoisson { nu } => {
                parents + sample_poisson(parents as f64 * nu, rng)
            }
            OffspringKind::Geometric { theta } => {
                // negative binomial as a gamma mixed Poisson
                let g = Gamma::new(parents as f64, theta / (1.0 - theta))
                    .expect("valid gamma parameters");
                sample_poisson(g.sample(rng), rng)
            }
            OffspringKind::Finite { sampler, .. } => {
                (0..parents).map(|_| sampler.sample(rng) as u64).sum()
            }
        }
    }

    /// Closed form for the pmf of the sum of `j` full litters at `s`, when
    /// one exists.
    pub(crate) fn sum_pmf_closed(&self, j: u64, s: u64) -> Option<f64> {
        let jf = j as f64;
        let sf = s as f64;
        match &self.kind {
            OffspringKind::Poisson { mean } => Some(poisson_pmf(jf * mean, s)),
            OffspringKind::ShiftedPoisson { nu } => Some(if s < j {
                0.0
            } else {
                poisson_pmf(jf * nu, s - j)
            }),
            OffspringKind::Geometric { theta } => Some(if j == 0 {
                if s == 0 { 1.0 } else { 0.0 }
            } else {
                (ln_gamma(sf + jf) - ln_gamma(jf) - ln_gamma(sf + 1.0)
                    + jf * (1.0 - theta).ln()
                    + sf * theta.ln())
                .exp()
            }),
            OffspringKind::Finite { .. } => None,
        }
    }
}

fn check_mean(mean: f64) -> Result<()> {
    if mean.is_finite() && mean > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("offspring mean must be finite and > 0, got {mean}")))
    }
}

pub(crate) fn poisson_pmf(lambda: f64, k: u64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let kf = k as f64;
    (-lambda + kf * lambda.ln() - ln_gamma(kf + 1.0)).exp()
}

fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    let d = Poisson::new(lambda).expect("positive finite Poisson mean");
    d.sample(rng) as u64
}

pub(crate) fn sample_binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Drop trailing entries whose cumulative mass is below `cutoff`; returns the dropped mass.
pub(crate) fn trim_tail(pmf: &mut Vec<f64>, cutoff: f64) -> f64 {
    let mut dropped = 0.0;
    while let Some(&last) = pmf.last() {
        if pmf.len() > 1 && dropped + last < cutoff {
            dropped += last;
            pmf.pop();
        } else {
            break;
        }
    }
    dropped
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn moments(d: &OffspringDistribution, upto: u64) -> (f64, f64, f64) {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for k in 0..upto {
            let q = d.pmf(k);
            s0 += q;
            s1 += k as f64 * q;
            s2 += (k * k) as f64 * q;
        }
        (s0, s1, s2 - s1 * s1)
    }

    #[test]
    fn families_have_mean_e_r() {
        let mu = 1.2f64.exp();
        for d in [
            OffspringDistribution::poisson(mu).unwrap(),
            OffspringDistribution::geometric(mu).unwrap(),
            OffspringDistribution::shifted_poisson(mu).unwrap(),
        ] {
            let (tot, mean, var) = moments(&d, 400);
            assert!((tot - 1.0).abs() < 1e-12);
            assert!((mean - mu).abs() < 1e-9);
            assert!((var - d.variance()).abs() < 1e-8);
        }
        assert_eq!(OffspringDistribution::shifted_poisson(mu).unwrap().q0(), 0.0);
    }

    #[test]
    fn finite_pmf_validation() {
        let pmf = [0.25, 0.25, 0.5];
        let d = OffspringDistribution::finite(&pmf, 1.25).unwrap();
        assert!((d.variance() - (0.25 + 2.0 - 1.5625)).abs() < 1e-15);
        assert_eq!(d.max_support(), Some(2));
        assert!(OffspringDistribution::finite(&pmf, 1.0).is_err());
        assert!(OffspringDistribution::finite(&[0.5, 0.4], 0.4).is_err());
        assert!(OffspringDistribution::finite(&[-0.5, 1.5], 1.5).is_err());
    }

    #[test]
    fn ln_mgf_matches_direct_sums() {
        let mu = 0.7f64.exp();
        for d in [
            OffspringDistribution::poisson(mu).unwrap(),
            OffspringDistribution::geometric(mu).unwrap(),
            OffspringDistribution::shifted_poisson(mu).unwrap(),
            OffspringDistribution::finite(&[0.3, 0.2, 0.1, 0.4], 1.6).unwrap(),
        ] {
            for s in [-2.0, -0.3, 0.0, 0.2, 0.35] {
                let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
                for k in 0..600u64 {
                    let w = d.pmf(k) * (s * k as f64).exp();
                    m0 += w;
                    m1 += k as f64 * w;
                    m2 += (k * k) as f64 * w;
                }
                let (l0, l1, l2) = d.ln_mgf_derivatives(s).unwrap();
                assert!((l0.exp() / m0 - 1.0).abs() < 1e-10, "{s}");
                assert!((l1.exp() / m1 - 1.0).abs() < 1e-10, "{s}");
                assert!((l2.exp() / m2 - 1.0).abs() < 1e-10, "{s}");
            }
        }
        let g = OffspringDistribution::geometric(mu).unwrap();
        assert!(g.ln_mgf_derivatives(g.mgf_abscissa() + 0.1).is_err());
    }

    #[test]
    fn sample_sum_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mu = 1.5;
        for d in [
            OffspringDistribution::poisson(mu).unwrap(),
            OffspringDistribution::geometric(mu).unwrap(),
            OffspringDistribution::shifted_poisson(mu).unwrap(),
            OffspringDistribution::finite(&[0.25, 0.25, 0.0, 0.5], 1.75).unwrap(),
        ] {
            let n = 20_000;
            let total: u64 = (0..n).map(|_| d.sample_sum(3, &mut rng)).sum();
            let mean = total as f64 / n as f64;
            let se = (3.0 * d.variance() / n as f64).sqrt();
            assert!((mean - 3.0 * d.mean()).abs() < 4.0 * se, "{mean}");
        }
    }
}
