//! Model constants and state types shared by every part of the toolkit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which of the two competing populations an operation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Species {
    /// First population (counts `m`, normed coordinate `x`).
    U,
    /// Second population (counts `n`, normed coordinate `y`).
    V,
}

/// Family of the base offspring law `q` (resp. `q̃`).
///
/// Every family is parametrised so that its mean equals `e^r` (resp. `e^r̃`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OffspringLaw {
    /// Poisson with mean `e^r`.
    #[default]
    Poisson,
    /// Geometric on `{0, 1, 2, ...}` with mean `e^r`.
    Geometric,
    /// `1 + Poisson(e^r - 1)`; puts no mass at zero. Requires `r >= 0`.
    ShiftedPoisson,
    /// User supplied pmfs on `{0, 1, ..., len-1}` for both species.
    Finite { u: Vec<f64>, v: Vec<f64> },
}

/// The six model constants plus the offspring law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub r: f64,
    pub r_tilde: f64,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "K_tilde")]
    pub k_tilde: f64,
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub offspring: OffspringLaw,
}

impl ModelParams {
    pub fn new(r: f64, r_tilde: f64, k: f64, k_tilde: f64, a: f64, b: f64) -> Result<Self> {
        let p = Self {
            r,
            r_tilde,
            k,
            k_tilde,
            a,
            b,
            offspring: OffspringLaw::Poisson,
        };
        p.validate()?;
        Ok(p)
    }

    /// Equal inhibition `K = K̃` for both species.
    pub fn with_equal_k(r: f64, r_tilde: f64, k: f64, a: f64, b: f64) -> Result<Self> {
        Self::new(r, r_tilde, k, k, a, b)
    }

    pub fn with_offspring(mut self, law: OffspringLaw) -> Self {
        self.offspring = law;
        self
    }

    /// Copy of `self` with both inhibition constants set to `k`.
    pub fn at_k(&self, k: f64) -> Result<Self> {
        let mut p = self.clone();
        p.k = k;
        p.k_tilde = k;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let fields: [(&'static str, f64); 6] = [
            ("r", self.r),
            ("r_tilde", self.r_tilde),
            ("K", self.k),
            ("K_tilde", self.k_tilde),
            ("a", self.a),
            ("b", self.b),
        ];
        for (field, v) in fields {
            if !v.is_finite() {
                return Err(Error::InvalidParameter {
                    field,
                    reason: format!("must be finite, got {v}"),
                });
            }
        }
        for (field, v) in [("K", self.k), ("K_tilde", self.k_tilde)] {
            if v <= 0.0 {
                return Err(Error::InvalidParameter {
                    field,
                    reason: format!("must be > 0, got {v}"),
                });
            }
        }
        for (field, v) in [("a", self.a), ("b", self.b)] {
            if v < 0.0 {
                return Err(Error::InvalidParameter {
                    field,
                    reason: format!("must be >= 0, got {v}"),
                });
            }
        }
        let (ae, be) = (self.a_eff(), self.b_eff());
        if !ae.is_finite() || !be.is_finite() {
            return Err(Error::InvalidParameter {
                field: "K",
                reason: "K/K_tilde ratio makes the effective coefficients non-finite".into(),
            });
        }
        Ok(())
    }

    /// `b·K/K̃`, the coefficient of `y` in the first coordinate of the normed map.
    #[inline]
    pub fn b_eff(&self) -> f64 {
        self.b * self.k / self.k_tilde
    }

    /// `a·K̃/K`, the coefficient of `x` in the second coordinate of the normed map.
    #[inline]
    pub fn a_eff(&self) -> f64 {
        self.a * self.k_tilde / self.k
    }

    #[inline]
    pub fn growth(&self, species: Species) -> f64 {
        match species {
            Species::U => self.r,
            Species::V => self.r_tilde,
        }
    }

    #[inline]
    pub fn inhibition(&self, species: Species) -> f64 {
        match species {
            Species::U => self.k,
            Species::V => self.k_tilde,
        }
    }

    /// Normed image of a count state: `(K m, K̃ n)`.
    pub fn normed(&self, s: PopulationState) -> NormedState {
        NormedState::new(self.k * s.m as f64, self.k_tilde * s.n as f64)
    }
}

/// Normed densities `(x, y) = (K m, K̃ n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormedState {
    pub x: f64,
    pub y: f64,
}

impl NormedState {
    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub const ORIGIN: NormedState = NormedState::new(0.0, 0.0);

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn in_first_quadrant(&self) -> bool {
        self.is_finite() && self.x >= 0.0 && self.y >= 0.0
    }

    pub fn coord(&self, species: Species) -> f64 {
        match species {
            Species::U => self.x,
            Species::V => self.y,
        }
    }

    pub fn dist_inf(&self, other: &NormedState) -> f64 {
        (self.x - other.x).abs().max((self.y - other.y).abs())
    }

    pub fn dist(&self, other: &NormedState) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Integer population sizes `(m, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PopulationState {
    pub m: u64,
    pub n: u64,
}

impl PopulationState {
    #[inline]
    pub const fn new(m: u64, n: u64) -> Self {
        Self { m, n }
    }

    /// Both species present.
    #[inline]
    pub fn is_interior(&self) -> bool {
        self.m > 0 && self.n > 0
    }

    pub fn count(&self, species: Species) -> u64 {
        match species {
            Species::U => self.m,
            Species::V => self.n,
        }
    }
}

/// Axis-aligned rectangle `[x_lo, x_hi] × [y_lo, y_hi]` in normed coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl Rect {
    pub const fn new(x_lo: f64, x_hi: f64, y_lo: f64, y_hi: f64) -> Self {
        Self {
            x_lo,
            x_hi,
            y_lo,
            y_hi,
        }
    }

    pub fn square(lo: f64, hi: f64) -> Self {
        Self::new(lo, hi, lo, hi)
    }

    pub fn contains(&self, p: &NormedState) -> bool {
        p.x >= self.x_lo && p.x <= self.x_hi && p.y >= self.y_lo && p.y <= self.y_hi
    }

    pub fn is_inside_open_quadrant(&self) -> bool {
        self.x_lo > 0.0 && self.y_lo > 0.0 && self.x_hi > self.x_lo && self.y_hi > self.y_lo
    }

    pub fn diagonal(&self) -> f64 {
        (self.x_hi - self.x_lo).hypot(self.y_hi - self.y_lo)
    }

    /// Signed distance from `p` to the complement: positive inside, the
    /// smallest gap to any of the four edges.
    pub fn inner_distance(&self, p: &NormedState) -> f64 {
        (p.x - self.x_lo)
            .min(self.x_hi - p.x)
            .min(p.y - self.y_lo)
            .min(self.y_hi - p.y)
    }

    /// Grow every edge by `margin`, keeping the lower edges strictly positive
    /// (never closer to an axis than half their original distance).
    pub fn inflate_in_quadrant(&self, margin: f64) -> Self {
        Self::new(
            self.x_lo - margin.min(0.5 * self.x_lo),
            self.x_hi + margin,
            self.y_lo - margin.min(0.5 * self.y_lo),
            self.y_hi + margin,
        )
    }
}
