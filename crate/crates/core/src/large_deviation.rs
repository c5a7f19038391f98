//! Cumulant generating function of a thinned litter and its Legendre transform.

use crate::error::{Error, Result};
use crate::offspring::OffspringDistribution;

/// Stationarity tolerance `|c'(s) − z|` for the Legendre maximiser.
pub const STATIONARITY_TOL: f64 = 1e-12;
const MAX_NEWTON: usize = 500;
const MAX_BRACKET: usize = 2000;

/// One parent's offspring: a full litter from `q` kept with probability `p`.
#[derive(Debug, Clone, Copy)]
pub struct ThinnedLitter<'a> {
    law: &'a OffspringDistribution,
    survival: f64,
}

/// Maximiser and value of `z s − c(s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyPoint {
    pub value: f64,
    /// Maximising `s`; infinite at the edges of the support.
    pub s: f64,
    pub iterations: usize,
}

impl<'a> ThinnedLitter<'a> {
    pub fn new(law: &'a OffspringDistribution, survival: f64) -> Self {
        Self { law, survival }
    }

    pub fn survival(&self) -> f64 {
        self.survival
    }

    pub fn mean(&self) -> f64 {
        self.survival * self.law.mean()
    }

    pub fn variance(&self) -> f64 {
        let (p, mu) = (self.survival, self.law.mean());
        p * self.law.variance() + p * (1.0 - p) * mu * mu
    }

    /// `P(ξ = 0) = 1 − p(1 − q_0)`.
    pub fn zero_mass(&self) -> f64 {
        1.0 - self.survival * (1.0 - self.law.q0())
    }

    /// `(c, c', c'')` at `s`, computed in the log domain.
    pub fn log_mgf_derivatives(&self, s: f64) -> Result<(f64, f64, f64)> {
        let (ls, ld1, ld2) = self.law.ln_mgf_derivatives(s)?;
        let lp = self.survival.ln();
        let lq = (-self.survival).ln_1p();
        let hi = lp + ls;
        let c = if lq == f64::NEG_INFINITY {
            hi
        } else {
            let top = hi.max(lq);
            top + ((hi - top).exp() + (lq - top).exp()).ln()
        };
        let d1 = (lp + ld1 - c).exp();
        let d2 = ((lp + ld2 - c).exp() - d1 * d1).max(0.0);
        Ok((c, d1, d2))
    }

    pub fn log_mgf(&self, s: f64) -> Result<f64> {
        if s == 0.0 {
            return Ok(0.0);
        }
        Ok(self.log_mgf_derivatives(s)?.0)
    }

    pub fn entropy(&self, z: f64) -> Result<f64> {
        Ok(self.entropy_point(z)?.value)
    }

    /// `c*(z) = sup_s [z s − c(s)]` by safeguarded Newton on `c'(s) = z`.
    pub fn entropy_point(&self, z: f64) -> Result<EntropyPoint> {
        if !z.is_finite() || z < 0.0 {
            return Err(Error::Domain(format!("entropy argument must be >= 0, got {z}")));
        }
        let mean = self.mean();
        if z == mean {
            return Ok(EntropyPoint {
                value: 0.0,
                s: 0.0,
                iterations: 0,
            });
        }
        if z == 0.0 {
            return Ok(EntropyPoint {
                value: -self.zero_mass().ln(),
                s: f64::NEG_INFINITY,
                iterations: 0,
            });
        }
        if let Some(top) = self.law.max_support() {
            let top = top as f64;
            if z > top {
                return Ok(EntropyPoint {
                    value: f64::INFINITY,
                    s: f64::INFINITY,
                    iterations: 0,
                });
            }
            if z == top {
                let q_top = self.survival * self.law.pmf(top as u64);
                return Ok(EntropyPoint {
                    value: -q_top.ln(),
                    s: f64::INFINITY,
                    iterations: 0,
                });
            }
        }

        let slope = |s: f64| -> Result<f64> { Ok(self.log_mgf_derivatives(s)?.1) };
        let abscissa = self.law.mgf_abscissa();
        let (mut lo, mut hi);
        if z > mean {
            lo = 0.0;
            hi = 1.0f64.min(0.5 * abscissa);
            let mut n = 0;
            while slope(hi)? <= z {
                lo = hi;
                hi = if abscissa.is_finite() {
                    hi + 0.5 * (abscissa - hi)
                } else {
                    2.0 * hi
                };
                n += 1;
                if n > MAX_BRACKET || hi == lo {
                    return Err(Error::NonConvergence {
                        iterations: n,
                        residual: z - slope(lo)?,
                    });
                }
            }
        } else {
            hi = 0.0;
            lo = -1.0;
            let mut n = 0;
            while slope(lo)? >= z {
                hi = lo;
                lo *= 2.0;
                n += 1;
                if n > MAX_BRACKET {
                    return Err(Error::NonConvergence {
                        iterations: n,
                        residual: slope(hi)? - z,
                    });
                }
            }
        }

        let tol = STATIONARITY_TOL * z.max(1.0);
        let mut s = 0.5 * (lo + hi);
        let mut residual = f64::INFINITY;
        for it in 1..=MAX_NEWTON {
            let (c, d1, d2) = self.log_mgf_derivatives(s)?;
            residual = d1 - z;
            if residual.abs() <= tol || hi - lo <= 4.0 * f64::EPSILON * s.abs().max(1.0) {
                return Ok(EntropyPoint {
                    value: (z * s - c).max(0.0),
                    s,
                    iterations: it,
                });
            }
            if residual < 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            let newton = s - residual / d2;
            s = if d2 > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        Err(Error::NonConvergence {
            iterations: MAX_NEWTON,
            residual,
        })
    }
}
