//! Where does the QSD mass go when the coexistence point is not attracting?
//! For each `K` we measure the mass within a radius of the attracting cycle
//! of `F`, and test for a trend as `K` decreases.

use serde::{Deserialize, Serialize};

use super::stats::kendall_tau;
use super::sweep::{qsd_record, SweepOptions};
use crate::deterministic::{classify_coexistence, detect_cycle, Cycle, CycleOptions, Stability};
use crate::error::{Error, Result};
use crate::model::{ModelParams, NormedState};
use crate::rng::RngStreams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleStudyOptions {
    pub radius: f64,
    pub cycle: CycleOptions,
    pub start: NormedState,
    pub sweep: SweepOptions,
}

impl Default for CycleStudyOptions {
    fn default() -> Self {
        Self {
            radius: 0.1,
            cycle: CycleOptions::default(),
            start: NormedState::new(0.5, 0.4),
            sweep: SweepOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleMass {
    #[serde(rename = "K")]
    pub k: f64,
    pub mass: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleStudyReport {
    pub stability: Option<Stability>,
    pub cycle: Option<Cycle>,
    pub radius: f64,
    pub masses: Vec<CycleMass>,
    /// Kendall tau between `K` and the mass; negative means the mass grows as `K` shrinks.
    pub kendall_tau: Option<f64>,
    pub conclusive: bool,
    pub note: String,
}

pub fn cycle_support_study(
    params: &ModelParams,
    k_values: &[f64],
    opts: &CycleStudyOptions,
    streams: &RngStreams,
) -> Result<CycleStudyReport> {
    if !(opts.radius > 0.0) {
        return Err(Error::Precondition("radius must be > 0".into()));
    }
    let stability = classify_coexistence(params).ok().map(|c| c.class);
    let cycle = detect_cycle(params, opts.start, &opts.cycle)?;
    let Some(cycle) = cycle else {
        return Ok(CycleStudyReport {
            stability,
            cycle: None,
            radius: opts.radius,
            masses: Vec::new(),
            kendall_tau: None,
            conclusive: false,
            note: "no attracting cycle detected; study inconclusive".into(),
        });
    };
    let masses: Vec<CycleMass> = k_values
        .iter()
        .enumerate()
        .map(|(i, &k)| match qsd_record(params, k, &opts.sweep, &streams.derive(i as u64)) {
            Ok(rec) => {
                let near = |p: NormedState| cycle.points.iter().any(|c| c.dist(&p) <= opts.radius);
                CycleMass {
                    k,
                    mass: Some(rec.distribution.mass_where(&rec.params, near)),
                    error: None,
                }
            }
            Err(e) => CycleMass {
                k,
                mass: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let (ks, ms): (Vec<f64>, Vec<f64>) = masses
        .iter()
        .filter_map(|m| m.mass.map(|v| (m.k, v)))
        .unzip();
    let tau = if ks.len() >= 2 { kendall_tau(&ks, &ms) } else { None };
    let note = match tau {
        Some(t) if t < 0.0 => "mass near the cycle grows as K decreases".to_string(),
        Some(t) if t > 0.0 => "mass near the cycle shrinks as K decreases".to_string(),
        Some(_) => "no monotone trend".to_string(),
        None => "too few successful cells for a trend".to_string(),
    };
    Ok(CycleStudyReport {
        stability,
        cycle: Some(cycle),
        radius: opts.radius,
        masses,
        kendall_tau: tau,
        conclusive: tau.is_some(),
        note,
    })
}
