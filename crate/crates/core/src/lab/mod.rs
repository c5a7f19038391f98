//! Experiments that follow the QSD as `K = K̃` shrinks: the rate at which
//! `λ(K)` approaches one, concentration near the coexistence point, mass in
//! the axis strips, retention in invariant sets, the autoregressive
//! covariance approximation and the support of the limit in cycling regimes.

mod ar;
mod cycles;
mod retention;
pub mod stats;
mod sweep;

pub use ar::{ar_approximation, covariance_ratios, solve_lyapunov, ArModel};
pub use cycles::{cycle_support_study, CycleMass, CycleStudyOptions, CycleStudyReport};
pub use retention::{
    fit_retention, one_step_escape_bound, retention_check, RetentionFit, RetentionOptions,
    RetentionResult, StartRetention,
};
pub use sweep::{
    default_box, fit_lambda_scaling, fit_records, qsd_record, sweep_k, tightness_report, QsdMethod,
    ScalingFit, SweepOptions, SweepOutcome, SweepRecord, TightnessReport, MATRIX_STATE_LIMIT,
};
