//! Linear autoregressive model of the fluctuations around the coexistence
//! point: `Z_{t+1} = A Z_t + ε_t` with `A` the Jacobian of `F` and
//! `Cov ε = diag(Var X_1, Var Y_1)` at the fixed point.

use serde::{Deserialize, Serialize};

use crate::branching::BranchingModel;
use crate::deterministic::{classify_coexistence, mat_mul, spectral_radius, transpose, Mat2};
use crate::error::{Error, Result};
use crate::model::{ModelParams, NormedState};

const MAX_DOUBLINGS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub fixed_point: NormedState,
    pub a: Mat2,
    pub noise_cov: Mat2,
    pub stationary_cov: Mat2,
    pub spectral_radius: f64,
    /// `max |Σ − A Σ Aᵀ − noise|`.
    pub lyapunov_residual: f64,
}

fn add(a: &Mat2, b: &Mat2) -> Mat2 {
    [[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]]
}

fn sandwich(a: &Mat2, s: &Mat2) -> Mat2 {
    mat_mul(&mat_mul(a, s), &transpose(a))
}

fn max_abs_diff(a: &Mat2, b: &Mat2) -> f64 {
    (0..2)
        .flat_map(|i| (0..2).map(move |j| (i, j)))
        .map(|(i, j)| (a[i][j] - b[i][j]).abs())
        .fold(0.0, f64::max)
}

/// Solution of `Σ = A Σ Aᵀ + Q`, summing `Σ_j A^j Q (A^j)ᵀ` by repeated
/// squaring. Needs `ρ(A) < 1`.
pub fn solve_lyapunov(a: &Mat2, q: &Mat2) -> Result<(Mat2, f64)> {
    if !(spectral_radius(a) < 1.0) {
        return Err(Error::NotApplicable(format!(
            "spectral radius {} >= 1",
            spectral_radius(a)
        )));
    }
    let mut sigma = *q;
    let mut power = *a;
    for _ in 0..MAX_DOUBLINGS {
        let next = add(&sigma, &sandwich(&power, &sigma));
        let change = max_abs_diff(&next, &sigma);
        sigma = next;
        power = mat_mul(&power, &power);
        if change == 0.0 || power.iter().flatten().all(|v| v.abs() < f64::MIN_POSITIVE) {
            break;
        }
    }
    // a few plain sweeps of Σ ← AΣAᵀ + Q polish the last bits
    for _ in 0..4 {
        sigma = add(&sandwich(a, &sigma), q);
    }
    sigma[0][1] = 0.5 * (sigma[0][1] + sigma[1][0]);
    sigma[1][0] = sigma[0][1];
    let residual = max_abs_diff(&sigma, &add(&sandwich(a, &sigma), q));
    Ok((sigma, residual))
}

pub fn ar_approximation(params: &ModelParams) -> Result<ArModel> {
    let class = classify_coexistence(params)?;
    let a = class.jacobian;
    let model = BranchingModel::new(params.clone())?;
    let (vx, vy) = model.conditional_variance(class.fixed_point);
    let noise_cov = [[vx, 0.0], [0.0, vy]];
    let (stationary_cov, lyapunov_residual) = solve_lyapunov(&a, &noise_cov)?;
    Ok(ArModel {
        fixed_point: class.fixed_point,
        a,
        noise_cov,
        stationary_cov,
        spectral_radius: spectral_radius(&a),
        lyapunov_residual,
    })
}

/// Ratios `measured / predicted` for `xx`, `yy` and the trace.
pub fn covariance_ratios(measured: &Mat2, predicted: &Mat2) -> [f64; 3] {
    [
        measured[0][0] / predicted[0][0],
        measured[1][1] / predicted[1][1],
        (measured[0][0] + measured[1][1]) / (predicted[0][0] + predicted[1][1]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decoupled_closed_form() {
        let params = ModelParams::with_equal_k(1.2, 0.7, 0.1, 0.0, 0.0).unwrap();
        let ar = ar_approximation(&params).unwrap();
        assert!((ar.a[0][0] - (1.0 - 1.2)).abs() < 1e-12);
        assert!((ar.a[1][1] - (1.0 - 0.7)).abs() < 1e-12);
        assert!(ar.a[0][1].abs() < 1e-15 && ar.a[1][0].abs() < 1e-15);
        for (i, r) in [(0, 1.2f64), (1, 0.7)] {
            let expect = ar.noise_cov[i][i] / (1.0 - (1.0 - r).powi(2));
            assert!((ar.stationary_cov[i][i] - expect).abs() < 1e-12);
        }
        assert!(ar.stationary_cov[0][1].abs() < 1e-15);
        assert!(ar.lyapunov_residual <= 1e-10);
    }

    #[test]
    fn coupled_solution_is_psd_and_satisfies_identity() {
        let params = ModelParams::with_equal_k(1.2, 1.2, 0.1, 0.5, 0.5).unwrap();
        let ar = ar_approximation(&params).unwrap();
        let s = ar.stationary_cov;
        assert!(ar.lyapunov_residual <= 1e-10);
        assert_eq!(s[0][1], s[1][0]);
        assert!(s[0][0] > 0.0 && s[0][0] * s[1][1] - s[0][1] * s[0][1] >= 0.0);
        assert!((ar.spectral_radius - 0.6).abs() < 1e-9);
    }

    #[test]
    fn near_unit_radius_still_converges() {
        let a = [[0.999, 0.0], [0.0, -0.5]];
        let (s, res) = solve_lyapunov(&a, &[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!((s[0][0] - 1.0 / (1.0 - 0.999f64.powi(2))).abs() < 1e-8);
        assert!(res <= 1e-10 * s[0][0]);
    }

    #[test]
    fn repelling_point_is_not_applicable() {
        let params = ModelParams::with_equal_k(2.2, 2.2, 0.1, 0.1, 0.1).unwrap();
        assert!(matches!(ar_approximation(&params), Err(Error::NotApplicable(_))));
    }
}
