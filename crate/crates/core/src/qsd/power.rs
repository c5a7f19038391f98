use serde::{Deserialize, Serialize};

use super::SubStochastic;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerOptions {
    /// Stop once `max(|Δλ|, ‖Δπ‖₁) < tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Starting vector; uniform when absent.
    pub initial: Option<Vec<f64>>,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100_000,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QsdEstimate {
    pub pi: Vec<f64>,
    pub lambda: f64,
    /// `Σ π_i (1 − row sum_i)`, the same as `1 − λ` without cancellation.
    pub escape: f64,
    /// `‖π Q − λ π‖₁`.
    pub residual: f64,
    pub iterations: usize,
    /// False when the matrix splits into several classes; the eigenpair
    /// then depends on the starting vector.
    pub irreducible: bool,
}

/// `ν Q / ‖ν Q‖₁`.
pub fn conditioned_step<Q: SubStochastic + ?Sized>(q: &Q, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; q.dim()];
    q.left_mul(v, &mut out);
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        out.iter_mut().for_each(|o| *o /= total);
    }
    out
}

/// Dominant left eigenpair by L1-normalised power iteration.
pub fn power_iterate_qsd<Q: SubStochastic + ?Sized>(q: &Q, opts: &PowerOptions) -> Result<QsdEstimate> {
    let n = q.dim();
    if n == 0 {
        return Err(Error::Precondition("empty matrix".into()));
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::Precondition("tol must be > 0 and max_iter >= 1".into()));
    }
    let mut cur = match &opts.initial {
        None => vec![1.0 / n as f64; n],
        Some(v) => {
            if v.len() != n || v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::Precondition(format!(
                    "initial vector must have {n} nonnegative finite entries"
                )));
            }
            let total: f64 = v.iter().sum();
            if total <= 0.0 {
                return Err(Error::Precondition("initial vector has zero mass".into()));
            }
            v.iter().map(|x| x / total).collect()
        }
    };
    let irreducible = q.is_irreducible();
    let mut next = vec![0.0; n];
    let mut prev_lambda = f64::INFINITY;
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        q.left_mul(&cur, &mut next);
        let lambda: f64 = next.iter().sum();
        if !(lambda > 0.0) {
            return Err(Error::Precondition(
                "iterate vanished: the starting vector only charges transient rows".into(),
            ));
        }
        next.iter_mut().for_each(|x| *x /= lambda);
        let step: f64 = next.iter().zip(&cur).map(|(a, b)| (a - b).abs()).sum();
        residual = lambda * step;
        if (lambda - prev_lambda).abs().max(step) < opts.tol {
            let escape = cur.iter().enumerate().map(|(i, w)| w * q.deficit(i)).sum();
            return Ok(QsdEstimate {
                pi: cur,
                lambda,
                escape,
                residual,
                iterations: it,
                irreducible,
            });
        }
        prev_lambda = lambda;
        std::mem::swap(&mut cur, &mut next);
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qsd::SparseMatrix;

    #[test]
    fn two_by_two_eigenpair() {
        let m = SparseMatrix::from_dense(&[vec![0.5, 0.2], vec![0.3, 0.4]]).unwrap();
        let est = power_iterate_qsd(&m, &PowerOptions::default()).unwrap();
        assert!((est.lambda - 0.7).abs() < 1e-10);
        assert!((est.escape - 0.3).abs() < 1e-10);
        assert!((est.pi[0] - 0.6).abs() < 1e-9 && (est.pi[1] - 0.4).abs() < 1e-9);
        assert!(est.residual <= 1e-10);
        assert!(est.irreducible);
    }

    #[test]
    fn scaled_identity_is_flagged() {
        let m = SparseMatrix::from_dense(&[vec![0.9, 0.0], vec![0.0, 0.9]]).unwrap();
        let opts = PowerOptions {
            initial: Some(vec![3.0, 1.0]),
            ..Default::default()
        };
        let est = power_iterate_qsd(&m, &opts).unwrap();
        assert!((est.lambda - 0.9).abs() < 1e-15);
        assert!((est.pi[0] - 0.75).abs() < 1e-15);
        assert!(!est.irreducible);
    }

    #[test]
    fn non_convergence_reports_residual() {
        // period two: the iterate oscillates forever
        let m = SparseMatrix::from_dense(&[vec![0.0, 0.5], vec![0.5, 0.0]]).unwrap();
        let opts = PowerOptions {
            initial: Some(vec![1.0, 0.0]),
            max_iter: 50,
            ..Default::default()
        };
        match power_iterate_qsd(&m, &opts) {
            Err(Error::NonConvergence { iterations, residual }) => {
                assert_eq!(iterations, 50);
                assert!(residual > 0.1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn start_vector_does_not_matter() {
        let m = SparseMatrix::from_dense(&[
            vec![0.2, 0.3, 0.1],
            vec![0.25, 0.25, 0.3],
            vec![0.1, 0.4, 0.4],
        ])
        .unwrap();
        let a = power_iterate_qsd(&m, &PowerOptions::default()).unwrap();
        let b = power_iterate_qsd(
            &m,
            &PowerOptions {
                initial: Some(vec![0.01, 0.01, 5.0]),
                ..Default::default()
            },
        )
        .unwrap();
        assert!((a.lambda - b.lambda).abs() < 1e-9);
        let d: f64 = a.pi.iter().zip(&b.pi).map(|(x, y)| (x - y).abs()).sum();
        assert!(d < 1e-9);
        let stepped = conditioned_step(&m, &a.pi);
        let e: f64 = stepped.iter().zip(&a.pi).map(|(x, y)| (x - y).abs()).sum();
        assert!(e <= 1e-10);
    }
}
