//! Principal eigenvalue of `L + a` and the regime classification built on it.
//!
//! The sign of the principal eigenvalue decides between disease persistence
//! and extinction; the dead band around zero keeps the classifier honest
//! where discretisation error could flip the sign.

use crate::grid::ScalarField;
use crate::pde::{DiffusionOperator, PdeError};
use crate::LAMBDA_DEAD_BAND;

/// Converged principal eigenpair of `L + a`.
#[derive(Debug, Clone)]
pub struct EigenResult {
    /// Principal (largest) eigenvalue.
    pub lambda: f64,
    /// Unit-norm eigenfunction, entrywise positive.
    pub xi: ScalarField,
    /// Final 2-norm residual `||(L + a) xi - lambda xi||`.
    pub residual: f64,
    pub iterations: usize,
}

/// Power iteration on the shifted operator `A = L + a + shift I` with
/// `shift = max|a| + 4 max(d) (1/hx^2 + 1/hy^2)`, which makes `A` positive
/// semidefinite with nonnegative off-diagonals; the principal eigenvalue of
/// `L + a` is recovered by subtracting the shift. Iteration starts from the
/// normalised constant vector, whose overlap with the positive principal
/// eigenfunction can not vanish.
///
/// `tol` is relative to the norm bound of the shifted operator
/// (`shift + max|a|`, which grows like `1/h^2`): the iteration stops once
/// both the residual and the eigenvalue increment fall below `tol` times
/// that scale. Floating-point noise in the residual is itself proportional
/// to the scale, so an absolute test would be unreachable on fine grids.
/// The Rayleigh-quotient error is quadratic in the residual, which leaves
/// the returned eigenvalue far more accurate than `tol * scale`.
pub fn principal_eigenpair(
    op: &DiffusionOperator,
    a: &ScalarField,
    tol: f64,
) -> Result<EigenResult, PdeError> {
    if !op.compatible(a) {
        return Err(crate::grid::GridError::SupportMismatch.into());
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(PdeError::BadConfig {
            what: "eigenvalue solve",
            detail: format!("tolerance must lie in (0, 1), got {tol}"),
        });
    }
    let n = op.n();
    let shift = a.sup_norm() + op.shift_bound();
    let scale = shift + a.sup_norm();
    let diag: Vec<f64> = a.values().iter().map(|v| v + shift).collect();

    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut w = vec![0.0; n];
    let mut lambda_prev = f64::NAN;
    let mut last_res = f64::NAN;
    // The contraction rate is gap / (lambda_max + shift) and the shift grows
    // like 1/h^2, so fine grids legitimately need many cheap iterations.
    let max_iter = 500_000;
    for iter in 1..=max_iter {
        // w = (L + a + shift) v
        op.apply_raw(&v, &mut w);
        for k in 0..n {
            w[k] += diag[k] * v[k];
        }
        let lambda = dot(&v, &w);
        let mut res = 0.0;
        for k in 0..n {
            let d = w[k] - lambda * v[k];
            res += d * d;
        }
        let res = res.sqrt();
        last_res = res;
        if res <= tol * scale && (lambda - lambda_prev).abs() <= tol * scale {
            let min = v.iter().copied().fold(f64::INFINITY, f64::min);
            if min <= 0.0 {
                return Err(PdeError::NonpositiveEigenfunction { min });
            }
            return Ok(EigenResult {
                lambda: lambda - shift,
                xi: ScalarField::from_raw(*op.grid(), op.support().clone(), v),
                residual: res,
                iterations: iter,
            });
        }
        lambda_prev = lambda;
        let norm = dot(&w, &w).sqrt();
        for k in 0..n {
            v[k] = w[k] / norm;
        }
    }
    Err(PdeError::NonConvergence {
        what: "power iteration",
        iterations: max_iter,
        residual: last_res,
        tol: tol * scale,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Outcome of the spectral threshold test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegimeClass {
    Endemic,
    Extinction,
    /// The eigenvalue sits inside the dead band around zero.
    Indeterminate,
}

impl RegimeClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            RegimeClass::Endemic => "endemic",
            RegimeClass::Extinction => "extinction",
            RegimeClass::Indeterminate => "indeterminate",
        }
    }
}

/// Threshold diagnosis for the reservoir: principal eigenvalue of
/// `L + theta* (sigma1 - m)` plus the cheap integral sufficient test.
#[derive(Debug, Clone)]
pub struct ThresholdReport {
    /// Weight field `theta* (sigma1 - m)`.
    pub r_field: ScalarField,
    pub lambda0: f64,
    pub regime: RegimeClass,
    pub r_integral: f64,
    /// True when the weight already certifies persistence without the
    /// eigenvalue: positive integral, or nonnegative with a positive part.
    pub positivity_sufficient: bool,
    pub eigen: EigenResult,
}

pub fn threshold_report(
    op: &DiffusionOperator,
    theta_star: &ScalarField,
    sigma1: &ScalarField,
    m: &ScalarField,
    tol: f64,
) -> Result<ThresholdReport, PdeError> {
    if !op.compatible(theta_star) || !op.compatible(sigma1) || !op.compatible(m) {
        return Err(crate::grid::GridError::SupportMismatch.into());
    }
    let r_field = theta_star
        .zip_with(&sigma1.zip_with(m, |s, mm| s - mm)?, |t, d| t * d)?;
    let eigen = principal_eigenpair(op, &r_field, tol)?;
    let lambda0 = eigen.lambda;
    let regime = if lambda0 > LAMBDA_DEAD_BAND {
        RegimeClass::Endemic
    } else if lambda0 < -LAMBDA_DEAD_BAND {
        RegimeClass::Extinction
    } else {
        RegimeClass::Indeterminate
    };
    let r_integral = r_field.integrate();
    let positivity_sufficient =
        r_integral > 0.0 || (r_field.min() >= 0.0 && r_field.max() > 0.0);
    Ok(ThresholdReport {
        r_field,
        lambda0,
        regime,
        r_integral,
        positivity_sufficient,
        eigen,
    })
}
