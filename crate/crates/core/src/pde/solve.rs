//! Conjugate-gradient solves of shifted diffusion systems.

use crate::grid::ScalarField;
use crate::pde::{DiffusionOperator, PdeError};

/// Iteration count and final relative residual of a linear solve.
#[derive(Debug, Clone, Copy)]
pub struct CgReport {
    pub iterations: usize,
    pub residual: f64,
}

/// Solve `(shift I - L) x = rhs` by conjugate gradients from `x = 0`,
/// stopping when `||r||_2 <= tol ||rhs||_2`. The matrix is symmetric
/// positive definite for any `shift > 0` because `-L` is positive
/// semidefinite.
pub fn linear_solve(
    op: &DiffusionOperator,
    shift: f64,
    rhs: &ScalarField,
    tol: f64,
) -> Result<(ScalarField, CgReport), PdeError> {
    if !(shift > 0.0 && shift.is_finite()) {
        return Err(PdeError::BadConfig {
            what: "linear solve",
            detail: format!("shift must be positive and finite, got {shift}"),
        });
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(PdeError::BadConfig {
            what: "linear solve",
            detail: format!("relative tolerance must lie in (0, 1), got {tol}"),
        });
    }
    if !op.compatible(rhs) {
        return Err(crate::grid::GridError::SupportMismatch.into());
    }
    let mut x = vec![0.0; op.n()];
    let report = cg_raw(op, shift, rhs.values(), &mut x, tol)?;
    Ok((
        ScalarField::from_raw(*op.grid(), op.support().clone(), x),
        report,
    ))
}

/// In-place CG kernel shared by the public solve and the steppers.
pub(crate) fn cg_raw(
    op: &DiffusionOperator,
    shift: f64,
    rhs: &[f64],
    x: &mut [f64],
    tol: f64,
) -> Result<CgReport, PdeError> {
    let n = rhs.len();
    let b_norm = norm2(rhs);
    x.fill(0.0);
    if b_norm == 0.0 {
        return Ok(CgReport {
            iterations: 0,
            residual: 0.0,
        });
    }
    let target = tol * b_norm;
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rs = dot(&r, &r);
    let max_iter = 5 * n + 50;
    for iter in 1..=max_iter {
        // ap = (shift I - L) p
        op.apply_raw(&p, &mut ap);
        for k in 0..n {
            ap[k] = shift * p[k] - ap[k];
        }
        let alpha = rs / dot(&p, &ap);
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rs_next = dot(&r, &r);
        if rs_next.sqrt() <= target {
            return Ok(CgReport {
                iterations: iter,
                residual: rs_next.sqrt() / b_norm,
            });
        }
        let beta = rs_next / rs;
        rs = rs_next;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
    }
    Err(PdeError::NonConvergence {
        what: "conjugate-gradient solve",
        iterations: max_iter,
        residual: rs.sqrt() / b_norm,
        tol,
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
