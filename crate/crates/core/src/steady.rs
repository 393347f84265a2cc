//! Steady states of the scalar logistic equation `0 = L u + a u - r u^2`
//! and of the reservoir system, with dynamic attractor probes.
//!
//! The sign of the principal eigenvalue of `L + a` selects the branch: the
//! zero state below threshold, the unique positive state above it. The
//! positive state is found by pseudo-time marching, whose implicit-explicit
//! fixed points satisfy the steady equation independently of the step size.

use crate::grid::{check_coefficient, CoefficientRole, ScalarField, DEFAULT_COEF_FLOOR};
use crate::pde::stepper::run_steps;
use crate::pde::{
    step_logistic, step_reservoir, DiffusionOperator, PdeError, ReservoirFieldParams,
    ReservoirFieldState, StepperConfig,
};
use crate::spectral::{principal_eigenpair, threshold_report, RegimeClass, ThresholdReport};
use crate::LAMBDA_DEAD_BAND;

/// Which branch a steady-state solve landed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SteadyKind {
    /// Entrywise positive state (supercritical weight).
    Positive,
    /// Identically zero state (subcritical weight).
    Trivial,
}

/// A steady state of `du/dt = L u + a u - r u^2`.
#[derive(Debug, Clone)]
pub struct SteadyState {
    pub u: ScalarField,
    pub kind: SteadyKind,
    /// Principal eigenvalue of `L + a` that selected the branch.
    pub lambda: f64,
    /// Sup norm of `L u + a u - r u^2` for the returned state.
    pub residual: f64,
    /// Pseudo-time steps marched (zero for the trivial branch).
    pub iterations: usize,
}

/// Pseudo-time horizon after which the march gives up.
const MARCH_TIME_CAP: f64 = 4000.0;
/// Steps between residual evaluations during the march.
const RESIDUAL_STRIDE: usize = 8;

/// Solve for the global attractor of the logistic equation with growth
/// weight `a` (any sign) and positive crowding coefficient `r`. The
/// returned state satisfies `||L u + a u - r u^2||_inf <=
/// tol * (1 + max|a| sup u)`; a principal eigenvalue inside the dead band
/// around zero is reported as degenerate rather than classified.
pub fn fisher_kpp_steady(
    op: &DiffusionOperator,
    a: &ScalarField,
    r: &ScalarField,
    tol: f64,
) -> Result<SteadyState, PdeError> {
    if !op.compatible(a) || !op.compatible(r) {
        return Err(crate::grid::GridError::SupportMismatch.into());
    }
    check_coefficient(r, CoefficientRole::StrictlyPositive, None, DEFAULT_COEF_FLOOR)?;
    if !(tol > 0.0 && tol <= 1e-2) {
        return Err(PdeError::BadConfig {
            what: "steady-state solve",
            detail: format!("tolerance must lie in (0, 1e-2], got {tol}"),
        });
    }
    let eig_tol = tol.min(LAMBDA_DEAD_BAND * 1e-2);
    let eigen = principal_eigenpair(op, a, eig_tol)?;
    if eigen.lambda < -LAMBDA_DEAD_BAND {
        return Ok(SteadyState {
            u: ScalarField::from_raw(*op.grid(), op.support().clone(), vec![0.0; op.n()]),
            kind: SteadyKind::Trivial,
            lambda: eigen.lambda,
            residual: 0.0,
            iterations: 0,
        });
    }
    if eigen.lambda <= LAMBDA_DEAD_BAND {
        return Err(PdeError::DegenerateThreshold {
            lambda: eigen.lambda,
            band: LAMBDA_DEAD_BAND,
        });
    }
    let (u, residual, iterations) = march_positive(op, a, r, tol)?;
    Ok(SteadyState {
        u,
        kind: SteadyKind::Positive,
        lambda: eigen.lambda,
        residual,
        iterations,
    })
}

/// Pseudo-time march to the positive steady state. Implicit-explicit fixed
/// points solve the steady equation for any dt, so the step size only has
/// to respect the explicit stage's positivity budget.
fn march_positive(
    op: &DiffusionOperator,
    a: &ScalarField,
    r: &ScalarField,
    tol: f64,
) -> Result<(ScalarField, f64, usize), PdeError> {
    let mut u = a.zip_with(r, |av, rv| av.max(0.0) / rv + 1e-3)?;
    let bound = u.max().max(a.max().max(0.0) / r.min());
    let dt = 0.5 / (a.sup_norm() + 2.0 * r.max() * bound);
    let solve_tol = 1e-12f64.min(tol * 1e-2).max(1e-14);
    let res_target = |u: &ScalarField| tol * (1.0 + a.sup_norm() * u.sup_norm());

    let max_steps = ((MARCH_TIME_CAP / dt).ceil() as usize).min(2_000_000);
    let mut residual = f64::INFINITY;
    for step in 1..=max_steps {
        u = step_logistic(&u, a, r, op, dt, solve_tol, step as f64 * dt)?;
        if step % RESIDUAL_STRIDE == 0 || step == max_steps {
            residual = steady_residual(op, a, r, &u)?;
            if residual <= res_target(&u) {
                return Ok((u, residual, step));
            }
        }
    }
    Err(PdeError::NonConvergence {
        what: "steady-state march",
        iterations: max_steps,
        residual,
        tol,
    })
}

/// `||L u + a u - r u^2||_inf`.
pub fn steady_residual(
    op: &DiffusionOperator,
    a: &ScalarField,
    r: &ScalarField,
    u: &ScalarField,
) -> Result<f64, PdeError> {
    let lu = op.apply(u)?;
    let mut worst = 0.0f64;
    let (lv, uv, av, rv) = (lu.values(), u.values(), a.values(), r.values());
    for k in 0..uv.len() {
        let rres = lv[k] + av[k] * uv[k] - rv[k] * uv[k] * uv[k];
        worst = worst.max(rres.abs());
    }
    Ok(worst)
}

/// Steady reservoir profile together with the threshold diagnosis that
/// selected it.
#[derive(Debug, Clone)]
pub struct EndemicState {
    pub theta: ScalarField,
    pub phi: ScalarField,
    pub psi: ScalarField,
    pub lambda0: f64,
    pub regime: RegimeClass,
    pub threshold: ThresholdReport,
}

/// Compute the reservoir steady state on the operator's support. The total
/// density solves the logistic equation with weight `beta`; the infected
/// part solves it with weight `theta* (sigma1 - m)` when supercritical and
/// vanishes otherwise; the free part is the difference.
pub fn endemic_steady(
    op: &DiffusionOperator,
    params: &ReservoirFieldParams,
    tol: f64,
) -> Result<EndemicState, PdeError> {
    let theta = fisher_kpp_steady(op, &params.beta, &params.m, tol)?;
    debug_assert_eq!(theta.kind, SteadyKind::Positive);
    let eig_tol = tol.min(LAMBDA_DEAD_BAND * 1e-2);
    let threshold = threshold_report(op, &theta.u, &params.sigma1, &params.m, eig_tol)?;
    match threshold.regime {
        RegimeClass::Indeterminate => Err(PdeError::DegenerateThreshold {
            lambda: threshold.lambda0,
            band: LAMBDA_DEAD_BAND,
        }),
        RegimeClass::Extinction => Ok(EndemicState {
            phi: theta.u.clone(),
            psi: theta.u.map(|_| 0.0),
            lambda0: threshold.lambda0,
            regime: RegimeClass::Extinction,
            theta: theta.u,
            threshold,
        }),
        RegimeClass::Endemic => {
            let (psi, _, _) = march_positive(op, &threshold.r_field, &params.sigma1, tol)?;
            let raw_phi = theta.u.zip_with(&psi, |t, p| t - p)?;
            let allowance = 100.0 * tol * (1.0 + theta.u.max());
            if raw_phi.min() < -allowance {
                return Err(PdeError::NonConvergence {
                    what: "endemic splitting",
                    iterations: 0,
                    residual: -raw_phi.min(),
                    tol: allowance,
                });
            }
            let phi = raw_phi.map(|v| v.max(0.0));
            Ok(EndemicState {
                phi,
                psi,
                lambda0: threshold.lambda0,
                regime: RegimeClass::Endemic,
                theta: theta.u,
                threshold,
            })
        }
    }
}

/// Outcome of marching the dynamics against a claimed attractor.
#[derive(Debug, Clone, Copy)]
pub struct AttractorProbe {
    /// Sup-norm distance to the attractor at the horizon.
    pub distance: f64,
    /// Exponential rate fitted to the distance over the trailing half of
    /// the run; absent when too few usable samples exist.
    pub decay_rate: Option<f64>,
    /// Number of recorded samples.
    pub samples: usize,
}

/// March the logistic dynamics from `v0` and measure convergence towards
/// `steady`.
pub fn verify_logistic_attractor(
    op: &DiffusionOperator,
    a: &ScalarField,
    r: &ScalarField,
    steady: &SteadyState,
    v0: &ScalarField,
    cfg: &StepperConfig,
) -> Result<AttractorProbe, PdeError> {
    cfg.validate()?;
    if !op.compatible(v0) || !v0.same_support(&steady.u) {
        return Err(crate::grid::GridError::SupportMismatch.into());
    }
    if v0.min() < 0.0 {
        return Err(PdeError::BadConfig {
            what: "attractor probe",
            detail: format!("initial data has a negative entry ({:.3e})", v0.min()),
        });
    }
    let mut u = v0.clone();
    let mut history = Vec::new();
    let distance =
        |u: &ScalarField| -> Result<f64, PdeError> { Ok(u.zip_with(&steady.u, |x, y| x - y)?.sup_norm()) };
    run_steps(cfg, |_step, t, dt, emit| {
        u = step_logistic(&u, a, r, op, dt, cfg.solve_tol, t)?;
        if emit {
            history.push((t, distance(&u)?));
        }
        Ok(())
    })?;
    let final_distance = history.last().map(|(_, d)| *d).unwrap_or(f64::NAN);
    let decay_rate = fit_decay_rate(&history);
    Ok(AttractorProbe {
        distance: final_distance,
        decay_rate,
        samples: history.len(),
    })
}

/// Least-squares slope of `ln d` versus `t` over the trailing half of the
/// samples, floored to avoid `ln 0`. Returns the decay rate (positive for
/// shrinking distances).
fn fit_decay_rate(history: &[(f64, f64)]) -> Option<f64> {
    let start = history.len() / 2;
    let tail: Vec<(f64, f64)> = history[start..]
        .iter()
        .map(|&(t, d)| (t, d.max(1e-14).ln()))
        .collect();
    if tail.len() < 3 {
        return None;
    }
    let n = tail.len() as f64;
    let mean_t = tail.iter().map(|(t, _)| t).sum::<f64>() / n;
    let mean_y = tail.iter().map(|(_, y)| y).sum::<f64>() / n;
    let var_t: f64 = tail.iter().map(|(t, _)| (t - mean_t) * (t - mean_t)).sum();
    if var_t <= 0.0 {
        return None;
    }
    let cov: f64 = tail
        .iter()
        .map(|(t, y)| (t - mean_t) * (y - mean_y))
        .sum();
    Some(-(cov / var_t))
}

/// March the reservoir dynamics from `init` and measure convergence of the
/// component pair towards the steady profile.
pub fn verify_reservoir_attractor(
    op: &DiffusionOperator,
    params: &ReservoirFieldParams,
    target: &EndemicState,
    init: &ReservoirFieldState,
    cfg: &StepperConfig,
) -> Result<AttractorProbe, PdeError> {
    cfg.validate()?;
    if !op.compatible(&init.theta) || !init.theta.same_support(&target.theta) {
        return Err(crate::grid::GridError::SupportMismatch.into());
    }
    let mut state = init.clone();
    let mut history = Vec::new();
    run_steps(cfg, |_step, _t, dt, emit| {
        state = step_reservoir(&state, params, op, dt, cfg.solve_tol)?;
        if emit {
            let dphi = state.phi.zip_with(&target.phi, |a, b| a - b)?.sup_norm();
            let dpsi = state.psi.zip_with(&target.psi, |a, b| a - b)?.sup_norm();
            history.push((state.time, dphi.max(dpsi)));
        }
        Ok(())
    })?;
    let final_distance = history.last().map(|(_, d)| *d).unwrap_or(f64::NAN);
    let decay_rate = fit_decay_rate(&history);
    Ok(AttractorProbe {
        distance: final_distance,
        decay_rate,
        samples: history.len(),
    })
}
