//! One-step implicit-explicit integrators: explicit Euler on the reaction
//! terms, backward Euler on diffusion.
//!
//! Each step solves `(1/dt I - L) u_new = u_reacted / dt` per diffusing
//! component. The shifted matrix has nonpositive off-diagonals and dominant
//! positive diagonal, so nonnegative right-hand sides produce nonnegative
//! solutions and the steps preserve positivity whenever the explicit stage
//! does (guarded by the `dt * rate <= 1/2` check in the driver).

use crate::grid::{
    check_coefficient, CoefficientRole, ScalarField, Support, DEFAULT_COEF_FLOOR,
};
use crate::pde::solve::cg_raw;
use crate::pde::{DiffusionOperator, PdeError};
use crate::NEGATIVE_CLIP_TOL;

/// Cellwise `theta = phi + psi` is enforced to this relative tolerance
/// after every reservoir step.
pub const RESERVOIR_IDENTITY_RTOL: f64 = 1e-8;

/// Time-stepping controls shared by the drivers.
#[derive(Debug, Clone, Copy)]
pub struct StepperConfig {
    pub dt: f64,
    pub horizon: f64,
    /// Emit a series row every this many steps (the final step always emits).
    pub output_every: usize,
    /// Relative CG tolerance for the implicit diffusion solves.
    pub solve_tol: f64,
}

impl StepperConfig {
    pub fn new(dt: f64, horizon: f64) -> Self {
        StepperConfig {
            dt,
            horizon,
            output_every: 1,
            solve_tol: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<(), PdeError> {
        let bad = |detail: String| PdeError::BadConfig {
            what: "stepper configuration",
            detail,
        };
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(bad(format!("dt must be positive and finite, got {}", self.dt)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(bad(format!(
                "horizon must be positive and finite, got {}",
                self.horizon
            )));
        }
        if self.dt > self.horizon {
            return Err(bad(format!(
                "dt = {} exceeds the horizon {}",
                self.dt, self.horizon
            )));
        }
        if self.output_every == 0 {
            return Err(bad("output_every must be at least 1".into()));
        }
        if !(self.solve_tol > 0.0 && self.solve_tol <= 1e-4) {
            return Err(bad(format!(
                "solve_tol must lie in (0, 1e-4], got {}",
                self.solve_tol
            )));
        }
        Ok(())
    }
}

/// Host densities on the full grid at one instant.
#[derive(Debug, Clone)]
pub struct HostState {
    pub s: ScalarField,
    pub e: ScalarField,
    pub i: ScalarField,
    pub c: ScalarField,
    pub time: f64,
}

impl HostState {
    pub fn new(
        s: ScalarField,
        e: ScalarField,
        i: ScalarField,
        c: ScalarField,
    ) -> Result<Self, PdeError> {
        for (name, f) in [("s", &s), ("e", &e), ("i", &i), ("c", &c)] {
            if *f.support() != Support::Full {
                return Err(crate::grid::GridError::ExpectedFullField.into());
            }
            if !f.same_support(&s) {
                return Err(crate::grid::GridError::SupportMismatch.into());
            }
            if f.min() < 0.0 {
                return Err(PdeError::BadConfig {
                    what: "host initial data",
                    detail: format!("{name} has a negative entry ({:.3e})", f.min()),
                });
            }
        }
        Ok(HostState {
            s,
            e,
            i,
            c,
            time: 0.0,
        })
    }

    /// `integral of (s + e + i + c)`, the dissipating host mass.
    pub fn mass(&self) -> f64 {
        self.s.integrate() + self.e.integrate() + self.i.integrate() + self.c.integrate()
    }
}

/// Host kinetic coefficients: spatial transmission fields plus constant
/// progression rates.
#[derive(Debug, Clone)]
pub struct HostFieldParams {
    pub sigma: ScalarField,
    pub omega: ScalarField,
    /// Reservoir contact coefficient; identically zero for uncoupled runs.
    pub kappa: ScalarField,
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub mu: f64,
}

impl HostFieldParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        sigma: ScalarField,
        omega: ScalarField,
        kappa: ScalarField,
        lambda1: f64,
        lambda2: f64,
        gamma1: f64,
        gamma2: f64,
        mu: f64,
    ) -> Result<Self, PdeError> {
        for f in [&sigma, &omega, &kappa] {
            if *f.support() != Support::Full {
                return Err(crate::grid::GridError::ExpectedFullField.into());
            }
            if !f.same_support(&sigma) {
                return Err(crate::grid::GridError::SupportMismatch.into());
            }
        }
        check_coefficient(&sigma, CoefficientRole::StrictlyPositive, None, DEFAULT_COEF_FLOOR)?;
        check_coefficient(&omega, CoefficientRole::StrictlyPositive, None, DEFAULT_COEF_FLOOR)?;
        if kappa.min() < 0.0 {
            return Err(PdeError::BadConfig {
                what: "host parameters",
                detail: format!("kappa has a negative entry ({:.3e})", kappa.min()),
            });
        }
        for (name, r) in [
            ("lambda1", lambda1),
            ("lambda2", lambda2),
            ("gamma1", gamma1),
            ("gamma2", gamma2),
            ("mu", mu),
        ] {
            if !(r > 0.0 && r.is_finite()) {
                return Err(PdeError::BadConfig {
                    what: "host parameters",
                    detail: format!("rate {name} must be positive and finite, got {r}"),
                });
            }
        }
        Ok(HostFieldParams {
            sigma,
            omega,
            kappa,
            lambda1,
            lambda2,
            gamma1,
            gamma2,
            mu,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda1 + self.lambda2
    }

    pub fn gamma(&self) -> f64 {
        self.gamma1 + self.gamma2
    }
}

/// Reservoir densities (on a mask or the full grid) at one instant, with
/// `theta = phi + psi` cellwise.
#[derive(Debug, Clone)]
pub struct ReservoirFieldState {
    pub theta: ScalarField,
    pub phi: ScalarField,
    pub psi: ScalarField,
    pub time: f64,
}

impl ReservoirFieldState {
    /// Build from the split components; `theta` is their sum.
    pub fn new(phi: ScalarField, psi: ScalarField) -> Result<Self, PdeError> {
        if !phi.same_support(&psi) {
            return Err(crate::grid::GridError::SupportMismatch.into());
        }
        for (name, f) in [("phi", &phi), ("psi", &psi)] {
            if f.min() < 0.0 {
                return Err(PdeError::BadConfig {
                    what: "reservoir initial data",
                    detail: format!("{name} has a negative entry ({:.3e})", f.min()),
                });
            }
        }
        let theta = phi.zip_with(&psi, |a, b| a + b)?;
        Ok(ReservoirFieldState {
            theta,
            phi,
            psi,
            time: 0.0,
        })
    }

    /// Accept independently supplied components, verifying the identity.
    pub fn from_components(
        theta: ScalarField,
        phi: ScalarField,
        psi: ScalarField,
    ) -> Result<Self, PdeError> {
        if !theta.same_support(&phi) || !theta.same_support(&psi) {
            return Err(crate::grid::GridError::SupportMismatch.into());
        }
        check_identity(&theta, &phi, &psi, 0.0, 0.0)?;
        let mut state = ReservoirFieldState::new(phi, psi)?;
        state.theta = theta;
        Ok(state)
    }
}

fn check_identity(
    theta: &ScalarField,
    phi: &ScalarField,
    psi: &ScalarField,
    t: f64,
    dt: f64,
) -> Result<(), PdeError> {
    let tv = theta.values();
    let pv = phi.values();
    let qv = psi.values();
    for k in 0..tv.len() {
        let drift = (tv[k] - pv[k] - qv[k]).abs();
        if drift > RESERVOIR_IDENTITY_RTOL * tv[k].abs().max(1.0) {
            return Err(PdeError::Unstable {
                t,
                dt,
                detail: format!(
                    "theta - (phi + psi) drifted to {drift:.3e} at cell {k}, beyond {RESERVOIR_IDENTITY_RTOL:e} relative"
                ),
            });
        }
    }
    Ok(())
}

/// Reservoir kinetic coefficient fields on the reservoir support.
#[derive(Debug, Clone)]
pub struct ReservoirFieldParams {
    pub beta: ScalarField,
    pub m: ScalarField,
    pub sigma1: ScalarField,
}

impl ReservoirFieldParams {
    pub fn new(
        beta: ScalarField,
        m: ScalarField,
        sigma1: ScalarField,
    ) -> Result<Self, PdeError> {
        for f in [&beta, &m, &sigma1] {
            if !f.same_support(&beta) {
                return Err(crate::grid::GridError::SupportMismatch.into());
            }
            check_coefficient(f, CoefficientRole::StrictlyPositive, None, DEFAULT_COEF_FLOOR)?;
        }
        Ok(ReservoirFieldParams { beta, m, sigma1 })
    }

    /// Invariant sup bound on theta: the larger of the initial sup and the
    /// heterogeneous carrying-capacity ceiling `max(beta) / min(m)`.
    pub fn theta_bound(&self, theta0_sup: f64) -> f64 {
        theta0_sup.max(self.beta.max() / self.m.min())
    }
}

/// Verify finiteness and the negativity budget, zeroing round-off dips.
fn clean(values: &mut [f64], name: &str, t: f64, dt: f64) -> Result<(), PdeError> {
    for v in values.iter_mut() {
        if !v.is_finite() {
            return Err(PdeError::Unstable {
                t,
                dt,
                detail: format!("{name} became non-finite"),
            });
        }
        if *v < 0.0 {
            if *v < -NEGATIVE_CLIP_TOL {
                return Err(PdeError::Unstable {
                    t,
                    dt,
                    detail: format!("{name} fell to {:.3e}, below the negativity budget", *v),
                });
            }
            *v = 0.0;
        }
    }
    Ok(())
}

fn diffuse(
    op: &DiffusionOperator,
    reacted: &[f64],
    dt: f64,
    solve_tol: f64,
    out: &mut Vec<f64>,
) -> Result<(), PdeError> {
    let shift = 1.0 / dt;
    let rhs: Vec<f64> = reacted.iter().map(|v| v * shift).collect();
    out.resize(rhs.len(), 0.0);
    cg_raw(op, shift, &rhs, out, solve_tol)?;
    Ok(())
}

/// Advance the host system one step. `psi_tilde` is the zero-extended
/// reservoir infection density on the full grid (absent when uncoupled);
/// `op_s` and `op_e` discretise the susceptible and exposed diffusivities.
pub fn step_host(
    state: &HostState,
    params: &HostFieldParams,
    psi_tilde: Option<&ScalarField>,
    op_s: &DiffusionOperator,
    op_e: &DiffusionOperator,
    dt: f64,
    solve_tol: f64,
) -> Result<HostState, PdeError> {
    if !op_s.compatible(&state.s) || !op_e.compatible(&state.e) {
        return Err(crate::grid::GridError::SupportMismatch.into());
    }
    if !params.sigma.same_support(&state.s) {
        return Err(crate::grid::GridError::SupportMismatch.into());
    }
    if let Some(p) = psi_tilde {
        if !p.same_support(&state.s) {
            return Err(crate::grid::GridError::SupportMismatch.into());
        }
    }
    let t_next = state.time + dt;
    let n = state.s.len();
    let (sv, ev, iv, cv) = (
        state.s.values(),
        state.e.values(),
        state.i.values(),
        state.c.values(),
    );
    let (sig, om, kap) = (
        params.sigma.values(),
        params.omega.values(),
        params.kappa.values(),
    );
    let mut s_r = vec![0.0; n];
    let mut e_r = vec![0.0; n];
    let mut i_new = vec![0.0; n];
    let mut c_new = vec![0.0; n];
    for k in 0..n {
        let (s, e, i, c) = (sv[k], ev[k], iv[k], cv[k]);
        let psi = psi_tilde.map_or(0.0, |f| f.values()[k]);
        let infection = sig[k] * i * s + om[k] * s * c + kap[k] * s * psi;
        let l1e = params.lambda1 * e;
        let l2e = params.lambda2 * e;
        let g1i = params.gamma1 * i;
        let g2i = params.gamma2 * i;
        let muc = params.mu * c;
        s_r[k] = s - dt * infection;
        e_r[k] = e + dt * (infection - l1e - l2e);
        i_new[k] = i + dt * (l1e - g1i - g2i);
        c_new[k] = c + dt * (g1i - muc);
    }
    clean(&mut s_r, "s (reaction stage)", t_next, dt)?;
    clean(&mut e_r, "e (reaction stage)", t_next, dt)?;
    clean(&mut i_new, "i", t_next, dt)?;
    clean(&mut c_new, "c", t_next, dt)?;
    let mut s_new = Vec::new();
    let mut e_new = Vec::new();
    diffuse(op_s, &s_r, dt, solve_tol, &mut s_new)?;
    diffuse(op_e, &e_r, dt, solve_tol, &mut e_new)?;
    clean(&mut s_new, "s", t_next, dt)?;
    clean(&mut e_new, "e", t_next, dt)?;
    let grid = *state.s.grid();
    Ok(HostState {
        s: ScalarField::from_raw(grid, Support::Full, s_new),
        e: ScalarField::from_raw(grid, Support::Full, e_new),
        i: ScalarField::from_raw(grid, Support::Full, i_new),
        c: ScalarField::from_raw(grid, Support::Full, c_new),
        time: t_next,
    })
}

/// Advance the reservoir system one step on its own support. All three
/// components diffuse with the same operator; the splitting identity is
/// re-verified afterwards.
pub fn step_reservoir(
    state: &ReservoirFieldState,
    params: &ReservoirFieldParams,
    op: &DiffusionOperator,
    dt: f64,
    solve_tol: f64,
) -> Result<ReservoirFieldState, PdeError> {
    if !op.compatible(&state.theta) || !params.beta.same_support(&state.theta) {
        return Err(crate::grid::GridError::SupportMismatch.into());
    }
    let t_next = state.time + dt;
    let n = state.theta.len();
    let (tv, pv, qv) = (
        state.theta.values(),
        state.phi.values(),
        state.psi.values(),
    );
    let (bv, mv, s1v) = (
        params.beta.values(),
        params.m.values(),
        params.sigma1.values(),
    );
    let mut t_r = vec![0.0; n];
    let mut p_r = vec![0.0; n];
    let mut q_r = vec![0.0; n];
    for k in 0..n {
        let (theta, phi, psi) = (tv[k], pv[k], qv[k]);
        let growth = bv[k] * theta;
        let transfer = s1v[k] * phi * psi;
        t_r[k] = theta + dt * (growth - mv[k] * theta * theta);
        p_r[k] = phi + dt * (growth - transfer - mv[k] * theta * phi);
        q_r[k] = psi + dt * (transfer - mv[k] * theta * psi);
    }
    clean(&mut t_r, "theta (reaction stage)", t_next, dt)?;
    clean(&mut p_r, "phi (reaction stage)", t_next, dt)?;
    clean(&mut q_r, "psi (reaction stage)", t_next, dt)?;
    let mut t_new = Vec::new();
    let mut p_new = Vec::new();
    let mut q_new = Vec::new();
    diffuse(op, &t_r, dt, solve_tol, &mut t_new)?;
    diffuse(op, &p_r, dt, solve_tol, &mut p_new)?;
    diffuse(op, &q_r, dt, solve_tol, &mut q_new)?;
    clean(&mut t_new, "theta", t_next, dt)?;
    clean(&mut p_new, "phi", t_next, dt)?;
    clean(&mut q_new, "psi", t_next, dt)?;
    let grid = *state.theta.grid();
    let support = state.theta.support().clone();
    let next = ReservoirFieldState {
        theta: ScalarField::from_raw(grid, support.clone(), t_new),
        phi: ScalarField::from_raw(grid, support.clone(), p_new),
        psi: ScalarField::from_raw(grid, support, q_new),
        time: t_next,
    };
    check_identity(&next.theta, &next.phi, &next.psi, t_next, dt)?;
    Ok(next)
}

/// One step of `du/dt = L u + a u - r u^2`. `t` is only used to label
/// diagnostics when the step detects instability.
pub fn step_logistic(
    u: &ScalarField,
    a: &ScalarField,
    r: &ScalarField,
    op: &DiffusionOperator,
    dt: f64,
    solve_tol: f64,
    t: f64,
) -> Result<ScalarField, PdeError> {
    if !op.compatible(u) || !a.same_support(u) || !r.same_support(u) {
        return Err(crate::grid::GridError::SupportMismatch.into());
    }
    let n = u.len();
    let (uv, av, rv) = (u.values(), a.values(), r.values());
    let mut reacted = vec![0.0; n];
    for k in 0..n {
        reacted[k] = uv[k] + dt * (av[k] * uv[k] - rv[k] * uv[k] * uv[k]);
    }
    clean(&mut reacted, "u (reaction stage)", t, dt)?;
    let mut out = Vec::new();
    diffuse(op, &reacted, dt, solve_tol, &mut out)?;
    clean(&mut out, "u", t, dt)?;
    Ok(ScalarField::from_raw(*u.grid(), u.support().clone(), out))
}

/// Drive a step-indexed time loop to exactly `cfg.horizon`: times are
/// computed as `step * dt` rather than accumulated, and a short final step
/// absorbs any remainder. The body receives `(step, t, dt, emit)` where
/// `emit` marks output cadence hits and the final step.
pub(crate) fn run_steps(
    cfg: &StepperConfig,
    mut body: impl FnMut(u64, f64, f64, bool) -> Result<(), PdeError>,
) -> Result<(), PdeError> {
    let n_steps = total_steps(cfg);
    for step in 1..=n_steps {
        let last = step == n_steps;
        let dt = if last {
            cfg.horizon - (step - 1) as f64 * cfg.dt
        } else {
            cfg.dt
        };
        let t = if last { cfg.horizon } else { step as f64 * cfg.dt };
        let emit = last || step % cfg.output_every as u64 == 0;
        body(step, t, dt, emit)?;
    }
    Ok(())
}

/// Number of steps `run_steps` will take, for mapping times to step indices.
pub(crate) fn total_steps(cfg: &StepperConfig) -> u64 {
    let n_full = (cfg.horizon / cfg.dt).floor() as u64;
    let remainder = cfg.horizon - n_full as f64 * cfg.dt;
    if remainder > 1e-9 * cfg.horizon {
        n_full + 1
    } else {
        n_full.max(1)
    }
}

/// Crude sup bound on the host reaction rates, for the step-size guard.
pub fn host_rate_bound(params: &HostFieldParams, state: &HostState, psi_sup: f64) -> f64 {
    let m = state.s.max() + state.e.max() + state.i.max() + state.c.max();
    params.sigma.max() * m
        + params.omega.max() * m
        + params.kappa.max() * (m + psi_sup)
        + params.lambda()
        + params.gamma()
        + params.mu
}

/// Crude sup bound on the reservoir reaction rates, using the theta bound.
pub fn reservoir_rate_bound(params: &ReservoirFieldParams, theta0_sup: f64) -> f64 {
    let b = params.theta_bound(theta0_sup);
    params.beta.max() + (params.sigma1.max() + 2.0 * params.m.max()) * b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;
    use crate::kinetics::{
        reservoir_rhs, seir_rhs, ReservoirParams, ReservoirState, SeirParams, SeirState,
    };

    fn grid() -> Grid2D {
        Grid2D::new(1.0, 1.0, 4, 4).unwrap()
    }

    fn host_params(grid: &Grid2D) -> HostFieldParams {
        HostFieldParams::new(
            ScalarField::constant(grid, 0.5),
            ScalarField::constant(grid, 0.4),
            ScalarField::constant(grid, 0.0),
            0.25,
            0.25,
            0.5,
            0.5,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn uniform_host_step_matches_explicit_euler() {
        // Uniform data stays uniform: diffusion acts as the identity and the
        // step reduces to explicit Euler on the pointwise kinetics.
        let g = grid();
        let params = host_params(&g);
        let op = DiffusionOperator::assemble(&ScalarField::constant(&g, 0.1)).unwrap();
        let state = HostState::new(
            ScalarField::constant(&g, 1.0),
            ScalarField::constant(&g, 0.1),
            ScalarField::constant(&g, 0.05),
            ScalarField::constant(&g, 0.02),
        )
        .unwrap();
        let dt = 1e-3;
        let next = step_host(&state, &params, None, &op, &op, dt, 1e-13).unwrap();

        let p = SeirParams::new(0.5, 0.4, 0.25, 0.25, 0.5, 0.5, 1.0, 0.0).unwrap();
        let y = SeirState::new(1.0, 0.1, 0.05, 0.02, 0.0).unwrap();
        let dy = seir_rhs(&y, &p, 0.0).unwrap();
        for (field, expect) in [
            (&next.s, 1.0 + dt * dy.ds),
            (&next.e, 0.1 + dt * dy.de),
            (&next.i, 0.05 + dt * dy.di),
            (&next.c, 0.02 + dt * dy.dc),
        ] {
            assert!(field.map(|v| v - expect).sup_norm() < 1e-12);
        }
        assert!((next.time - dt).abs() < 1e-15);
    }

    #[test]
    fn host_mass_drops_by_the_removed_flow() {
        let g = grid();
        let params = host_params(&g);
        let op = DiffusionOperator::assemble(&ScalarField::constant(&g, 0.2)).unwrap();
        let state = HostState::new(
            ScalarField::from_fn(&g, |x, y| 1.0 + 0.2 * x * y),
            ScalarField::from_fn(&g, |x, _| 0.1 + 0.05 * x),
            ScalarField::constant(&g, 0.05),
            ScalarField::constant(&g, 0.02),
        )
        .unwrap();
        let dt = 1e-3;
        let next = step_host(&state, &params, None, &op, &op, dt, 1e-13).unwrap();
        // The explicit stage removes dt * int(lambda2 e + gamma2 i + mu c)
        // exactly; the solves conserve each integral to solver precision.
        let removed = dt
            * (params.lambda2 * state.e.integrate()
                + params.gamma2 * state.i.integrate()
                + params.mu * state.c.integrate());
        let drift = (next.mass() - (state.mass() - removed)).abs();
        assert!(drift < 1e-12, "mass drift {drift:.3e}");
        assert!(next.mass() < state.mass());
    }

    #[test]
    fn pure_diffusion_flattens_while_conserving_mass() {
        let g = Grid2D::new(1.0, 1.0, 16, 16).unwrap();
        let u = ScalarField::from_fn(&g, |x, y| {
            1.0 + (-((x - 0.5) * (x - 0.5) + (y - 0.5) * (y - 0.5)) / 0.02).exp()
        });
        let op = DiffusionOperator::assemble(&ScalarField::constant(&g, 0.5)).unwrap();
        let a = ScalarField::constant(&g, 0.0);
        let r = ScalarField::constant(&g, 1e-12);
        let mut v = u.clone();
        for step in 0..20 {
            v = step_logistic(&v, &a, &r, &op, 1e-2, 1e-13, step as f64 * 1e-2).unwrap();
        }
        assert!((v.integrate() - u.integrate()).abs() < 1e-9);
        assert!(v.sup_norm() < u.sup_norm());
        assert!(v.zip_with(&u, |a, b| a - b).unwrap().sup_norm() > 1e-3);
    }

    #[test]
    fn uniform_reservoir_step_matches_explicit_euler() {
        let g = grid();
        let params = ReservoirFieldParams::new(
            ScalarField::constant(&g, 2.0),
            ScalarField::constant(&g, 1.0),
            ScalarField::constant(&g, 2.0),
        )
        .unwrap();
        let op = DiffusionOperator::assemble(&ScalarField::constant(&g, 0.05)).unwrap();
        let state = ReservoirFieldState::new(
            ScalarField::constant(&g, 1.5),
            ScalarField::constant(&g, 0.5),
        )
        .unwrap();
        let dt = 5e-4;
        let next = step_reservoir(&state, &params, &op, dt, 1e-13).unwrap();
        let p = ReservoirParams::new(2.0, 1.0, 2.0).unwrap();
        let y = ReservoirState::new(1.5, 0.5).unwrap();
        let dy = reservoir_rhs(&y, &p).unwrap();
        assert!(next.theta.map(|v| v - (2.0 + dt * dy.dtheta)).sup_norm() < 1e-12);
        assert!(next.phi.map(|v| v - (1.5 + dt * dy.dphi)).sup_norm() < 1e-12);
        assert!(next.psi.map(|v| v - (0.5 + dt * dy.dpsi)).sup_norm() < 1e-12);
    }

    #[test]
    fn endemic_equilibrium_is_a_fixed_point() {
        let g = grid();
        let params = ReservoirFieldParams::new(
            ScalarField::constant(&g, 2.0),
            ScalarField::constant(&g, 1.0),
            ScalarField::constant(&g, 2.0),
        )
        .unwrap();
        let op = DiffusionOperator::assemble(&ScalarField::constant(&g, 0.05)).unwrap();
        let mut state = ReservoirFieldState::new(
            ScalarField::constant(&g, 1.0),
            ScalarField::constant(&g, 1.0),
        )
        .unwrap();
        for _ in 0..50 {
            state = step_reservoir(&state, &params, &op, 0.01, 1e-13).unwrap();
        }
        assert!(state.phi.map(|v| v - 1.0).sup_norm() < 1e-10);
        assert!(state.psi.map(|v| v - 1.0).sup_norm() < 1e-10);
    }

    #[test]
    fn violent_rates_are_reported_as_instability() {
        let g = grid();
        let params = HostFieldParams::new(
            ScalarField::constant(&g, 80.0),
            ScalarField::constant(&g, 0.4),
            ScalarField::constant(&g, 0.0),
            0.25,
            0.25,
            0.5,
            0.5,
            1.0,
        )
        .unwrap();
        let op = DiffusionOperator::assemble(&ScalarField::constant(&g, 0.1)).unwrap();
        let state = HostState::new(
            ScalarField::constant(&g, 1.0),
            ScalarField::constant(&g, 0.0),
            ScalarField::constant(&g, 1.0),
            ScalarField::constant(&g, 0.0),
        )
        .unwrap();
        let err = step_host(&state, &params, None, &op, &op, 0.5, 1e-12).unwrap_err();
        assert!(err.to_string().contains("reduce dt"));
    }

    #[test]
    fn component_mismatch_is_rejected_at_construction() {
        let g = grid();
        let theta = ScalarField::constant(&g, 3.0);
        let phi = ScalarField::constant(&g, 1.0);
        let psi = ScalarField::constant(&g, 0.5);
        assert!(ReservoirFieldState::from_components(theta, phi, psi).is_err());
        let ok = ReservoirFieldState::from_components(
            ScalarField::constant(&g, 1.5),
            ScalarField::constant(&g, 1.0),
            ScalarField::constant(&g, 0.5),
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn step_loop_lands_exactly_on_the_horizon() {
        let mut cfg = StepperConfig::new(0.3, 1.0);
        cfg.output_every = 2;
        let mut emitted = Vec::new();
        let mut total = 0.0;
        run_steps(&cfg, |_step, t, dt, emit| {
            assert!(dt > 0.0);
            total += dt;
            if emit {
                emitted.push(t);
            }
            Ok(())
        })
        .unwrap();
        assert_eq!(emitted.last().copied(), Some(1.0));
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation_rejects_out_of_range_values() {
        assert!(StepperConfig::new(1e-2, 1.0).validate().is_ok());
        assert!(StepperConfig::new(0.0, 1.0).validate().is_err());
        assert!(StepperConfig::new(2.0, 1.0).validate().is_err());
        let mut c = StepperConfig::new(1e-2, 1.0);
        c.output_every = 0;
        assert!(c.validate().is_err());
        let mut c = StepperConfig::new(1e-2, 1.0);
        c.solve_tol = 1e-3;
        assert!(c.validate().is_err());
    }
}
