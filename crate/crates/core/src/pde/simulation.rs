//! Whole-run driver: validate a spatial scenario, march it to the horizon,
//! and collect the series, snapshots, convergence report and invariant
//! statistics in one pass.

use crate::grid::{
    check_coefficient, CoefficientRole, ScalarField, Support, DEFAULT_COEF_FLOOR,
};
use crate::kinetics::{TimeSeries, CONVERGENCE_TOL, CONVERGENCE_WINDOW};
use crate::pde::stepper::{run_steps, total_steps};
use crate::pde::{
    host_rate_bound, reservoir_rate_bound, step_host, step_reservoir, DiffusionOperator,
    HostFieldParams, HostState, PdeError, ReservoirFieldParams, ReservoirFieldState,
    StepperConfig,
};
use crate::spectral::RegimeClass;
use crate::steady::{endemic_steady, EndemicState};

/// Data columns of the simulation series (after the leading time column).
pub const SPATIAL_COLUMNS: &[&str] = &[
    "int_s", "int_e", "int_i", "int_c", "int_theta", "int_phi", "int_psi", "sup_e", "sup_i",
    "sup_c", "sup_psi", "s_dev", "cum_psi",
];

/// Relative slack (against the initial mass) allowed when checking that the
/// host mass never increases; covers linear-solver round-off.
pub const MASS_MONOTONE_SLACK: f64 = 1e-10;
/// Relative slack on the invariant-region ceiling for the reservoir total.
pub const THETA_BOUND_SLACK: f64 = 1e-6;
/// Tolerance used for the steady-state targets computed before a run.
const SIM_STEADY_TOL: f64 = 1e-9;

/// Host subsystem of a scenario: diffusivities, kinetics and initial data,
/// all on the full grid.
#[derive(Debug, Clone)]
pub struct HostSetup {
    pub d_s: ScalarField,
    pub d_e: ScalarField,
    pub params: HostFieldParams,
    pub init: HostState,
}

/// Reservoir subsystem: one diffusivity for all three components, kinetics
/// and initial data, on a mask or on the full grid.
#[derive(Debug, Clone)]
pub struct ReservoirSetup {
    pub d: ScalarField,
    pub params: ReservoirFieldParams,
    pub init: ReservoirFieldState,
}

#[derive(Debug, Clone)]
pub enum SpatialModel {
    HostOnly(HostSetup),
    ReservoirOnly(ReservoirSetup),
    /// Host on the full grid driven by a reservoir confined to a mask
    /// through the contact coefficient `kappa`.
    Coupled {
        host: HostSetup,
        reservoir: ReservoirSetup,
    },
}

impl SpatialModel {
    pub fn id(&self) -> &'static str {
        match self {
            SpatialModel::HostOnly(_) => "host-pde",
            SpatialModel::ReservoirOnly(_) => "reservoir-pde",
            SpatialModel::Coupled { .. } => "coupled-pde",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub stepper: StepperConfig,
    /// Times at which full field snapshots are captured; each is matched to
    /// the nearest step index.
    pub snapshot_times: Vec<f64>,
}

/// One field at one captured instant.
#[derive(Debug, Clone)]
pub struct SnapshotRecord {
    pub name: &'static str,
    pub time: f64,
    pub field: ScalarField,
}

/// Regime diagnosis and settling summary for a run.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub regime: Option<RegimeClass>,
    /// Principal threshold eigenvalue, when a reservoir is present.
    pub lambda0: Option<f64>,
    /// Spatial mean of the susceptible density at the horizon.
    pub s_star: Option<f64>,
    /// True when every field changed by less than the convergence tolerance
    /// across the trailing window of emitted rows.
    pub converged: bool,
}

/// Measured invariants and distances, populated where applicable.
#[derive(Debug, Clone)]
pub struct SimStats {
    /// Smallest value among all emitted field entries over the whole run.
    pub min_emitted: f64,
    pub sup_s_final: Option<f64>,
    pub sup_theta_max: Option<f64>,
    pub theta_bound: Option<f64>,
    /// Whether the host mass was nonincreasing across emitted rows.
    pub mass_monotone: Option<bool>,
    pub cum_psi_final: f64,
    /// Fraction of the cumulative shed mass accrued in the last tenth of
    /// the horizon (zero when nothing was shed).
    pub cum_psi_last_decile_frac: Option<f64>,
    pub theta_star_dist: Option<f64>,
    pub phi_star_dist: Option<f64>,
    pub psi_star_dist: Option<f64>,
    pub theta_star_min: Option<f64>,
    pub theta_star_max: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub series: TimeSeries,
    pub snapshots: Vec<SnapshotRecord>,
    pub report: ConvergenceReport,
    pub stats: SimStats,
}

fn series_row(
    h: Option<&HostState>,
    r: Option<&ReservoirFieldState>,
    cum_psi: f64,
) -> Vec<f64> {
    let mut row = vec![0.0; SPATIAL_COLUMNS.len()];
    if let Some(h) = h {
        row[0] = h.s.integrate();
        row[1] = h.e.integrate();
        row[2] = h.i.integrate();
        row[3] = h.c.integrate();
        row[7] = h.e.max();
        row[8] = h.i.max();
        row[9] = h.c.max();
        let mean = h.s.mean();
        row[11] = h.s.map(|v| v - mean).sup_norm();
    }
    if let Some(r) = r {
        row[4] = r.theta.integrate();
        row[5] = r.phi.integrate();
        row[6] = r.psi.integrate();
        row[10] = r.psi.max();
    }
    row[12] = cum_psi;
    row
}

fn emitted_min(h: Option<&HostState>, r: Option<&ReservoirFieldState>) -> f64 {
    let mut m = f64::INFINITY;
    if let Some(h) = h {
        m = m.min(h.s.min()).min(h.e.min()).min(h.i.min()).min(h.c.min());
    }
    if let Some(r) = r {
        m = m.min(r.theta.min()).min(r.phi.min()).min(r.psi.min());
    }
    m
}

fn state_delta(
    h: Option<&HostState>,
    r: Option<&ReservoirFieldState>,
    ph: Option<&HostState>,
    pr: Option<&ReservoirFieldState>,
) -> f64 {
    let mut d = 0.0f64;
    let sup = |a: &ScalarField, b: &ScalarField| {
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    if let (Some(h), Some(p)) = (h, ph) {
        d = d
            .max(sup(&h.s, &p.s))
            .max(sup(&h.e, &p.e))
            .max(sup(&h.i, &p.i))
            .max(sup(&h.c, &p.c));
    }
    if let (Some(r), Some(p)) = (r, pr) {
        d = d
            .max(sup(&r.theta, &p.theta))
            .max(sup(&r.phi, &p.phi))
            .max(sup(&r.psi, &p.psi));
    }
    d
}

fn push_snapshots(
    out: &mut Vec<SnapshotRecord>,
    time: f64,
    h: Option<&HostState>,
    r: Option<&ReservoirFieldState>,
) {
    if let Some(h) = h {
        for (name, field) in [("s", &h.s), ("e", &h.e), ("i", &h.i), ("c", &h.c)] {
            out.push(SnapshotRecord {
                name,
                time,
                field: field.clone(),
            });
        }
    }
    if let Some(r) = r {
        for (name, field) in [("theta", &r.theta), ("phi", &r.phi), ("psi", &r.psi)] {
            out.push(SnapshotRecord {
                name,
                time,
                field: field.clone(),
            });
        }
    }
}

/// March `model` to the horizon. The reservoir (when present) is advanced
/// first from the time-`t` state, the host then advances using the time-`t`
/// reservoir infection density extended by zero onto the full grid.
pub fn run_simulation(model: &SpatialModel, cfg: &SimConfig) -> Result<SimOutput, PdeError> {
    let stepper = cfg.stepper;
    stepper.validate()?;
    for &t in &cfg.snapshot_times {
        if !(t.is_finite() && (0.0..=stepper.horizon).contains(&t)) {
            return Err(PdeError::BadConfig {
                what: "snapshot times",
                detail: format!("time {t} lies outside [0, {}]", stepper.horizon),
            });
        }
    }

    let (host, res) = match model {
        SpatialModel::HostOnly(h) => (Some(h), None),
        SpatialModel::ReservoirOnly(r) => (None, Some(r)),
        SpatialModel::Coupled { host, reservoir } => (Some(host), Some(reservoir)),
    };
    let coupled = host.is_some() && res.is_some();

    // Structural validation and operator assembly.
    let mut host_ops = None;
    if let Some(h) = host {
        if !h.d_s.same_support(&h.init.s)
            || !h.d_e.same_support(&h.init.s)
            || !h.params.sigma.same_support(&h.init.s)
        {
            return Err(crate::grid::GridError::SupportMismatch.into());
        }
        host_ops = Some((
            DiffusionOperator::assemble(&h.d_s)?,
            DiffusionOperator::assemble(&h.d_e)?,
        ));
    }
    let mut res_op = None;
    if let Some(r) = res {
        if !r.d.same_support(&r.init.theta) || !r.params.beta.same_support(&r.init.theta) {
            return Err(crate::grid::GridError::SupportMismatch.into());
        }
        res_op = Some(DiffusionOperator::assemble(&r.d)?);
    }
    if coupled {
        let (h, r) = (host.unwrap(), res.unwrap());
        if h.init.s.grid() != r.init.theta.grid() {
            return Err(crate::grid::GridError::SupportMismatch.into());
        }
        let mask = match r.init.theta.support() {
            Support::Masked(m) => m,
            Support::Full => {
                return Err(PdeError::BadConfig {
                    what: "coupled scenario",
                    detail: "the reservoir must live on a proper subregion of the grid".into(),
                })
            }
        };
        check_coefficient(
            &h.params.kappa,
            CoefficientRole::SupportedOnMask,
            Some(mask.as_ref()),
            DEFAULT_COEF_FLOOR,
        )?;
    } else if let Some(h) = host {
        if h.params.kappa.sup_norm() != 0.0 {
            return Err(PdeError::BadConfig {
                what: "host-only scenario",
                detail: "kappa must be identically zero without a reservoir".into(),
            });
        }
    }

    // Step-size guard against the explicit reaction stage.
    let theta_bound = res.map(|r| r.params.theta_bound(r.init.theta.max()));
    let mut rate: f64 = 0.0;
    if let Some(r) = res {
        rate = rate.max(reservoir_rate_bound(&r.params, r.init.theta.max()));
    }
    if let Some(h) = host {
        rate = rate.max(host_rate_bound(&h.params, &h.init, theta_bound.unwrap_or(0.0)));
    }
    if stepper.dt * rate > 0.5 {
        return Err(PdeError::BadConfig {
            what: "step size",
            detail: format!(
                "dt = {} is too large for reaction rates up to {rate:.3}; choose dt <= {:.3e}",
                stepper.dt,
                0.5 / rate
            ),
        });
    }

    // Threshold classification and steady targets (reservoir runs only).
    // Without a reservoir the infected host compartments always clear.
    let (regime, lambda0, steady_target): (_, _, Option<EndemicState>) = match res {
        None => (Some(RegimeClass::Extinction), None, None),
        Some(r) => match endemic_steady(res_op.as_ref().unwrap(), &r.params, SIM_STEADY_TOL) {
            Ok(e) => (Some(e.regime), Some(e.lambda0), Some(e)),
            Err(PdeError::DegenerateThreshold { lambda, .. }) => {
                (Some(RegimeClass::Indeterminate), Some(lambda), None)
            }
            Err(other) => return Err(other),
        },
    };

    // Snapshot times resolve to step indices up front so captures do not
    // depend on the output cadence.
    let n_steps = total_steps(&stepper);
    let snap_steps: Vec<u64> = cfg
        .snapshot_times
        .iter()
        .map(|&t| ((t / stepper.dt).round() as u64).min(n_steps))
        .collect();

    let mut hstate = host.map(|h| h.init.clone());
    let mut rstate = res.map(|r| r.init.clone());
    let mut snapshots = Vec::new();
    let mut times = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut cum_psi = 0.0;
    let mut min_emitted = f64::INFINITY;
    let mut sup_theta_max = rstate.as_ref().map(|r| r.theta.max());
    let mut mass_monotone = host.map(|_| true);
    let mut prev_emit: (Option<HostState>, Option<ReservoirFieldState>) =
        (hstate.clone(), rstate.clone());
    let mut deltas: Vec<f64> = Vec::new();

    // Row at t = 0.
    times.push(0.0);
    rows.push(series_row(hstate.as_ref(), rstate.as_ref(), cum_psi));
    min_emitted = min_emitted.min(emitted_min(hstate.as_ref(), rstate.as_ref()));
    let mass0 = rows[0][0] + rows[0][1] + rows[0][2] + rows[0][3];
    let mut prev_mass = mass0;
    for &snap_step in &snap_steps {
        if snap_step == 0 {
            push_snapshots(&mut snapshots, 0.0, hstate.as_ref(), rstate.as_ref());
        }
    }

    run_steps(&stepper, |step, t, dtk, emit| {
        let psi_tilde = match (coupled, rstate.as_ref()) {
            (true, Some(r)) => Some(r.psi.extend_by_zero()?),
            _ => None,
        };
        if let Some(r) = res {
            let st = rstate.as_mut().unwrap();
            *st = step_reservoir(st, &r.params, res_op.as_ref().unwrap(), dtk, stepper.solve_tol)?;
            let sup = st.theta.max();
            let bound = theta_bound.unwrap();
            if sup > bound * (1.0 + THETA_BOUND_SLACK) {
                return Err(PdeError::Unstable {
                    t,
                    dt: dtk,
                    detail: format!(
                        "sup theta = {sup:.6e} exceeded the invariant ceiling {bound:.6e}"
                    ),
                });
            }
            if let Some(m) = sup_theta_max.as_mut() {
                *m = m.max(sup);
            }
            cum_psi += dtk * st.psi.integrate();
        }
        if let Some(h) = host {
            let (op_s, op_e) = host_ops.as_ref().unwrap();
            let st = hstate.as_mut().unwrap();
            *st = step_host(
                st,
                &h.params,
                psi_tilde.as_ref(),
                op_s,
                op_e,
                dtk,
                stepper.solve_tol,
            )?;
        }
        for &snap_step in &snap_steps {
            if snap_step == step {
                push_snapshots(&mut snapshots, t, hstate.as_ref(), rstate.as_ref());
            }
        }
        if emit {
            let row = series_row(hstate.as_ref(), rstate.as_ref(), cum_psi);
            if host.is_some() {
                let mass = row[0] + row[1] + row[2] + row[3];
                if mass > prev_mass + MASS_MONOTONE_SLACK * mass0 {
                    mass_monotone = Some(false);
                }
                prev_mass = mass;
            }
            min_emitted = min_emitted.min(emitted_min(hstate.as_ref(), rstate.as_ref()));
            deltas.push(state_delta(
                hstate.as_ref(),
                rstate.as_ref(),
                prev_emit.0.as_ref(),
                prev_emit.1.as_ref(),
            ));
            if deltas.len() > CONVERGENCE_WINDOW {
                deltas.remove(0);
            }
            prev_emit = (hstate.clone(), rstate.clone());
            times.push(t);
            rows.push(row);
        }
        Ok(())
    })?;

    let converged =
        deltas.len() == CONVERGENCE_WINDOW && deltas.iter().all(|d| *d < CONVERGENCE_TOL);
    let s_star = hstate.as_ref().map(|h| h.s.mean());
    let sup_s_final = hstate.as_ref().map(|h| h.s.max());

    let (mut t_dist, mut p_dist, mut q_dist) = (None, None, None);
    let (mut t_min, mut t_max) = (None, None);
    if let (Some(target), Some(st)) = (steady_target.as_ref(), rstate.as_ref()) {
        let sup = |a: &ScalarField, b: &ScalarField| {
            a.values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        };
        t_dist = Some(sup(&st.theta, &target.theta));
        p_dist = Some(sup(&st.phi, &target.phi));
        q_dist = Some(sup(&st.psi, &target.psi));
        t_min = Some(target.theta.min());
        t_max = Some(target.theta.max());
    }

    let cum_psi_last_decile_frac = res.map(|_| {
        let cutoff = 0.9 * stepper.horizon;
        let base_idx = times.iter().rposition(|&t| t <= cutoff).unwrap_or(0);
        let base = rows[base_idx][12];
        let end = rows.last().unwrap()[12];
        if end > 0.0 {
            (end - base) / end
        } else {
            0.0
        }
    });

    let stats = SimStats {
        min_emitted,
        sup_s_final,
        sup_theta_max,
        theta_bound,
        mass_monotone,
        cum_psi_final: cum_psi,
        cum_psi_last_decile_frac,
        theta_star_dist: t_dist,
        phi_star_dist: p_dist,
        psi_star_dist: q_dist,
        theta_star_min: t_min,
        theta_star_max: t_max,
    };
    let report = ConvergenceReport {
        regime,
        lambda0,
        s_star,
        converged,
    };
    let series = TimeSeries::from_parts(model.id(), SPATIAL_COLUMNS, times, rows);
    Ok(SimOutput {
        series,
        snapshots,
        report,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{CellMask, Grid2D, MaskShape};
    use crate::kinetics::{
        integrate_ode, IntegrateConfig, OdeInit, OdeModel, SeirParams, SeirState,
    };
    use std::sync::Arc;

    fn uniform_host(grid: &Grid2D, sigma: f64, omega: f64) -> HostSetup {
        HostSetup {
            d_s: ScalarField::constant(grid, 0.1),
            d_e: ScalarField::constant(grid, 0.1),
            params: HostFieldParams::new(
                ScalarField::constant(grid, sigma),
                ScalarField::constant(grid, omega),
                ScalarField::constant(grid, 0.0),
                0.25,
                0.25,
                0.5,
                0.5,
                1.0,
            )
            .unwrap(),
            init: HostState::new(
                ScalarField::constant(grid, 1.0),
                ScalarField::constant(grid, 0.1),
                ScalarField::constant(grid, 0.01),
                ScalarField::constant(grid, 0.0),
            )
            .unwrap(),
        }
    }

    #[test]
    fn uniform_host_run_tracks_the_kinetic_trajectory() {
        let grid = Grid2D::new(1.0, 1.0, 8, 8).unwrap();
        let model = SpatialModel::HostOnly(uniform_host(&grid, 0.5, 0.5));
        let mut stepper = StepperConfig::new(2e-5, 1.0);
        stepper.output_every = 5000;
        let out = run_simulation(
            &model,
            &SimConfig {
                stepper,
                snapshot_times: vec![],
            },
        )
        .unwrap();

        let ode = OdeModel::Seir(SeirParams::new(0.5, 0.5, 0.25, 0.25, 0.5, 0.5, 1.0, 0.0).unwrap());
        let init = OdeInit::Seir(SeirState::new(1.0, 0.1, 0.01, 0.0, 0.0).unwrap());
        let cfg = IntegrateConfig::new(1e-3, 1.0, 100).unwrap();
        let series = integrate_ode(&ode, &init, &cfg).unwrap();
        let last = series.last_row();

        // Uniform data keeps the PDE equal to the kinetics at first order.
        let got = out.series.last_row();
        assert!((got[0] - last[0]).abs() < 1e-4, "int_s {} vs {}", got[0], last[0]);
        assert!((got[1] - last[1]).abs() < 1e-4);
        assert!((got[7] - last[1]).abs() < 1e-4, "sup_e equals the uniform value");
        assert!(got[11] < 1e-10, "uniform runs have no deviation");
        assert_eq!(out.report.regime, Some(RegimeClass::Extinction));
        assert_eq!(out.stats.mass_monotone, Some(true));
        assert!(out.stats.min_emitted >= 0.0);
    }

    #[test]
    fn endemic_reservoir_run_approaches_its_steady_profile() {
        let grid = Grid2D::new(1.0, 1.0, 12, 12).unwrap();
        let setup = ReservoirSetup {
            d: ScalarField::constant(&grid, 0.05),
            params: ReservoirFieldParams::new(
                ScalarField::constant(&grid, 2.0),
                ScalarField::constant(&grid, 1.0),
                ScalarField::constant(&grid, 2.0),
            )
            .unwrap(),
            init: ReservoirFieldState::new(
                ScalarField::from_fn(&grid, |x, y| 1.0 + 0.2 * x * y),
                ScalarField::from_fn(&grid, |x, _| 0.3 + 0.2 * x),
            )
            .unwrap(),
        };
        let mut stepper = StepperConfig::new(0.01, 60.0);
        stepper.output_every = 100;
        let out = run_simulation(
            &SpatialModel::ReservoirOnly(setup),
            &SimConfig {
                stepper,
                snapshot_times: vec![],
            },
        )
        .unwrap();
        assert_eq!(out.report.regime, Some(RegimeClass::Endemic));
        assert!((out.report.lambda0.unwrap() - 2.0).abs() < 1e-6);
        assert!(out.stats.psi_star_dist.unwrap() < 1e-3);
        assert!(out.stats.phi_star_dist.unwrap() < 1e-3);
        assert!(out.report.converged);
        let bound = out.stats.theta_bound.unwrap();
        assert!(out.stats.sup_theta_max.unwrap() <= bound * (1.0 + THETA_BOUND_SLACK));
        assert!(out.stats.min_emitted >= -crate::NEGATIVE_CLIP_TOL);
    }

    #[test]
    fn subcritical_reservoir_run_sheds_almost_nothing_late() {
        let grid = Grid2D::new(1.0, 1.0, 12, 12).unwrap();
        let setup = ReservoirSetup {
            d: ScalarField::constant(&grid, 0.05),
            params: ReservoirFieldParams::new(
                ScalarField::constant(&grid, 3.0),
                ScalarField::constant(&grid, 1.0),
                ScalarField::constant(&grid, 0.5),
            )
            .unwrap(),
            init: ReservoirFieldState::new(
                ScalarField::constant(&grid, 2.5),
                ScalarField::constant(&grid, 0.5),
            )
            .unwrap(),
        };
        let mut stepper = StepperConfig::new(0.005, 60.0);
        stepper.output_every = 200;
        let out = run_simulation(
            &SpatialModel::ReservoirOnly(setup),
            &SimConfig {
                stepper,
                snapshot_times: vec![],
            },
        )
        .unwrap();
        assert_eq!(out.report.regime, Some(RegimeClass::Extinction));
        let last = out.series.last_row();
        let sup_psi = last[10];
        assert!(sup_psi < 1e-6, "sup_psi {sup_psi:.3e}");
        assert!((last[5] - 3.0).abs() < 1e-2, "phi integral {}", last[5]);
        assert!(out.stats.cum_psi_last_decile_frac.unwrap() < 0.01);
    }

    #[test]
    fn coupled_run_with_hot_reservoir_erodes_the_host() {
        let grid = Grid2D::new(1.0, 1.0, 16, 16).unwrap();
        let mask = Arc::new(
            CellMask::from_shape(
                &grid,
                MaskShape::Rect {
                    x0: 0.25,
                    y0: 0.25,
                    x1: 0.75,
                    y1: 0.75,
                },
            )
            .unwrap(),
        );
        let kappa = ScalarField::from_fn(&grid, |x, y| {
            if (0.25..0.75).contains(&x) && (0.25..0.75).contains(&y) {
                1.0
            } else {
                0.0
            }
        });
        let host = HostSetup {
            d_s: ScalarField::constant(&grid, 0.1),
            d_e: ScalarField::constant(&grid, 0.1),
            params: HostFieldParams::new(
                ScalarField::constant(&grid, 0.5),
                ScalarField::constant(&grid, 0.5),
                kappa,
                0.25,
                0.25,
                0.5,
                0.5,
                1.0,
            )
            .unwrap(),
            init: HostState::new(
                ScalarField::constant(&grid, 1.0),
                ScalarField::constant(&grid, 0.01),
                ScalarField::constant(&grid, 0.01),
                ScalarField::constant(&grid, 0.01),
            )
            .unwrap(),
        };
        let reservoir = ReservoirSetup {
            d: ScalarField::constant_on(&grid, &mask, 0.05),
            params: ReservoirFieldParams::new(
                ScalarField::constant_on(&grid, &mask, 2.0),
                ScalarField::constant_on(&grid, &mask, 1.0),
                ScalarField::constant_on(&grid, &mask, 2.0),
            )
            .unwrap(),
            init: ReservoirFieldState::new(
                ScalarField::constant_on(&grid, &mask, 1.2),
                ScalarField::constant_on(&grid, &mask, 0.3),
            )
            .unwrap(),
        };
        let mut stepper = StepperConfig::new(0.01, 30.0);
        stepper.output_every = 100;
        let out = run_simulation(
            &SpatialModel::Coupled { host, reservoir },
            &SimConfig {
                stepper,
                snapshot_times: vec![0.0, 30.0],
            },
        )
        .unwrap();
        assert_eq!(out.report.regime, Some(RegimeClass::Endemic));
        // The reservoir keeps infecting, so susceptibles keep eroding.
        let first = &out.series.rows()[0];
        let last = out.series.last_row();
        assert!(last[0] < 0.5 * first[0], "int_s {} -> {}", first[0], last[0]);
        assert_eq!(out.stats.mass_monotone, Some(true));
        assert!(out.stats.min_emitted >= -crate::NEGATIVE_CLIP_TOL);
        // Snapshots captured both requested instants for all seven fields.
        assert_eq!(out.snapshots.len(), 14);
        assert_eq!(out.snapshots[0].time, 0.0);
        assert_eq!(out.snapshots[13].time, 30.0);
    }

    #[test]
    fn validation_rejects_malformed_scenarios() {
        let grid = Grid2D::new(1.0, 1.0, 8, 8).unwrap();
        // Host-only with a live contact coefficient is refused.
        let mut bad = uniform_host(&grid, 0.5, 0.5);
        bad.params.kappa = ScalarField::constant(&grid, 0.3);
        let err = run_simulation(
            &SpatialModel::HostOnly(bad),
            &SimConfig {
                stepper: StepperConfig::new(1e-3, 0.1),
                snapshot_times: vec![],
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("kappa"));

        // Coupled scenarios need a masked reservoir.
        let host = uniform_host(&grid, 0.5, 0.5);
        let reservoir = ReservoirSetup {
            d: ScalarField::constant(&grid, 0.05),
            params: ReservoirFieldParams::new(
                ScalarField::constant(&grid, 2.0),
                ScalarField::constant(&grid, 1.0),
                ScalarField::constant(&grid, 2.0),
            )
            .unwrap(),
            init: ReservoirFieldState::new(
                ScalarField::constant(&grid, 1.0),
                ScalarField::constant(&grid, 0.5),
            )
            .unwrap(),
        };
        let err = run_simulation(
            &SpatialModel::Coupled { host, reservoir },
            &SimConfig {
                stepper: StepperConfig::new(1e-3, 0.1),
                snapshot_times: vec![],
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("subregion"));

        // Snapshot times must not exceed the horizon.
        let err = run_simulation(
            &SpatialModel::HostOnly(uniform_host(&grid, 0.5, 0.5)),
            &SimConfig {
                stepper: StepperConfig::new(1e-3, 0.1),
                snapshot_times: vec![0.2],
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("snapshot"));

        // Reaction rates cap the step size.
        let err = run_simulation(
            &SpatialModel::HostOnly(uniform_host(&grid, 30.0, 0.5)),
            &SimConfig {
                stepper: StepperConfig::new(0.05, 1.0),
                snapshot_times: vec![],
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("choose dt"));
    }
}
