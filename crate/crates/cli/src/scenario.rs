//! Execute a validated scenario and lay down its artifacts: `series.csv`
//! for trajectories, `snapshots/` for captured fields, and `report.txt`
//! with one key=value summary line per quantity.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use epispatial_core::grid::{write_snapshot, ScalarField};
use epispatial_core::kinetics::{
    detect_convergence, integrate_ode, predicted_limits, OdeModel, SusceptibleLimit,
    TimeSeries, CONVERGENCE_TOL, CONVERGENCE_WINDOW,
};
use epispatial_core::pde::DiffusionOperator;
use epispatial_core::spectral::principal_eigenpair;
use epispatial_core::steady::{endemic_steady, fisher_kpp_steady, SteadyKind};
use epispatial_core::LAMBDA_DEAD_BAND;

use crate::config::Resolved;
use crate::report::Report;
use crate::CliError;

pub struct RunArtifacts {
    pub dir: PathBuf,
    pub report: Report,
}

pub fn run_scenario(resolved: &Resolved, out_dir: &Path) -> Result<RunArtifacts, CliError> {
    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out_dir.display())))?;
    let report = match resolved {
        Resolved::Ode { model, init, cfg } => {
            let series = integrate_ode(model, init, cfg)?;
            write_series(out_dir, &series)?;
            ode_report(model, &series)
        }
        Resolved::Pde { model, cfg } => {
            let out = epispatial_core::pde::run_simulation(model, cfg)?;
            write_series(out_dir, &out.series)?;
            write_snapshots(out_dir, &out.snapshots)?;
            pde_report(model, &out)
        }
        Resolved::Eigen { d, a, tol } => {
            let op = DiffusionOperator::assemble(d)?;
            let eig = principal_eigenpair(&op, a, *tol)?;
            write_field(out_dir, "xi.txt", "xi", &eig.xi, 0.0)?;
            let mut r = Report::new();
            r.text("model", "eigen");
            r.float("lambda0", eig.lambda);
            r.text("regime", regime_of(eig.lambda));
            r.float("residual", eig.residual);
            r.int("iterations", eig.iterations as u64);
            r
        }
        Resolved::SteadyKpp { d, a, r, tol } => {
            let op = DiffusionOperator::assemble(d)?;
            let st = fisher_kpp_steady(&op, a, r, *tol)?;
            write_field(out_dir, "u.txt", "u", &st.u, 0.0)?;
            let mut rep = Report::new();
            rep.text("model", "steady");
            rep.text("variant", "kpp");
            rep.text(
                "kind",
                match st.kind {
                    SteadyKind::Positive => "positive",
                    SteadyKind::Trivial => "trivial",
                },
            );
            rep.float("lambda0", st.lambda);
            rep.float("residual", st.residual);
            rep.int("iterations", st.iterations as u64);
            rep.float("min_u", st.u.min());
            rep.float("sup_u", st.u.sup_norm());
            rep
        }
        Resolved::SteadyEndemic { d, params, tol } => {
            let op = DiffusionOperator::assemble(d)?;
            let es = endemic_steady(&op, params, *tol)?;
            write_field(out_dir, "theta_star.txt", "theta_star", &es.theta, 0.0)?;
            write_field(out_dir, "phi_star.txt", "phi_star", &es.phi, 0.0)?;
            write_field(out_dir, "psi_star.txt", "psi_star", &es.psi, 0.0)?;
            let mut rep = Report::new();
            rep.text("model", "steady");
            rep.text("variant", "endemic");
            rep.text("regime", es.regime.as_str());
            rep.float("lambda0", es.lambda0);
            rep.float("r_integral", es.threshold.r_integral);
            rep.flag("positivity_sufficient", es.threshold.positivity_sufficient);
            rep.float("theta_star_min", es.theta.min());
            rep.float("theta_star_max", es.theta.max());
            rep.float("sup_phi_star", es.phi.sup_norm());
            rep.float("sup_psi_star", es.psi.sup_norm());
            rep
        }
    };
    let path = out_dir.join("report.txt");
    fs::write(&path, report.render())
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    Ok(RunArtifacts {
        dir: out_dir.to_path_buf(),
        report,
    })
}

fn regime_of(lambda0: f64) -> &'static str {
    if lambda0 > LAMBDA_DEAD_BAND {
        "endemic"
    } else if lambda0 < -LAMBDA_DEAD_BAND {
        "extinction"
    } else {
        "indeterminate"
    }
}

fn write_series(dir: &Path, series: &TimeSeries) -> Result<(), CliError> {
    let path = dir.join("series.csv");
    let file = fs::File::create(&path)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    series
        .write_csv(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn write_field(
    dir: &Path,
    file_name: &str,
    field_name: &str,
    field: &ScalarField,
    time: f64,
) -> Result<(), CliError> {
    let path = dir.join(file_name);
    let file = fs::File::create(&path)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    write_snapshot(&mut w, field_name, field, time)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    w.flush()
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn write_snapshots(
    dir: &Path,
    snapshots: &[epispatial_core::pde::SnapshotRecord],
) -> Result<(), CliError> {
    if snapshots.is_empty() {
        return Ok(());
    }
    let snap_dir = dir.join("snapshots");
    fs::create_dir_all(&snap_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", snap_dir.display())))?;
    let mut seen: std::collections::BTreeMap<&str, usize> = Default::default();
    for rec in snapshots {
        let k = seen.entry(rec.name).or_insert(0);
        let file = format!("{}_{}.txt", rec.name, *k);
        *k += 1;
        write_field(&snap_dir, &file, rec.name, &rec.field, rec.time)?;
    }
    Ok(())
}

fn ode_report(model: &OdeModel, series: &TimeSeries) -> Report {
    let mut r = Report::new();
    r.text("model", series.model_id());
    r.flag(
        "converged",
        detect_convergence(series, CONVERGENCE_WINDOW, CONVERGENCE_TOL),
    );
    let min_emitted = series
        .rows()
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    r.float("min_emitted", min_emitted);

    if matches!(model, OdeModel::Seir(_) | OdeModel::Coupled { .. }) {
        let host = ["S", "E", "I", "C", "R"]
            .map(|c| series.column_index(c).expect("host columns present"));
        let total = |row: &Vec<f64>| host.iter().map(|&i| row[i]).sum::<f64>();
        let base = total(&series.rows()[0]);
        let drift = series
            .rows()
            .iter()
            .map(|row| (total(row) - base).abs() / base.max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        r.float("conservation_drift", drift);
    }

    let reservoir = match model {
        OdeModel::Reservoir(p) => Some(p),
        OdeModel::Coupled { reservoir, .. } => Some(reservoir),
        OdeModel::Seir(_) => None,
    };
    if let Some(p) = reservoir {
        // Spatially constant coefficients make the threshold weight the
        // constant theta* (sigma1 - m) with theta* = beta / m.
        let lambda0 = p.beta / p.m * (p.sigma1 - p.m);
        r.float("lambda0", lambda0);
        r.text("regime", regime_of(lambda0));
        r.float("threshold", p.threshold());
        let limits = predicted_limits(model);
        if let Some((phi, psi)) = limits.reservoir {
            r.float("limit_phi", phi);
            r.float("limit_psi", psi);
        }
        if let Some(s) = limits.susceptible {
            r.text(
                "susceptible_limit",
                match s {
                    SusceptibleLimit::Zero => "zero",
                    SusceptibleLimit::PositiveTrajectoryDependent => "positive",
                },
            );
        }
    }

    finals(&mut r, series);
    r
}

fn pde_report(model: &epispatial_core::pde::SpatialModel, out: &epispatial_core::pde::SimOutput) -> Report {
    let mut r = Report::new();
    r.text("model", model.id());
    r.flag("converged", out.report.converged);
    if let Some(regime) = out.report.regime {
        r.text("regime", regime.as_str());
    }
    if let Some(l) = out.report.lambda0 {
        r.float("lambda0", l);
    }
    if let Some(s) = out.report.s_star {
        r.float("s_star", s);
    }
    let st = &out.stats;
    r.float("min_emitted", st.min_emitted);
    if let Some(v) = st.sup_s_final {
        r.float("sup_s", v);
    }
    if let Some(v) = st.sup_theta_max {
        r.float("sup_theta_max", v);
    }
    if let Some(v) = st.theta_bound {
        r.float("theta_bound", v);
    }
    if let Some(v) = st.mass_monotone {
        r.flag("mass_monotone", v);
    }
    r.float("cum_psi", st.cum_psi_final);
    if let Some(v) = st.cum_psi_last_decile_frac {
        r.float("cum_psi_last_decile_frac", v);
    }
    for (key, v) in [
        ("theta_star_dist", st.theta_star_dist),
        ("phi_star_dist", st.phi_star_dist),
        ("psi_star_dist", st.psi_star_dist),
        ("theta_star_min", st.theta_star_min),
        ("theta_star_max", st.theta_star_max),
    ] {
        if let Some(v) = v {
            r.float(key, v);
        }
    }
    finals(&mut r, &out.series);
    r
}

fn finals(r: &mut Report, series: &TimeSeries) {
    let last = series.last_row();
    for (name, v) in series.columns().iter().zip(last) {
        r.float(format!("final.{name}"), *v);
    }
}
