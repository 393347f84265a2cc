//! Parameter sweeps: rerun one scenario across a list of values for a
//! single knob, in parallel, and collect a per-value summary table.
//!
//! A row that fails to validate or run is recorded in the table with its
//! error message; the sweep itself still succeeds.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::config::{validate, CoefficientBlock, ScenarioConfig};
use crate::scenario::run_scenario;
use crate::{thread_count, CliError};

#[derive(Debug, Clone, Default)]
pub struct SweepRow {
    pub value: f64,
    pub lambda0: Option<String>,
    pub regime: Option<String>,
    pub mean_s: Option<String>,
    pub sup_psi: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub table_path: PathBuf,
}

/// The swept knob must already appear in the base config, either as a
/// coefficient (replaced by a constant profile) or as a scalar parameter.
fn substitute(base: &ScenarioConfig, param: &str, value: f64) -> ScenarioConfig {
    let mut cfg = base.clone();
    if cfg.coefficients.contains_key(param) {
        cfg.coefficients
            .insert(param.to_string(), CoefficientBlock::Constant { value });
    } else if let Some(p) = &mut cfg.params {
        p.set(param, value);
    }
    cfg
}

pub fn run_sweep(
    base: &ScenarioConfig,
    param: &str,
    values: &[f64],
    out_dir: &Path,
) -> Result<SweepOutcome, CliError> {
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(CliError::Usage(format!("sweep values must be finite, got {bad}")));
    }
    let in_coefficients = base.coefficients.contains_key(param);
    let in_params = base
        .params
        .as_ref()
        .is_some_and(|p| p.get(param).is_some());
    if !in_coefficients && !in_params {
        return Err(CliError::Validation(vec![format!(
            "sweep parameter {param} is not defined by the base config"
        )]));
    }
    // The base config must be sound before any substitution happens.
    validate(base)?;

    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));

    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out_dir.display())))?;

    let slots: Vec<Mutex<SweepRow>> = sorted
        .iter()
        .map(|_| Mutex::new(SweepRow::default()))
        .collect();
    let next = AtomicUsize::new(0);
    let jobs = thread_count(sorted.len())?;

    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= sorted.len() {
                    break;
                }
                let value = sorted[idx];
                let run_dir = out_dir.join("runs").join(format!("run-{idx}"));
                let row = run_one(base, param, value, &run_dir);
                *slots[idx].lock().unwrap() = row;
            });
        }
    });

    let rows: Vec<SweepRow> = slots
        .into_iter()
        .map(|m| m.into_inner().unwrap())
        .collect();

    let table_path = out_dir.join("sweep.csv");
    let mut table = String::from("value,lambda0,regime,mean_s,sup_psi,error\n");
    for row in &rows {
        let cell = |v: &Option<String>| v.clone().unwrap_or_default();
        let error = match &row.error {
            Some(e) => format!("\"{}\"", e.replace('\n', "; ").replace('"', "\"\"")),
            None => String::new(),
        };
        table.push_str(&format!(
            "{:.12e},{},{},{},{},{}\n",
            row.value,
            cell(&row.lambda0),
            cell(&row.regime),
            cell(&row.mean_s),
            cell(&row.sup_psi),
            error
        ));
    }
    fs::write(&table_path, table)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", table_path.display())))?;

    Ok(SweepOutcome { rows, table_path })
}

fn run_one(base: &ScenarioConfig, param: &str, value: f64, dir: &Path) -> SweepRow {
    let mut row = SweepRow {
        value,
        ..Default::default()
    };
    let cfg = substitute(base, param, value);
    let art = match validate(&cfg).and_then(|resolved| run_scenario(&resolved, dir)) {
        Ok(art) => art,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    let report = &art.report;
    let pick = |keys: &[&str]| {
        keys.iter()
            .find_map(|k| report.get(k))
            .map(str::to_string)
    };
    row.lambda0 = pick(&["lambda0"]);
    row.regime = pick(&["regime"]);
    row.mean_s = pick(&["s_star", "final.S"]);
    row.sup_psi = pick(&["final.sup_psi", "final.psi"]);
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn base() -> ScenarioConfig {
        parse_config(
            r#"
model = "reservoir-ode"

[params]
beta = 2.0
m = 1.0
sigma1 = 2.0

[initial]
phi = 1.5
psi = 0.5

[stepper]
dt = 0.001
horizon = 100.0
output_every = 1000
"#,
        )
        .unwrap()
    }

    #[test]
    fn rows_come_back_sorted_with_regimes() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_sweep(&base(), "sigma1", &[2.0, 0.5, 1.0], dir.path()).unwrap();
        let values: Vec<f64> = out.rows.iter().map(|r| r.value).collect();
        assert_eq!(values, vec![0.5, 1.0, 2.0]);
        let regimes: Vec<&str> = out
            .rows
            .iter()
            .map(|r| r.regime.as_deref().unwrap())
            .collect();
        assert_eq!(regimes, vec!["extinction", "indeterminate", "endemic"]);
        assert!(out.table_path.is_file());
        for idx in 0..3 {
            assert!(dir
                .path()
                .join("runs")
                .join(format!("run-{idx}"))
                .join("report.txt")
                .is_file());
        }
    }

    #[test]
    fn a_failing_row_is_recorded_without_aborting() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_sweep(&base(), "m", &[1.0, 0.0], dir.path()).unwrap();
        assert_eq!(out.rows[0].value, 0.0);
        let err = out.rows[0].error.as_deref().unwrap();
        assert!(err.contains("m must be positive"), "{err}");
        assert!(out.rows[1].error.is_none());
        let table = std::fs::read_to_string(&out.table_path).unwrap();
        assert!(table.lines().count() == 3);
    }

    #[test]
    fn unknown_parameters_are_rejected_up_front() {
        let dir = tempfile::tempdir().unwrap();
        let err = run_sweep(&base(), "bogus", &[1.0], dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("bogus"), "{err}");
    }
}
