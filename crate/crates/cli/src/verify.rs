//! Verification suites: a TOML list of named checks, each pointing at a
//! scenario config and asserting on entries of its run report. Checks run
//! in parallel under a per-check wall-clock timeout; a timeout counts as a
//! failure. `results.txt` carries no timing, so reruns are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Mutex};
use std::time::Duration;

use serde::Deserialize;

use crate::config::{load_config, validate, Model};
use crate::report::Report;
use crate::scenario::run_scenario;
use crate::{thread_count, CliError};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteFile {
    /// Suites may self-identify with `model = "verify"`.
    #[serde(default)]
    pub model: Option<Model>,
    #[serde(default, rename = "check")]
    pub checks: Vec<CheckDef>,
}

fn default_timeout() -> u64 {
    300
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckDef {
    pub name: String,
    pub claim: String,
    /// Scenario config path, relative to the suite file.
    pub config: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default, rename = "assert")]
    pub asserts: Vec<AssertDef>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssertDef {
    pub key: String,
    pub op: AssertOp,
    pub value: AssertValue,
    #[serde(default)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssertOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Near,
}

impl AssertOp {
    fn as_str(&self) -> &'static str {
        match self {
            AssertOp::Lt => "lt",
            AssertOp::Le => "le",
            AssertOp::Gt => "gt",
            AssertOp::Ge => "ge",
            AssertOp::Eq => "eq",
            AssertOp::Near => "near",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum AssertValue {
    Number(f64),
    Text(String),
}

impl AssertValue {
    fn display(&self) -> String {
        match self {
            AssertValue::Number(v) => format!("{v}"),
            AssertValue::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    Timeout,
    Error,
}

impl CheckStatus {
    fn as_str(&self) -> &'static str {
        match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "fail",
            CheckStatus::Timeout => "timeout",
            CheckStatus::Error => "error",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub claim: String,
    pub status: CheckStatus,
    /// One rendered line per assertion, in suite order.
    pub assert_lines: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct VerifyOutcome {
    pub results: Vec<CheckResult>,
    pub results_path: PathBuf,
    pub passed: usize,
    pub total: usize,
}

impl VerifyOutcome {
    pub fn failed(&self) -> usize {
        self.total - self.passed
    }

    /// Human-facing summary for stdout; the machine-facing record is
    /// `results.txt`.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for r in &self.results {
            let tag = match r.status {
                CheckStatus::Pass => "PASS",
                CheckStatus::Fail => "FAIL",
                CheckStatus::Timeout => "TIMEOUT",
                CheckStatus::Error => "ERROR",
            };
            writeln!(out, "{tag} {}: {}", r.name, r.claim).unwrap();
            if r.status != CheckStatus::Pass {
                for line in &r.assert_lines {
                    if line.ends_with("result=fail") {
                        writeln!(out, "  {line}").unwrap();
                    }
                }
                if let Some(e) = &r.error {
                    writeln!(out, "  {e}").unwrap();
                }
            }
        }
        writeln!(out, "{}/{} checks passed", self.passed, self.total).unwrap();
        out
    }
}

pub fn load_suite(path: &Path) -> Result<(SuiteFile, PathBuf), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let suite: SuiteFile = toml::from_str(&text)
        .map_err(|e| CliError::Parse(format!("{}: suite parse error: {e}", path.display())))?;
    let dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    validate_suite(&suite, &dir)?;
    Ok((suite, dir))
}

fn validate_suite(suite: &SuiteFile, dir: &Path) -> Result<(), CliError> {
    let mut errs = Vec::new();
    if let Some(model) = suite.model {
        if model != Model::Verify {
            errs.push(format!(
                "suite files use model = \"verify\", got {}",
                model.id()
            ));
        }
    }
    if suite.checks.is_empty() {
        errs.push("no checks defined".to_string());
    }
    let mut seen = std::collections::BTreeSet::new();
    for check in &suite.checks {
        let name = &check.name;
        if name.is_empty() {
            errs.push("check names must not be empty".to_string());
            continue;
        }
        if !name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        {
            errs.push(format!(
                "check name {name:?} may only use letters, digits, '-', '_' and '.'"
            ));
        }
        if !seen.insert(name.clone()) {
            errs.push(format!("check name {name:?} appears more than once"));
        }
        if check.timeout_secs == 0 {
            errs.push(format!("{name}: timeout_secs must be at least 1"));
        }
        let cfg = dir.join(&check.config);
        if !cfg.is_file() {
            errs.push(format!("{name}: config {} does not exist", cfg.display()));
        }
        for a in &check.asserts {
            match a.op {
                AssertOp::Near => {
                    if !matches!(a.value, AssertValue::Number(_)) {
                        errs.push(format!("{name}: assert {} near needs a numeric value", a.key));
                    }
                    match a.tol {
                        Some(t) if t > 0.0 && t.is_finite() => {}
                        _ => errs.push(format!(
                            "{name}: assert {} near needs a positive tol",
                            a.key
                        )),
                    }
                }
                AssertOp::Eq => {
                    if a.tol.is_some() {
                        errs.push(format!("{name}: assert {} eq does not take tol", a.key));
                    }
                }
                _ => {
                    if !matches!(a.value, AssertValue::Number(_)) {
                        errs.push(format!(
                            "{name}: assert {} {} needs a numeric value",
                            a.key,
                            a.op.as_str()
                        ));
                    }
                    if a.tol.is_some() {
                        errs.push(format!(
                            "{name}: assert {} {} does not take tol",
                            a.key,
                            a.op.as_str()
                        ));
                    }
                }
            }
        }
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(errs))
    }
}

pub fn run_verify(suite_path: &Path, out_dir: &Path) -> Result<VerifyOutcome, CliError> {
    let (suite, suite_dir) = load_suite(suite_path)?;
    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out_dir.display())))?;

    let n = suite.checks.len();
    let slots: Vec<Mutex<Option<CheckResult>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let jobs = thread_count(n)?;

    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= n {
                    break;
                }
                let check = &suite.checks[idx];
                let result = run_check(check, &suite_dir, out_dir);
                *slots[idx].lock().unwrap() = Some(result);
            });
        }
    });

    let results: Vec<CheckResult> = slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every check ran"))
        .collect();
    let passed = results
        .iter()
        .filter(|r| r.status == CheckStatus::Pass)
        .count();

    let results_path = out_dir.join("results.txt");
    fs::write(&results_path, render_results(&results, passed))
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", results_path.display())))?;

    Ok(VerifyOutcome {
        results,
        results_path,
        passed,
        total: n,
    })
}

fn render_results(results: &[CheckResult], passed: usize) -> String {
    let mut out = String::new();
    for r in results {
        writeln!(out, "check={}", r.name).unwrap();
        writeln!(out, "claim={}", r.claim).unwrap();
        writeln!(out, "status={}", r.status.as_str()).unwrap();
        for line in &r.assert_lines {
            writeln!(out, "{line}").unwrap();
        }
        if let Some(e) = &r.error {
            writeln!(out, "error={}", e.replace('\n', "; ")).unwrap();
        }
        writeln!(out).unwrap();
    }
    writeln!(out, "passed={passed}").unwrap();
    writeln!(out, "failed={}", results.len() - passed).unwrap();
    writeln!(out, "total={}", results.len()).unwrap();
    out
}

fn run_check(check: &CheckDef, suite_dir: &Path, out_dir: &Path) -> CheckResult {
    let config_path = suite_dir.join(&check.config);
    let check_dir = out_dir.join("checks").join(&check.name);

    let (tx, rx) = mpsc::channel();
    // Plain spawn, not scoped: a timed-out check is left to finish on its
    // own while the verdict is already recorded.
    std::thread::spawn(move || {
        let outcome = load_config(&config_path)
            .and_then(|cfg| validate(&cfg))
            .and_then(|resolved| run_scenario(&resolved, &check_dir));
        let _ = tx.send(outcome.map(|art| art.report));
    });

    let report = match rx.recv_timeout(Duration::from_secs(check.timeout_secs)) {
        Ok(Ok(report)) => report,
        Ok(Err(e)) => {
            return CheckResult {
                name: check.name.clone(),
                claim: check.claim.clone(),
                status: CheckStatus::Error,
                assert_lines: Vec::new(),
                error: Some(e.to_string()),
            }
        }
        Err(mpsc::RecvTimeoutError::Timeout) => {
            return CheckResult {
                name: check.name.clone(),
                claim: check.claim.clone(),
                status: CheckStatus::Timeout,
                assert_lines: Vec::new(),
                error: Some(format!(
                    "check did not finish within {} s",
                    check.timeout_secs
                )),
            }
        }
        Err(mpsc::RecvTimeoutError::Disconnected) => {
            return CheckResult {
                name: check.name.clone(),
                claim: check.claim.clone(),
                status: CheckStatus::Error,
                assert_lines: Vec::new(),
                error: Some("check worker terminated unexpectedly".to_string()),
            }
        }
    };

    let mut lines = Vec::new();
    let mut all_pass = true;
    for a in &check.asserts {
        let (pass, measured) = evaluate(a, &report);
        all_pass &= pass;
        let tol = match a.tol {
            Some(t) => format!(" tol={t}"),
            None => String::new(),
        };
        lines.push(format!(
            "assert key={} op={} expected={}{tol} measured={} result={}",
            a.key,
            a.op.as_str(),
            a.value.display(),
            measured,
            if pass { "pass" } else { "fail" }
        ));
    }
    CheckResult {
        name: check.name.clone(),
        claim: check.claim.clone(),
        status: if all_pass {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        assert_lines: lines,
        error: None,
    }
}

fn evaluate(a: &AssertDef, report: &Report) -> (bool, String) {
    let Some(measured) = report.get(&a.key) else {
        return (false, "<missing>".to_string());
    };
    let pass = match (&a.op, &a.value) {
        (AssertOp::Eq, AssertValue::Text(want)) => measured == want,
        (op, AssertValue::Number(want)) => match measured.parse::<f64>() {
            Ok(m) => match op {
                AssertOp::Lt => m < *want,
                AssertOp::Le => m <= *want,
                AssertOp::Gt => m > *want,
                AssertOp::Ge => m >= *want,
                AssertOp::Eq => m == *want,
                AssertOp::Near => (m - want).abs() <= a.tol.unwrap_or(0.0),
            },
            Err(_) => false,
        },
        // Text values with ordering ops are rejected at suite validation.
        _ => false,
    };
    (pass, measured.to_string())
}
