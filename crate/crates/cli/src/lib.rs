//! Command-line front end: scenario configs, artifact emission, parameter
//! sweeps, and the verification-suite harness.

pub mod config;
pub mod report;
pub mod scenario;
pub mod sweep;
pub mod verify;

use epispatial_core::kinetics::KineticsError;
use epispatial_core::pde::PdeError;

/// Exit codes: 0 success, 1 generic, 2 validation, 3 numerical instability,
/// 4 solver non-convergence, 5 verification failure.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Parse(String),
    #[error("configuration invalid:\n{}", .0.join("\n"))]
    Validation(Vec<String>),
    #[error("{0}")]
    Instability(String),
    #[error("{0}")]
    NonConvergence(String),
    #[error("verification failed: {failed} of {total} checks")]
    VerifyFailed { failed: usize, total: usize },
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Usage(_) | CliError::Parse(_) | CliError::Validation(_) => 2,
            CliError::Instability(_) => 3,
            CliError::NonConvergence(_) => 4,
            CliError::VerifyFailed { .. } => 5,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<KineticsError> for CliError {
    fn from(e: KineticsError) -> Self {
        match e {
            KineticsError::Unstable { .. } | KineticsError::ConservationLoss { .. } => {
                CliError::Instability(e.to_string())
            }
            _ => CliError::Validation(vec![e.to_string()]),
        }
    }
}

impl From<PdeError> for CliError {
    fn from(e: PdeError) -> Self {
        match e {
            PdeError::Kinetics(k) => k.into(),
            PdeError::Unstable { .. } => CliError::Instability(e.to_string()),
            PdeError::NonConvergence { .. }
            | PdeError::NonpositiveEigenfunction { .. }
            | PdeError::DegenerateThreshold { .. } => CliError::NonConvergence(e.to_string()),
            PdeError::Grid(_) | PdeError::BadConfig { .. } => {
                CliError::Validation(vec![e.to_string()])
            }
        }
    }
}

/// Worker-pool width: `EPISPATIAL_THREADS` when set, otherwise the machine's
/// available parallelism, never more than `jobs`.
pub fn thread_count(jobs: usize) -> Result<usize, CliError> {
    let hard = match std::env::var("EPISPATIAL_THREADS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => n,
            _ => {
                return Err(CliError::Usage(format!(
                    "EPISPATIAL_THREADS must be a positive integer, got {s:?}"
                )))
            }
        },
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    Ok(hard.min(jobs).max(1))
}
