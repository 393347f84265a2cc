use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use epispatial::config::{
    apply_overrides, load_config, validate, Model, Overrides, ScenarioConfig,
};
use epispatial::scenario::run_scenario;
use epispatial::sweep::run_sweep;
use epispatial::verify::run_verify;
use epispatial::CliError;

#[derive(Parser)]
#[command(
    name = "epispatial",
    about = "Scenario runner for coupled host-reservoir epidemic models on 2-D grids",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonRun {
    /// Scenario config (TOML).
    config: PathBuf,
    /// Output directory; defaults to the config's `output.dir`, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a well-mixed or spatial scenario over time.
    Simulate {
        #[command(flatten)]
        common: CommonRun,
        /// Override the step size.
        #[arg(long)]
        dt: Option<f64>,
        /// Override the end time.
        #[arg(long)]
        horizon: Option<f64>,
        /// Override the linear-solve tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Compute the principal eigenpair of `div(d grad) + a`.
    Eigen {
        #[command(flatten)]
        common: CommonRun,
        /// Override the eigenvalue tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// March a reaction-diffusion steady state to convergence.
    Steady {
        #[command(flatten)]
        common: CommonRun,
        /// Override the steady-state residual tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Rerun one scenario across a list of values for a single knob.
    Sweep {
        #[command(flatten)]
        common: CommonRun,
        /// Coefficient or parameter to vary.
        #[arg(long)]
        param: String,
        /// Comma-separated values to sweep over.
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        values: Vec<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Run a verification suite and report per-check results.
    Verify {
        /// Suite file (TOML).
        suite: PathBuf,
        /// Output directory; defaults to `out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_dir(flag: Option<PathBuf>, cfg: &ScenarioConfig) -> PathBuf {
    flag.or_else(|| {
        cfg.output
            .as_ref()
            .and_then(|o| o.dir.as_ref())
            .map(PathBuf::from)
    })
    .unwrap_or_else(|| PathBuf::from("out"))
}

fn expect_model(cfg: &ScenarioConfig, subcommand: &str, ok: bool) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "model {} is not served by the {subcommand} subcommand",
            cfg.model.id()
        )))
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate {
            common,
            dt,
            horizon,
            tol,
        } => {
            let mut cfg = load_config(&common.config)?;
            expect_model(&cfg, "simulate", cfg.model.is_simulation())?;
            apply_overrides(&mut cfg, &Overrides { dt, horizon, tol });
            let resolved = validate(&cfg)?;
            let art = run_scenario(&resolved, &out_dir(common.out, &cfg))?;
            print!("{}", art.report.render());
            Ok(())
        }
        Command::Eigen { common, tol } => {
            let mut cfg = load_config(&common.config)?;
            expect_model(&cfg, "eigen", cfg.model == Model::Eigen)?;
            apply_overrides(
                &mut cfg,
                &Overrides {
                    dt: None,
                    horizon: None,
                    tol,
                },
            );
            let resolved = validate(&cfg)?;
            let art = run_scenario(&resolved, &out_dir(common.out, &cfg))?;
            print!("{}", art.report.render());
            Ok(())
        }
        Command::Steady { common, tol } => {
            let mut cfg = load_config(&common.config)?;
            expect_model(&cfg, "steady", cfg.model == Model::Steady)?;
            apply_overrides(
                &mut cfg,
                &Overrides {
                    dt: None,
                    horizon: None,
                    tol,
                },
            );
            let resolved = validate(&cfg)?;
            let art = run_scenario(&resolved, &out_dir(common.out, &cfg))?;
            print!("{}", art.report.render());
            Ok(())
        }
        Command::Sweep {
            common,
            param,
            values,
            dt,
            horizon,
            tol,
        } => {
            let mut cfg = load_config(&common.config)?;
            apply_overrides(&mut cfg, &Overrides { dt, horizon, tol });
            let out = run_sweep(&cfg, &param, &values, &out_dir(common.out, &cfg))?;
            let table = std::fs::read_to_string(&out.table_path)
                .map_err(|e| CliError::Io(e.to_string()))?;
            print!("{table}");
            Ok(())
        }
        Command::Verify { suite, out } => {
            let out = run_verify(&suite, &out.unwrap_or_else(|| PathBuf::from("out")))?;
            print!("{}", out.summary());
            if out.failed() > 0 {
                Err(CliError::VerifyFailed {
                    failed: out.failed(),
                    total: out.total,
                })
            } else {
                Ok(())
            }
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
