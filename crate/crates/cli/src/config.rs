//! Scenario configuration: TOML model, validation, and resolution into the
//! solver types. Validation collects every error it can find rather than
//! stopping at the first.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use epispatial_core::grid::{
    check_coefficient, CellMask, CoefficientRole, CoefficientSpec, Grid2D, MaskShape,
    ScalarField, DEFAULT_COEF_FLOOR,
};
use epispatial_core::kinetics::{
    IntegrateConfig, OdeInit, OdeModel, ReservoirParams, ReservoirState, SeirParams, SeirState,
};
use epispatial_core::pde::{
    host_rate_bound, reservoir_rate_bound, HostFieldParams, HostSetup, HostState,
    ReservoirFieldParams, ReservoirFieldState, ReservoirSetup, SimConfig, SpatialModel,
    StepperConfig,
};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    SeirOde,
    ReservoirOde,
    CoupledOde,
    HostPde,
    ReservoirPde,
    CoupledPde,
    Eigen,
    Steady,
    /// Marks a verification-suite file; not a runnable scenario.
    Verify,
}

impl Model {
    pub fn id(&self) -> &'static str {
        match self {
            Model::SeirOde => "seir-ode",
            Model::ReservoirOde => "reservoir-ode",
            Model::CoupledOde => "coupled-ode",
            Model::HostPde => "host-pde",
            Model::ReservoirPde => "reservoir-pde",
            Model::CoupledPde => "coupled-pde",
            Model::Eigen => "eigen",
            Model::Steady => "steady",
            Model::Verify => "verify",
        }
    }

    /// True for the six time-marching models served by `simulate`.
    pub fn is_simulation(&self) -> bool {
        !matches!(self, Model::Eigen | Model::Steady | Model::Verify)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MaskBlock {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Disk { center: [f64; 2], radius: f64 },
}

/// One coefficient profile. `random-uniform` resolves to a tabulated field
/// through a ChaCha8 stream seeded from the config seed and the symbol name,
/// so results are reproducible and independent of evaluation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CoefficientBlock {
    Constant {
        value: f64,
    },
    PiecewiseByMask {
        inside: f64,
        outside: f64,
    },
    Tabulated {
        values: Vec<f64>,
    },
    StepX {
        split: f64,
        below: f64,
        above: f64,
    },
    StepY {
        split: f64,
        below: f64,
        above: f64,
    },
    Gaussian {
        center: [f64; 2],
        width: f64,
        amplitude: f64,
        baseline: f64,
    },
    RandomUniform {
        low: f64,
        high: f64,
    },
}

/// Initial value: one number for a uniform start, or a full profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialSpec {
    Scalar(f64),
    Field(CoefficientBlock),
}

macro_rules! optional_f64_block {
    ($name:ident { $($field:ident),* $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
        #[serde(deny_unknown_fields)]
        pub struct $name {
            $(
                #[serde(default, skip_serializing_if = "Option::is_none")]
                pub $field: Option<f64>,
            )*
        }

        impl $name {
            pub fn get(&self, name: &str) -> Option<f64> {
                match name {
                    $(stringify!($field) => self.$field,)*
                    _ => None,
                }
            }

            pub fn set(&mut self, name: &str, value: f64) -> bool {
                match name {
                    $(stringify!($field) => { self.$field = Some(value); true })*
                    _ => false,
                }
            }

            fn present(&self) -> Vec<&'static str> {
                let mut out = Vec::new();
                $(if self.$field.is_some() { out.push(stringify!($field)); })*
                out
            }
        }
    };
}

optional_f64_block!(ParamsBlock {
    sigma,
    omega,
    kappa,
    lambda1,
    lambda2,
    gamma1,
    gamma2,
    mu,
    beta,
    m,
    sigma1,
});

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitialBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<InitialSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<InitialSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i: Option<InitialSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<InitialSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<InitialSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<InitialSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<InitialSpec>,
}

impl InitialBlock {
    fn get(&self, name: &str) -> Option<&InitialSpec> {
        match name {
            "s" => self.s.as_ref(),
            "e" => self.e.as_ref(),
            "i" => self.i.as_ref(),
            "c" => self.c.as_ref(),
            "r" => self.r.as_ref(),
            "phi" => self.phi.as_ref(),
            "psi" => self.psi.as_ref(),
            _ => None,
        }
    }

    fn present(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for name in ["s", "e", "i", "c", "r", "phi", "psi"] {
            if self.get(name).is_some() {
                out.push(name);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct StepperBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snapshots: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: Model,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<MaskBlock>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub coefficients: BTreeMap<String, CoefficientBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamsBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stepper: Option<StepperBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputBlock>,
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, CliError> {
    toml::from_str(text).map_err(|e| {
        // Suite files self-identify through their model key; redirect instead
        // of complaining about their check tables field by field.
        if names_a_suite(text) {
            return CliError::Validation(vec![
                "model verify names a verification suite; run it with the verify subcommand"
                    .into(),
            ]);
        }
        CliError::Parse(format!("config parse error: {e}"))
    })
}

fn names_a_suite(text: &str) -> bool {
    toml::from_str::<toml::Value>(text)
        .ok()
        .and_then(|v| v.get("model").and_then(|m| m.as_str().map(str::to_owned)))
        .is_some_and(|m| m == "verify")
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        CliError::Parse(msg) => CliError::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Inverse of [`parse_config`] up to formatting: `parse(emit(c)) == c`.
pub fn emit(cfg: &ScenarioConfig) -> String {
    toml::to_string(cfg).expect("scenario configs always serialize")
}

/// Command-line overrides applied before validation. `tol` targets the
/// eigen/steady tolerance for those models and the linear-solve tolerance
/// for time-marching models.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub tol: Option<f64>,
}

pub fn apply_overrides(cfg: &mut ScenarioConfig, ov: &Overrides) {
    if ov.dt.is_some() || ov.horizon.is_some() {
        let stepper = cfg.stepper.get_or_insert_with(StepperBlock::default);
        if ov.dt.is_some() {
            stepper.dt = ov.dt;
        }
        if ov.horizon.is_some() {
            stepper.horizon = ov.horizon;
        }
    }
    if let Some(tol) = ov.tol {
        if cfg.model.is_simulation() {
            cfg.stepper.get_or_insert_with(StepperBlock::default).solve_tol = Some(tol);
        } else {
            cfg.tol = Some(tol);
        }
    }
}

/// A validated scenario, ready to run.
#[derive(Debug, Clone)]
pub enum Resolved {
    Ode {
        model: OdeModel,
        init: OdeInit,
        cfg: IntegrateConfig,
    },
    Pde {
        model: Box<SpatialModel>,
        cfg: SimConfig,
    },
    Eigen {
        d: ScalarField,
        a: ScalarField,
        tol: f64,
    },
    SteadyKpp {
        d: ScalarField,
        a: ScalarField,
        r: ScalarField,
        tol: f64,
    },
    SteadyEndemic {
        d: ScalarField,
        params: Box<ReservoirFieldParams>,
        tol: f64,
    },
}

pub const DEFAULT_EIGEN_TOL: f64 = 1e-10;
pub const DEFAULT_STEADY_TOL: f64 = 1e-8;

// Which blocks and symbols each model takes. `Opt` marks blocks that may be
// present but are not required.
#[derive(Clone, Copy, PartialEq)]
enum Need {
    No,
    Opt,
    Yes,
}

struct Shape {
    grid: Need,
    mask: Need,
    coefficients: &'static [&'static str],
    params: &'static [&'static str],
    initial: &'static [&'static str],
    initial_optional: &'static [&'static str],
    stepper: Need,
    tol: Need,
    snapshots: bool,
}

const HOST_RATES: [&str; 5] = ["lambda1", "lambda2", "gamma1", "gamma2", "mu"];

fn shape(model: Model) -> Shape {
    match model {
        Model::SeirOde => Shape {
            grid: Need::No,
            mask: Need::No,
            coefficients: &[],
            params: &["sigma", "omega", "lambda1", "lambda2", "gamma1", "gamma2", "mu"],
            initial: &["s", "e", "i", "c"],
            initial_optional: &["r"],
            stepper: Need::Yes,
            tol: Need::No,
            snapshots: false,
        },
        Model::ReservoirOde => Shape {
            grid: Need::No,
            mask: Need::No,
            coefficients: &[],
            params: &["beta", "m", "sigma1"],
            initial: &["phi", "psi"],
            initial_optional: &[],
            stepper: Need::Yes,
            tol: Need::No,
            snapshots: false,
        },
        Model::CoupledOde => Shape {
            grid: Need::No,
            mask: Need::No,
            coefficients: &[],
            params: &[
                "sigma", "omega", "kappa", "lambda1", "lambda2", "gamma1", "gamma2", "mu",
                "beta", "m", "sigma1",
            ],
            initial: &["s", "e", "i", "c", "phi", "psi"],
            initial_optional: &["r"],
            stepper: Need::Yes,
            tol: Need::No,
            snapshots: false,
        },
        Model::HostPde => Shape {
            grid: Need::Yes,
            mask: Need::No,
            coefficients: &["d_s", "d_e", "sigma", "omega"],
            params: &HOST_RATES,
            initial: &["s", "e", "i", "c"],
            initial_optional: &[],
            stepper: Need::Yes,
            tol: Need::No,
            snapshots: true,
        },
        Model::ReservoirPde => Shape {
            grid: Need::Yes,
            mask: Need::Opt,
            coefficients: &["d_r", "beta", "m", "sigma1"],
            params: &[],
            initial: &["phi", "psi"],
            initial_optional: &[],
            stepper: Need::Yes,
            tol: Need::No,
            snapshots: true,
        },
        Model::CoupledPde => Shape {
            grid: Need::Yes,
            mask: Need::Yes,
            coefficients: &[
                "d_s", "d_e", "d_r", "sigma", "omega", "kappa", "beta", "m", "sigma1",
            ],
            params: &HOST_RATES,
            initial: &["s", "e", "i", "c", "phi", "psi"],
            initial_optional: &[],
            stepper: Need::Yes,
            tol: Need::No,
            snapshots: true,
        },
        Model::Eigen => Shape {
            grid: Need::Yes,
            mask: Need::Opt,
            coefficients: &["d", "a"],
            params: &[],
            initial: &[],
            initial_optional: &[],
            stepper: Need::No,
            tol: Need::Opt,
            snapshots: false,
        },
        // The steady model accepts either of two coefficient sets; handled
        // specially in validate().
        Model::Steady => Shape {
            grid: Need::Yes,
            mask: Need::Opt,
            coefficients: &[],
            params: &[],
            initial: &[],
            initial_optional: &[],
            stepper: Need::No,
            tol: Need::Opt,
            snapshots: false,
        },
        Model::Verify => unreachable!("suite files are rejected before shape lookup"),
    }
}

fn symbol_stream(seed: u64, symbol: &str) -> u64 {
    // FNV-1a over the symbol name, folded with the user seed; gives each
    // symbol an independent, order-free random stream.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in symbol.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ seed
}

struct Ctx<'a> {
    cfg: &'a ScenarioConfig,
    errs: Vec<String>,
}

impl<'a> Ctx<'a> {
    fn err(&mut self, msg: impl Into<String>) {
        self.errs.push(msg.into());
    }

    /// Lower a coefficient block to a core spec, resolving randomness.
    /// `cells` is the length of the evaluation support.
    fn to_spec(
        &mut self,
        symbol: &str,
        block: &CoefficientBlock,
        cells: usize,
    ) -> Option<CoefficientSpec> {
        Some(match *block {
            CoefficientBlock::Constant { value } => CoefficientSpec::Constant(value),
            CoefficientBlock::PiecewiseByMask { inside, outside } => {
                CoefficientSpec::PiecewiseByMask { inside, outside }
            }
            CoefficientBlock::Tabulated { ref values } => {
                CoefficientSpec::Tabulated(values.clone())
            }
            CoefficientBlock::StepX { split, below, above } => {
                CoefficientSpec::StepX { split, below, above }
            }
            CoefficientBlock::StepY { split, below, above } => {
                CoefficientSpec::StepY { split, below, above }
            }
            CoefficientBlock::Gaussian {
                center,
                width,
                amplitude,
                baseline,
            } => CoefficientSpec::Gaussian {
                center: (center[0], center[1]),
                width,
                amplitude,
                baseline,
            },
            CoefficientBlock::RandomUniform { low, high } => {
                if !(low.is_finite() && high.is_finite() && low <= high) {
                    self.err(format!(
                        "{symbol}: random-uniform needs finite low <= high, got [{low}, {high}]"
                    ));
                    return None;
                }
                let Some(seed) = self.cfg.seed else {
                    self.err(format!(
                        "{symbol}: random-uniform profiles require a top-level seed"
                    ));
                    return None;
                };
                let mut rng = ChaCha8Rng::seed_from_u64(symbol_stream(seed, symbol));
                let values = (0..cells)
                    .map(|_| low + (high - low) * rng.gen::<f64>())
                    .collect();
                CoefficientSpec::Tabulated(values)
            }
        })
    }

    /// Evaluate `block` on the full grid (`mask` feeds piecewise-by-mask).
    fn eval_full(
        &mut self,
        symbol: &str,
        block: &CoefficientBlock,
        grid: &Grid2D,
        mask: Option<&Arc<CellMask>>,
    ) -> Option<ScalarField> {
        let spec = self.to_spec(symbol, block, grid.n_cells())?;
        match spec.evaluate(grid, mask) {
            Ok(f) => Some(f),
            Err(e) => {
                self.err(format!("{symbol}: {e}"));
                None
            }
        }
    }

    /// Evaluate `block` on the mask cells when a mask is present, else on
    /// the full grid.
    fn eval_support(
        &mut self,
        symbol: &str,
        block: &CoefficientBlock,
        grid: &Grid2D,
        mask: Option<&Arc<CellMask>>,
    ) -> Option<ScalarField> {
        match mask {
            Some(m) => {
                let spec = self.to_spec(symbol, block, m.cell_count())?;
                match spec.evaluate_on(grid, m) {
                    Ok(f) => Some(f),
                    Err(e) => {
                        self.err(format!("{symbol}: {e}"));
                        None
                    }
                }
            }
            None => self.eval_full(symbol, block, grid, None),
        }
    }

    fn positive_coefficient(&mut self, symbol: &str, field: &Option<ScalarField>) {
        if let Some(f) = field {
            if let Err(e) =
                check_coefficient(f, CoefficientRole::StrictlyPositive, None, DEFAULT_COEF_FLOOR)
            {
                self.err(format!("{symbol}: {e}"));
            }
        }
    }

    fn initial_field(
        &mut self,
        name: &str,
        grid: &Grid2D,
        mask: Option<&Arc<CellMask>>,
        on_mask_support: bool,
    ) -> Option<ScalarField> {
        let spec = self.cfg.initial.as_ref()?.get(name)?.clone();
        let field = match spec {
            InitialSpec::Scalar(v) => match (on_mask_support, mask) {
                (true, Some(m)) => Some(ScalarField::constant_on(grid, m, v)),
                _ => Some(ScalarField::constant(grid, v)),
            },
            InitialSpec::Field(block) => {
                let sym = format!("initial {name}");
                if on_mask_support {
                    self.eval_support(&sym, &block, grid, mask)
                } else {
                    self.eval_full(&sym, &block, grid, mask)
                }
            }
        };
        if let Some(f) = &field {
            if f.min() < 0.0 {
                self.err(format!(
                    "initial {name} must be nonnegative, found {:.3e}",
                    f.min()
                ));
            }
        }
        field
    }

    fn scalar_param(&mut self, name: &'static str) -> Option<f64> {
        let v = self.cfg.params.as_ref()?.get(name);
        if v.is_none() {
            self.err(format!(
                "model {} requires parameter {name}",
                self.cfg.model.id()
            ));
        }
        v
    }

    fn scalar_initial(&mut self, name: &'static str, required: bool) -> Option<f64> {
        match self.cfg.initial.as_ref().and_then(|b| b.get(name)) {
            Some(InitialSpec::Scalar(v)) => Some(*v),
            Some(InitialSpec::Field(_)) => {
                self.err(format!(
                    "initial {name} must be a plain number for model {}",
                    self.cfg.model.id()
                ));
                None
            }
            None => {
                if required {
                    self.err(format!(
                        "model {} requires initial {name}",
                        self.cfg.model.id()
                    ));
                }
                None
            }
        }
    }
}

/// Validate `cfg` and lower it into solver inputs. All detected problems are
/// returned together in a [`CliError::Validation`].
pub fn validate(cfg: &ScenarioConfig) -> Result<Resolved, CliError> {
    if cfg.model == Model::Verify {
        return Err(CliError::Validation(vec![
            "model verify names a verification suite; run it with the verify subcommand".into(),
        ]));
    }
    let mut ctx = Ctx { cfg, errs: Vec::new() };
    let model = cfg.model;
    let want = shape(model);

    check_block(&mut ctx, "grid", want.grid, cfg.grid.is_some());
    check_block(&mut ctx, "mask", want.mask, cfg.mask.is_some());
    check_block(&mut ctx, "stepper", want.stepper, cfg.stepper.is_some());
    check_block(&mut ctx, "tol", want.tol, cfg.tol.is_some());

    if model != Model::Steady {
        check_symbols(
            &mut ctx,
            "coefficient",
            want.coefficients,
            &cfg.coefficients.keys().map(String::as_str).collect::<Vec<_>>(),
        );
    }
    {
        let present = cfg.params.map(|p| p.present()).unwrap_or_default();
        check_symbols(&mut ctx, "parameter", want.params, &present);
        if want.params.is_empty() && cfg.params.is_some() {
            ctx.err(format!("model {} does not take a [params] block", model.id()));
        }
    }
    {
        let present = cfg
            .initial
            .as_ref()
            .map(|b| b.present())
            .unwrap_or_default();
        for name in &present {
            if !want.initial.contains(name) && !want.initial_optional.contains(name) {
                ctx.err(format!("initial {name} is not used by model {}", model.id()));
            }
        }
        if want.initial.is_empty() && cfg.initial.is_some() {
            ctx.err(format!("model {} does not take an [initial] block", model.id()));
        }
    }
    if let Some(out) = &cfg.output {
        if !want.snapshots && !out.snapshots.is_empty() {
            ctx.err(format!(
                "model {} does not take snapshot times",
                model.id()
            ));
        }
    }
    if let Some(tol) = cfg.tol {
        if !(tol > 0.0 && tol < 1.0) {
            ctx.err(format!("tol must lie in (0, 1), got {tol}"));
        }
    }

    let resolved = match model {
        Model::SeirOde | Model::ReservoirOde | Model::CoupledOde => resolve_ode(&mut ctx),
        Model::HostPde | Model::ReservoirPde | Model::CoupledPde => resolve_pde(&mut ctx),
        Model::Eigen => resolve_eigen(&mut ctx),
        Model::Steady => resolve_steady(&mut ctx),
        Model::Verify => unreachable!("suite files are rejected above"),
    };

    match resolved {
        Some(r) if ctx.errs.is_empty() => Ok(r),
        _ => {
            if ctx.errs.is_empty() {
                ctx.errs.push("configuration could not be resolved".into());
            }
            Err(CliError::Validation(ctx.errs))
        }
    }
}

fn check_block(ctx: &mut Ctx, name: &str, need: Need, present: bool) {
    let model = ctx.cfg.model.id();
    match need {
        Need::Yes if !present => ctx.err(format!("model {model} requires a {name} block")),
        Need::No if present => ctx.err(format!("model {model} does not take a {name} block")),
        _ => {}
    }
}

fn check_symbols(ctx: &mut Ctx, what: &str, wanted: &[&str], present: &[&str]) {
    let model = ctx.cfg.model.id();
    for w in wanted {
        if !present.contains(w) {
            ctx.err(format!("model {model} requires {what} {w}"));
        }
    }
    for p in present {
        if !wanted.contains(p) {
            ctx.err(format!("{what} {p} is not used by model {model}"));
        }
    }
}

fn stepper_for_ode(ctx: &mut Ctx, model: Option<&OdeModel>) -> Option<IntegrateConfig> {
    let block = ctx.cfg.stepper?;
    if block.solve_tol.is_some() {
        ctx.err("solve_tol applies only to spatial models".to_string());
    }
    let Some(horizon) = block.horizon else {
        ctx.err("stepper.horizon is required".to_string());
        return None;
    };
    let output_every = block.output_every.unwrap_or(1);
    let made = match block.dt {
        Some(dt) => IntegrateConfig::new(dt, horizon, output_every),
        None => IntegrateConfig::with_default_dt(model?, horizon, output_every),
    };
    match made {
        Ok(c) => Some(c),
        Err(e) => {
            ctx.err(e.to_string());
            None
        }
    }
}

fn resolve_ode(ctx: &mut Ctx) -> Option<Resolved> {
    let model_kind = ctx.cfg.model;
    let host_params = |ctx: &mut Ctx, kappa: f64| -> Option<SeirParams> {
        let sigma = ctx.scalar_param("sigma");
        let omega = ctx.scalar_param("omega");
        let l1 = ctx.scalar_param("lambda1");
        let l2 = ctx.scalar_param("lambda2");
        let g1 = ctx.scalar_param("gamma1");
        let g2 = ctx.scalar_param("gamma2");
        let mu = ctx.scalar_param("mu");
        match SeirParams::new(sigma?, omega?, l1?, l2?, g1?, g2?, mu?, kappa) {
            Ok(p) => Some(p),
            Err(e) => {
                ctx.err(e.to_string());
                None
            }
        }
    };
    let reservoir_params = |ctx: &mut Ctx| -> Option<ReservoirParams> {
        let beta = ctx.scalar_param("beta");
        let m = ctx.scalar_param("m");
        let s1 = ctx.scalar_param("sigma1");
        match ReservoirParams::new(beta?, m?, s1?) {
            Ok(p) => Some(p),
            Err(e) => {
                ctx.err(e.to_string());
                None
            }
        }
    };
    let host_init = |ctx: &mut Ctx| -> Option<SeirState> {
        let s = ctx.scalar_initial("s", true);
        let e = ctx.scalar_initial("e", true);
        let i = ctx.scalar_initial("i", true);
        let c = ctx.scalar_initial("c", true);
        let r = ctx.scalar_initial("r", false).unwrap_or(0.0);
        match SeirState::new(s?, e?, i?, c?, r) {
            Ok(st) => Some(st),
            Err(e) => {
                ctx.err(e.to_string());
                None
            }
        }
    };
    let reservoir_init = |ctx: &mut Ctx| -> Option<ReservoirState> {
        let phi = ctx.scalar_initial("phi", true);
        let psi = ctx.scalar_initial("psi", true);
        match ReservoirState::new(phi?, psi?) {
            Ok(st) => Some(st),
            Err(e) => {
                ctx.err(e.to_string());
                None
            }
        }
    };

    let (model, init) = match model_kind {
        Model::SeirOde => {
            let p = host_params(ctx, 0.0);
            let st = host_init(ctx);
            (p.map(OdeModel::Seir), st.map(OdeInit::Seir))
        }
        Model::ReservoirOde => {
            let p = reservoir_params(ctx);
            let st = reservoir_init(ctx);
            (p.map(OdeModel::Reservoir), st.map(OdeInit::Reservoir))
        }
        Model::CoupledOde => {
            let kappa = ctx.scalar_param("kappa");
            let hp = host_params(ctx, kappa.unwrap_or(0.0));
            let rp = reservoir_params(ctx);
            let hs = host_init(ctx);
            let rs = reservoir_init(ctx);
            (
                hp.zip(rp).map(|(host, reservoir)| OdeModel::Coupled { host, reservoir }),
                hs.zip(rs).map(|(host, reservoir)| OdeInit::Coupled { host, reservoir }),
            )
        }
        _ => unreachable!(),
    };
    let cfg = stepper_for_ode(ctx, model.as_ref());
    Some(Resolved::Ode {
        model: model?,
        init: init?,
        cfg: cfg?,
    })
}

fn build_grid(ctx: &mut Ctx) -> Option<Grid2D> {
    let g = ctx.cfg.grid.as_ref()?;
    let [ox, oy] = g.origin.unwrap_or([0.0, 0.0]);
    match Grid2D::with_origin((ox, oy), g.lx, g.ly, g.nx, g.ny) {
        Ok(grid) => Some(grid),
        Err(e) => {
            ctx.err(format!("grid: {e}"));
            None
        }
    }
}

fn build_mask(ctx: &mut Ctx, grid: Option<&Grid2D>) -> Option<Arc<CellMask>> {
    let block = ctx.cfg.mask.as_ref()?;
    let grid = grid?;
    let shape = match *block {
        MaskBlock::Rect { x0, y0, x1, y1 } => MaskShape::Rect { x0, y0, x1, y1 },
        MaskBlock::Disk { center, radius } => MaskShape::Disk {
            cx: center[0],
            cy: center[1],
            radius,
        },
    };
    match CellMask::from_shape(grid, shape) {
        Ok(m) => Some(Arc::new(m)),
        Err(e) => {
            ctx.err(format!("mask: {e}"));
            None
        }
    }
}

fn build_stepper(ctx: &mut Ctx) -> Option<StepperConfig> {
    let block = ctx.cfg.stepper?;
    let Some(dt) = block.dt else {
        ctx.err("stepper.dt is required for spatial models".to_string());
        return None;
    };
    let Some(horizon) = block.horizon else {
        ctx.err("stepper.horizon is required".to_string());
        return None;
    };
    let mut cfg = StepperConfig::new(dt, horizon);
    if let Some(k) = block.output_every {
        cfg.output_every = k;
    }
    if let Some(t) = block.solve_tol {
        cfg.solve_tol = t;
    }
    if let Err(e) = cfg.validate() {
        ctx.err(e.to_string());
        return None;
    }
    Some(cfg)
}

fn coefficient_block<'c>(ctx: &mut Ctx<'c>, symbol: &str) -> Option<&'c CoefficientBlock> {
    // Presence was already reported by check_symbols; stay quiet here.
    ctx.cfg.coefficients.get(symbol)
}

fn resolve_pde(ctx: &mut Ctx) -> Option<Resolved> {
    let model = ctx.cfg.model;
    let grid = build_grid(ctx);
    let mask = build_mask(ctx, grid.as_ref());
    let grid = grid?;
    let stepper = build_stepper(ctx);

    let full = |ctx: &mut Ctx, sym: &str| -> Option<ScalarField> {
        let block = coefficient_block(ctx, sym)?.clone();
        ctx.eval_full(sym, &block, &grid, mask.as_ref())
    };
    let on_reservoir = |ctx: &mut Ctx, sym: &str| -> Option<ScalarField> {
        let block = coefficient_block(ctx, sym)?.clone();
        ctx.eval_support(sym, &block, &grid, mask.as_ref())
    };

    let host = if matches!(model, Model::HostPde | Model::CoupledPde) {
        let d_s = full(ctx, "d_s");
        let d_e = full(ctx, "d_e");
        let sigma = full(ctx, "sigma");
        let omega = full(ctx, "omega");
        ctx.positive_coefficient("d_s", &d_s);
        ctx.positive_coefficient("d_e", &d_e);
        ctx.positive_coefficient("sigma", &sigma);
        ctx.positive_coefficient("omega", &omega);
        let kappa = if model == Model::CoupledPde {
            let k = full(ctx, "kappa");
            if let (Some(k), Some(m)) = (&k, &mask) {
                if let Err(e) = check_coefficient(
                    k,
                    CoefficientRole::SupportedOnMask,
                    Some(m.as_ref()),
                    DEFAULT_COEF_FLOOR,
                ) {
                    ctx.err(format!("kappa must vanish off Omega_star and be positive on it: {e}"));
                }
            }
            k
        } else {
            Some(ScalarField::constant(&grid, 0.0))
        };
        let l1 = ctx.scalar_param("lambda1");
        let l2 = ctx.scalar_param("lambda2");
        let g1 = ctx.scalar_param("gamma1");
        let g2 = ctx.scalar_param("gamma2");
        let mu = ctx.scalar_param("mu");

        let s = ctx.initial_field("s", &grid, mask.as_ref(), false);
        let e = ctx.initial_field("e", &grid, mask.as_ref(), false);
        let i = ctx.initial_field("i", &grid, mask.as_ref(), false);
        let c = ctx.initial_field("c", &grid, mask.as_ref(), false);
        for (name, f) in [("s", &s), ("e", &e), ("i", &i), ("c", &c)] {
            if f.is_none() && ctx.cfg.initial.as_ref().and_then(|b| b.get(name)).is_none() {
                ctx.err(format!("model {} requires initial {name}", model.id()));
            }
        }

        let params = match (sigma, omega, kappa, l1, l2, g1, g2, mu) {
            (Some(sg), Some(om), Some(kp), Some(a), Some(b), Some(c2), Some(d2), Some(e2)) => {
                match HostFieldParams::new(sg, om, kp, a, b, c2, d2, e2) {
                    Ok(p) => Some(p),
                    Err(e) => {
                        ctx.err(e.to_string());
                        None
                    }
                }
            }
            _ => None,
        };
        let init = match (s, e, i, c) {
            (Some(s), Some(e), Some(i), Some(c)) => match HostState::new(s, e, i, c) {
                Ok(st) => Some(st),
                Err(err) => {
                    ctx.err(err.to_string());
                    None
                }
            },
            _ => None,
        };
        match (d_s, d_e, params, init) {
            (Some(d_s), Some(d_e), Some(params), Some(init)) => Some(HostSetup {
                d_s,
                d_e,
                params,
                init,
            }),
            _ => None,
        }
    } else {
        None
    };

    let reservoir = if matches!(model, Model::ReservoirPde | Model::CoupledPde) {
        let d_r = on_reservoir(ctx, "d_r");
        let beta = on_reservoir(ctx, "beta");
        let m_ = on_reservoir(ctx, "m");
        let s1 = on_reservoir(ctx, "sigma1");
        ctx.positive_coefficient("d_r", &d_r);
        ctx.positive_coefficient("beta", &beta);
        ctx.positive_coefficient("m", &m_);
        ctx.positive_coefficient("sigma1", &s1);
        let phi = ctx.initial_field("phi", &grid, mask.as_ref(), true);
        let psi = ctx.initial_field("psi", &grid, mask.as_ref(), true);
        for (name, f) in [("phi", &phi), ("psi", &psi)] {
            if f.is_none() && ctx.cfg.initial.as_ref().and_then(|b| b.get(name)).is_none() {
                ctx.err(format!("model {} requires initial {name}", model.id()));
            }
        }
        let params = match (beta, m_, s1) {
            (Some(b), Some(m2), Some(s)) => match ReservoirFieldParams::new(b, m2, s) {
                Ok(p) => Some(p),
                Err(e) => {
                    ctx.err(e.to_string());
                    None
                }
            },
            _ => None,
        };
        let init = match (phi, psi) {
            (Some(phi), Some(psi)) => match ReservoirFieldState::new(phi, psi) {
                Ok(st) => Some(st),
                Err(e) => {
                    ctx.err(e.to_string());
                    None
                }
            },
            _ => None,
        };
        match (d_r, params, init) {
            (Some(d), Some(params), Some(init)) => Some(ReservoirSetup { d, params, init }),
            _ => None,
        }
    } else {
        None
    };

    // Mirror the runtime step-size guard so it lands in the collected list.
    if let Some(stepper) = &stepper {
        let theta_bound = reservoir
            .as_ref()
            .map(|r| r.params.theta_bound(r.init.theta.max()));
        let mut rate: f64 = 0.0;
        if let Some(r) = &reservoir {
            rate = rate.max(reservoir_rate_bound(&r.params, r.init.theta.max()));
        }
        if let Some(h) = &host {
            rate = rate.max(host_rate_bound(&h.params, &h.init, theta_bound.unwrap_or(0.0)));
        }
        if stepper.dt * rate > 0.5 {
            ctx.err(format!(
                "dt = {} is too large for reaction rates up to {rate:.3}; choose dt <= {:.3e}",
                stepper.dt,
                0.5 / rate
            ));
        }
    }

    let snapshot_times = ctx
        .cfg
        .output
        .as_ref()
        .map(|o| o.snapshots.clone())
        .unwrap_or_default();
    if let Some(stepper) = &stepper {
        for &t in &snapshot_times {
            if !(t.is_finite() && (0.0..=stepper.horizon).contains(&t)) {
                ctx.err(format!(
                    "snapshot time {t} lies outside [0, {}]",
                    stepper.horizon
                ));
            }
        }
    }

    let spatial = match model {
        Model::HostPde => host.map(SpatialModel::HostOnly),
        Model::ReservoirPde => reservoir.map(SpatialModel::ReservoirOnly),
        Model::CoupledPde => host.zip(reservoir).map(|(host, reservoir)| {
            SpatialModel::Coupled { host, reservoir }
        }),
        _ => unreachable!(),
    };
    Some(Resolved::Pde {
        model: Box::new(spatial?),
        cfg: SimConfig {
            stepper: stepper?,
            snapshot_times,
        },
    })
}

fn resolve_eigen(ctx: &mut Ctx) -> Option<Resolved> {
    let grid = build_grid(ctx);
    let mask = build_mask(ctx, grid.as_ref());
    let grid = grid?;
    let mut get = |sym: &str| -> Option<ScalarField> {
        let block = coefficient_block(ctx, sym)?.clone();
        ctx.eval_support(sym, &block, &grid, mask.as_ref())
    };
    let d = get("d");
    let a = get("a");
    ctx.positive_coefficient("d", &d);
    Some(Resolved::Eigen {
        d: d?,
        a: a?,
        tol: ctx.cfg.tol.unwrap_or(DEFAULT_EIGEN_TOL),
    })
}

fn resolve_steady(ctx: &mut Ctx) -> Option<Resolved> {
    let keys: Vec<&str> = ctx.cfg.coefficients.keys().map(String::as_str).collect();
    let kpp = ["a", "d", "r"];
    let endemic = ["beta", "d", "m", "sigma1"];
    let wanted: &[&str] = if keys.iter().any(|k| ["beta", "m", "sigma1"].contains(k)) {
        &endemic
    } else {
        &kpp
    };
    check_symbols(ctx, "coefficient", wanted, &keys);

    let grid = build_grid(ctx);
    let mask = build_mask(ctx, grid.as_ref());
    let grid = grid?;
    let tol = ctx.cfg.tol.unwrap_or(DEFAULT_STEADY_TOL);
    let mut get = |sym: &str| -> Option<ScalarField> {
        let block = coefficient_block(ctx, sym)?.clone();
        ctx.eval_support(sym, &block, &grid, mask.as_ref())
    };
    if wanted == endemic {
        let d = get("d");
        let beta = get("beta");
        let m_ = get("m");
        let s1 = get("sigma1");
        for (sym, f) in [("d", &d), ("beta", &beta), ("m", &m_), ("sigma1", &s1)] {
            ctx.positive_coefficient(sym, f);
        }
        let params = match (beta, m_, s1) {
            (Some(b), Some(m2), Some(s)) => match ReservoirFieldParams::new(b, m2, s) {
                Ok(p) => Some(p),
                Err(e) => {
                    ctx.err(e.to_string());
                    None
                }
            },
            _ => None,
        };
        Some(Resolved::SteadyEndemic {
            d: d?,
            params: Box::new(params?),
            tol,
        })
    } else {
        let d = get("d");
        let a = get("a");
        let r = get("r");
        ctx.positive_coefficient("d", &d);
        ctx.positive_coefficient("r", &r);
        Some(Resolved::SteadyKpp {
            d: d?,
            a: a?,
            r: r?,
            tol,
        })
    }
}
