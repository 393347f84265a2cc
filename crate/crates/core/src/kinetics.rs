//! Well-mixed host and reservoir kinetics.
//!
//! The host is an SEIR-type system with an extra contaminated class C;
//! infection pressure on susceptibles is `sigma*I*S + omega*S*C` plus,
//! when coupled, `kappa*S*psi` from the infected part of an environmental
//! reservoir. The reservoir itself grows logistically: total density
//! `theta = phi + psi` obeys `theta' = beta*theta - m*theta^2`, with the
//! infection exchanging mass between the uninfected part `phi` and the
//! infected part `psi`.
//!
//! Trajectories are computed with fixed-step classical RK4; emitted states
//! are kept in the closed positive orthant (round-off undershoot below
//! [`crate::NEGATIVE_CLIP_TOL`] is clipped, anything worse is an error).

use std::io::Write;

use thiserror::Error;

use crate::NEGATIVE_CLIP_TOL;

/// Relative drift allowed in conserved quantities at output times.
pub const CONSERVATION_RTOL: f64 = 1e-9;

/// Output rows inspected by [`detect_convergence`].
pub const CONVERGENCE_WINDOW: usize = 10;

/// Componentwise spread under which a windowed trajectory counts as settled.
pub const CONVERGENCE_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum KineticsError {
    #[error("parameter {name} must be positive and finite, got {value}")]
    BadParam { name: &'static str, value: f64 },
    #[error("parameter {name} must be nonnegative and finite, got {value}")]
    BadNonnegParam { name: &'static str, value: f64 },
    #[error("state component {name} must be nonnegative and finite, got {value}")]
    BadState { name: &'static str, value: f64 },
    #[error("initial state does not match the selected model")]
    ModelInitMismatch,
    #[error("bad integration config: {0}")]
    BadConfig(String),
    #[error(
        "integration unstable at t = {t}: {detail}; reduce dt (current dt = {dt})"
    )]
    Unstable { t: f64, dt: f64, detail: String },
    #[error(
        "host mass drifted by {drift:e} (relative) at t = {t}, beyond {CONSERVATION_RTOL:e}; reduce dt"
    )]
    ConservationLoss { t: f64, drift: f64 },
    #[error("column {0} is not part of this series")]
    NoSuchColumn(String),
}

// ---------------------------------------------------------------------------
// Parameters and states
// ---------------------------------------------------------------------------

/// Host rate constants. `lambda = lambda1 + lambda2` (E outflow) and
/// `gamma = gamma1 + gamma2` (I outflow) are derived, never stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeirParams {
    pub sigma: f64,
    pub omega: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub mu: f64,
    /// Reservoir-to-host contact rate; zero when the host is uncoupled.
    pub kappa: f64,
}

impl SeirParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        sigma: f64,
        omega: f64,
        lambda1: f64,
        lambda2: f64,
        gamma1: f64,
        gamma2: f64,
        mu: f64,
        kappa: f64,
    ) -> Result<Self, KineticsError> {
        let positive = [
            ("sigma", sigma),
            ("omega", omega),
            ("lambda1", lambda1),
            ("lambda2", lambda2),
            ("gamma1", gamma1),
            ("gamma2", gamma2),
            ("mu", mu),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(KineticsError::BadParam { name, value });
            }
        }
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(KineticsError::BadNonnegParam {
                name: "kappa",
                value: kappa,
            });
        }
        Ok(SeirParams {
            sigma,
            omega,
            lambda1,
            lambda2,
            gamma1,
            gamma2,
            mu,
            kappa,
        })
    }

    /// Total outflow rate from E.
    pub fn lambda(&self) -> f64 {
        self.lambda1 + self.lambda2
    }

    /// Total outflow rate from I.
    pub fn gamma(&self) -> f64 {
        self.gamma1 + self.gamma2
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeirState {
    pub s: f64,
    pub e: f64,
    pub i: f64,
    pub c: f64,
    pub r: f64,
}

impl SeirState {
    pub fn new(s: f64, e: f64, i: f64, c: f64, r: f64) -> Result<Self, KineticsError> {
        for (name, value) in [("S", s), ("E", e), ("I", i), ("C", c), ("R", r)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(KineticsError::BadState { name, value });
            }
        }
        Ok(SeirState { s, e, i, c, r })
    }

    pub fn total(&self) -> f64 {
        self.s + self.e + self.i + self.c + self.r
    }
}

/// Reservoir rate constants: logistic growth `beta`, quadratic death `m`,
/// infection transfer `sigma1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReservoirParams {
    pub beta: f64,
    pub m: f64,
    pub sigma1: f64,
}

impl ReservoirParams {
    pub fn new(beta: f64, m: f64, sigma1: f64) -> Result<Self, KineticsError> {
        for (name, value) in [("beta", beta), ("m", m), ("sigma1", sigma1)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(KineticsError::BadParam { name, value });
            }
        }
        Ok(ReservoirParams { beta, m, sigma1 })
    }

    /// Ratio playing the role of a reproductive number: endemic iff > 1.
    pub fn threshold(&self) -> f64 {
        self.sigma1 / self.m
    }
}

/// Reservoir state with `theta = phi + psi` maintained by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReservoirState {
    pub theta: f64,
    pub phi: f64,
    pub psi: f64,
}

impl ReservoirState {
    pub fn new(phi: f64, psi: f64) -> Result<Self, KineticsError> {
        for (name, value) in [("phi", phi), ("psi", psi)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(KineticsError::BadState { name, value });
            }
        }
        Ok(ReservoirState {
            theta: phi + psi,
            phi,
            psi,
        })
    }

    /// Accepts explicit components, rejecting splits where `theta` has
    /// drifted away from `phi + psi` by more than round-off tolerance.
    pub fn from_components(theta: f64, phi: f64, psi: f64) -> Result<Self, KineticsError> {
        let state = Self::new(phi, psi)?;
        if (theta - state.theta).abs() > CONSERVATION_RTOL * state.theta.max(1.0) {
            return Err(KineticsError::BadState {
                name: "theta",
                value: theta,
            });
        }
        Ok(ReservoirState { theta, phi, psi })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeirDeriv {
    pub ds: f64,
    pub de: f64,
    pub di: f64,
    pub dc: f64,
    pub dr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReservoirDeriv {
    pub dtheta: f64,
    pub dphi: f64,
    pub dpsi: f64,
}

// ---------------------------------------------------------------------------
// Right-hand sides
// ---------------------------------------------------------------------------

/// Shared host rate evaluation. Cross-compartment terms are computed once
/// and reused with opposite signs so the five components sum to zero up to
/// round-off.
fn host_rates(p: &SeirParams, s: f64, e: f64, i: f64, c: f64, psi: f64, dy: &mut [f64]) {
    let infection = p.sigma * i * s + p.omega * s * c + p.kappa * s * psi;
    let l1e = p.lambda1 * e;
    let l2e = p.lambda2 * e;
    let g1i = p.gamma1 * i;
    let g2i = p.gamma2 * i;
    let muc = p.mu * c;
    dy[0] = -infection;
    dy[1] = infection - l1e - l2e;
    dy[2] = l1e - g1i - g2i;
    dy[3] = g1i - muc;
    dy[4] = l2e + g2i + muc;
}

/// Shared reservoir rate evaluation; `dphi + dpsi` equals `dtheta` whenever
/// `theta = phi + psi`.
fn reservoir_rates(p: &ReservoirParams, theta: f64, phi: f64, psi: f64, dy: &mut [f64]) {
    let growth = p.beta * theta;
    let transfer = p.sigma1 * phi * psi;
    dy[0] = growth - p.m * theta * theta;
    dy[1] = growth - transfer - p.m * theta * phi;
    dy[2] = transfer - p.m * theta * psi;
}

/// Host derivative under reservoir forcing `psi` (zero for the uncoupled
/// model). Errors on negative or non-finite inputs.
pub fn seir_rhs(
    state: &SeirState,
    params: &SeirParams,
    psi: f64,
) -> Result<SeirDeriv, KineticsError> {
    SeirState::new(state.s, state.e, state.i, state.c, state.r)?;
    if !(psi.is_finite() && psi >= 0.0) {
        return Err(KineticsError::BadState {
            name: "psi",
            value: psi,
        });
    }
    let mut dy = [0.0; 5];
    host_rates(params, state.s, state.e, state.i, state.c, psi, &mut dy);
    Ok(SeirDeriv {
        ds: dy[0],
        de: dy[1],
        di: dy[2],
        dc: dy[3],
        dr: dy[4],
    })
}

/// Reservoir derivative. Errors on negative or non-finite inputs.
pub fn reservoir_rhs(
    state: &ReservoirState,
    params: &ReservoirParams,
) -> Result<ReservoirDeriv, KineticsError> {
    for (name, value) in [
        ("theta", state.theta),
        ("phi", state.phi),
        ("psi", state.psi),
    ] {
        if !(value.is_finite() && value >= 0.0) {
            return Err(KineticsError::BadState { name, value });
        }
    }
    let mut dy = [0.0; 3];
    reservoir_rates(params, state.theta, state.phi, state.psi, &mut dy);
    Ok(ReservoirDeriv {
        dtheta: dy[0],
        dphi: dy[1],
        dpsi: dy[2],
    })
}

// ---------------------------------------------------------------------------
// Models and integration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OdeModel {
    Seir(SeirParams),
    Reservoir(ReservoirParams),
    Coupled {
        host: SeirParams,
        reservoir: ReservoirParams,
    },
}

impl OdeModel {
    pub fn id(&self) -> &'static str {
        match self {
            OdeModel::Seir(_) => "seir-ode",
            OdeModel::Reservoir(_) => "reservoir-ode",
            OdeModel::Coupled { .. } => "coupled-ode",
        }
    }

    fn dim(&self) -> usize {
        match self {
            OdeModel::Seir(_) => 5,
            OdeModel::Reservoir(_) => 3,
            OdeModel::Coupled { .. } => 8,
        }
    }

    fn columns(&self) -> &'static [&'static str] {
        match self {
            OdeModel::Seir(_) => &["S", "E", "I", "C", "R"],
            OdeModel::Reservoir(_) => &["theta", "phi", "psi"],
            OdeModel::Coupled { .. } => {
                &["S", "E", "I", "C", "R", "theta", "phi", "psi"]
            }
        }
    }

    fn eval(&self, y: &[f64], dy: &mut [f64]) {
        match self {
            OdeModel::Seir(p) => host_rates(p, y[0], y[1], y[2], y[3], 0.0, dy),
            OdeModel::Reservoir(p) => reservoir_rates(p, y[0], y[1], y[2], dy),
            OdeModel::Coupled { host, reservoir } => {
                host_rates(host, y[0], y[1], y[2], y[3], y[7], &mut dy[..5]);
                reservoir_rates(reservoir, y[5], y[6], y[7], &mut dy[5..]);
            }
        }
    }

    /// Largest rate constant in the model, used for the default step size.
    pub fn max_rate(&self) -> f64 {
        let host_max = |p: &SeirParams| {
            [
                p.sigma, p.omega, p.lambda1, p.lambda2, p.gamma1, p.gamma2, p.mu, p.kappa,
            ]
            .into_iter()
            .fold(0.0f64, f64::max)
        };
        let res_max = |p: &ReservoirParams| p.beta.max(p.m).max(p.sigma1);
        match self {
            OdeModel::Seir(p) => host_max(p),
            OdeModel::Reservoir(p) => res_max(p),
            OdeModel::Coupled { host, reservoir } => host_max(host).max(res_max(reservoir)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OdeInit {
    Seir(SeirState),
    Reservoir(ReservoirState),
    Coupled {
        host: SeirState,
        reservoir: ReservoirState,
    },
}

impl OdeInit {
    fn to_vec(self) -> Vec<f64> {
        match self {
            OdeInit::Seir(h) => vec![h.s, h.e, h.i, h.c, h.r],
            OdeInit::Reservoir(r) => vec![r.theta, r.phi, r.psi],
            OdeInit::Coupled { host, reservoir } => vec![
                host.s,
                host.e,
                host.i,
                host.c,
                host.r,
                reservoir.theta,
                reservoir.phi,
                reservoir.psi,
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateConfig {
    pub dt: f64,
    pub horizon: f64,
    /// Steps between emitted rows; the initial and final states are always
    /// emitted.
    pub output_every: usize,
}

impl IntegrateConfig {
    pub fn new(dt: f64, horizon: f64, output_every: usize) -> Result<Self, KineticsError> {
        let cfg = IntegrateConfig {
            dt,
            horizon,
            output_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `dt = 1e-3 / max-rate`, i.e. a thousandth of the fastest
    /// characteristic time in the model.
    pub fn with_default_dt(
        model: &OdeModel,
        horizon: f64,
        output_every: usize,
    ) -> Result<Self, KineticsError> {
        Self::new(1e-3 / model.max_rate(), horizon, output_every)
    }

    fn validate(&self) -> Result<(), KineticsError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(KineticsError::BadConfig(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(KineticsError::BadConfig(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if self.dt > self.horizon {
            return Err(KineticsError::BadConfig(format!(
                "dt = {} exceeds horizon = {}",
                self.dt, self.horizon
            )));
        }
        if self.output_every == 0 {
            return Err(KineticsError::BadConfig(
                "output_every must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Sampled trajectory with named state columns.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    model_id: &'static str,
    columns: &'static [&'static str],
    times: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

impl TimeSeries {
    pub(crate) fn from_parts(
        model_id: &'static str,
        columns: &'static [&'static str],
        times: Vec<f64>,
        rows: Vec<Vec<f64>>,
    ) -> Self {
        debug_assert_eq!(times.len(), rows.len());
        TimeSeries {
            model_id,
            columns,
            times,
            rows,
        }
    }

    pub fn model_id(&self) -> &'static str {
        self.model_id
    }

    pub fn columns(&self) -> &'static [&'static str] {
        self.columns
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_row(&self) -> &[f64] {
        self.rows.last().expect("series always holds t = 0")
    }

    pub fn column_index(&self, name: &str) -> Result<usize, KineticsError> {
        self.columns
            .iter()
            .position(|&c| c == name)
            .ok_or_else(|| KineticsError::NoSuchColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, KineticsError> {
        let idx = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[idx]).collect())
    }

    /// CSV with a `t` column first; values carry 13 significant digits.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "t,{}", self.columns.join(","))?;
        for (t, row) in self.times.iter().zip(&self.rows) {
            write!(w, "{:.12e}", t)?;
            for v in row {
                write!(w, ",{:.12e}", v)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Fixed-step classical RK4 over the whole horizon.
///
/// Emitted rows are clipped into the positive orthant (undershoot below
/// [`NEGATIVE_CLIP_TOL`] only); host mass conservation and the reservoir
/// identity `theta = phi + psi` are asserted at every output time.
pub fn integrate_ode(
    model: &OdeModel,
    init: &OdeInit,
    cfg: &IntegrateConfig,
) -> Result<TimeSeries, KineticsError> {
    cfg.validate()?;
    let matches = matches!(
        (model, init),
        (OdeModel::Seir(_), OdeInit::Seir(_))
            | (OdeModel::Reservoir(_), OdeInit::Reservoir(_))
            | (OdeModel::Coupled { .. }, OdeInit::Coupled { .. })
    );
    if !matches {
        return Err(KineticsError::ModelInitMismatch);
    }

    let dim = model.dim();
    let mut y = init.to_vec();
    debug_assert_eq!(y.len(), dim);

    let host_mass0 = match model {
        OdeModel::Seir(_) | OdeModel::Coupled { .. } => Some(y[..5].iter().sum::<f64>()),
        OdeModel::Reservoir(_) => None,
    };
    let theta0 = match model {
        OdeModel::Reservoir(_) => Some(y[0]),
        OdeModel::Coupled { .. } => Some(y[5]),
        OdeModel::Seir(_) => None,
    };

    let mut k = vec![vec![0.0; dim]; 4];
    let mut stage = vec![0.0; dim];
    let mut next = vec![0.0; dim];

    let mut times = vec![0.0];
    let mut rows = vec![y.clone()];

    // Steps of dt, with one shorter trailing step when the horizon is not a
    // multiple of dt. Times are reconstructed from the step index so output
    // stamps carry no accumulation error.
    let n_full = (cfg.horizon / cfg.dt).floor() as u64;
    let remainder = cfg.horizon - n_full as f64 * cfg.dt;
    let n_steps = if remainder > 1e-9 * cfg.horizon {
        n_full + 1
    } else {
        n_full.max(1)
    };
    for step in 1..=n_steps {
        let last = step == n_steps;
        let h = if last {
            cfg.horizon - (step - 1) as f64 * cfg.dt
        } else {
            cfg.dt
        };
        let t = if last {
            cfg.horizon
        } else {
            step as f64 * cfg.dt
        };
        rk4_step(model, &y, h, &mut k, &mut stage, &mut next);

        for (n, v) in next.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(KineticsError::Unstable {
                    t,
                    dt: cfg.dt,
                    detail: format!("component {} became non-finite", model.columns()[n]),
                });
            }
            if *v < 0.0 {
                if *v < -NEGATIVE_CLIP_TOL {
                    return Err(KineticsError::Unstable {
                        t,
                        dt: cfg.dt,
                        detail: format!(
                            "component {} fell to {:e}, below -{:e}",
                            model.columns()[n],
                            *v,
                            NEGATIVE_CLIP_TOL
                        ),
                    });
                }
                *v = 0.0;
            }
        }
        y.copy_from_slice(&next);

        if step % cfg.output_every as u64 == 0 || last {
            if let Some(m0) = host_mass0 {
                let drift = (y[..5].iter().sum::<f64>() - m0).abs() / m0.max(f64::MIN_POSITIVE);
                if drift > CONSERVATION_RTOL {
                    return Err(KineticsError::ConservationLoss { t, drift });
                }
            }
            if let Some(th0) = theta0 {
                let (theta, phi, psi) = match model {
                    OdeModel::Reservoir(_) => (y[0], y[1], y[2]),
                    _ => (y[5], y[6], y[7]),
                };
                if (theta - (phi + psi)).abs() > CONSERVATION_RTOL * th0.max(1.0) {
                    return Err(KineticsError::Unstable {
                        t,
                        dt: cfg.dt,
                        detail: format!(
                            "reservoir identity theta - (phi + psi) drifted to {:e}",
                            theta - (phi + psi)
                        ),
                    });
                }
            }
            times.push(t);
            rows.push(y.clone());
        }
    }

    Ok(TimeSeries {
        model_id: model.id(),
        columns: model.columns(),
        times,
        rows,
    })
}

fn rk4_step(
    model: &OdeModel,
    y: &[f64],
    dt: f64,
    k: &mut [Vec<f64>],
    stage: &mut [f64],
    out: &mut [f64],
) {
    let dim = y.len();
    model.eval(y, &mut k[0]);
    for n in 0..dim {
        stage[n] = y[n] + 0.5 * dt * k[0][n];
    }
    let (k0, rest) = k.split_at_mut(1);
    model.eval(stage, &mut rest[0]);
    for n in 0..dim {
        stage[n] = y[n] + 0.5 * dt * rest[0][n];
    }
    let (k1, rest) = rest.split_at_mut(1);
    model.eval(stage, &mut rest[0]);
    for n in 0..dim {
        stage[n] = y[n] + dt * rest[0][n];
    }
    let (k2, k3) = rest.split_at_mut(1);
    model.eval(stage, &mut k3[0]);
    for n in 0..dim {
        out[n] = y[n]
            + dt / 6.0 * (k0[0][n] + 2.0 * k1[0][n] + 2.0 * k2[0][n] + k3[0][n]);
    }
}

// ---------------------------------------------------------------------------
// Predicted long-time behaviour
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Endemic,
    Extinction,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Endemic => "endemic",
            Regime::Extinction => "extinction",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SusceptibleLimit {
    /// Susceptibles are driven to zero (endemic reservoir).
    Zero,
    /// Susceptibles settle at a positive, trajectory-dependent level.
    PositiveTrajectoryDependent,
}

/// Predicted limits; E, I and C vanish in the limit for every host-bearing
/// model, so only S and the reservoir components are reported.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitReport {
    pub regime: Regime,
    /// `sigma1 / m`; `None` for the reservoir-free host model.
    pub threshold: Option<f64>,
    /// Limits of `(phi, psi)`; `None` for the reservoir-free host model.
    pub reservoir: Option<(f64, f64)>,
    /// Limit behaviour of S; `None` for the reservoir-only model.
    pub susceptible: Option<SusceptibleLimit>,
}

/// Long-time behaviour determined by the parameters alone.
///
/// The reservoir is endemic exactly when `sigma1 > m`: then
/// `(phi, psi) -> (beta/sigma1, (beta/sigma1)(sigma1/m - 1))` and coupled
/// susceptibles are driven to zero. Otherwise the infection disappears,
/// `(phi, psi) -> (beta/m, 0)` and susceptibles persist.
pub fn predicted_limits(model: &OdeModel) -> LimitReport {
    match model {
        OdeModel::Seir(_) => LimitReport {
            regime: Regime::Extinction,
            threshold: None,
            reservoir: None,
            susceptible: Some(SusceptibleLimit::PositiveTrajectoryDependent),
        },
        OdeModel::Reservoir(p) => LimitReport {
            regime: reservoir_regime(p),
            threshold: Some(p.threshold()),
            reservoir: Some(reservoir_limits(p)),
            susceptible: None,
        },
        OdeModel::Coupled { reservoir, .. } => {
            let regime = reservoir_regime(reservoir);
            LimitReport {
                regime,
                threshold: Some(reservoir.threshold()),
                reservoir: Some(reservoir_limits(reservoir)),
                susceptible: Some(match regime {
                    Regime::Endemic => SusceptibleLimit::Zero,
                    Regime::Extinction => SusceptibleLimit::PositiveTrajectoryDependent,
                }),
            }
        }
    }
}

fn reservoir_regime(p: &ReservoirParams) -> Regime {
    if p.sigma1 > p.m {
        Regime::Endemic
    } else {
        Regime::Extinction
    }
}

fn reservoir_limits(p: &ReservoirParams) -> (f64, f64) {
    if p.sigma1 > p.m {
        let phi = p.beta / p.sigma1;
        (phi, phi * (p.sigma1 / p.m - 1.0))
    } else {
        (p.beta / p.m, 0.0)
    }
}

/// A trajectory counts as settled when, over the trailing `window` output
/// rows, every component's spread (max minus min) stays below `tol`.
pub fn detect_convergence(series: &TimeSeries, window: usize, tol: f64) -> bool {
    if series.len() < window || window < 2 {
        return false;
    }
    let tail = &series.rows[series.len() - window..];
    for col in 0..series.columns.len() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for row in tail {
            lo = lo.min(row[col]);
            hi = hi.max(row[col]);
        }
        if hi - lo >= tol {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_host(kappa: f64) -> SeirParams {
        SeirParams::new(0.5, 0.5, 0.25, 0.25, 0.5, 0.5, 1.0, kappa).unwrap()
    }

    #[test]
    fn params_reject_nonpositive_rates() {
        assert!(SeirParams::new(0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0).is_err());
        assert!(SeirParams::new(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, -0.1).is_err());
        assert!(ReservoirParams::new(1.0, 0.0, 1.0).is_err());
        // kappa = 0 is the uncoupled host and must be accepted.
        assert!(SeirParams::new(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0).is_ok());
    }

    #[test]
    fn derived_rates_are_sums() {
        let p = std_host(0.0);
        assert_eq!(p.lambda(), 0.5);
        assert_eq!(p.gamma(), 1.0);
    }

    #[test]
    fn seir_rhs_matches_hand_evaluation() {
        // sigma = omega = 1, kappa = 0, lambda = gamma = mu = 1 (split evenly),
        // state (S, E, I, C) = (1, 0, 1, 1). Evaluated by hand:
        //   dS = -(1*1*1) - (1*1*1) = -2
        //   dE = 2 - 1*0 = 2
        //   dI = 0.5*0 - 1*1 = -1
        //   dC = 0.5*1 - 1*1 = -0.5
        //   dR = 0.5*0 + 0.5*1 + 1*1 = 1.5
        let p = SeirParams::new(1.0, 1.0, 0.5, 0.5, 0.5, 0.5, 1.0, 0.0).unwrap();
        let state = SeirState::new(1.0, 0.0, 1.0, 1.0, 0.0).unwrap();
        let d = seir_rhs(&state, &p, 0.0).unwrap();
        assert_eq!(d.ds, -2.0);
        assert_eq!(d.de, 2.0);
        assert_eq!(d.di, -1.0);
        assert_eq!(d.dc, -0.5);
        assert_eq!(d.dr, 1.5);
        assert_eq!(d.ds + d.de + d.di + d.dc + d.dr, 0.0);
    }

    #[test]
    fn seir_rhs_rejects_negative_input() {
        let p = std_host(0.0);
        let state = SeirState {
            s: 1.0,
            e: -0.1,
            i: 0.0,
            c: 0.0,
            r: 0.0,
        };
        assert!(seir_rhs(&state, &p, 0.0).is_err());
        let ok = SeirState::new(1.0, 0.0, 0.0, 0.0, 0.0).unwrap();
        assert!(seir_rhs(&ok, &p, -1.0).is_err());
    }

    #[test]
    fn reservoir_endemic_pair_is_an_equilibrium() {
        // beta = 2, m = 1, sigma1 = 2: (phi, psi) = (1, 1), theta = 2.
        let p = ReservoirParams::new(2.0, 1.0, 2.0).unwrap();
        let state = ReservoirState::new(1.0, 1.0).unwrap();
        let d = reservoir_rhs(&state, &p).unwrap();
        assert_eq!(d.dtheta, 0.0);
        assert_eq!(d.dphi, 0.0);
        assert_eq!(d.dpsi, 0.0);
    }

    #[test]
    fn carrying_capacity_is_a_reservoir_equilibrium() {
        let p = ReservoirParams::new(3.0, 1.5, 0.5).unwrap();
        let state = ReservoirState::new(2.0, 0.0).unwrap(); // theta = beta/m = 2
        let d = reservoir_rhs(&state, &p).unwrap();
        assert!(d.dtheta.abs() < 1e-14);
        assert!(d.dphi.abs() < 1e-14);
        assert_eq!(d.dpsi, 0.0);
    }

    #[test]
    fn rk4_reproduces_logistic_solution() {
        // theta' = beta*theta - m*theta^2 with psi = 0 has the closed form
        // theta(t) = K*theta0 / (theta0 + (K - theta0) e^{-beta t}), K = beta/m.
        let p = ReservoirParams::new(1.0, 0.5, 0.25).unwrap();
        let init = OdeInit::Reservoir(ReservoirState::new(0.3, 0.0).unwrap());
        let cfg = IntegrateConfig::new(1e-3, 10.0, 1000).unwrap();
        let series = integrate_ode(&OdeModel::Reservoir(p), &init, &cfg).unwrap();
        let k = p.beta / p.m;
        for (t, row) in series.times().iter().zip(series.rows()) {
            let exact = k * 0.3 / (0.3 + (k - 0.3) * (-p.beta * t).exp());
            assert!(
                (row[0] - exact).abs() < 1e-9,
                "t = {}: theta = {}, exact = {}",
                t,
                row[0],
                exact
            );
        }
    }

    #[test]
    fn rk4_order_from_step_halving() {
        let model = OdeModel::Reservoir(ReservoirParams::new(2.0, 1.0, 2.0).unwrap());
        let init = OdeInit::Reservoir(ReservoirState::new(1.5, 0.5).unwrap());
        let run = |dt: f64| {
            let cfg = IntegrateConfig::new(dt, 5.0, usize::MAX).unwrap();
            let series = integrate_ode(&model, &init, &cfg).unwrap();
            series.last_row().to_vec()
        };
        let a = run(0.05);
        let b = run(0.025);
        let c = run(0.0125);
        let diff = |u: &[f64], v: &[f64]| {
            u.iter()
                .zip(v)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max)
        };
        let e1 = diff(&a, &b);
        let e2 = diff(&b, &c);
        assert!(e2 > 1e-13, "refinement differences lost to round-off: {e2:e}");
        let order = (e1 / e2).log2();
        assert!(order >= 3.8, "observed order {} (e1 = {:e}, e2 = {:e})", order, e1, e2);
    }

    #[test]
    fn transients_agree_with_half_step_oracle() {
        let model = OdeModel::Coupled {
            host: std_host(1.0),
            reservoir: ReservoirParams::new(2.0, 1.0, 2.0).unwrap(),
        };
        let init = OdeInit::Coupled {
            host: SeirState::new(1.0, 0.1, 0.01, 0.0, 0.0).unwrap(),
            reservoir: ReservoirState::new(1.5, 0.5).unwrap(),
        };
        let run = |dt: f64| {
            let cfg = IntegrateConfig::new(dt, 5.0, (1.0 / dt) as usize).unwrap();
            integrate_ode(&model, &init, &cfg).unwrap()
        };
        let coarse = run(2e-3);
        let fine = run(1e-3);
        assert_eq!(coarse.len(), fine.len());
        for (rc, rf) in coarse.rows().iter().zip(fine.rows()) {
            for (a, b) in rc.iter().zip(rf) {
                assert!((a - b).abs() < 1e-8, "half-step disagreement: {} vs {}", a, b);
            }
        }
    }

    #[test]
    fn unstable_step_reports_dt() {
        let p = SeirParams::new(50.0, 0.5, 0.25, 0.25, 0.5, 0.5, 1.0, 0.0).unwrap();
        let init = OdeInit::Seir(SeirState::new(10.0, 0.0, 10.0, 0.0, 0.0).unwrap());
        let cfg = IntegrateConfig::new(0.5, 10.0, 1).unwrap();
        let err = integrate_ode(&OdeModel::Seir(p), &init, &cfg).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("reduce dt"), "message was: {}", msg);
    }

    #[test]
    fn model_and_init_must_match() {
        let model = OdeModel::Seir(std_host(0.0));
        let init = OdeInit::Reservoir(ReservoirState::new(1.0, 0.0).unwrap());
        let cfg = IntegrateConfig::new(0.01, 1.0, 1).unwrap();
        assert!(matches!(
            integrate_ode(&model, &init, &cfg),
            Err(KineticsError::ModelInitMismatch)
        ));
    }

    #[test]
    fn limit_reports_follow_the_threshold() {
        let endemic = OdeModel::Reservoir(ReservoirParams::new(2.0, 1.0, 2.0).unwrap());
        let report = predicted_limits(&endemic);
        assert_eq!(report.regime, Regime::Endemic);
        assert_eq!(report.reservoir, Some((1.0, 1.0)));
        assert_eq!(report.threshold, Some(2.0));

        let extinct = OdeModel::Reservoir(ReservoirParams::new(3.0, 1.0, 0.5).unwrap());
        let report = predicted_limits(&extinct);
        assert_eq!(report.regime, Regime::Extinction);
        assert_eq!(report.reservoir, Some((3.0, 0.0)));

        // sigma1 = m sits on the extinction side.
        let critical = OdeModel::Reservoir(ReservoirParams::new(2.0, 1.0, 1.0).unwrap());
        assert_eq!(predicted_limits(&critical).regime, Regime::Extinction);

        let coupled = OdeModel::Coupled {
            host: std_host(1.0),
            reservoir: ReservoirParams::new(2.0, 1.0, 2.0).unwrap(),
        };
        let report = predicted_limits(&coupled);
        assert_eq!(report.susceptible, Some(SusceptibleLimit::Zero));

        let uncoupled = OdeModel::Seir(std_host(0.0));
        let report = predicted_limits(&uncoupled);
        assert_eq!(report.threshold, None);
        assert_eq!(
            report.susceptible,
            Some(SusceptibleLimit::PositiveTrajectoryDependent)
        );
    }

    #[test]
    fn csv_has_header_and_full_precision() {
        let p = ReservoirParams::new(2.0, 1.0, 2.0).unwrap();
        let init = OdeInit::Reservoir(ReservoirState::new(1.5, 0.5).unwrap());
        let cfg = IntegrateConfig::new(0.01, 0.1, 5).unwrap();
        let series = integrate_ode(&OdeModel::Reservoir(p), &init, &cfg).unwrap();
        let mut buf = Vec::new();
        series.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,theta,phi,psi"));
        let first = lines.next().unwrap();
        assert_eq!(first.split(',').count(), 4);
        // 12 digits after the point in scientific notation.
        assert!(first.starts_with("0.000000000000e0,"), "row was: {}", first);
    }

    #[test]
    fn convergence_detection_needs_a_settled_window() {
        let p = ReservoirParams::new(2.0, 1.0, 2.0).unwrap();
        let init = OdeInit::Reservoir(ReservoirState::new(1.5, 0.5).unwrap());
        let long = IntegrateConfig::new(1e-3, 60.0, 1000).unwrap();
        let series = integrate_ode(&OdeModel::Reservoir(p), &init, &long).unwrap();
        assert!(detect_convergence(&series, CONVERGENCE_WINDOW, CONVERGENCE_TOL));

        let short = IntegrateConfig::new(1e-3, 2.0, 200).unwrap();
        let series = integrate_ode(&OdeModel::Reservoir(p), &init, &short).unwrap();
        assert!(!detect_convergence(&series, CONVERGENCE_WINDOW, CONVERGENCE_TOL));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // The five host rates sum to zero up to round-off for any
            // admissible state.
            #[test]
            fn host_rates_conserve_mass(
                s in 0.0f64..10.0,
                e in 0.0f64..10.0,
                i in 0.0f64..10.0,
                c in 0.0f64..10.0,
                psi in 0.0f64..10.0,
            ) {
                let p = SeirParams::new(0.7, 0.3, 0.25, 0.35, 0.5, 0.4, 1.1, 0.8).unwrap();
                let state = SeirState::new(s, e, i, c, 0.0).unwrap();
                let d = seir_rhs(&state, &p, psi).unwrap();
                let sum = d.ds + d.de + d.di + d.dc + d.dr;
                let scale = [d.ds, d.de, d.di, d.dc, d.dr]
                    .iter()
                    .fold(1.0f64, |m, v| m.max(v.abs()));
                prop_assert!(sum.abs() <= 1e-12 * scale, "sum = {:e}, scale = {}", sum, scale);
            }

            // dphi + dpsi identically equals dtheta when theta = phi + psi.
            #[test]
            fn reservoir_split_follows_total(
                phi in 0.0f64..10.0,
                psi in 0.0f64..10.0,
            ) {
                let p = ReservoirParams::new(1.7, 0.9, 1.3).unwrap();
                let state = ReservoirState::new(phi, psi).unwrap();
                let d = reservoir_rhs(&state, &p).unwrap();
                let scale = d.dtheta.abs().max(d.dphi.abs()).max(d.dpsi.abs()).max(1.0);
                prop_assert!(
                    (d.dphi + d.dpsi - d.dtheta).abs() <= 1e-12 * scale,
                    "dphi + dpsi = {:e}, dtheta = {:e}",
                    d.dphi + d.dpsi,
                    d.dtheta
                );
            }
        }
    }
}
