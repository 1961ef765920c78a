//! Shared domain types: structural parameters, market records, model and
//! estimator variants, and the solver/study configuration records.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of structural parameters.
pub const N_PARAMS: usize = 9;

/// Parameter names in storage order.
pub const PARAM_NAMES: [&str; N_PARAMS] = [
    "alpha0", "alpha1", "alpha2", "alpha3", "gamma0", "gamma1", "gamma2", "gamma3", "theta",
];

pub const ALPHA0: usize = 0;
pub const ALPHA1: usize = 1;
pub const ALPHA2: usize = 2;
pub const ALPHA3: usize = 3;
pub const GAMMA0: usize = 4;
pub const GAMMA1: usize = 5;
pub const GAMMA2: usize = 6;
pub const GAMMA3: usize = 7;
pub const THETA: usize = 8;

/// Demand (`alpha*`), marginal cost (`gamma*`) and conduct (`theta`)
/// parameters. No sign restrictions are imposed here; feasibility is checked
/// by the solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterVector {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub theta: f64,
}

impl ParameterVector {
    /// True values used by the log-linear simulation design.
    pub const LOG_LINEAR_TRUTHS: ParameterVector = ParameterVector {
        alpha0: 20.0,
        alpha1: 1.0,
        alpha2: 0.1,
        alpha3: 1.0,
        gamma0: 5.0,
        gamma1: 1.0,
        gamma2: 1.0,
        gamma3: 1.0,
        theta: 0.5,
    };

    /// True values used by the linear simulation design.
    pub const LINEAR_TRUTHS: ParameterVector = ParameterVector {
        alpha0: 10.0,
        alpha1: 1.0,
        alpha2: 1.0,
        alpha3: 1.0,
        gamma0: 1.0,
        gamma1: 1.0,
        gamma2: 1.0,
        gamma3: 1.0,
        theta: 0.5,
    };

    pub fn from_array(v: [f64; N_PARAMS]) -> Self {
        Self {
            alpha0: v[0],
            alpha1: v[1],
            alpha2: v[2],
            alpha3: v[3],
            gamma0: v[4],
            gamma1: v[5],
            gamma2: v[6],
            gamma3: v[7],
            theta: v[8],
        }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        let mut a = [0.0; N_PARAMS];
        a.copy_from_slice(&v[..N_PARAMS]);
        Self::from_array(a)
    }

    pub fn to_array(&self) -> [f64; N_PARAMS] {
        [
            self.alpha0,
            self.alpha1,
            self.alpha2,
            self.alpha3,
            self.gamma0,
            self.gamma1,
            self.gamma2,
            self.gamma3,
            self.theta,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Demand slope `alpha1 + alpha2 * z_r` at a given rotation instrument value.
    #[inline]
    pub fn slope(&self, z_r: f64) -> f64 {
        self.alpha1 + self.alpha2 * z_r
    }

    /// Truth vector used by default for the given model.
    pub fn truths_for(model: ModelKind) -> Self {
        match model {
            ModelKind::LogLinear => Self::LOG_LINEAR_TRUTHS,
            ModelKind::Linear => Self::LINEAR_TRUTHS,
        }
    }
}

impl From<[f64; N_PARAMS]> for ParameterVector {
    fn from(v: [f64; N_PARAMS]) -> Self {
        Self::from_array(v)
    }
}

/// Exogenous draws of one market.
///
/// For the log-linear model the `log_*` fields hold logarithms of the level
/// variables; for the linear model they hold the levels themselves (the
/// dataset's [`ModelKind`] disambiguates).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MarketExogenous {
    pub log_y: f64,
    pub z_r: f64,
    pub log_w: f64,
    pub log_r: f64,
    pub log_h: f64,
    pub log_k: f64,
    pub eps_d: f64,
    pub eps_c: f64,
}

/// Exogenous data plus equilibrium price and quantity (logs for the
/// log-linear model, levels for the linear model).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MarketObservation {
    pub exog: MarketExogenous,
    pub log_p: f64,
    pub log_q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub model: ModelKind,
    pub markets: Vec<MarketObservation>,
}

impl Dataset {
    pub fn new(model: ModelKind, markets: Vec<MarketObservation>) -> Self {
        Self { model, markets }
    }

    pub fn len(&self) -> usize {
        self.markets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markets.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[serde(rename = "loglinear")]
    LogLinear,
    Linear,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::LogLinear => "loglinear",
            ModelKind::Linear => "linear",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "loglinear" => Ok(ModelKind::LogLinear),
            "linear" => Ok(ModelKind::Linear),
            _ => Err(Error::Parse(format!("unknown model '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Unconstrained,
    Constrained,
    #[serde(rename = "mpec")]
    AdHocMpec,
}

impl EstimatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::Unconstrained => "unconstrained",
            EstimatorKind::Constrained => "constrained",
            EstimatorKind::AdHocMpec => "mpec",
        }
    }

    /// Rejects the estimator/model combinations that are not defined.
    pub fn validate_for(&self, model: ModelKind) -> Result<()> {
        if *self == EstimatorKind::AdHocMpec && model != ModelKind::LogLinear {
            return Err(Error::InvalidConfig(
                "the MPEC estimator is only defined for the log-linear model".into(),
            ));
        }
        Ok(())
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "unconstrained" => Ok(EstimatorKind::Unconstrained),
            "constrained" => Ok(EstimatorKind::Constrained),
            "mpec" | "adhocmpec" | "adhoc" => Ok(EstimatorKind::AdHocMpec),
            _ => Err(Error::Parse(format!("unknown estimator '{s}'"))),
        }
    }
}

/// Where the solver starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartPoint {
    /// Start from the data-generating truths.
    TrueValues(ParameterVector),
    Explicit(ParameterVector),
}

impl StartPoint {
    pub fn point(&self) -> ParameterVector {
        match *self {
            StartPoint::TrueValues(p) | StartPoint::Explicit(p) => p,
        }
    }
}

/// Exogenous variables available as instruments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Instrument {
    Constant,
    Zr,
    Y,
    W,
    R,
    H,
    K,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentSpec {
    pub demand: Vec<Instrument>,
    pub supply: Vec<Instrument>,
}

impl Default for InstrumentSpec {
    fn default() -> Self {
        use Instrument::*;
        Self {
            demand: vec![Constant, Zr, Y, H, K],
            supply: vec![Constant, Zr, W, R, Y],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub tol_stationarity: f64,
    pub tol_constraint: f64,
    /// Strict inequalities `c > 0` are imposed as `c >= strict_slack`.
    pub strict_slack: f64,
    pub start: StartPoint,
    #[serde(default)]
    pub instruments: InstrumentSpec,
    /// Keep every accepted iterate in [`crate::solver::EstimateResult::trace`].
    #[serde(default)]
    pub record_trace: bool,
}

impl SolverConfig {
    pub fn for_model(model: ModelKind) -> Self {
        Self {
            max_iterations: 3000,
            tol_stationarity: 1e-6,
            tol_constraint: 1e-8,
            strict_slack: 1e-6,
            start: StartPoint::TrueValues(ParameterVector::truths_for(model)),
            instruments: InstrumentSpec::default(),
            record_trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be positive".into()));
        }
        for (name, v) in [
            ("tol_stationarity", self.tol_stationarity),
            ("tol_constraint", self.tol_constraint),
            ("strict_slack", self.strict_slack),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.start.point().is_finite() {
            return Err(Error::InvalidConfig("start point must be finite".into()));
        }
        if self.instruments.demand.is_empty() || self.instruments.supply.is_empty() {
            return Err(Error::InvalidConfig("instrument sets must be nonempty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub model: ModelKind,
    pub estimator: EstimatorKind,
    pub sample_sizes: Vec<usize>,
    pub sigma: f64,
    pub replications: usize,
    pub base_seed: u64,
    pub truths: ParameterVector,
    pub solver: SolverConfig,
    /// Aggregate bias/RMSE over converged replications only.
    #[serde(default = "default_true")]
    pub condition_on_convergence: bool,
}

fn default_true() -> bool {
    true
}

impl StudyConfig {
    pub fn new(
        model: ModelKind,
        estimator: EstimatorKind,
        sample_sizes: Vec<usize>,
        sigma: f64,
        replications: usize,
        base_seed: u64,
    ) -> Self {
        Self {
            model,
            estimator,
            sample_sizes,
            sigma,
            replications,
            base_seed,
            truths: ParameterVector::truths_for(model),
            solver: SolverConfig::for_model(model),
            condition_on_convergence: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(Error::InvalidConfig("sample_sizes must be nonempty and positive".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be at least 1".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma must be nonnegative, got {}", self.sigma)));
        }
        if !self.truths.is_finite() {
            return Err(Error::InvalidConfig("truths must be finite".into()));
        }
        self.estimator.validate_for(self.model)?;
        self.solver.validate()
    }
}
