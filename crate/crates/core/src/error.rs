use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The demand slope `alpha1 + alpha2 * z_r` is numerically zero.
    #[error("degenerate demand slope {slope:e}")]
    DegenerateSlope { slope: f64 },

    /// `gamma1 + alpha1 + alpha2 * z_r` is numerically zero, so the
    /// equilibrium quantity is not defined.
    #[error("degenerate equilibrium denominator {denominator:e}")]
    DegenerateDenominator { denominator: f64 },

    #[error("no positive equilibrium price exists (1 - theta * slope = {margin})")]
    NoEquilibrium { margin: f64 },

    #[error("equilibrium is not unique: {0}")]
    NotUnique(String),

    #[error("non-finite value while computing {0}")]
    NonFinite(&'static str),

    #[error("no sign change of the fixed-point residual in log-price bracket [{lo}, {hi}]")]
    NoBracket { lo: f64, hi: f64 },

    /// `1 - theta * slope <= 0` in market `market`, outside the domain of the
    /// supply residual's logarithm.
    #[error("supply residual undefined in market {market}: 1 - theta * slope = {margin}")]
    LogDomain { market: usize, margin: f64 },

    #[error("instrument Gram matrix is singular or ill-conditioned (condition {condition:e})")]
    SingularGram { condition: f64 },

    #[error("marginal cost must be positive, got {value} in market {market}")]
    NonPositiveMc { market: usize, value: f64 },

    #[error("start point is infeasible: {0}")]
    InfeasibleStart(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("empty sample")]
    EmptySample,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
