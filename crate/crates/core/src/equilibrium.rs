//! Existence, uniqueness and computation of the log-linear market
//! equilibrium.
//!
//! With demand slope `s = alpha1 + alpha2 * z_r`, a positive price `p` is an
//! equilibrium exactly when the fixed-point residual
//!
//! ```text
//! delta(p) = (1 - theta * s) * p - exp(xi) * p^(-gamma1 / s)
//! ```
//!
//! vanishes, where `xi` collects every exogenous and cost term (see
//! [`xi_composite`]). All price arithmetic is carried out in logs: at the
//! simulation truths `xi` is about 25 and prices are of order `e^13`.

use crate::error::{Error, Result};
use crate::types::{MarketExogenous, ParameterVector};

/// Relative tolerance for the knife-edge equalities `-gamma1 / s = 1` and
/// `exp(xi) = 1 - theta * s`.
pub const TOL_EQ: f64 = 1e-12;

const BRACKET_START: f64 = 60.0;
const BRACKET_DOUBLINGS: usize = 8;
const BISECTION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EquilibriumClass {
    NoEquilibrium,
    /// Exactly one positive equilibrium price, stored as its logarithm.
    Unique { log_price: f64 },
    InfinitelyMany,
}

impl EquilibriumClass {
    pub fn is_unique(&self) -> bool {
        matches!(self, EquilibriumClass::Unique { .. })
    }
}

/// One point of the fixed-point curve: the supply-side line `term1`, the
/// marginal-cost power term `term2`, and their difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaSample {
    pub p: f64,
    pub term1: f64,
    pub term2: f64,
    pub delta: f64,
}

fn checked_slope(params: &ParameterVector, exog: &MarketExogenous) -> Result<f64> {
    let s = params.slope(exog.z_r);
    let scale = params.alpha1.abs().max((params.alpha2 * exog.z_r).abs()).max(1.0);
    if !s.is_finite() || s.abs() <= f64::EPSILON * scale {
        return Err(Error::DegenerateSlope { slope: s });
    }
    Ok(s)
}

/// The composite `xi = gamma0 + gamma1 * (alpha0 + alpha3 log Y + eps_d) / s
/// + gamma2 log W + gamma3 log R + eps_c`.
pub fn xi_composite(params: &ParameterVector, exog: &MarketExogenous) -> Result<f64> {
    let s = checked_slope(params, exog)?;
    let demand_level = params.alpha0 + params.alpha3 * exog.log_y + exog.eps_d;
    let xi = params.gamma0
        + params.gamma1 * demand_level / s
        + params.gamma2 * exog.log_w
        + params.gamma3 * exog.log_r
        + exog.eps_c;
    if !xi.is_finite() {
        return Err(Error::NonFinite("xi composite"));
    }
    Ok(xi)
}

/// Returns `(term1, term2)` of the fixed-point residual at price `p`.
pub fn delta_terms(p: f64, params: &ParameterVector, exog: &MarketExogenous) -> Result<(f64, f64)> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::InvalidConfig(format!("price must be positive and finite, got {p}")));
    }
    let s = checked_slope(params, exog)?;
    let xi = xi_composite(params, exog)?;
    let term1 = (1.0 - params.theta * s) * p;
    let term2 = (xi - params.gamma1 / s * p.ln()).exp();
    if !term1.is_finite() || !term2.is_finite() {
        return Err(Error::NonFinite("fixed-point residual"));
    }
    Ok((term1, term2))
}

pub fn fixed_point_residual(p: f64, params: &ParameterVector, exog: &MarketExogenous) -> Result<f64> {
    let (term1, term2) = delta_terms(p, params, exog)?;
    let delta = term1 - term2;
    if !delta.is_finite() {
        return Err(Error::NonFinite("fixed-point residual"));
    }
    Ok(delta)
}

pub fn classify_equilibrium(params: &ParameterVector, exog: &MarketExogenous) -> Result<EquilibriumClass> {
    let s = checked_slope(params, exog)?;
    let xi = xi_composite(params, exog)?;
    let margin = 1.0 - params.theta * s;
    if margin <= 0.0 {
        return Ok(EquilibriumClass::NoEquilibrium);
    }
    let exponent = -params.gamma1 / s;
    if (exponent - 1.0).abs() > TOL_EQ * exponent.abs().max(1.0) {
        let log_price = -s / (params.gamma1 + s) * (margin.ln() - xi);
        return Ok(EquilibriumClass::Unique { log_price });
    }
    // Parallel lines: either they coincide or they never meet.
    let log_margin = margin.ln();
    if (xi - log_margin).abs() <= TOL_EQ * xi.abs().max(1.0) {
        Ok(EquilibriumClass::InfinitelyMany)
    } else {
        Ok(EquilibriumClass::NoEquilibrium)
    }
}

/// Log of the unique positive equilibrium price,
/// `log p* = -s / (gamma1 + s) * (log(1 - theta * s) - xi)`.
pub fn solve_log_price(params: &ParameterVector, exog: &MarketExogenous) -> Result<f64> {
    match classify_equilibrium(params, exog)? {
        EquilibriumClass::Unique { log_price } if log_price.is_finite() => Ok(log_price),
        EquilibriumClass::Unique { .. } => Err(Error::NonFinite("log equilibrium price")),
        other => Err(Error::NotUnique(format!("{other:?}"))),
    }
}

pub fn solve_price(params: &ParameterVector, exog: &MarketExogenous) -> Result<f64> {
    let log_price = solve_log_price(params, exog)?;
    let price = log_price.exp();
    if !price.is_finite() || price <= 0.0 {
        return Err(Error::NonFinite("equilibrium price"));
    }
    Ok(price)
}

/// Equilibrium log quantity obtained by substituting demand into the log
/// supply relation.
pub fn solve_quantity(params: &ParameterVector, exog: &MarketExogenous) -> Result<f64> {
    let s = params.slope(exog.z_r);
    let margin = 1.0 - params.theta * s;
    if margin <= 0.0 {
        return Err(Error::NoEquilibrium { margin });
    }
    let denominator = params.gamma1 + s;
    let scale = params.gamma1.abs().max(s.abs()).max(1.0);
    if denominator.abs() <= f64::EPSILON * scale {
        return Err(Error::DegenerateDenominator { denominator });
    }
    let numerator = params.alpha0 + params.alpha3 * exog.log_y + margin.ln()
        - params.gamma0
        - params.gamma2 * exog.log_w
        - params.gamma3 * exog.log_r
        + exog.eps_d
        - exog.eps_c;
    let log_q = numerator / denominator;
    if !log_q.is_finite() {
        return Err(Error::NonFinite("log equilibrium quantity"));
    }
    Ok(log_q)
}

/// Equilibrium log price located by bisection on the sign of the
/// fixed-point residual, independent of the closed form.
///
/// The sign of `delta(e^x)` is read from `log term1 - log term2`, which is
/// safe for every representable `x`. The bracket starts at `[-60, 60]` and
/// doubles outward at most eight times.
pub fn bisection_oracle(params: &ParameterVector, exog: &MarketExogenous) -> Result<f64> {
    let s = checked_slope(params, exog)?;
    let xi = xi_composite(params, exog)?;
    let margin = 1.0 - params.theta * s;
    if margin <= 0.0 {
        return Err(Error::NoEquilibrium { margin });
    }
    let log_margin = margin.ln();
    let sign_of_delta = |x: f64| -> f64 {
        let log_term1 = log_margin + x;
        let log_term2 = xi - params.gamma1 / s * x;
        log_term1 - log_term2
    };

    let mut half_width = BRACKET_START;
    let (mut lo, mut hi) = (-half_width, half_width);
    let mut f_lo = sign_of_delta(lo);
    let mut f_hi = sign_of_delta(hi);
    let mut doublings = 0;
    loop {
        if f_lo == 0.0 {
            return Ok(lo);
        }
        if f_hi == 0.0 {
            return Ok(hi);
        }
        if f_lo.signum() != f_hi.signum() {
            break;
        }
        if doublings == BRACKET_DOUBLINGS {
            return Err(Error::NoBracket { lo, hi });
        }
        half_width *= 2.0;
        lo = -half_width;
        hi = half_width;
        f_lo = sign_of_delta(lo);
        f_hi = sign_of_delta(hi);
        doublings += 1;
    }

    for _ in 0..400 {
        if hi - lo <= BISECTION_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = sign_of_delta(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Evaluates both terms of the fixed-point residual along `grid`.
pub fn sample_delta_curve(
    params: &ParameterVector,
    exog: &MarketExogenous,
    grid: &[f64],
) -> Result<Vec<DeltaSample>> {
    grid.iter()
        .map(|&p| {
            let (term1, term2) = delta_terms(p, params, exog)?;
            Ok(DeltaSample { p, term1, term2, delta: term1 - term2 })
        })
        .collect()
}
