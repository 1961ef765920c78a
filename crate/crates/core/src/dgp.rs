//! Synthetic market data.
//!
//! Log-linear design: `log Y ~ N(0,1)`, `z_r ~ U(0,1)`, `W, R ~ U(1,3)`,
//! `H = W + U(0,1)`, `K = R + U(0,1)`, errors `N(0, sigma)`. The cost shifters
//! and instruments are drawn in levels and stored as logs.
//!
//! Linear design (levels throughout): `Y ~ N(0,1)`, `z_r ~ N(10,1)`,
//! `W ~ N(3,1)`, `R ~ N(0,1)`, `H = W + N(0,1)`, `K = R + N(0,1)`, errors
//! `N(0, sigma)`, with demand `P = a0 - s Q + a3 Y + eps_d`, marginal cost
//! `MC = g0 + g1 Q + g2 W + g3 R + eps_c` and supply `P = theta s Q + MC`.
//!
//! Within a market the draws are taken in the order
//! `Y, z_r, W, R, H-noise, K-noise, eps_d, eps_c`.

use crate::equilibrium::solve_quantity;
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::types::{Dataset, MarketExogenous, MarketObservation, ModelKind, ParameterVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgpConfig {
    pub model: ModelKind,
    /// Error standard deviation; zero gives error-free markets.
    pub sigma: f64,
    pub t: usize,
    pub seed: u64,
    pub truths: ParameterVector,
}

impl DgpConfig {
    pub fn new(model: ModelKind, sigma: f64, t: usize, seed: u64) -> Self {
        Self { model, sigma, t, seed, truths: ParameterVector::truths_for(model) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 {
            return Err(Error::InvalidConfig("market count must be at least 1".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma must be nonnegative, got {}", self.sigma)));
        }
        if !self.truths.is_finite() {
            return Err(Error::InvalidConfig("truths must be finite".into()));
        }
        Ok(())
    }
}

pub fn draw_exogenous(stream: &mut Stream, sigma: f64, model: ModelKind) -> MarketExogenous {
    match model {
        ModelKind::LogLinear => {
            let log_y = stream.standard_normal();
            let z_r = stream.uniform();
            let w = stream.uniform_range(1.0, 3.0);
            let r = stream.uniform_range(1.0, 3.0);
            let h = w + stream.uniform();
            let k = r + stream.uniform();
            let eps_d = sigma * stream.standard_normal();
            let eps_c = sigma * stream.standard_normal();
            MarketExogenous {
                log_y,
                z_r,
                log_w: w.ln(),
                log_r: r.ln(),
                log_h: h.ln(),
                log_k: k.ln(),
                eps_d,
                eps_c,
            }
        }
        ModelKind::Linear => {
            let y = stream.standard_normal();
            let z_r = stream.normal(10.0, 1.0);
            let w = stream.normal(3.0, 1.0);
            let r = stream.standard_normal();
            let h = w + stream.standard_normal();
            let k = r + stream.standard_normal();
            let eps_d = sigma * stream.standard_normal();
            let eps_c = sigma * stream.standard_normal();
            MarketExogenous { log_y: y, z_r, log_w: w, log_r: r, log_h: h, log_k: k, eps_d, eps_c }
        }
    }
}

/// Computes the equilibrium of one market at `truths`.
pub fn generate_market(
    truths: &ParameterVector,
    exog: &MarketExogenous,
    model: ModelKind,
) -> Result<MarketObservation> {
    let s = truths.slope(exog.z_r);
    let (log_p, log_q) = match model {
        ModelKind::LogLinear => {
            let log_q = solve_quantity(truths, exog)?;
            let log_p = truths.alpha0 - s * log_q + truths.alpha3 * exog.log_y + exog.eps_d;
            (log_p, log_q)
        }
        ModelKind::Linear => {
            let denominator = (1.0 + truths.theta) * s + truths.gamma1;
            let scale = s.abs().max(truths.gamma1.abs()).max(1.0);
            if denominator.abs() <= f64::EPSILON * scale {
                return Err(Error::DegenerateDenominator { denominator });
            }
            let q = (truths.alpha0 + truths.alpha3 * exog.log_y + exog.eps_d
                - truths.gamma0
                - truths.gamma2 * exog.log_w
                - truths.gamma3 * exog.log_r
                - exog.eps_c)
                / denominator;
            let p = truths.alpha0 - s * q + truths.alpha3 * exog.log_y + exog.eps_d;
            (p, q)
        }
    };
    if !log_p.is_finite() || !log_q.is_finite() {
        return Err(Error::NonFinite("equilibrium outcome"));
    }
    Ok(MarketObservation { exog: *exog, log_p, log_q })
}

/// Generates `config.t` markets from a private stream seeded with
/// `config.seed`.
pub fn generate_dataset(config: &DgpConfig) -> Result<Dataset> {
    config.validate()?;
    let mut stream = Stream::new(config.seed);
    let markets = (0..config.t)
        .map(|_| {
            let exog = draw_exogenous(&mut stream, config.sigma, config.model);
            generate_market(&config.truths, &exog, config.model)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(config.model, markets))
}
