//! Residuals, instruments, the N2SLS weight matrix and the GMM objective.
//!
//! Log-linear residuals:
//!
//! ```text
//! eps_d = log P - a0 + (a1 + a2 z_r) log Q - a3 log Y
//! eps_c = log P + log(1 - theta (a1 + a2 z_r)) - g0 - g1 log Q - g2 log W - g3 log R
//! ```
//!
//! Linear residuals (levels):
//!
//! ```text
//! eps_d = P - a0 + (a1 + a2 z_r) Q - a3 Y
//! eps_c = P - theta (a1 + a2 z_r) Q - g0 - g1 Q - g2 W - g3 R
//! ```
//!
//! With `g(xi) = [mean(eps_d z_d); mean(eps_c z_c)]` the objective is
//! `g' W g`, `W` being the inverse of the block-diagonal instrument Gram
//! matrix computed once per dataset.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::types::*;

/// Largest accepted condition number of the instrument Gram matrix.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

/// Residual values and their derivatives with respect to the nine parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualPair {
    pub demand: f64,
    pub supply: f64,
    pub d_demand: [f64; N_PARAMS],
    pub d_supply: [f64; N_PARAMS],
}

pub fn demand_residual(model: ModelKind, xi: &ParameterVector, obs: &MarketObservation) -> f64 {
    let e = &obs.exog;
    let s = xi.slope(e.z_r);
    // Both models share the same algebraic form; only the meaning of the
    // stored columns (logs or levels) differs.
    let _ = model;
    obs.log_p - xi.alpha0 + s * obs.log_q - xi.alpha3 * e.log_y
}

pub fn supply_residual(model: ModelKind, xi: &ParameterVector, obs: &MarketObservation) -> Result<f64> {
    let e = &obs.exog;
    let s = xi.slope(e.z_r);
    let cost = xi.gamma0 + xi.gamma2 * e.log_w + xi.gamma3 * e.log_r;
    match model {
        ModelKind::LogLinear => {
            let margin = 1.0 - xi.theta * s;
            if !(margin > 0.0) {
                return Err(Error::LogDomain { market: 0, margin });
            }
            Ok(obs.log_p + margin.ln() - cost - xi.gamma1 * obs.log_q)
        }
        ModelKind::Linear => Ok(obs.log_p - xi.theta * s * obs.log_q - cost - xi.gamma1 * obs.log_q),
    }
}

/// Both residuals with their parameter gradients.
pub fn residuals(model: ModelKind, xi: &ParameterVector, obs: &MarketObservation) -> Result<ResidualPair> {
    let e = &obs.exog;
    let s = xi.slope(e.z_r);
    let q = obs.log_q;

    let demand = obs.log_p - xi.alpha0 + s * q - xi.alpha3 * e.log_y;
    let mut d_demand = [0.0; N_PARAMS];
    d_demand[ALPHA0] = -1.0;
    d_demand[ALPHA1] = q;
    d_demand[ALPHA2] = e.z_r * q;
    d_demand[ALPHA3] = -e.log_y;

    let mut d_supply = [0.0; N_PARAMS];
    d_supply[GAMMA0] = -1.0;
    d_supply[GAMMA1] = -q;
    d_supply[GAMMA2] = -e.log_w;
    d_supply[GAMMA3] = -e.log_r;
    let cost = xi.gamma0 + xi.gamma1 * q + xi.gamma2 * e.log_w + xi.gamma3 * e.log_r;
    let supply = match model {
        ModelKind::LogLinear => {
            let margin = 1.0 - xi.theta * s;
            if !(margin > 0.0) {
                return Err(Error::LogDomain { market: 0, margin });
            }
            d_supply[ALPHA1] = -xi.theta / margin;
            d_supply[ALPHA2] = -xi.theta * e.z_r / margin;
            d_supply[THETA] = -s / margin;
            obs.log_p + margin.ln() - cost
        }
        ModelKind::Linear => {
            d_supply[ALPHA1] = -xi.theta * q;
            d_supply[ALPHA2] = -xi.theta * e.z_r * q;
            d_supply[THETA] = -s * q;
            obs.log_p - xi.theta * s * q - cost
        }
    };
    Ok(ResidualPair { demand, supply, d_demand, d_supply })
}

/// Supply residual of the MPEC formulation: the marginal cost is a free
/// variable and the residual is read off the marginal cost equation,
/// `log MC - g0 - g1 log Q - g2 log W - g3 log R`.
pub fn mpec_supply_residual(xi: &ParameterVector, mc: f64, obs: &MarketObservation) -> Result<f64> {
    if !(mc > 0.0) {
        return Err(Error::NonPositiveMc { market: 0, value: mc });
    }
    let e = &obs.exog;
    Ok(mc.ln() - xi.gamma0 - xi.gamma1 * obs.log_q - xi.gamma2 * e.log_w - xi.gamma3 * e.log_r)
}

/// Supply relation in levels, `P - theta s P - MC`; zero at an equilibrium.
pub fn mpec_equality(xi: &ParameterVector, mc: f64, obs: &MarketObservation) -> f64 {
    let p = obs.log_p.exp();
    p - xi.theta * xi.slope(obs.exog.z_r) * p - mc
}

/// Per-market demand and supply instrument vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentSet {
    k_d: usize,
    k_c: usize,
    z_d: Vec<f64>,
    z_c: Vec<f64>,
}

impl InstrumentSet {
    pub fn k_d(&self) -> usize {
        self.k_d
    }

    pub fn k_c(&self) -> usize {
        self.k_c
    }

    pub fn n_moments(&self) -> usize {
        self.k_d + self.k_c
    }

    pub fn len(&self) -> usize {
        self.z_d.len() / self.k_d
    }

    pub fn is_empty(&self) -> bool {
        self.z_d.is_empty()
    }

    pub fn demand(&self, t: usize) -> &[f64] {
        &self.z_d[t * self.k_d..(t + 1) * self.k_d]
    }

    pub fn supply(&self, t: usize) -> &[f64] {
        &self.z_c[t * self.k_c..(t + 1) * self.k_c]
    }
}

fn instrument_value(instrument: Instrument, e: &MarketExogenous) -> f64 {
    match instrument {
        Instrument::Constant => 1.0,
        Instrument::Zr => e.z_r,
        Instrument::Y => e.log_y,
        Instrument::W => e.log_w,
        Instrument::R => e.log_r,
        Instrument::H => e.log_h,
        Instrument::K => e.log_k,
    }
}

/// Builds the instrument vectors. The default set is
/// `z_d = (1, z_r, Y, H, K)` and `z_c = (1, z_r, W, R, Y)`, in logs for the
/// log-linear model and levels for the linear model.
pub fn build_instruments(dataset: &Dataset, spec: &InstrumentSpec) -> Result<InstrumentSet> {
    if dataset.is_empty() {
        return Err(Error::EmptySample);
    }
    if spec.demand.is_empty() || spec.supply.is_empty() {
        return Err(Error::InvalidConfig("instrument sets must be nonempty".into()));
    }
    let mut z_d = Vec::with_capacity(dataset.len() * spec.demand.len());
    let mut z_c = Vec::with_capacity(dataset.len() * spec.supply.len());
    for m in &dataset.markets {
        z_d.extend(spec.demand.iter().map(|&i| instrument_value(i, &m.exog)));
        z_c.extend(spec.supply.iter().map(|&i| instrument_value(i, &m.exog)));
    }
    Ok(InstrumentSet { k_d: spec.demand.len(), k_c: spec.supply.len(), z_d, z_c })
}

/// Average instrument Gram matrix `(1/T) sum Z_t' Z_t`, block diagonal in
/// the demand and supply instruments.
pub fn gram_matrix(instruments: &InstrumentSet) -> DMatrix<f64> {
    let (kd, kc) = (instruments.k_d, instruments.k_c);
    let n = kd + kc;
    let t = instruments.len();
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..t {
        let zd = instruments.demand(i);
        for a in 0..kd {
            for b in 0..kd {
                gram[(a, b)] += zd[a] * zd[b];
            }
        }
        let zc = instruments.supply(i);
        for a in 0..kc {
            for b in 0..kc {
                gram[(kd + a, kd + b)] += zc[a] * zc[b];
            }
        }
    }
    gram / t as f64
}

/// N2SLS weight matrix, the inverse of [`gram_matrix`].
pub fn weight_matrix(instruments: &InstrumentSet) -> Result<DMatrix<f64>> {
    let gram = gram_matrix(instruments);
    let eig = gram.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_GRAM_CONDITION) {
        return Err(Error::SingularGram { condition });
    }
    let chol = gram.cholesky().ok_or(Error::SingularGram { condition })?;
    let w = chol.inverse();
    Ok((&w + w.transpose()) * 0.5)
}

/// A dataset together with its instruments and weight matrix.
#[derive(Debug, Clone)]
pub struct MomentContext {
    dataset: Dataset,
    instruments: InstrumentSet,
    weight: DMatrix<f64>,
}

/// GMM objective value with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub value: f64,
    pub gradient: [f64; N_PARAMS],
    /// `W g`, reused by the MPEC curvature terms.
    pub weighted_moments: Vec<f64>,
}

impl MomentContext {
    pub fn new(dataset: Dataset, spec: &InstrumentSpec) -> Result<Self> {
        let instruments = build_instruments(&dataset, spec)?;
        let weight = weight_matrix(&instruments)?;
        Ok(Self { dataset, instruments, weight })
    }

    pub fn with_weight(dataset: Dataset, instruments: InstrumentSet, weight: DMatrix<f64>) -> Result<Self> {
        let n = instruments.n_moments();
        if weight.nrows() != n || weight.ncols() != n || instruments.len() != dataset.len() {
            return Err(Error::InvalidConfig("weight/instrument dimensions do not match".into()));
        }
        Ok(Self { dataset, instruments, weight })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn instruments(&self) -> &InstrumentSet {
        &self.instruments
    }

    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }

    pub fn model(&self) -> ModelKind {
        self.dataset.model
    }

    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    fn quadratic_form(&self, g: &[f64]) -> (f64, Vec<f64>) {
        let n = g.len();
        let mut wg = vec![0.0; n];
        for i in 0..n {
            wg[i] = (0..n).map(|j| self.weight[(i, j)] * g[j]).sum();
        }
        let value = g.iter().zip(&wg).map(|(a, b)| a * b).sum();
        (value, wg)
    }

    /// Sample moment vector `g(xi)`.
    pub fn moments(&self, xi: &ParameterVector) -> Result<Vec<f64>> {
        let (kd, kc) = (self.instruments.k_d, self.instruments.k_c);
        let mut g = vec![0.0; kd + kc];
        let model = self.model();
        for (t, obs) in self.dataset.markets.iter().enumerate() {
            let ed = demand_residual(model, xi, obs);
            let ec = supply_residual(model, xi, obs).map_err(|e| at_market(e, t))?;
            for (gk, z) in g[..kd].iter_mut().zip(self.instruments.demand(t)) {
                *gk += ed * z;
            }
            for (gk, z) in g[kd..].iter_mut().zip(self.instruments.supply(t)) {
                *gk += ec * z;
            }
        }
        let inv_t = 1.0 / self.len() as f64;
        g.iter_mut().for_each(|v| *v *= inv_t);
        Ok(g)
    }

    /// Moment vector and its Jacobian (rows: moments, columns: parameters).
    pub fn moments_and_jacobian(&self, xi: &ParameterVector) -> Result<(Vec<f64>, Vec<[f64; N_PARAMS]>)> {
        let (kd, kc) = (self.instruments.k_d, self.instruments.k_c);
        let mut g = vec![0.0; kd + kc];
        let mut jac = vec![[0.0; N_PARAMS]; kd + kc];
        let model = self.model();
        for (t, obs) in self.dataset.markets.iter().enumerate() {
            let r = residuals(model, xi, obs).map_err(|e| at_market(e, t))?;
            for (k, z) in self.instruments.demand(t).iter().enumerate() {
                g[k] += r.demand * z;
                for j in 0..N_PARAMS {
                    jac[k][j] += r.d_demand[j] * z;
                }
            }
            for (k, z) in self.instruments.supply(t).iter().enumerate() {
                g[kd + k] += r.supply * z;
                for j in 0..N_PARAMS {
                    jac[kd + k][j] += r.d_supply[j] * z;
                }
            }
        }
        let inv_t = 1.0 / self.len() as f64;
        g.iter_mut().for_each(|v| *v *= inv_t);
        jac.iter_mut().flatten().for_each(|v| *v *= inv_t);
        Ok((g, jac))
    }

    pub fn objective(&self, xi: &ParameterVector) -> Result<f64> {
        let g = self.moments(xi)?;
        Ok(self.quadratic_form(&g).0)
    }

    pub fn objective_and_gradient(&self, xi: &ParameterVector) -> Result<ObjectiveEval> {
        let (g, jac) = self.moments_and_jacobian(xi)?;
        let (value, wg) = self.quadratic_form(&g);
        let mut gradient = [0.0; N_PARAMS];
        for (row, w) in jac.iter().zip(&wg) {
            for j in 0..N_PARAMS {
                gradient[j] += 2.0 * row[j] * w;
            }
        }
        Ok(ObjectiveEval { value, gradient, weighted_moments: wg })
    }

    /// Objective of the MPEC formulation with marginal costs expressed
    /// relative to price, `mc_t = ratio_t * P_t`. The supply residual becomes
    /// `log P + log ratio - g0 - g1 log Q - g2 log W - g3 log R`.
    ///
    /// Returns the value, the gradient with respect to the parameters, the
    /// gradient with respect to each ratio, and `W g`.
    pub fn mpec_objective(
        &self,
        xi: &ParameterVector,
        ratios: &[f64],
    ) -> Result<(f64, [f64; N_PARAMS], Vec<f64>, Vec<f64>)> {
        let (kd, kc) = (self.instruments.k_d, self.instruments.k_c);
        let t_len = self.len();
        if ratios.len() != t_len {
            return Err(Error::InvalidConfig("one marginal cost per market is required".into()));
        }
        let mut g = vec![0.0; kd + kc];
        let mut jac = vec![[0.0; N_PARAMS]; kd + kc];
        for (t, obs) in self.dataset.markets.iter().enumerate() {
            let e = &obs.exog;
            let ratio = ratios[t];
            if !(ratio > 0.0) {
                return Err(Error::NonPositiveMc { market: t, value: ratio * obs.log_p.exp() });
            }
            let ed = demand_residual(ModelKind::LogLinear, xi, obs);
            let ec = obs.log_p + ratio.ln()
                - xi.gamma0
                - xi.gamma1 * obs.log_q
                - xi.gamma2 * e.log_w
                - xi.gamma3 * e.log_r;
            let q = obs.log_q;
            for (k, z) in self.instruments.demand(t).iter().enumerate() {
                g[k] += ed * z;
                jac[k][ALPHA0] -= z;
                jac[k][ALPHA1] += q * z;
                jac[k][ALPHA2] += e.z_r * q * z;
                jac[k][ALPHA3] -= e.log_y * z;
            }
            for (k, z) in self.instruments.supply(t).iter().enumerate() {
                g[kd + k] += ec * z;
                jac[kd + k][GAMMA0] -= z;
                jac[kd + k][GAMMA1] -= q * z;
                jac[kd + k][GAMMA2] -= e.log_w * z;
                jac[kd + k][GAMMA3] -= e.log_r * z;
            }
        }
        let inv_t = 1.0 / t_len as f64;
        g.iter_mut().for_each(|v| *v *= inv_t);
        jac.iter_mut().flatten().for_each(|v| *v *= inv_t);
        let (value, wg) = self.quadratic_form(&g);
        let mut grad = [0.0; N_PARAMS];
        for (row, w) in jac.iter().zip(&wg) {
            for j in 0..N_PARAMS {
                grad[j] += 2.0 * row[j] * w;
            }
        }
        let ratio_grad = (0..t_len)
            .map(|t| {
                let zc = self.instruments.supply(t);
                let dot: f64 = zc.iter().zip(&wg[kd..]).map(|(z, w)| z * w).sum();
                2.0 * inv_t * dot / ratios[t]
            })
            .collect();
        Ok((value, grad, ratio_grad, wg))
    }
}

fn at_market(err: Error, t: usize) -> Error {
    match err {
        Error::LogDomain { margin, .. } => Error::LogDomain { market: t, margin },
        Error::NonPositiveMc { value, .. } => Error::NonPositiveMc { market: t, value },
        other => other,
    }
}

pub fn moment_vector(xi: &ParameterVector, context: &MomentContext) -> Result<Vec<f64>> {
    context.moments(xi)
}

pub fn objective(xi: &ParameterVector, context: &MomentContext) -> Result<f64> {
    context.objective(xi)
}

pub fn objective_gradient(xi: &ParameterVector, context: &MomentContext) -> Result<[f64; N_PARAMS]> {
    Ok(context.objective_and_gradient(xi)?.gradient)
}
