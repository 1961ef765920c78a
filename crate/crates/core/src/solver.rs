//! Estimation variants built on [`crate::nlp`].
//!
//! * `Unconstrained`: GMM objective only. Trial points where some
//!   `1 - theta s_t <= 0` are outside the objective's domain and make the
//!   line search backtrack; `theta` is otherwise free.
//! * `Constrained`: adds `0 <= theta <= 1`, `s_t >= slack` for every market,
//!   `gamma1 >= slack` and `1 - theta s_t >= slack` for every market. In the
//!   linear model only the bounds on `theta` are imposed.
//! * `AdHocMpec`: marginal costs become free variables tied to the
//!   parameters by `P_t (1 - theta s_t) = MC_t`, with the same inequalities
//!   as `Constrained`. Internally the marginal costs are carried as ratios
//!   `MC_t / P_t`, which keeps every equality on the unit scale.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::MomentContext;
use crate::nlp::{solve_nlp, AuxHessian, NlpOptions, NlpProblem, NlpStatus, TraceRow};
use crate::types::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Stationary,
    MaxIterations,
    InfeasibleStart,
    NumericalFailure,
}

impl Termination {
    /// Classifies an estimation error for reporting purposes.
    pub fn from_error(err: &Error) -> Self {
        match err {
            Error::InfeasibleStart(_) => Termination::InfeasibleStart,
            _ => Termination::NumericalFailure,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Stationary => "stationary",
            Termination::MaxIterations => "max_iterations",
            Termination::InfeasibleStart => "infeasible_start",
            Termination::NumericalFailure => "numerical_failure",
        }
    }
}

/// Smallest value of each constraint family over markets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    /// `theta`, must be `>= 0`.
    pub theta_lower: f64,
    /// `1 - theta`, must be `>= 0`.
    pub theta_upper: f64,
    /// `min_t (a1 + a2 z_r_t)`, must be `>= slack`.
    pub min_slope: f64,
    /// `gamma1`, must be `>= slack`.
    pub gamma1: f64,
    /// `min_t (1 - theta s_t)`, must be `>= slack`.
    pub min_margin: f64,
}

impl ConstraintReport {
    /// Violation of the bounds on `theta`.
    pub fn bound_violation(&self) -> f64 {
        (-self.theta_lower).max(-self.theta_upper).max(0.0)
    }

    /// Largest violation over all families given the strict slack.
    pub fn violation(&self, strict_slack: f64) -> f64 {
        self.bound_violation()
            .max(strict_slack - self.min_slope)
            .max(strict_slack - self.gamma1)
            .max(strict_slack - self.min_margin)
            .max(0.0)
    }

    /// Violation of the families imposed for `model` under the constrained
    /// estimators.
    pub fn imposed_violation(&self, model: ModelKind, strict_slack: f64) -> f64 {
        match model {
            ModelKind::LogLinear => self.violation(strict_slack),
            ModelKind::Linear => self.bound_violation(),
        }
    }
}

pub fn check_constraints(xi: &ParameterVector, dataset: &Dataset) -> ConstraintReport {
    let mut min_slope = f64::INFINITY;
    let mut min_margin = f64::INFINITY;
    for m in &dataset.markets {
        let s = xi.slope(m.exog.z_r);
        min_slope = min_slope.min(s);
        min_margin = min_margin.min(1.0 - xi.theta * s);
    }
    ConstraintReport { theta_lower: xi.theta, theta_upper: 1.0 - xi.theta, min_slope, gamma1: xi.gamma1, min_margin }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub xi_hat: ParameterVector,
    /// Estimated marginal costs in levels (MPEC only).
    pub mc_hat: Option<Vec<f64>>,
    pub converged: bool,
    pub objective_value: f64,
    pub iterations: usize,
    /// KKT residual at the returned point.
    pub kkt: f64,
    pub constraint_report: ConstraintReport,
    pub termination: Termination,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Restrictions {
    None,
    ThetaBounds,
    Full,
}

impl Restrictions {
    fn count(&self, t: usize) -> usize {
        match self {
            Restrictions::None => 0,
            Restrictions::ThetaBounds => 2,
            Restrictions::Full => 3 + 2 * t,
        }
    }
}

/// Constraint values and their Jacobian over the nine parameters.
fn fill_constraints(
    restrictions: Restrictions,
    slack: f64,
    dataset: &Dataset,
    core: &[f64],
    values: &mut [f64],
    jac: Option<&mut [f64]>,
) {
    if restrictions == Restrictions::None {
        return;
    }
    let xi = ParameterVector::from_slice(core);
    values[0] = xi.theta;
    values[1] = 1.0 - xi.theta;
    let t_len = dataset.len();
    if restrictions == Restrictions::Full {
        values[2] = xi.gamma1 - slack;
        for (t, m) in dataset.markets.iter().enumerate() {
            let s = xi.slope(m.exog.z_r);
            values[3 + t] = s - slack;
            values[3 + t_len + t] = 1.0 - xi.theta * s - slack;
        }
    }
    if let Some(j) = jac {
        j.fill(0.0);
        j[THETA] = 1.0;
        j[N_PARAMS + THETA] = -1.0;
        if restrictions == Restrictions::Full {
            j[2 * N_PARAMS + GAMMA1] = 1.0;
            for (t, m) in dataset.markets.iter().enumerate() {
                let z = m.exog.z_r;
                let row = (3 + t) * N_PARAMS;
                j[row + ALPHA1] = 1.0;
                j[row + ALPHA2] = z;
                let row = (3 + t_len + t) * N_PARAMS;
                j[row + ALPHA1] = -xi.theta;
                j[row + ALPHA2] = -xi.theta * z;
                j[row + THETA] = -xi.slope(z);
            }
        }
    }
}

struct ReducedProblem<'a> {
    ctx: &'a MomentContext,
    restrictions: Restrictions,
    slack: f64,
}

impl NlpProblem for ReducedProblem<'_> {
    fn n_core(&self) -> usize {
        N_PARAMS
    }

    fn objective(&self, x: &[f64], grad: Option<&mut [f64]>) -> Option<f64> {
        let xi = ParameterVector::from_slice(x);
        match grad {
            None => self.ctx.objective(&xi).ok(),
            Some(g) => {
                let eval = self.ctx.objective_and_gradient(&xi).ok()?;
                g.copy_from_slice(&eval.gradient);
                Some(eval.value)
            }
        }
    }

    fn n_ineq(&self) -> usize {
        self.restrictions.count(self.ctx.len())
    }

    fn inequalities(&self, core: &[f64], values: &mut [f64], jac: Option<&mut [f64]>) {
        fill_constraints(self.restrictions, self.slack, self.ctx.dataset(), core, values, jac);
    }
}

struct MpecProblem<'a> {
    ctx: &'a MomentContext,
    slack: f64,
}

impl MpecProblem<'_> {
    fn split<'x>(&self, x: &'x [f64]) -> (ParameterVector, &'x [f64]) {
        (ParameterVector::from_slice(&x[..N_PARAMS]), &x[N_PARAMS..])
    }
}

impl NlpProblem for MpecProblem<'_> {
    fn n_core(&self) -> usize {
        N_PARAMS
    }

    fn n_aux(&self) -> usize {
        self.ctx.len()
    }

    fn objective(&self, x: &[f64], grad: Option<&mut [f64]>) -> Option<f64> {
        let (xi, ratios) = self.split(x);
        let (value, g_core, g_aux, _) = self.ctx.mpec_objective(&xi, ratios).ok()?;
        if let Some(g) = grad {
            g[..N_PARAMS].copy_from_slice(&g_core);
            g[N_PARAMS..].copy_from_slice(&g_aux);
        }
        Some(value)
    }

    fn aux_hessian(&self, x: &[f64]) -> Option<AuxHessian> {
        let (xi, ratios) = self.split(x);
        let (_, _, _, wg) = self.ctx.mpec_objective(&xi, ratios).ok()?;
        let z = self.ctx.instruments();
        let (kd, kc) = (z.k_d(), z.k_c());
        let t_len = self.ctx.len();
        let inv_t = 1.0 / t_len as f64;
        let mut v = DMatrix::zeros(t_len, kc);
        let mut diag = vec![0.0; t_len];
        for t in 0..t_len {
            let zc = z.supply(t);
            let r = ratios[t];
            let dot: f64 = zc.iter().zip(&wg[kd..]).map(|(a, b)| a * b).sum();
            diag[t] = -2.0 * inv_t * dot / (r * r);
            for k in 0..kc {
                v[(t, k)] = zc[k] * inv_t / r;
            }
        }
        let c = self.ctx.weight().view((kd, kd), (kc, kc)) * 2.0;
        Some(AuxHessian { diag, v, c })
    }

    fn n_ineq(&self) -> usize {
        Restrictions::Full.count(self.ctx.len())
    }

    fn inequalities(&self, core: &[f64], values: &mut [f64], jac: Option<&mut [f64]>) {
        fill_constraints(Restrictions::Full, self.slack, self.ctx.dataset(), core, values, jac);
    }

    fn n_eq(&self) -> usize {
        self.ctx.len()
    }

    fn equalities(&self, x: &[f64], values: &mut [f64], core_jac: Option<&mut [f64]>, aux_coef: Option<&mut [f64]>) {
        let (xi, ratios) = self.split(x);
        let markets = &self.ctx.dataset().markets;
        for (t, m) in markets.iter().enumerate() {
            values[t] = 1.0 - xi.theta * xi.slope(m.exog.z_r) - ratios[t];
        }
        if let Some(j) = core_jac {
            j.fill(0.0);
            for (t, m) in markets.iter().enumerate() {
                let z = m.exog.z_r;
                let row = t * N_PARAMS;
                j[row + ALPHA1] = -xi.theta;
                j[row + ALPHA2] = -xi.theta * z;
                j[row + THETA] = -xi.slope(z);
            }
        }
        if let Some(c) = aux_coef {
            c.fill(-1.0);
        }
    }
}

fn nlp_options(config: &SolverConfig) -> NlpOptions {
    NlpOptions {
        record_trace: config.record_trace,
        ..NlpOptions::new(config.max_iterations, config.tol_stationarity, config.tol_constraint)
    }
}

fn termination_of(status: NlpStatus) -> Termination {
    match status {
        NlpStatus::Stationary => Termination::Stationary,
        NlpStatus::MaxIterations => Termination::MaxIterations,
        NlpStatus::NumericalFailure => Termination::NumericalFailure,
    }
}

/// Estimates the parameters on `dataset`, building instruments and the
/// weight matrix from `config`.
pub fn estimate(dataset: &Dataset, estimator: EstimatorKind, config: &SolverConfig) -> Result<EstimateResult> {
    config.validate()?;
    estimator.validate_for(dataset.model)?;
    let ctx = MomentContext::new(dataset.clone(), &config.instruments)?;
    estimate_with_context(&ctx, estimator, config)
}

/// As [`estimate`] with a prepared moment context.
pub fn estimate_with_context(ctx: &MomentContext, estimator: EstimatorKind, config: &SolverConfig) -> Result<EstimateResult> {
    let dataset = ctx.dataset();
    if dataset.is_empty() {
        return Err(Error::EmptySample);
    }
    estimator.validate_for(dataset.model)?;
    let start = config.start.point();
    if !start.is_finite() {
        return Err(Error::InfeasibleStart("start point is not finite".into()));
    }
    let options = nlp_options(config);
    let slack = config.strict_slack;
    let x0 = start.to_array();

    let (solution, mc_hat) = match estimator {
        EstimatorKind::Unconstrained | EstimatorKind::Constrained => {
            let restrictions = match (estimator, dataset.model) {
                (EstimatorKind::Unconstrained, _) => Restrictions::None,
                (_, ModelKind::LogLinear) => Restrictions::Full,
                (_, ModelKind::Linear) => Restrictions::ThetaBounds,
            };
            let problem = ReducedProblem { ctx, restrictions, slack };
            (solve_nlp(&problem, &x0, &options)?, None)
        }
        EstimatorKind::AdHocMpec => {
            let mut x = x0.to_vec();
            for m in &dataset.markets {
                let ratio = 1.0 - start.theta * start.slope(m.exog.z_r);
                if !(ratio > 0.0) {
                    return Err(Error::InfeasibleStart(format!("start implies marginal cost ratio {ratio}")));
                }
                x.push(ratio);
            }
            let problem = MpecProblem { ctx, slack };
            let sol = solve_nlp(&problem, &x, &options)?;
            let mc: Vec<f64> =
                dataset.markets.iter().zip(&sol.x[N_PARAMS..]).map(|(m, r)| r * m.log_p.exp()).collect();
            (sol, Some(mc))
        }
    };

    let xi_hat = ParameterVector::from_slice(&solution.x[..N_PARAMS]);
    let report = check_constraints(&xi_hat, dataset);
    let termination = termination_of(solution.status);
    let feasible = match estimator {
        EstimatorKind::Unconstrained => true,
        _ => report.imposed_violation(dataset.model, slack) <= config.tol_constraint,
    } && solution.eq_violation <= config.tol_constraint;
    let converged = termination == Termination::Stationary && feasible && solution.objective.is_finite();
    Ok(EstimateResult {
        xi_hat,
        mc_hat,
        converged,
        objective_value: solution.objective,
        iterations: solution.iterations,
        kkt: solution.kkt,
        constraint_report: report,
        termination,
        trace: solution.trace,
    })
}

/// Reduced-form objective of an MPEC solution: the marginal costs are
/// eliminated through the equilibrium condition.
pub fn reduced_objective(ctx: &MomentContext, result: &EstimateResult) -> Result<f64> {
    ctx.objective(&result.xi_hat)
}

/// One row of the divergence diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRow {
    pub iteration: usize,
    pub theta: f64,
    pub gamma0: f64,
    /// `max_t log(1 - theta s_t)`; NaN when some margin is nonpositive.
    pub max_log_margin: f64,
}

pub fn log_margin(theta: f64, slope: f64) -> f64 {
    let m = 1.0 - theta * slope;
    if m > 0.0 {
        m.ln()
    } else {
        f64::NAN
    }
}

/// Shows how `log(1 - theta s_t)` grows along a trace while `gamma0`
/// compensates for it.
pub fn diagnose_divergence(trace: &[TraceRow], dataset: &Dataset) -> Vec<DivergenceRow> {
    trace
        .iter()
        .map(|row| {
            let xi = ParameterVector::from_slice(&row.core[..N_PARAMS]);
            let max_log_margin = dataset
                .markets
                .iter()
                .map(|m| log_margin(xi.theta, xi.slope(m.exog.z_r)))
                .fold(f64::NEG_INFINITY, |a, b| if a.is_nan() || b.is_nan() { f64::NAN } else { a.max(b) });
            DivergenceRow { iteration: row.iteration, theta: xi.theta, gamma0: xi.gamma0, max_log_margin }
        })
        .collect()
}
