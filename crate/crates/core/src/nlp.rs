//! Small dense nonlinear programming solver.
//!
//! Minimizes `f(x)` subject to `c_i(x) >= 0` and `h_j(x) = 0` with a primal
//! log-barrier for the inequalities and an augmented Lagrangian for the
//! equalities. For fixed barrier weight `mu`, multipliers `lambda` and
//! penalty `rho` the merit function
//!
//! ```text
//! phi(x) = f(x) - mu sum ln c_i(x) + sum lambda_j h_j(x) + rho/2 sum h_j(x)^2
//! ```
//!
//! is minimized by damped Newton steps with Armijo backtracking and a
//! fraction-to-boundary rule. The Hessian is assembled from central
//! differences of analytic gradients plus the exact barrier outer products.
//!
//! Variables split into `core` variables (few; differenced) and optional
//! `aux` variables whose objective Hessian block is supplied in the form
//! `diag(d) + V C V'`. Every equality `j` may depend on aux variable `j`
//! only, and linearly. The Newton system is then solved through a Schur
//! complement on the core block in `O(n_aux)` memory.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ARMIJO: f64 = 1e-4;
const FRACTION_TO_BOUNDARY: f64 = 0.99;
const FD_REL_STEP: f64 = 6e-6;
const MAX_BACKTRACKS: usize = 60;
const MAX_OUTER: usize = 400;
const MAX_RHO: f64 = 1e14;
const DUAL_SAFEGUARD: f64 = 1e10;
const POLISH_FACTOR: f64 = 1e-4;
const POLISH_STEPS: usize = 5;
const MIN_DAMPING: f64 = 1e-8;
const MAX_DAMPING: f64 = 1e2;

/// Structured objective Hessian of the aux block: `diag(diag) + v c v'`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxHessian {
    pub diag: Vec<f64>,
    /// `n_aux x r`.
    pub v: DMatrix<f64>,
    /// `r x r`, symmetric.
    pub c: DMatrix<f64>,
}

pub trait NlpProblem {
    fn n_core(&self) -> usize;

    fn n_aux(&self) -> usize {
        0
    }

    /// Objective value, and its gradient over all variables when `grad` is
    /// given. `None` means `x` lies outside the objective's domain.
    fn objective(&self, x: &[f64], grad: Option<&mut [f64]>) -> Option<f64>;

    /// Required when `n_aux() > 0`.
    fn aux_hessian(&self, _x: &[f64]) -> Option<AuxHessian> {
        None
    }

    fn n_ineq(&self) -> usize {
        0
    }

    /// Values of `c(x) >= 0`, which depend on the core variables only;
    /// `jac` is row-major `n_ineq x n_core`.
    fn inequalities(&self, _core: &[f64], _values: &mut [f64], _jac: Option<&mut [f64]>) {}

    fn n_eq(&self) -> usize {
        0
    }

    /// Values of `h(x) = 0` with the row-major `n_eq x n_core` Jacobian over
    /// the core variables and, when aux variables exist, the coefficient of
    /// aux variable `j` in equality `j`.
    fn equalities(&self, _x: &[f64], _values: &mut [f64], _core_jac: Option<&mut [f64]>, _aux_coef: Option<&mut [f64]>) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NlpOptions {
    pub max_iterations: usize,
    pub tol_stationarity: f64,
    pub tol_constraint: f64,
    /// Final barrier weight.
    pub mu_min: f64,
    /// Initial augmented-Lagrangian penalty.
    pub rho0: f64,
    pub record_trace: bool,
}

impl NlpOptions {
    pub fn new(max_iterations: usize, tol_stationarity: f64, tol_constraint: f64) -> Self {
        Self {
            max_iterations,
            tol_stationarity,
            tol_constraint,
            mu_min: tol_stationarity * 1e-8,
            rho0: 10.0,
            record_trace: false,
        }
    }
}

impl Default for NlpOptions {
    fn default() -> Self {
        Self::new(3000, 1e-6, 1e-8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NlpStatus {
    Stationary,
    MaxIterations,
    NumericalFailure,
}

/// One accepted iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    /// Infinity norm of the merit gradient.
    pub kkt: f64,
    pub mu: f64,
    pub merit: f64,
    pub core: Vec<f64>,
    /// Smallest inequality value, `inf` when there are none.
    pub min_ineq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub kkt: f64,
    pub eq_violation: f64,
    pub min_ineq: f64,
    pub iterations: usize,
    pub status: NlpStatus,
    pub trace: Vec<TraceRow>,
}

struct Solver<'a, P: NlpProblem> {
    p: &'a P,
    nc: usize,
    na: usize,
    ni: usize,
    ne: usize,
}

/// Multipliers and weights that define the current merit function.
#[derive(Clone)]
struct MeritParams {
    mu: f64,
    lambda: Vec<f64>,
    rho: f64,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

impl<'a, P: NlpProblem> Solver<'a, P> {
    fn ineq(&self, x: &[f64], with_jac: bool) -> (Vec<f64>, Vec<f64>) {
        let mut c = vec![0.0; self.ni];
        let mut jac = vec![0.0; if with_jac { self.ni * self.nc } else { 0 }];
        if self.ni > 0 {
            self.p.inequalities(&x[..self.nc], &mut c, with_jac.then_some(&mut jac[..]));
        }
        (c, jac)
    }

    fn eq(&self, x: &[f64], with_jac: bool) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut h = vec![0.0; self.ne];
        let mut jac = vec![0.0; if with_jac { self.ne * self.nc } else { 0 }];
        let mut coef = vec![0.0; if with_jac && self.na > 0 { self.ne } else { 0 }];
        if self.ne > 0 {
            let coef_arg = (with_jac && self.na > 0).then_some(&mut coef[..]);
            self.p.equalities(x, &mut h, with_jac.then_some(&mut jac[..]), coef_arg);
        }
        (h, jac, coef)
    }

    fn merit(&self, x: &[f64], mp: &MeritParams) -> Option<(f64, f64)> {
        let f = self.p.objective(x, None)?;
        if !f.is_finite() {
            return None;
        }
        let mut phi = f;
        if self.ni > 0 {
            let (c, _) = self.ineq(x, false);
            for ci in c {
                if !(ci > 0.0) {
                    return None;
                }
                phi -= mp.mu * ci.ln();
            }
        }
        if self.ne > 0 {
            let (h, _, _) = self.eq(x, false);
            for (hj, lj) in h.iter().zip(&mp.lambda) {
                phi += lj * hj + 0.5 * mp.rho * hj * hj;
            }
        }
        phi.is_finite().then_some((phi, f))
    }

    /// Gradient of `f - sum w_i c_i + sum lambda_j h_j + rho/2 sum h_j^2`.
    /// With `w_i = mu / c_i(x)` this is the merit gradient at `x`; with the
    /// dual estimates it is the Lagrangian gradient.
    fn smooth_gradient(&self, x: &[f64], w: &[f64], mp: &MeritParams) -> Option<Vec<f64>> {
        let mut g = vec![0.0; self.nc + self.na];
        self.p.objective(x, Some(&mut g))?;
        if g.iter().any(|v| !v.is_finite()) {
            return None;
        }
        if self.ni > 0 {
            let (_, jac) = self.ineq(x, true);
            for (i, wi) in w.iter().enumerate() {
                let row = &jac[i * self.nc..(i + 1) * self.nc];
                for k in 0..self.nc {
                    g[k] -= wi * row[k];
                }
            }
        }
        if self.ne > 0 {
            let (h, jac, coef) = self.eq(x, true);
            for j in 0..self.ne {
                let s = mp.lambda[j] + mp.rho * h[j];
                let row = &jac[j * self.nc..(j + 1) * self.nc];
                for k in 0..self.nc {
                    g[k] += s * row[k];
                }
                if self.na > 0 {
                    g[self.nc + j] += s * coef[j];
                }
            }
        }
        Some(g)
    }

    /// Primal-dual Newton direction at `x`: the right-hand side is the merit
    /// gradient `g0`, curvature comes from the Lagrangian with inequality
    /// multipliers `z` (whose gradient at `x` is `gz`).
    #[allow(clippy::too_many_arguments)]
    fn newton_direction(
        &self,
        x: &[f64],
        g0: &[f64],
        gz: &[f64],
        z: &[f64],
        c: &[f64],
        cjac: &[f64],
        mp: &MeritParams,
        damping: f64,
    ) -> Result<Vec<f64>> {
        let (nc, na) = (self.nc, self.na);
        let n = nc + na;
        // Columns of the Hessian along core directions.
        let mut cols = DMatrix::<f64>::zeros(n, nc);
        let mut y = x.to_vec();
        for k in 0..nc {
            let hk = FD_REL_STEP * x[k].abs().max(1.0);
            y[k] = x[k] + hk;
            let gp = self.smooth_gradient(&y, z, mp);
            y[k] = x[k] - hk;
            let gm = self.smooth_gradient(&y, z, mp);
            y[k] = x[k];
            match (gp, gm) {
                (Some(gp), Some(gm)) => {
                    for i in 0..n {
                        cols[(i, k)] = (gp[i] - gm[i]) / (2.0 * hk);
                    }
                }
                (Some(gp), None) => {
                    for i in 0..n {
                        cols[(i, k)] = (gp[i] - gz[i]) / hk;
                    }
                }
                (None, Some(gm)) => {
                    for i in 0..n {
                        cols[(i, k)] = (gz[i] - gm[i]) / hk;
                    }
                }
                (None, None) => {
                    return Err(Error::NumericalFailure("objective undefined around the iterate".into()));
                }
            }
        }
        let mut pcc = cols.rows(0, nc).into_owned();
        pcc = (&pcc + pcc.transpose()) * 0.5;
        for (i, ci) in c.iter().enumerate() {
            let row = &cjac[i * nc..(i + 1) * nc];
            let scale = z[i] / ci;
            for a in 0..nc {
                for b in 0..nc {
                    pcc[(a, b)] += scale * row[a] * row[b];
                }
            }
        }
        let b = cols.rows(nc, na).into_owned();

        let aux = if na > 0 {
            let mut hess = self
                .p
                .aux_hessian(x)
                .ok_or_else(|| Error::NumericalFailure("aux Hessian unavailable".into()))?;
            if self.ne > 0 {
                let (_, _, coef) = self.eq(x, true);
                for (d, a) in hess.diag.iter_mut().zip(&coef) {
                    *d += mp.rho * a * a;
                }
            }
            let eig = hess.c.clone().symmetric_eigen();
            let sqrt_l = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
            let u = &hess.v * (&eig.eigenvectors * sqrt_l);
            Some((hess.diag, u))
        } else {
            None
        };

        let scale = (0..nc).fold(1.0f64, |m, i| m.max(pcc[(i, i)].abs()));
        let mut delta = damping * scale;
        for _ in 0..40 {
            if let Some(d) = self.try_solve(&pcc, &b, aux.as_ref(), g0, delta) {
                if d.iter().all(|v| v.is_finite()) {
                    return Ok(d);
                }
            }
            delta = if delta == 0.0 { 1e-12 * scale } else { delta * 10.0 };
        }
        Err(Error::NumericalFailure("Newton system could not be regularized".into()))
    }

    fn try_solve(
        &self,
        pcc: &DMatrix<f64>,
        b: &DMatrix<f64>,
        aux: Option<&(Vec<f64>, DMatrix<f64>)>,
        g0: &[f64],
        delta: f64,
    ) -> Option<Vec<f64>> {
        let nc = self.nc;
        let gc = DVector::from_column_slice(&g0[..nc]);
        let mut s = pcc.clone();
        for i in 0..nc {
            s[(i, i)] += delta;
        }
        let Some((diag, u)) = aux else {
            let chol = s.cholesky()?;
            return Some((-chol.solve(&gc)).as_slice().to_vec());
        };
        let dd: Vec<f64> = diag.iter().map(|d| d + delta).collect();
        if dd.iter().any(|d| !(*d > 0.0)) {
            return None;
        }
        let r = u.ncols();
        let dinv = DVector::from_iterator(dd.len(), dd.iter().map(|d| 1.0 / d));
        let mut dinv_u = u.clone();
        for (i, mut row) in dinv_u.row_iter_mut().enumerate() {
            row *= dinv[i];
        }
        let k = DMatrix::<f64>::identity(r, r) + u.transpose() * &dinv_u;
        let kchol = k.cholesky()?;
        // M^-1 Y = D^-1 Y - D^-1 U K^-1 U' D^-1 Y
        let apply_minv = |y: &DMatrix<f64>| -> DMatrix<f64> {
            let mut dy = y.clone();
            for (i, mut row) in dy.row_iter_mut().enumerate() {
                row *= dinv[i];
            }
            let t = kchol.solve(&(u.transpose() * &dy));
            dy - &dinv_u * t
        };
        let ga = DMatrix::from_column_slice(self.na, 1, &g0[nc..]);
        let minv_b = apply_minv(b);
        let minv_ga = apply_minv(&ga);
        s -= b.transpose() * &minv_b;
        let s = (&s + s.transpose()) * 0.5;
        let rhs = -&gc + (b.transpose() * &minv_ga).column(0);
        let dc = s.cholesky()?.solve(&rhs);
        let da = -(minv_ga + &minv_b * &dc);
        let mut out = dc.as_slice().to_vec();
        out.extend_from_slice(da.as_slice());
        Some(out)
    }
}

/// Solves the problem from `x0`, which must satisfy every inequality
/// strictly and lie in the objective's domain.
pub fn solve_nlp<P: NlpProblem>(problem: &P, x0: &[f64], options: &NlpOptions) -> Result<NlpSolution> {
    let s = Solver { p: problem, nc: problem.n_core(), na: problem.n_aux(), ni: problem.n_ineq(), ne: problem.n_eq() };
    let n = s.nc + s.na;
    if x0.len() != n {
        return Err(Error::InvalidConfig(format!("start has {} entries, expected {n}", x0.len())));
    }
    if s.na > 0 && s.ne != 0 && s.ne != s.na {
        return Err(Error::InvalidConfig("equalities must pair one-to-one with aux variables".into()));
    }
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    problem
        .objective(&x, Some(&mut g))
        .filter(|f| f.is_finite())
        .ok_or_else(|| Error::InfeasibleStart("objective undefined at the start".into()))?;
    let (c0, j0) = s.ineq(&x, true);
    if let Some(i) = c0.iter().position(|c| !(*c > 0.0)) {
        return Err(Error::InfeasibleStart(format!("inequality {i} has value {} at the start", c0[i])));
    }

    let mu_min = options.mu_min;
    let mu0 = if s.ni == 0 {
        mu_min
    } else {
        let mut pull = vec![0.0; s.nc];
        for (i, ci) in c0.iter().enumerate() {
            for k in 0..s.nc {
                pull[k] += j0[i * s.nc + k] / ci;
            }
        }
        (0.1 * inf_norm(&g[..s.nc]) / inf_norm(&pull).max(1.0)).clamp(mu_min, 0.1)
    };
    let mut mp = MeritParams { mu: mu0, lambda: vec![0.0; s.ne], rho: options.rho0 };
    let mut z: Vec<f64> = c0.iter().map(|ci| mu0 / ci).collect();
    let mut eta = 1e-4f64.max(options.tol_constraint);
    let mut iterations = 0usize;
    let mut damping = 0.0;
    let mut trace = Vec::new();

    let finish = |x: Vec<f64>, status: NlpStatus, kkt: f64, iterations: usize, trace: Vec<TraceRow>| -> NlpSolution {
        let objective = problem.objective(&x, None).unwrap_or(f64::NAN);
        let (c, _) = s.ineq(&x, false);
        let (h, _, _) = s.eq(&x, false);
        NlpSolution {
            objective,
            kkt,
            eq_violation: inf_norm(&h),
            min_ineq: c.iter().cloned().fold(f64::INFINITY, f64::min),
            iterations,
            status,
            trace,
            x,
        }
    };

    for _outer in 0..MAX_OUTER {
        let final_phase = mp.mu <= mu_min;
        // The last phase polishes past the tolerance for a few steps, which
        // costs little with Newton steps and pins down flat directions.
        let inner_tol = if final_phase {
            options.tol_stationarity * POLISH_FACTOR
        } else {
            (10.0 * mp.mu).max(options.tol_stationarity)
        };
        let mut kkt;
        let mut stalled = false;
        let mut polish = 0;
        loop {
            let (c, cjac) = s.ineq(&x, true);
            let w: Vec<f64> = c.iter().map(|ci| mp.mu / ci).collect();
            let (Some(g0), Some(gz)) = (s.smooth_gradient(&x, &w, &mp), s.smooth_gradient(&x, &z, &mp)) else {
                return Err(Error::NumericalFailure("gradient undefined at an accepted iterate".into()));
            };
            let complementarity = c.iter().zip(&z).fold(0.0f64, |m, (ci, zi)| m.max((ci * zi - mp.mu).abs()));
            kkt = inf_norm(&gz).max(complementarity);
            if kkt <= inner_tol {
                break;
            }
            if final_phase && kkt <= options.tol_stationarity {
                polish += 1;
                if polish > POLISH_STEPS || iterations >= options.max_iterations {
                    break;
                }
            }
            if iterations >= options.max_iterations {
                return Ok(finish(x, NlpStatus::MaxIterations, kkt, iterations, trace));
            }
            let d = match s.newton_direction(&x, &g0, &gz, &z, &c, &cjac, &mp, damping) {
                Ok(d) => d,
                Err(_) => return Ok(finish(x, NlpStatus::NumericalFailure, kkt, iterations, trace)),
            };
            let slope: f64 = g0.iter().zip(&d).map(|(a, b)| a * b).sum();
            if !(slope < 0.0) {
                stalled = true;
                break;
            }
            let mut alpha: f64 = 1.0;
            for (i, ci) in c.iter().enumerate() {
                let rate: f64 = (0..s.nc).map(|k| cjac[i * s.nc + k] * d[k]).sum();
                if rate < 0.0 {
                    alpha = alpha.min(-FRACTION_TO_BOUNDARY * ci / rate);
                }
            }
            let alpha_max = alpha;
            let (phi0, _) = match s.merit(&x, &mp) {
                Some(v) => v,
                None => return Err(Error::NumericalFailure("merit undefined at an accepted iterate".into())),
            };
            let mut accepted = None;
            let mut trial = vec![0.0; n];
            for _ in 0..MAX_BACKTRACKS {
                for i in 0..n {
                    trial[i] = x[i] + alpha * d[i];
                }
                if let Some((phi, f)) = s.merit(&trial, &mp) {
                    if phi <= phi0 + ARMIJO * alpha * slope {
                        accepted = Some((phi, f));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            let Some((phi, f)) = accepted else {
                stalled = true;
                break;
            };
            // Heavy backtracking means the quadratic model is trusted too
            // far along some direction; damp the next step towards the
            // gradient, and relax again after full steps.
            if alpha >= alpha_max {
                damping = if damping < MIN_DAMPING { 0.0 } else { damping * 0.1 };
            } else if alpha < 0.1 * alpha_max {
                damping = (damping * 10.0).clamp(MIN_DAMPING, MAX_DAMPING);
            }
            x.copy_from_slice(&trial);
            iterations += 1;
            if s.ni > 0 {
                // Dual step from the linearized complementarity condition,
                // kept positive and within a factor of the primal estimate.
                let dz: Vec<f64> = (0..s.ni)
                    .map(|i| {
                        let rate: f64 = (0..s.nc).map(|k| cjac[i * s.nc + k] * d[k]).sum();
                        mp.mu / c[i] - z[i] - z[i] / c[i] * rate
                    })
                    .collect();
                let mut alpha_z: f64 = 1.0;
                for (zi, dzi) in z.iter().zip(&dz) {
                    if *dzi < 0.0 {
                        alpha_z = alpha_z.min(-FRACTION_TO_BOUNDARY * zi / dzi);
                    }
                }
                let (c_new, _) = s.ineq(&x, false);
                for i in 0..s.ni {
                    let primal = mp.mu / c_new[i];
                    z[i] = (z[i] + alpha_z * dz[i]).clamp(primal / DUAL_SAFEGUARD, primal * DUAL_SAFEGUARD);
                }
            }
            if options.record_trace {
                let (c, _) = s.ineq(&x, false);
                trace.push(TraceRow {
                    iteration: iterations,
                    objective: f,
                    kkt,
                    mu: mp.mu,
                    merit: phi,
                    core: x[..s.nc].to_vec(),
                    min_ineq: c.iter().cloned().fold(f64::INFINITY, f64::min),
                });
            }
        }

        let (h, _, _) = s.eq(&x, false);
        let viol = inf_norm(&h);
        if final_phase && viol <= options.tol_constraint {
            let status = if kkt <= options.tol_stationarity { NlpStatus::Stationary } else { NlpStatus::NumericalFailure };
            if status == NlpStatus::Stationary || stalled {
                return Ok(finish(x, status, kkt, iterations, trace));
            }
        }
        if s.ne > 0 {
            if viol <= eta {
                for (l, hj) in mp.lambda.iter_mut().zip(&h) {
                    *l += mp.rho * hj;
                }
                eta = (eta * 0.1).max(0.1 * options.tol_constraint);
            } else {
                mp.rho *= 10.0;
                if mp.rho > MAX_RHO {
                    return Ok(finish(x, NlpStatus::NumericalFailure, kkt, iterations, trace));
                }
            }
        }
        mp.mu = mu_min.max((0.2 * mp.mu).min(mp.mu.powf(1.5)));
    }
    Ok(finish(x, NlpStatus::NumericalFailure, f64::NAN, iterations, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic1d;

    impl NlpProblem for Quadratic1d {
        fn n_core(&self) -> usize {
            1
        }
        fn objective(&self, x: &[f64], grad: Option<&mut [f64]>) -> Option<f64> {
            if let Some(g) = grad {
                g[0] = 2.0 * (x[0] - 3.0);
            }
            Some((x[0] - 3.0).powi(2))
        }
        fn n_ineq(&self) -> usize {
            2
        }
        fn inequalities(&self, core: &[f64], values: &mut [f64], jac: Option<&mut [f64]>) {
            values[0] = core[0];
            values[1] = 1.0 - core[0];
            if let Some(j) = jac {
                j[0] = 1.0;
                j[1] = -1.0;
            }
        }
    }

    #[test]
    fn active_upper_bound() {
        let sol = solve_nlp(&Quadratic1d, &[0.5], &NlpOptions::default()).unwrap();
        assert_eq!(sol.status, NlpStatus::Stationary);
        assert!((sol.x[0] - 1.0).abs() < 1e-7, "{}", sol.x[0]);
        // KKT: multiplier of x <= 1 equals -f'(1) = 4.
        assert!(sol.kkt <= 1e-6);
    }

    #[test]
    fn infeasible_start_is_rejected() {
        assert!(matches!(solve_nlp(&Quadratic1d, &[1.5], &NlpOptions::default()), Err(Error::InfeasibleStart(_))));
    }

    struct DiskOnLine;

    impl NlpProblem for DiskOnLine {
        fn n_core(&self) -> usize {
            2
        }
        fn objective(&self, x: &[f64], grad: Option<&mut [f64]>) -> Option<f64> {
            if let Some(g) = grad {
                g[0] = 2.0 * x[0];
                g[1] = 2.0 * x[1];
            }
            Some(x[0] * x[0] + x[1] * x[1])
        }
        fn n_eq(&self) -> usize {
            1
        }
        fn equalities(&self, x: &[f64], v: &mut [f64], jac: Option<&mut [f64]>, _: Option<&mut [f64]>) {
            v[0] = x[0] + x[1] - 1.0;
            if let Some(j) = jac {
                j[0] = 1.0;
                j[1] = 1.0;
            }
        }
    }

    #[test]
    fn equality_constrained_quadratic() {
        let sol = solve_nlp(&DiskOnLine, &[0.0, 0.0], &NlpOptions::default()).unwrap();
        assert_eq!(sol.status, NlpStatus::Stationary);
        assert!((sol.x[0] - 0.5).abs() < 1e-8 && (sol.x[1] - 0.5).abs() < 1e-8);
        assert!(sol.eq_violation <= 1e-8);
    }

    struct Rosenbrock;

    fn rosen(x: f64, y: f64) -> f64 {
        (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)
    }

    impl NlpProblem for Rosenbrock {
        fn n_core(&self) -> usize {
            2
        }
        fn objective(&self, x: &[f64], grad: Option<&mut [f64]>) -> Option<f64> {
            if let Some(g) = grad {
                g[0] = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]);
                g[1] = 200.0 * (x[1] - x[0] * x[0]);
            }
            Some(rosen(x[0], x[1]))
        }
        fn n_ineq(&self) -> usize {
            1
        }
        fn inequalities(&self, core: &[f64], values: &mut [f64], jac: Option<&mut [f64]>) {
            values[0] = 0.5 - core[0];
            if let Some(j) = jac {
                j[0] = -1.0;
                j[1] = 0.0;
            }
        }
    }

    /// Grid search followed by compass-search polishing on the feasible set.
    fn grid_oracle() -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=250 {
            for j in 0..=400 {
                let (x, y) = (-2.0 + 0.01 * i as f64, -1.0 + 0.01 * j as f64);
                let v = rosen(x, y);
                if v < best.0 {
                    best = (v, x, y);
                }
            }
        }
        let (mut v, mut x, mut y) = best;
        let mut step = 0.01;
        while step > 1e-12 {
            let mut improved = false;
            for (dx, dy) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (1.0, 2.0), (-1.0, -2.0)] {
                let (nx, ny) = (x + step * dx, y + step * dy);
                if nx <= 0.5 && rosen(nx, ny) < v {
                    (v, x, y) = (rosen(nx, ny), nx, ny);
                    improved = true;
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        (x, y)
    }

    #[test]
    fn bounded_rosenbrock_matches_grid_oracle() {
        let (ox, oy) = grid_oracle();
        let sol = solve_nlp(&Rosenbrock, &[0.0, 0.0], &NlpOptions::default()).unwrap();
        assert_eq!(sol.status, NlpStatus::Stationary);
        assert!((sol.x[0] - ox).abs() < 1e-5 && (sol.x[1] - oy).abs() < 1e-5, "{:?} vs {ox} {oy}", sol.x);
    }

    #[test]
    fn merit_is_monotone_within_each_barrier_phase() {
        let opts = NlpOptions { record_trace: true, ..NlpOptions::default() };
        let sol = solve_nlp(&Rosenbrock, &[-1.5, 2.0], &opts).unwrap();
        assert!(!sol.trace.is_empty());
        for w in sol.trace.windows(2) {
            if w[0].mu == w[1].mu {
                assert!(w[1].merit <= w[0].merit);
            }
        }
    }

    /// `f = (sum u - 3)^2 + 0.5 sum (u_t - t x0)^2 + (x1 - x0)^2`, with
    /// `u_t = x0 + 0.1 t x1` and `x0 >= 0.2`; either as aux variables or as
    /// plain core variables.
    struct Coupled {
        t: usize,
        split: bool,
    }

    impl Coupled {
        fn parts<'x>(&self, x: &'x [f64]) -> (f64, f64, &'x [f64]) {
            (x[0], x[1], &x[2..])
        }
    }

    impl NlpProblem for Coupled {
        fn n_core(&self) -> usize {
            if self.split {
                2
            } else {
                2 + self.t
            }
        }
        fn n_aux(&self) -> usize {
            if self.split {
                self.t
            } else {
                0
            }
        }
        fn objective(&self, x: &[f64], grad: Option<&mut [f64]>) -> Option<f64> {
            let (x0, x1, u) = self.parts(x);
            let su: f64 = u.iter().sum::<f64>() - 3.0;
            let mut f = su * su + (x1 - x0).powi(2);
            for (t, ut) in u.iter().enumerate() {
                f += 0.5 * (ut - t as f64 * x0).powi(2);
            }
            if let Some(g) = grad {
                g[0] = -2.0 * (x1 - x0);
                g[1] = 2.0 * (x1 - x0);
                for (t, ut) in u.iter().enumerate() {
                    let r = ut - t as f64 * x0;
                    g[0] -= r * t as f64;
                    g[2 + t] = 2.0 * su + r;
                }
            }
            Some(f)
        }
        fn aux_hessian(&self, _x: &[f64]) -> Option<AuxHessian> {
            Some(AuxHessian {
                diag: vec![1.0; self.t],
                v: DMatrix::from_element(self.t, 1, 1.0),
                c: DMatrix::from_element(1, 1, 2.0),
            })
        }
        fn n_ineq(&self) -> usize {
            1
        }
        fn inequalities(&self, core: &[f64], values: &mut [f64], jac: Option<&mut [f64]>) {
            values[0] = core[0] - 0.2;
            if let Some(j) = jac {
                j.fill(0.0);
                j[0] = 1.0;
            }
        }
        fn n_eq(&self) -> usize {
            self.t
        }
        fn equalities(&self, x: &[f64], v: &mut [f64], jac: Option<&mut [f64]>, coef: Option<&mut [f64]>) {
            let (x0, x1, u) = self.parts(x);
            let nc = self.n_core();
            for t in 0..self.t {
                v[t] = x0 + 0.1 * t as f64 * x1 - u[t];
            }
            if let Some(j) = jac {
                j.fill(0.0);
                for t in 0..self.t {
                    j[t * nc] = 1.0;
                    j[t * nc + 1] = 0.1 * t as f64;
                    if !self.split {
                        j[t * nc + 2 + t] = -1.0;
                    }
                }
            }
            if let Some(c) = coef {
                c.fill(-1.0);
            }
        }
    }

    #[test]
    fn aux_path_matches_dense_path() {
        let t = 6;
        let x0: Vec<f64> = [1.0, 0.5].into_iter().chain((0..t).map(|s| 1.0 + 0.05 * s as f64)).collect();
        let a = solve_nlp(&Coupled { t, split: true }, &x0, &NlpOptions::default()).unwrap();
        let b = solve_nlp(&Coupled { t, split: false }, &x0, &NlpOptions::default()).unwrap();
        assert_eq!(a.status, NlpStatus::Stationary);
        assert_eq!(b.status, NlpStatus::Stationary);
        for (p, q) in a.x.iter().zip(&b.x) {
            assert!((p - q).abs() < 1e-7, "{:?} vs {:?}", a.x, b.x);
        }
        assert!(a.eq_violation <= 1e-8);
    }
}
