//! Acceptance gates. Runs each criterion in sequence, prints one line per
//! criterion and exits nonzero if any fails.
//!
//! Pass criterion numbers as arguments to run a subset:
//! `cargo test --test acceptance -- 5 6`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use conduct_core::dgp::{draw_exogenous, generate_dataset, DgpConfig};
use conduct_core::equilibrium::{bisection_oracle, classify_equilibrium, solve_log_price};
use conduct_core::gmm::{demand_residual, supply_residual, MomentContext};
use conduct_core::montecarlo::{run_study, CellResult};
use conduct_core::rng::Stream;
use conduct_core::solver::{estimate, reduced_objective, EstimateResult};
use conduct_core::*;

const BASE_SEED: u64 = 1;
const REPS: usize = 200;

struct Outcome {
    pass: bool,
    detail: String,
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

fn perturbed(stream: &mut Stream, around: &ParameterVector, spread: f64) -> ParameterVector {
    let mut v = around.to_array();
    for x in &mut v {
        *x *= stream.uniform_range(1.0 - spread, 1.0 + spread);
    }
    ParameterVector::from_array(v)
}

fn equilibrium_oracle() -> Outcome {
    let start = Instant::now();
    let truths = ParameterVector::LOG_LINEAR_TRUTHS;
    let mut stream = Stream::new(101);
    let (mut unique, mut worst) = (0usize, 0.0f64);
    while unique < 10_000 {
        let p = perturbed(&mut stream, &truths, 0.5);
        let exog = draw_exogenous(&mut stream, 1.0, ModelKind::LogLinear);
        if !matches!(classify_equilibrium(&p, &exog), Ok(c) if c.is_unique()) {
            continue;
        }
        unique += 1;
        let a = solve_log_price(&p, &exog).unwrap();
        let b = bisection_oracle(&p, &exog).unwrap();
        worst = worst.max((a - b).abs());
    }
    let t = start.elapsed();
    Outcome {
        pass: worst <= 1e-8 && within(t, 10),
        detail: format!("max |log p - log p_oracle| = {worst:.2e} over {unique} draws, {:.2}s", t.as_secs_f64()),
    }
}

fn dgp_roundtrip() -> Outcome {
    let start = Instant::now();
    let p = ParameterVector::LOG_LINEAR_TRUTHS;
    let d = generate_dataset(&DgpConfig::new(ModelKind::LogLinear, 1.0, 10_000, 202)).unwrap();
    let mut worst = 0.0f64;
    for m in &d.markets {
        let e = &m.exog;
        let s = p.alpha1 + p.alpha2 * e.z_r;
        // Written out directly, independent of the library residuals.
        let ed = m.log_p - p.alpha0 + s * m.log_q - p.alpha3 * e.log_y;
        let ec = m.log_p + (1.0 - p.theta * s).ln() - p.gamma0 - p.gamma1 * m.log_q - p.gamma2 * e.log_w - p.gamma3 * e.log_r;
        let lib_d = demand_residual(ModelKind::LogLinear, &p, m);
        let lib_c = supply_residual(ModelKind::LogLinear, &p, m).unwrap();
        for err in [ed - e.eps_d, ec - e.eps_c, lib_d - e.eps_d, lib_c - e.eps_c] {
            worst = worst.max(err.abs());
        }
    }
    let t = start.elapsed();
    Outcome {
        pass: worst <= 1e-12 && within(t, 5),
        detail: format!("max residual error = {worst:.2e} over {} markets, {:.2}s", d.len(), t.as_secs_f64()),
    }
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let truths = ParameterVector::LOG_LINEAR_TRUTHS;
    let d = generate_dataset(&DgpConfig::new(ModelKind::LogLinear, 1.0, 50, 303)).unwrap();
    let ctx = MomentContext::new(d, &InstrumentSpec::default()).unwrap();
    let mut stream = Stream::new(304);
    let (mut points, mut worst) = (0usize, 0.0f64);
    while points < 100 {
        let xi = perturbed(&mut stream, &truths, 0.2);
        let Ok(eval) = ctx.objective_and_gradient(&xi) else { continue };
        let base = xi.to_array();
        let mut fd = [0.0; N_PARAMS];
        let mut defined = true;
        for j in 0..N_PARAMS {
            let h = 1e-5 * base[j].abs().max(1.0);
            let (mut up, mut dn) = (base, base);
            up[j] += h;
            dn[j] -= h;
            match (ctx.objective(&ParameterVector::from_array(up)), ctx.objective(&ParameterVector::from_array(dn))) {
                (Ok(a), Ok(b)) => fd[j] = (a - b) / (2.0 * h),
                _ => defined = false,
            }
        }
        if !defined {
            continue;
        }
        points += 1;
        let scale = eval.gradient.iter().fold(0.0f64, |m, g| m.max(g.abs())).max(f64::MIN_POSITIVE);
        let diff = eval.gradient.iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(diff / scale);
    }
    let t = start.elapsed();
    Outcome {
        pass: worst <= 1e-5 && within(t, 10),
        detail: format!("max relative error = {worst:.2e} at {points} points, {:.2}s", t.as_secs_f64()),
    }
}

fn exact_recovery() -> Outcome {
    let start = Instant::now();
    let d = generate_dataset(&DgpConfig::new(ModelKind::LogLinear, 0.0, 100, 404)).unwrap();
    let r = estimate(&d, EstimatorKind::Constrained, &SolverConfig::for_model(ModelKind::LogLinear)).unwrap();
    let t = start.elapsed();
    let err = r
        .xi_hat
        .to_array()
        .iter()
        .zip(ParameterVector::LOG_LINEAR_TRUTHS.to_array())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Outcome {
        pass: r.converged && err <= 1e-6 && r.objective_value <= 1e-12 && within(t, 5),
        detail: format!(
            "max |xi - truth| = {err:.2e}, objective = {:.2e}, converged = {}, {:.2}s",
            r.objective_value,
            r.converged,
            t.as_secs_f64()
        ),
    }
}

fn cell(model: ModelKind, estimator: EstimatorKind, t: usize, sigma: f64) -> (CellResult, Duration) {
    let start = Instant::now();
    let cfg = StudyConfig::new(model, estimator, vec![t], sigma, REPS, BASE_SEED);
    let mut study = run_study(&cfg).unwrap();
    (study.cells.remove(0), start.elapsed())
}

fn theta_summary(c: &CellResult, t: Duration) -> String {
    format!(
        "theta bias = {:.4}, rmse = {:.4}, converged = {:.1}%, {:.1}s",
        c.bias[THETA],
        c.rmse[THETA],
        c.converged_pct,
        t.as_secs_f64()
    )
}

fn table1b() -> Outcome {
    let (c, t) = cell(ModelKind::LogLinear, EstimatorKind::Constrained, 1000, 1.0);
    Outcome {
        pass: (c.bias[THETA] - -0.121).abs() <= 0.15
            && (0.20..=0.50).contains(&c.rmse[THETA])
            && c.converged_pct >= 95.0
            && within(t, 15 * 60),
        detail: theta_summary(&c, t),
    }
}

fn table1a() -> Outcome {
    let (c, t) = cell(ModelKind::LogLinear, EstimatorKind::Unconstrained, 1000, 1.0);
    let converged: Vec<f64> =
        c.records.iter().filter(|r| r.converged).filter_map(|r| r.xi_hat.map(|x| x.theta)).collect();
    let far = converged.iter().filter(|th| **th < -10.0).count();
    let share = if converged.is_empty() { 0.0 } else { far as f64 / converged.len() as f64 };
    Outcome {
        pass: share >= 0.10 && c.bias[THETA].abs() > 1e2 && within(t, 15 * 60),
        detail: format!(
            "{} of {} converged runs below -10 ({:.1}%); {}",
            far,
            converged.len(),
            100.0 * share,
            theta_summary(&c, t)
        ),
    }
}

fn table1c() -> Outcome {
    let (c, t) = cell(ModelKind::LogLinear, EstimatorKind::AdHocMpec, 1500, 1.0);
    Outcome {
        pass: c.rmse[THETA] <= 0.35 && c.bias[THETA].abs() <= 0.15 && within(t, 30 * 60),
        detail: theta_summary(&c, t),
    }
}

fn linear_sanity() -> Outcome {
    let (c, t) = cell(ModelKind::Linear, EstimatorKind::Constrained, 1000, 1.0);
    Outcome {
        pass: c.bias[THETA].abs() <= 0.05 && c.rmse[THETA] <= 0.25 && within(t, 10 * 60),
        detail: theta_summary(&c, t),
    }
}

fn sigma_ordering() -> Outcome {
    let (lo, t_lo) = cell(ModelKind::LogLinear, EstimatorKind::Constrained, 1000, 0.5);
    let (hi, t_hi) = cell(ModelKind::LogLinear, EstimatorKind::Constrained, 1000, 2.0);
    Outcome {
        pass: hi.rmse[THETA] >= lo.rmse[THETA],
        detail: format!(
            "theta rmse {:.4} at sigma 2.0 vs {:.4} at sigma 0.5, {:.1}s",
            hi.rmse[THETA],
            lo.rmse[THETA],
            (t_lo + t_hi).as_secs_f64()
        ),
    }
}

fn mpec_identity() -> Outcome {
    let start = Instant::now();
    let cfg = SolverConfig::for_model(ModelKind::LogLinear);
    let results: Vec<(EstimateResult, MomentContext)> = (0..50u64)
        .map(|seed| {
            let d = generate_dataset(&DgpConfig::new(ModelKind::LogLinear, 1.0, 100, 1000 + seed)).unwrap();
            let ctx = MomentContext::new(d, &cfg.instruments).unwrap();
            let r = conduct_core::solver::estimate_with_context(&ctx, EstimatorKind::AdHocMpec, &cfg).unwrap();
            (r, ctx)
        })
        .collect();
    let mut worst = 0.0f64;
    let mut converged = 0;
    for (r, ctx) in &results {
        if !r.converged {
            continue;
        }
        converged += 1;
        worst = worst.max((reduced_objective(ctx, r).unwrap() - r.objective_value).abs());
    }
    let t = start.elapsed();
    Outcome {
        pass: converged > 0 && worst <= 1e-8 && within(t, 5 * 60),
        detail: format!(
            "max |Q_mpec - Q_reduced| = {worst:.2e} over {converged} of 50 converged seeds, {:.1}s",
            t.as_secs_f64()
        ),
    }
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "equilibrium oracle equivalence", equilibrium_oracle),
        (2, "dgp round-trip", dgp_roundtrip),
        (3, "objective gradient check", gradient_check),
        (4, "exact recovery without noise", exact_recovery),
        (5, "constrained log-linear study", table1b),
        (6, "unconstrained divergence", table1a),
        (7, "mpec study", table1c),
        (8, "linear-model constrained study", linear_sanity),
        (9, "sigma ordering of theta rmse", sigma_ordering),
        (10, "mpec reduced-objective identity", mpec_identity),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let o = run();
        println!("criterion {id:>2} {}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
