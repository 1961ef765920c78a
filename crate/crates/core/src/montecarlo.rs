//! Monte Carlo studies: replicated simulation and estimation with bias,
//! RMSE and convergence-rate summaries.
//!
//! Replication `r` of cell `c` (the `c`-th sample size) draws its dataset
//! from seed `derive_seed(base_seed, c, r)`. The error scale and estimator
//! do not enter the seed, so studies that differ only in those use common
//! random numbers.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{generate_dataset, DgpConfig};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::solver::{estimate, EstimateResult, Termination};
use crate::types::*;

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seed: u64,
    pub converged: bool,
    pub termination: Termination,
    /// `None` when data generation or estimation failed outright.
    pub xi_hat: Option<ParameterVector>,
    pub objective_value: f64,
    pub iterations: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub model: ModelKind,
    pub estimator: EstimatorKind,
    pub t: usize,
    pub sigma: f64,
    pub replications: usize,
    pub converged_pct: f64,
    /// Replications entering the statistics.
    pub used: usize,
    pub bias: [f64; N_PARAMS],
    pub rmse: [f64; N_PARAMS],
    pub records: Vec<ReplicationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub config: StudyConfig,
    pub cells: Vec<CellResult>,
}

/// Per-parameter bias and RMSE of `estimates` around `truths`.
pub fn bias_rmse(estimates: &[ParameterVector], truths: &ParameterVector) -> Result<([f64; N_PARAMS], [f64; N_PARAMS])> {
    if estimates.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = estimates.len() as f64;
    let truth = truths.to_array();
    let mut bias = [0.0; N_PARAMS];
    let mut rmse = [0.0; N_PARAMS];
    for e in estimates {
        for (j, v) in e.to_array().iter().enumerate() {
            let d = v - truth[j];
            bias[j] += d;
            rmse[j] += d * d;
        }
    }
    for j in 0..N_PARAMS {
        bias[j] /= n;
        rmse[j] = (rmse[j] / n).sqrt();
        // Guard against rounding putting rmse a hair below |bias|.
        rmse[j] = rmse[j].max(bias[j].abs());
    }
    Ok((bias, rmse))
}

/// Percentage of converged results.
pub fn convergence_rate(results: &[EstimateResult]) -> Result<f64> {
    rate(results.iter().map(|r| r.converged))
}

fn rate(flags: impl ExactSizeIterator<Item = bool>) -> Result<f64> {
    let total = flags.len();
    if total == 0 {
        return Err(Error::EmptySample);
    }
    let hits = flags.filter(|f| *f).count();
    Ok(100.0 * hits as f64 / total as f64)
}

fn run_replication(config: &StudyConfig, t: usize, cell: usize, replication: usize) -> ReplicationRecord {
    let seed = derive_seed(config.base_seed, cell as u64, replication as u64);
    let dgp = DgpConfig { model: config.model, sigma: config.sigma, t, seed, truths: config.truths };
    let outcome = generate_dataset(&dgp).and_then(|ds| estimate(&ds, config.estimator, &config.solver));
    match outcome {
        Ok(r) => ReplicationRecord {
            replication,
            seed,
            converged: r.converged,
            termination: r.termination,
            xi_hat: Some(r.xi_hat),
            objective_value: r.objective_value,
            iterations: r.iterations,
            error: None,
        },
        Err(e) => ReplicationRecord {
            replication,
            seed,
            converged: false,
            termination: Termination::from_error(&e),
            xi_hat: None,
            objective_value: f64::NAN,
            iterations: 0,
            error: Some(e.to_string()),
        },
    }
}

/// Runs every cell of the study. Replications run on the current rayon
/// pool; results are identical for any number of threads.
pub fn run_study(config: &StudyConfig) -> Result<StudyResult> {
    config.validate()?;
    let mut cells = Vec::with_capacity(config.sample_sizes.len());
    for (cell, &t) in config.sample_sizes.iter().enumerate() {
        let records: Vec<ReplicationRecord> =
            (0..config.replications).into_par_iter().map(|r| run_replication(config, t, cell, r)).collect();
        cells.push(summarize(config, t, records)?);
    }
    Ok(StudyResult { config: config.clone(), cells })
}

fn summarize(config: &StudyConfig, t: usize, records: Vec<ReplicationRecord>) -> Result<CellResult> {
    let converged_pct = rate(records.iter().map(|r| r.converged))?;
    let estimates: Vec<ParameterVector> = records
        .iter()
        .filter(|r| r.converged || !config.condition_on_convergence)
        .filter_map(|r| r.xi_hat)
        .collect();
    let (bias, rmse) = match bias_rmse(&estimates, &config.truths) {
        Ok(v) => v,
        Err(Error::EmptySample) => ([f64::NAN; N_PARAMS], [f64::NAN; N_PARAMS]),
        Err(e) => return Err(e),
    };
    Ok(CellResult {
        model: config.model,
        estimator: config.estimator,
        t,
        sigma: config.sigma,
        replications: config.replications,
        converged_pct,
        used: estimates.len(),
        bias,
        rmse,
        records,
    })
}

pub const STUDY_CSV_HEADER: &str = "model,estimator,T,sigma,param,bias,rmse,converged_pct,replications";

/// Writes one row per cell and parameter.
pub fn write_study_csv<W: Write>(results: &[StudyResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(STUDY_CSV_HEADER.split(','))?;
    for study in results {
        for cell in &study.cells {
            for (j, name) in PARAM_NAMES.iter().enumerate() {
                w.write_record([
                    cell.model.as_str().to_string(),
                    cell.estimator.as_str().to_string(),
                    cell.t.to_string(),
                    cell.sigma.to_string(),
                    name.to_string(),
                    cell.bias[j].to_string(),
                    cell.rmse[j].to_string(),
                    cell.converged_pct.to_string(),
                    cell.replications.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn estimator_title(estimator: EstimatorKind, model: ModelKind) -> &'static str {
    match (estimator, model) {
        (EstimatorKind::Unconstrained, _) => "N2SLS without constraints",
        (EstimatorKind::Constrained, ModelKind::LogLinear) => "N2SLS with constraints",
        (EstimatorKind::Constrained, ModelKind::Linear) => "N2SLS with conduct bounds",
        (EstimatorKind::AdHocMpec, _) => "Ad hoc MPEC with constraints",
    }
}

/// Formats a number the way the tables do: three decimals, switching to
/// one-significant-digit scientific notation for large magnitudes.
fn table_number(v: f64) -> String {
    if !v.is_finite() {
        "NaN".to_string()
    } else if v.abs() >= 1e4 {
        let s = format!("{v:.0e}");
        // `1e5` -> `1e+05`
        match s.split_once('e') {
            Some((m, e)) => {
                let exp: i32 = e.parse().unwrap_or(0);
                format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
            }
            None => s,
        }
    } else {
        format!("{v:.3}")
    }
}

/// Aligned text rendering of one study: parameters as rows, a Bias/RMSE
/// column pair per sample size, then convergence and sample-size rows.
pub fn format_table(study: &StudyResult) -> String {
    let c = &study.config;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} ({} model, sigma = {}, {} replications)",
        estimator_title(c.estimator, c.model),
        c.model,
        c.sigma,
        c.replications
    );
    let label_w = 22;
    let col_w = 10;
    let _ = write!(out, "{:<label_w$}", "");
    for _ in &study.cells {
        let _ = write!(out, "{:>col_w$}{:>col_w$}", "Bias", "RMSE");
    }
    out.push('\n');
    for (j, name) in PARAM_NAMES.iter().enumerate() {
        let _ = write!(out, "{name:<label_w$}");
        for cell in &study.cells {
            let _ = write!(out, "{:>col_w$}{:>col_w$}", table_number(cell.bias[j]), table_number(cell.rmse[j]));
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<label_w$}", "Runs converged (%)");
    for cell in &study.cells {
        let _ = write!(out, "{:>col_w$}{:>col_w$}", "", format!("{:.3}", cell.converged_pct));
    }
    out.push('\n');
    let _ = write!(out, "{:<label_w$}", "Sample size (T)");
    for cell in &study.cells {
        let _ = write!(out, "{:>col_w$}{:>col_w$}", "", cell.t);
    }
    out.push('\n');
    out
}

pub const PRESET_NAMES: [&str; 9] =
    ["table1a", "table1b", "table1c", "table3", "table4", "table5", "table6", "table7", "acceptance"];

/// Study configurations reproducing a published table (1000 replications
/// each) or the desk-scale acceptance set.
pub fn preset(name: &str, base_seed: u64) -> Result<Vec<StudyConfig>> {
    use EstimatorKind::*;
    use ModelKind::*;
    const LOG_T: [usize; 4] = [100, 200, 1000, 1500];
    const LIN_T: [usize; 4] = [50, 100, 200, 1000];
    let cfg = |model, est, t: &[usize], sigma, reps| StudyConfig::new(model, est, t.to_vec(), sigma, reps, base_seed);
    let configs = match name {
        "table1a" => vec![cfg(LogLinear, Unconstrained, &LOG_T, 1.0, 1000)],
        "table1b" => vec![cfg(LogLinear, Constrained, &LOG_T, 1.0, 1000)],
        "table1c" => vec![cfg(LogLinear, AdHocMpec, &LOG_T, 1.0, 1000)],
        "table3" => vec![cfg(LogLinear, Unconstrained, &LOG_T, 0.5, 1000), cfg(LogLinear, Constrained, &LOG_T, 0.5, 1000)],
        "table4" => vec![cfg(LogLinear, Unconstrained, &LOG_T, 2.0, 1000), cfg(LogLinear, Constrained, &LOG_T, 2.0, 1000)],
        "table5" => [0.5, 1.0, 2.0].iter().map(|&s| cfg(Linear, Unconstrained, &LIN_T, s, 1000)).collect(),
        "table6" => [0.5, 1.0, 2.0].iter().map(|&s| cfg(Linear, Constrained, &LIN_T, s, 1000)).collect(),
        "table7" => [0.5, 1.0, 2.0].iter().map(|&s| cfg(LogLinear, AdHocMpec, &LOG_T, s, 1000)).collect(),
        "acceptance" => vec![
            cfg(LogLinear, Constrained, &[1000], 1.0, 200),
            cfg(LogLinear, Unconstrained, &[1000], 1.0, 200),
            cfg(LogLinear, AdHocMpec, &[1500], 1.0, 200),
            cfg(Linear, Constrained, &[1000], 1.0, 200),
            cfg(LogLinear, Constrained, &[1000], 0.5, 200),
            cfg(LogLinear, Constrained, &[1000], 2.0, 200),
        ],
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown preset '{other}', expected one of {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(configs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta_only(values: &[f64]) -> Vec<ParameterVector> {
        values
            .iter()
            .map(|&v| ParameterVector { theta: v, ..ParameterVector::LOG_LINEAR_TRUTHS })
            .collect()
    }

    #[test]
    fn bias_rmse_hand_examples() {
        let truths = ParameterVector::LOG_LINEAR_TRUTHS;
        let (b, r) = bias_rmse(&[truths], &truths).unwrap();
        assert!(b.iter().chain(r.iter()).all(|v| *v == 0.0));

        let (b, r) = bias_rmse(&theta_only(&[0.4, 0.6]), &truths).unwrap();
        assert!(b[THETA].abs() < 1e-15);
        assert!((r[THETA] - 0.1).abs() < 1e-15);

        let (b, r) = bias_rmse(&theta_only(&[0.2, 0.5, 0.9]), &truths).unwrap();
        assert!((b[THETA] - 0.1 / 3.0).abs() < 1e-15);
        assert!((r[THETA] - (0.25f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((r[THETA] - 0.2887).abs() < 1e-4);

        assert!(matches!(bias_rmse(&[], &truths), Err(Error::EmptySample)));
    }

    #[test]
    fn rates() {
        assert_eq!(rate([true, false, false, false].into_iter()).unwrap(), 25.0);
        assert_eq!(rate([true; 3].into_iter()).unwrap(), 100.0);
        assert!(matches!(rate(std::iter::empty::<bool>()), Err(Error::EmptySample)));
        assert!(matches!(convergence_rate(&[]), Err(Error::EmptySample)));
    }

    #[test]
    fn noiseless_single_replication_is_exact() {
        let cfg = StudyConfig::new(ModelKind::LogLinear, EstimatorKind::Constrained, vec![100], 0.0, 1, 3);
        let res = run_study(&cfg).unwrap();
        let cell = &res.cells[0];
        assert_eq!(cell.converged_pct, 100.0);
        assert!(cell.bias.iter().chain(cell.rmse.iter()).all(|v| v.abs() <= 1e-6));
    }

    #[test]
    fn studies_are_deterministic_across_thread_counts() {
        let cfg = StudyConfig::new(ModelKind::LogLinear, EstimatorKind::Constrained, vec![60, 80], 1.0, 4, 11);
        let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
        let a = pool(1).install(|| run_study(&cfg)).unwrap();
        let b = pool(3).install(|| run_study(&cfg)).unwrap();
        assert_eq!(a, b);
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        write_study_csv(&[a.clone()], &mut ca).unwrap();
        write_study_csv(&[b], &mut cb).unwrap();
        assert_eq!(ca, cb);
        let text = String::from_utf8(ca).unwrap();
        assert_eq!(text.lines().next().unwrap(), STUDY_CSV_HEADER);
        assert_eq!(text.lines().count(), 1 + 2 * N_PARAMS);
        for cell in &a.cells {
            for j in 0..N_PARAMS {
                assert!(cell.rmse[j] >= cell.bias[j].abs());
            }
            assert!((0.0..=100.0).contains(&cell.converged_pct));
        }
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        let mut cfg = StudyConfig::new(ModelKind::LogLinear, EstimatorKind::Constrained, vec![30], 1.0, 2, 5);
        let mut start = cfg.truths;
        start.theta = 2.0;
        cfg.solver.start = StartPoint::Explicit(start);
        let res = run_study(&cfg).unwrap();
        let cell = &res.cells[0];
        assert_eq!(cell.converged_pct, 0.0);
        assert!(cell.records.iter().all(|r| r.termination == Termination::InfeasibleStart && r.error.is_some()));
        assert!(cell.bias[THETA].is_nan());
    }

    #[test]
    fn table_layout() {
        let cfg = StudyConfig::new(ModelKind::LogLinear, EstimatorKind::Constrained, vec![50], 0.0, 1, 1);
        let text = format_table(&run_study(&cfg).unwrap());
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2 + N_PARAMS + 2);
        assert!(lines[1].contains("Bias") && lines[1].contains("RMSE"));
        assert!(lines[2].starts_with("alpha0"));
        assert!(lines.last().unwrap().trim_end().ends_with("50"));
        assert_eq!(table_number(-80000.0), "-8e+04");
        assert_eq!(table_number(0.3512), "0.351");
    }

    #[test]
    fn presets_cover_the_tables() {
        let b = preset("table1b", 1).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].sample_sizes, vec![100, 200, 1000, 1500]);
        assert_eq!(b[0].estimator, EstimatorKind::Constrained);
        assert_eq!(b[0].sigma, 1.0);
        let t3 = preset("table3", 1).unwrap();
        assert!(t3.iter().all(|c| c.sigma == 0.5));
        assert_eq!(preset("table6", 1).unwrap()[0].sample_sizes, vec![50, 100, 200, 1000]);
        for name in PRESET_NAMES {
            for c in preset(name, 1).unwrap() {
                c.validate().unwrap();
            }
        }
        assert!(preset("table2", 1).is_err());
    }
}
