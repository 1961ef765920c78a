use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use conduct_core::dgp::{generate_dataset, DgpConfig};
use conduct_core::equilibrium::sample_delta_curve;
use conduct_core::montecarlo::{format_table, preset, run_study, write_study_csv};
use conduct_core::solver::{diagnose_divergence, estimate, EstimateResult};
use conduct_core::{
    io, EstimatorKind, MarketExogenous, ModelKind, ParameterVector, SolverConfig, StartPoint, StudyConfig,
    PARAM_NAMES,
};

mod config;

use config::CliConfig;

const DEFAULT_SEED: u64 = 1;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_PARSE: u8 = 2;
pub const EXIT_SOLVER: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    code: u8,
    err: anyhow::Error,
}

impl CliError {
    fn usage(err: anyhow::Error) -> Self {
        Self { code: EXIT_USAGE, err }
    }
    fn parse(err: anyhow::Error) -> Self {
        Self { code: EXIT_PARSE, err }
    }
    fn io(err: anyhow::Error) -> Self {
        Self { code: EXIT_IO, err }
    }
}

impl From<conduct_core::Error> for CliError {
    fn from(e: conduct_core::Error) -> Self {
        use conduct_core::Error as E;
        let code = match &e {
            E::Parse(_) => EXIT_PARSE,
            E::InvalidConfig(_) => EXIT_USAGE,
            // Readers turn malformed CSV into `Parse`; what is left is I/O.
            E::Io(_) | E::Csv(_) => EXIT_IO,
            _ => EXIT_SOLVER,
        };
        Self { code, err: e.into() }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "conduct", version, about = "Conduct-parameter estimation with equilibrium-existence constraints")]
struct Cli {
    /// TOML config file (schema_version = 1); flags override its values
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for Monte Carlo studies [default: all cores]
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset and write it as CSV
    Simulate(SimulateArgs),
    /// Estimate the parameters from a dataset CSV
    Estimate(EstimateArgs),
    /// Run a Monte Carlo study and report bias, RMSE and convergence
    Mc(McArgs),
    /// Sample the two terms of the equilibrium fixed-point condition on a price grid
    DeltaCurve(DeltaArgs),
    /// Trace an unconstrained run and report the log-margin/intercept compensation
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Model: loglinear or linear
    #[arg(long, value_parser = ModelKind::from_str)]
    model: Option<ModelKind>,
    /// Number of markets
    #[arg(long)]
    t: Option<usize>,
    /// Error standard deviation
    #[arg(long)]
    sigma: Option<f64>,
    /// RNG seed
    #[arg(long, env = "CONDUCT_SEED")]
    seed: Option<u64>,
    /// Include the eps_d and eps_c columns
    #[arg(long)]
    with_errors: bool,
    /// Output file [default: stdout]
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Default)]
struct SolverArgs {
    /// Iteration cap
    #[arg(long)]
    max_iterations: Option<usize>,
    /// KKT tolerance for convergence
    #[arg(long)]
    tol_stationarity: Option<f64>,
    /// Constraint-violation tolerance for convergence
    #[arg(long)]
    tol_constraint: Option<f64>,
    /// Margin used for the strict inequalities
    #[arg(long)]
    strict_slack: Option<f64>,
    /// Start point as nine comma-separated values (alpha0..alpha3, gamma0..gamma3, theta)
    #[arg(long, value_delimiter = ',', num_args = 9)]
    start: Option<Vec<f64>>,
}

impl SolverArgs {
    fn resolve(&self, model: ModelKind, file: &CliConfig) -> SolverConfig {
        let mut cfg = file.solver.apply(SolverConfig::for_model(model));
        if let Some(v) = self.max_iterations {
            cfg.max_iterations = v;
        }
        if let Some(v) = self.tol_stationarity {
            cfg.tol_stationarity = v;
        }
        if let Some(v) = self.tol_constraint {
            cfg.tol_constraint = v;
        }
        if let Some(v) = self.strict_slack {
            cfg.strict_slack = v;
        }
        if let Some(v) = &self.start {
            cfg.start = StartPoint::Explicit(ParameterVector::from_slice(v));
        }
        cfg
    }
}

#[derive(Args)]
struct EstimateArgs {
    /// Dataset CSV
    dataset: PathBuf,
    /// Estimator: unconstrained, constrained or mpec
    #[arg(long, default_value = "constrained", value_parser = EstimatorKind::from_str)]
    estimator: EstimatorKind,
    #[command(flatten)]
    solver: SolverArgs,
    /// Write the per-iterate trace CSV here
    #[arg(long, value_name = "FILE")]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct McArgs {
    /// Study preset: table1a, table1b, table1c, table3..table7 or acceptance
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, value_parser = ModelKind::from_str)]
    model: Option<ModelKind>,
    #[arg(long, value_parser = EstimatorKind::from_str)]
    estimator: Option<EstimatorKind>,
    /// Sample sizes, comma-separated
    #[arg(long, value_delimiter = ',')]
    t: Option<Vec<usize>>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    replications: Option<usize>,
    /// Base seed for the replication streams
    #[arg(long, env = "CONDUCT_SEED")]
    seed: Option<u64>,
    /// Aggregate over all runs rather than converged runs only
    #[arg(long)]
    all_runs: bool,
    #[command(flatten)]
    solver: SolverArgs,
    /// Directory for one CSV and one text table per study [default: tables on stdout]
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct DeltaArgs {
    #[arg(long)]
    alpha0: Option<f64>,
    #[arg(long)]
    alpha1: Option<f64>,
    #[arg(long)]
    alpha2: Option<f64>,
    #[arg(long)]
    alpha3: Option<f64>,
    #[arg(long)]
    gamma0: Option<f64>,
    #[arg(long)]
    gamma1: Option<f64>,
    #[arg(long)]
    gamma2: Option<f64>,
    #[arg(long)]
    gamma3: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    log_y: f64,
    #[arg(long, default_value_t = 0.0)]
    z_r: f64,
    #[arg(long, default_value_t = 0.0)]
    log_w: f64,
    #[arg(long, default_value_t = 0.0)]
    log_r: f64,
    #[arg(long, default_value_t = 0.0)]
    eps_d: f64,
    #[arg(long, default_value_t = 0.0)]
    eps_c: f64,
    /// Explicit price grid, comma-separated (overrides the range flags)
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1.0)]
    p_min: f64,
    #[arg(long, default_value_t = 1e7)]
    p_max: f64,
    #[arg(long, default_value_t = 200)]
    points: usize,
    /// Space the grid evenly in levels instead of logs
    #[arg(long)]
    linear_spacing: bool,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Dataset CSV
    dataset: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match path {
        Some(p) if p != Path::new("-") => {
            std::fs::write(p, bytes).map_err(|e| CliError::io(anyhow::anyhow!("writing {}: {e}", p.display())))
        }
        _ => std::io::stdout().write_all(bytes).map_err(|e| CliError::io(e.into())),
    }
}

fn parse_model(name: &str) -> CliResult<ModelKind> {
    name.parse().map_err(CliError::from)
}

fn read_dataset(path: &Path) -> CliResult<conduct_core::Dataset> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(anyhow::anyhow!("opening {}: {e}", path.display())))?;
    io::read_dataset(std::io::BufReader::new(file)).map_err(|e| {
        let code = CliError::from(e);
        CliError { code: code.code, err: code.err.context(format!("reading {}", path.display())) }
    })
}

fn cmd_simulate(args: &SimulateArgs, file: &CliConfig) -> CliResult<u8> {
    let d = &file.dgp;
    let model = match (args.model, &d.model) {
        (Some(m), _) => m,
        (None, Some(name)) => parse_model(name)?,
        (None, None) => ModelKind::LogLinear,
    };
    let mut cfg = DgpConfig::new(
        model,
        args.sigma.or(d.sigma).unwrap_or(1.0),
        args.t.or(d.t).unwrap_or(1000),
        args.seed.or(d.seed).unwrap_or(DEFAULT_SEED),
    );
    if let Some(t) = d.truths {
        cfg.truths = t;
    }
    let dataset = generate_dataset(&cfg)?;
    let mut buf = Vec::new();
    io::write_dataset(&dataset, args.with_errors || d.with_errors.unwrap_or(false), &mut buf)?;
    emit(args.out.as_deref(), &buf)?;
    Ok(0)
}

fn format_report(estimator: EstimatorKind, r: &EstimateResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "estimator          {estimator}");
    let _ = writeln!(s, "converged          {}", r.converged);
    let _ = writeln!(s, "termination        {}", r.termination.as_str());
    let _ = writeln!(s, "iterations         {}", r.iterations);
    let _ = writeln!(s, "objective          {:e}", r.objective_value);
    let _ = writeln!(s, "kkt residual       {:e}", r.kkt);
    s.push_str("estimates\n");
    for (name, v) in PARAM_NAMES.iter().zip(r.xi_hat.to_array()) {
        let _ = writeln!(s, "  {name:<16} {v}");
    }
    let c = &r.constraint_report;
    s.push_str("constraints\n");
    let _ = writeln!(s, "  theta            {}", c.theta_lower);
    let _ = writeln!(s, "  1 - theta        {}", c.theta_upper);
    let _ = writeln!(s, "  min slope        {}", c.min_slope);
    let _ = writeln!(s, "  gamma1           {}", c.gamma1);
    let _ = writeln!(s, "  min margin       {}", c.min_margin);
    s
}

fn cmd_estimate(args: &EstimateArgs, file: &CliConfig) -> CliResult<u8> {
    let dataset = read_dataset(&args.dataset)?;
    let mut solver = args.solver.resolve(dataset.model, file);
    solver.record_trace = args.trace.is_some();
    let result = estimate(&dataset, args.estimator, &solver)?;
    if let Some(path) = &args.trace {
        let mut buf = Vec::new();
        io::write_trace(&result.trace, &mut buf)?;
        emit(Some(path), &buf)?;
    }
    emit(None, format_report(args.estimator, &result).as_bytes())?;
    Ok(if result.converged { 0 } else { EXIT_SOLVER })
}

fn study_configs(args: &McArgs, file: &CliConfig) -> CliResult<Vec<StudyConfig>> {
    let s = &file.study;
    let seed = args.seed.or(s.base_seed).unwrap_or(DEFAULT_SEED);
    let preset_name = args.preset.as_deref().or(s.preset.as_deref());
    let mut configs = match preset_name {
        Some(name) => {
            if args.model.is_some() || args.estimator.is_some() || args.t.is_some() || args.sigma.is_some() {
                return Err(CliError::usage(anyhow::anyhow!(
                    "--model, --estimator, --t and --sigma cannot be combined with a preset"
                )));
            }
            preset(name, seed)?
        }
        None => {
            let model = match (args.model, &s.model) {
                (Some(m), _) => m,
                (None, Some(name)) => parse_model(name)?,
                (None, None) => ModelKind::LogLinear,
            };
            let estimator = match (args.estimator, &s.estimator) {
                (Some(e), _) => e,
                (None, Some(name)) => name.parse().map_err(CliError::from)?,
                (None, None) => EstimatorKind::Constrained,
            };
            let t = args.t.clone().or(s.sample_sizes.clone()).unwrap_or_else(|| vec![100, 200, 1000, 1500]);
            let sigma = args.sigma.or(s.sigma).unwrap_or(1.0);
            vec![StudyConfig::new(model, estimator, t, sigma, 200, seed)]
        }
    };
    for c in &mut configs {
        if let Some(r) = args.replications.or(s.replications) {
            c.replications = r;
        }
        if let Some(t) = file.dgp.truths {
            c.truths = t;
        }
        c.condition_on_convergence = !args.all_runs && s.condition_on_convergence.unwrap_or(true);
        c.solver = args.solver.resolve(c.model, file);
        if let StartPoint::TrueValues(_) = c.solver.start {
            c.solver.start = StartPoint::TrueValues(c.truths);
        }
        c.validate()?;
    }
    Ok(configs)
}

fn cmd_mc(args: &McArgs, file: &CliConfig) -> CliResult<u8> {
    let configs = study_configs(args, file)?;
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(anyhow::anyhow!("creating {}: {e}", dir.display())))?;
    }
    for (i, cfg) in configs.iter().enumerate() {
        let result = run_study(cfg)?;
        let table = format_table(&result);
        if let Some(dir) = &args.out_dir {
            let stem = format!("study{}_{}_{}_sigma{}", i + 1, cfg.model, cfg.estimator, cfg.sigma);
            let mut csv = Vec::new();
            write_study_csv(std::slice::from_ref(&result), &mut csv)?;
            emit(Some(&dir.join(format!("{stem}.csv"))), &csv)?;
            emit(Some(&dir.join(format!("{stem}.txt"))), table.as_bytes())?;
        }
        emit(None, format!("{table}\n").as_bytes())?;
    }
    Ok(0)
}

fn delta_grid(args: &DeltaArgs) -> CliResult<Vec<f64>> {
    let grid = match &args.grid {
        Some(g) => g.clone(),
        None => {
            if args.points < 2 || !(args.p_min > 0.0 && args.p_max > args.p_min && args.p_max.is_finite()) {
                return Err(CliError::usage(anyhow::anyhow!("need 0 < p-min < p-max and at least 2 points")));
            }
            let n = args.points - 1;
            (0..=n)
                .map(|i| {
                    let f = i as f64 / n as f64;
                    if args.linear_spacing {
                        args.p_min + f * (args.p_max - args.p_min)
                    } else {
                        (args.p_min.ln() + f * (args.p_max.ln() - args.p_min.ln())).exp()
                    }
                })
                .collect()
        }
    };
    if grid.is_empty() || grid.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
        return Err(CliError::usage(anyhow::anyhow!("grid prices must be positive and finite")));
    }
    Ok(grid)
}

fn cmd_delta_curve(args: &DeltaArgs, file: &CliConfig) -> CliResult<u8> {
    let mut p = file.dgp.truths.unwrap_or(ParameterVector::LOG_LINEAR_TRUTHS);
    for (slot, v) in [
        (&mut p.alpha0, args.alpha0),
        (&mut p.alpha1, args.alpha1),
        (&mut p.alpha2, args.alpha2),
        (&mut p.alpha3, args.alpha3),
        (&mut p.gamma0, args.gamma0),
        (&mut p.gamma1, args.gamma1),
        (&mut p.gamma2, args.gamma2),
        (&mut p.gamma3, args.gamma3),
        (&mut p.theta, args.theta),
    ] {
        if let Some(v) = v {
            *slot = v;
        }
    }
    let exog = MarketExogenous {
        log_y: args.log_y,
        z_r: args.z_r,
        log_w: args.log_w,
        log_r: args.log_r,
        eps_d: args.eps_d,
        eps_c: args.eps_c,
        ..Default::default()
    };
    let samples = sample_delta_curve(&p, &exog, &delta_grid(args)?)?;
    let mut buf = Vec::new();
    io::write_delta_curve(&samples, &mut buf)?;
    emit(args.out.as_deref(), &buf)?;
    Ok(0)
}

fn cmd_diagnose(args: &DiagnoseArgs, file: &CliConfig) -> CliResult<u8> {
    let dataset = read_dataset(&args.dataset)?;
    let mut solver = args.solver.resolve(dataset.model, file);
    solver.record_trace = true;
    let result = estimate(&dataset, EstimatorKind::Unconstrained, &solver)?;
    let rows = diagnose_divergence(&result.trace, &dataset);
    let mut buf = Vec::new();
    io::write_divergence(&rows, &mut buf)?;
    emit(args.out.as_deref(), &buf)?;
    eprintln!(
        "unconstrained run: {} after {} iterations, theta = {}, gamma0 = {}",
        result.termination.as_str(),
        result.iterations,
        result.xi_hat.theta,
        result.xi_hat.gamma0
    );
    Ok(0)
}

fn run(cli: &Cli) -> CliResult<u8> {
    let file = CliConfig::load(cli.config.as_deref())?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage(anyhow::anyhow!("--threads must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(anyhow::anyhow!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, &file),
        Command::Estimate(a) => cmd_estimate(a, &file),
        Command::Mc(a) => cmd_mc(a, &file),
        Command::DeltaCurve(a) => cmd_delta_curve(a, &file),
        Command::Diagnose(a) => cmd_diagnose(a, &file),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {:#}", e.err);
            ExitCode::from(e.code)
        }
    }
}
