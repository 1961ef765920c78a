//! CSV import and export for datasets and curve samples.
//!
//! Floats are written with `Display`, which for `f64` is the shortest
//! decimal that parses back to the same bits.

use std::io::{Read, Write};

use crate::equilibrium::DeltaSample;
use crate::error::{Error, Result};
use crate::solver::DivergenceRow;
use crate::nlp::TraceRow;
use crate::types::{Dataset, MarketExogenous, MarketObservation, ModelKind};

pub const DATASET_COLUMNS: [&str; 9] = ["t", "log_p", "log_q", "log_y", "z_r", "log_w", "log_r", "log_h", "log_k"];
pub const ERROR_COLUMNS: [&str; 2] = ["eps_d", "eps_c"];

/// Comment line marking a linear-model file, whose columns hold levels
/// despite the `log_` names.
pub const LINEAR_MARKER: &str = "# model=linear";

pub fn dataset_header(with_errors: bool) -> String {
    let mut cols: Vec<&str> = DATASET_COLUMNS.to_vec();
    if with_errors {
        cols.extend(ERROR_COLUMNS);
    }
    cols.join(",")
}

pub fn write_dataset<W: Write>(dataset: &Dataset, with_errors: bool, mut out: W) -> Result<()> {
    if dataset.model == ModelKind::Linear {
        writeln!(out, "{LINEAR_MARKER}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(dataset_header(with_errors).split(','))?;
    for (t, m) in dataset.markets.iter().enumerate() {
        let e = &m.exog;
        let mut row = vec![
            (t + 1).to_string(),
            m.log_p.to_string(),
            m.log_q.to_string(),
            e.log_y.to_string(),
            e.z_r.to_string(),
            e.log_w.to_string(),
            e.log_r.to_string(),
            e.log_h.to_string(),
            e.log_k.to_string(),
        ];
        if with_errors {
            row.push(e.eps_d.to_string());
            row.push(e.eps_c.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a dataset file. Error columns, when present, are loaded into the
/// exogenous records but nothing downstream of estimation reads them.
pub fn read_dataset<R: Read>(mut input: R) -> Result<Dataset> {
    let mut text = String::new();
    input.read_to_string(&mut text).map_err(|e| match e.kind() {
        std::io::ErrorKind::InvalidData => Error::Parse("dataset is not valid UTF-8".into()),
        _ => Error::Io(e),
    })?;
    let mut model = ModelKind::LogLinear;
    let mut body_start = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some(value) = comment.trim().strip_prefix("model=") {
                model = value.trim().parse()?;
            }
            body_start += line.len();
        } else {
            break;
        }
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(&text.as_bytes()[body_start..]);
    let headers = reader.headers().map_err(parse_err)?.clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    let with_errors = if names == DATASET_COLUMNS {
        false
    } else if names.len() == DATASET_COLUMNS.len() + 2
        && names[..DATASET_COLUMNS.len()] == DATASET_COLUMNS
        && names[DATASET_COLUMNS.len()..] == ERROR_COLUMNS
    {
        true
    } else {
        return Err(Error::Parse(format!("unexpected header '{}', expected '{}'", names.join(","), dataset_header(false))));
    };
    let mut markets = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(parse_err)?;
        let line = i + 2;
        let field = |j: usize| -> Result<f64> {
            let raw = record.get(j).unwrap_or("").trim();
            let v: f64 = raw
                .parse()
                .map_err(|_| Error::Parse(format!("row {line}, column {}: cannot parse '{raw}'", names[j])))?;
            if !v.is_finite() {
                return Err(Error::Parse(format!("row {line}, column {}: non-finite value", names[j])));
            }
            Ok(v)
        };
        let (eps_d, eps_c) = if with_errors { (field(9)?, field(10)?) } else { (0.0, 0.0) };
        let exog = MarketExogenous {
            log_y: field(3)?,
            z_r: field(4)?,
            log_w: field(5)?,
            log_r: field(6)?,
            log_h: field(7)?,
            log_k: field(8)?,
            eps_d,
            eps_c,
        };
        markets.push(MarketObservation { exog, log_p: field(1)?, log_q: field(2)? });
    }
    if markets.is_empty() {
        return Err(Error::Parse("dataset has no rows".into()));
    }
    Ok(Dataset::new(model, markets))
}

fn parse_err(e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Csv(e),
        _ => Error::Parse(e.to_string()),
    }
}

pub fn write_delta_curve<W: Write>(samples: &[DeltaSample], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["p", "term1", "term2", "delta"])?;
    for s in samples {
        w.write_record([s.p.to_string(), s.term1.to_string(), s.term2.to_string(), s.delta.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-iterate solver trace: iteration, objective, KKT residual, theta,
/// gamma0 and the smallest inequality value.
pub fn write_trace<W: Write>(trace: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "objective", "kkt", "theta", "gamma0", "min_slack"])?;
    for r in trace {
        w.write_record([
            r.iteration.to_string(),
            r.objective.to_string(),
            r.kkt.to_string(),
            r.core[crate::types::THETA].to_string(),
            r.core[crate::types::GAMMA0].to_string(),
            r.min_ineq.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_divergence<W: Write>(rows: &[DivergenceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "theta", "gamma0", "max_log_margin", "compensation"])?;
    for r in rows {
        w.write_record([
            r.iteration.to_string(),
            r.theta.to_string(),
            r.gamma0.to_string(),
            r.max_log_margin.to_string(),
            (r.max_log_margin - r.gamma0).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
