//! CSV persistence for ledgers and states.
//!
//! Floats are written as `{:.16e}` (17 significant digits), which is enough
//! to read every `f64` back exactly and does not depend on locale.

use std::io::{Read, Write};
use std::path::Path;

use crate::engine::TraceRow;
use crate::error::{Error, Result};
use crate::vector::Vector;

pub const TRACE_HEADER: [&str; 6] = ["t", "e_t", "a_t", "alpha_t", "delta_norm_sq", "eta_div"];

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_trace<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            fmt_f64(r.e_t),
            fmt_f64(r.a_t),
            fmt_f64(r.alpha_t),
            fmt_f64(r.delta_norm_sq),
            fmt_f64(r.eta_div),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != TRACE_HEADER {
        return Err(Error::Config(format!(
            "trace header {} does not match {}",
            header.join(","),
            TRACE_HEADER.join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        let row: TraceRow = rec?;
        if row.t != rows.len() {
            return Err(Error::Config(format!(
                "trace row {} has t = {}",
                rows.len(),
                row.t
            )));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Config("trace has no rows".into()));
    }
    Ok(rows)
}

pub fn read_trace_file(path: &Path) -> Result<Vec<TraceRow>> {
    let f = std::fs::File::open(path)?;
    read_trace(std::io::BufReader::new(f))
}

/// One row per state: `t, s_0, ..., s_{n-1}`.
pub fn write_states<W: Write>(states: &[Vector], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let dim = states.first().map_or(0, Vector::dim);
    let mut header = vec!["t".to_string()];
    header.extend((0..dim).map(|i| format!("s_{i}")));
    w.write_record(&header)?;
    for (t, s) in states.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(s.iter().map(|&x| fmt_f64(x)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_states<R: Read>(input: R) -> Result<Vec<Vector>> {
    let mut r = csv::Reader::from_reader(input);
    let dim = r.headers()?.len().saturating_sub(1);
    let mut states = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let xs = rec
            .iter()
            .skip(1)
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::Config(format!("states row {}: {e}", states.len())))
            })
            .collect::<Result<Vec<f64>>>()?;
        if xs.len() != dim {
            return Err(Error::dims("states.csv row", dim, xs.len()));
        }
        states.push(Vector::from_raw(xs));
    }
    Ok(states)
}
