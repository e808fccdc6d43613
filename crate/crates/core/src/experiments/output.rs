use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of `results.csv`.
pub const CSV_COLUMNS: [&str; 11] = [
    "problem",
    "backend",
    "n",
    "h",
    "paths",
    "seed",
    "cells_per_dim",
    "value",
    "exercise_frac_t0",
    "wall_ms",
    "status",
];

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub problem: String,
    pub backend: String,
    pub n: usize,
    pub h: f64,
    pub paths: usize,
    pub seed: u64,
    pub cells_per_dim: usize,
    pub value: f64,
    pub exercise_frac_t0: f64,
    pub wall_ms: f64,
    /// `ok` or an error code.
    pub status: String,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Renders `x` with 9 significant digits, shortest form, no locale.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.8e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x))
    } else {
        format!("{}e{}", trim_zeros(mantissa), exp)
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

fn parse_float(s: &str) -> Result<f64> {
    match s {
        "nan" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s
            .parse()
            .map_err(|_| Error::Config(format!("cannot parse `{s}` as a number"))),
    }
}

fn parse_int<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Config(format!("cannot parse `{s}` as an integer")))
}

/// Writes the header and one line per row.
pub fn write_csv<W: Write>(rows: &[ResultRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_COLUMNS)?;
    for r in rows {
        out.write_record([
            r.problem.clone(),
            r.backend.clone(),
            r.n.to_string(),
            format_float(r.h),
            r.paths.to_string(),
            r.seed.to_string(),
            r.cells_per_dim.to_string(),
            format_float(r.value),
            format_float(r.exercise_frac_t0),
            format_float(r.wall_ms),
            r.status.clone(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn emit_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    write_csv(rows, File::create(path)?)
}

pub fn parse_csv<R: Read>(r: R) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_reader(r);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(Error::Config(format!("unexpected CSV header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        rows.push(ResultRow {
            problem: rec[0].to_string(),
            backend: rec[1].to_string(),
            n: parse_int(&rec[2])?,
            h: parse_float(&rec[3])?,
            paths: parse_int(&rec[4])?,
            seed: parse_int(&rec[5])?,
            cells_per_dim: parse_int(&rec[6])?,
            value: parse_float(&rec[7])?,
            exercise_frac_t0: parse_float(&rec[8])?,
            wall_ms: parse_float(&rec[9])?,
            status: rec[10].to_string(),
        });
    }
    Ok(rows)
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    parse_csv(File::open(path)?)
}
