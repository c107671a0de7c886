//! Plain numeric CSV, direction strings and study-spec files.
//!
//! CSV is comma-delimited with `.` as the decimal point and no quoting. An
//! optional single header line can be skipped. Values are written with 17
//! significant digits so that a write/read cycle is bit-exact.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{EivError, Result};
use crate::montecarlo::SimStudySpec;

fn parse_field(field: &str, line: usize, col: usize) -> Result<f64> {
    let t = field.trim();
    let v: f64 = t.parse().map_err(|_| EivError::Parse {
        line,
        reason: format!("column {}: `{t}` is not a number", col + 1),
    })?;
    if !v.is_finite() {
        return Err(EivError::Parse { line, reason: format!("column {}: non-finite value", col + 1) });
    }
    Ok(v)
}

/// Parses a numeric CSV into an m×k matrix. Blank lines are ignored; line
/// numbers in errors are 1-based and count the header.
pub fn parse_csv(text: &str, header: bool) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(false)
        .quoting(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                let line = record.position().map_or(0, |p| p.line() as usize);
                let row = record
                    .iter()
                    .enumerate()
                    .map(|(c, f)| parse_field(f, line, c))
                    .collect::<Result<Vec<f64>>>()?;
                rows.push(row);
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                let reason = match e.kind() {
                    csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
                        format!("expected {expected_len} columns, found {len}")
                    }
                    _ => e.to_string(),
                };
                return Err(EivError::Parse { line, reason });
            }
        }
    }
    if rows.is_empty() {
        return Err(EivError::Parse { line: 0, reason: "no data rows".into() });
    }
    let ncols = rows[0].len();
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// 17 significant digits in scientific notation.
fn fmt_value(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("writing to a String cannot fail");
}

pub fn write_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::with_capacity(m.len() * 24);
    for row in m.row_iter() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            fmt_value(&mut out, *v);
        }
        out.push('\n');
    }
    out
}

/// `"1,0.5,-2"` → `(1, 0.5, −2)ᵀ`.
pub fn parse_direction(text: &str) -> Result<DVector<f64>> {
    let vals = text
        .split(',')
        .enumerate()
        .map(|(c, f)| parse_field(f, 1, c))
        .collect::<Result<Vec<f64>>>()?;
    Ok(DVector::from_vec(vals))
}

pub fn parse_spec(text: &str) -> Result<SimStudySpec> {
    SimStudySpec::from_json(text)
}
