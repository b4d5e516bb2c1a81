//! CSV ingestion for `fit`: resolve named columns, parse numeric cells,
//! and hand the centered dataset to the estimators.
//!
//! Dialect: comma-separated, UTF-8, header row required, `.` decimal
//! point. Structural problems (missing file, malformed CSV, unknown or
//! ambiguous column names, non-numeric cells) are I/O-or-parse failures;
//! values that parse but violate the data contract (NaN, rank-deficient
//! instruments) surface later as validation failures.

use std::path::Path;

use ivbgmm::{center, Dataset};
use nalgebra::{DMatrix, DVector};

use crate::CliError;

/// Position of `name` in `headers`, failing on absence or duplication.
fn resolve_column(headers: &csv::StringRecord, name: &str) -> Result<usize, CliError> {
    let hits: Vec<usize> =
        headers.iter().enumerate().filter(|(_, h)| *h == name).map(|(i, _)| i).collect();
    match hits.as_slice() {
        [i] => Ok(*i),
        [] => Err(CliError::parse("MissingColumn", format!("column '{name}' not found in header"))),
        _ => Err(CliError::parse(
            "AmbiguousColumn",
            format!("column '{name}' appears {} times in header", hits.len()),
        )),
    }
}

/// Reads the named columns of a CSV file into a centered [`Dataset`].
///
/// Instrument columns enter Z in the order given by `instruments`.
pub fn read_fit_csv(
    path: &Path,
    outcome: &str,
    exposure: &str,
    instruments: &[String],
) -> Result<Dataset, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::parse("Io", format!("cannot read '{}': {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| CliError::parse("Csv", format!("cannot parse header: {e}")))?
        .clone();
    let y_col = resolve_column(&headers, outcome)?;
    let d_col = resolve_column(&headers, exposure)?;
    let z_cols: Vec<usize> = instruments
        .iter()
        .map(|name| resolve_column(&headers, name))
        .collect::<Result<_, _>>()?;

    let parse_cell = |record: &csv::StringRecord, row: usize, col: usize| -> Result<f64, CliError> {
        let cell = record.get(col).ok_or_else(|| {
            CliError::parse("Csv", format!("row {row} has no column {col}"))
        })?;
        cell.parse::<f64>().map_err(|_| {
            CliError::parse(
                "ParseFloat",
                format!("row {row}, column '{}': '{cell}' is not a number", headers[col].to_owned()),
            )
        })
    };

    let p = z_cols.len();
    let mut y = Vec::new();
    let mut d = Vec::new();
    let mut z = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| CliError::parse("Csv", format!("row {}: {e}", idx + 1)))?;
        y.push(parse_cell(&record, idx + 1, y_col)?);
        d.push(parse_cell(&record, idx + 1, d_col)?);
        for &c in &z_cols {
            z.push(parse_cell(&record, idx + 1, c)?);
        }
    }
    let n = y.len();
    if n < 2 {
        return Err(CliError::validation(format!(
            "need at least 2 data rows to center, got {n}"
        )));
    }

    center(DVector::from_vec(y), DVector::from_vec(d), DMatrix::from_row_slice(n, p, &z))
        .map_err(CliError::from_core)
}
