//! Matrix file formats: headerless or headed CSV, and the JSON schema
//! `{"rows": n, "cols": p, "data": [row-major values]}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MdfaError, Result};
use crate::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Json,
}

impl MatrixFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(MatrixFormat::Csv),
            "json" => Some(MatrixFormat::Json),
            _ => None,
        }
    }
}

impl std::str::FromStr for MatrixFormat {
    type Err = MdfaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(MatrixFormat::Csv),
            "json" => Ok(MatrixFormat::Json),
            other => Err(MdfaError::InvalidInput(format!("unknown matrix format '{other}'"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixJson {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

fn parse_err(msg: impl Into<String>) -> MdfaError {
    MdfaError::Parse(msg.into())
}

/// Parses an RFC-4180 numeric matrix. Every row must have the same width
/// and every value must be a finite number.
pub fn parse_matrix_csv(bytes: &[u8], has_header: bool) -> Result<Mat> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(bytes);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0usize;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(format!("csv: {e}")))?;
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(parse_err(format!(
                    "row {} has {} fields, expected {c}",
                    i + 1,
                    record.len()
                )))
            }
            _ => {}
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(format!("row {}, column {}: '{field}' is not a number", i + 1, j + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(format!("row {}, column {}: non-finite value", i + 1, j + 1)));
            }
            data.push(v);
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    if rows == 0 || cols == 0 {
        return Err(parse_err("matrix is empty"));
    }
    Ok(Mat::from_row_slice(rows, cols, &data))
}

/// Parses the JSON matrix schema.
pub fn parse_matrix_json(bytes: &[u8]) -> Result<Mat> {
    let m: MatrixJson =
        serde_json::from_slice(bytes).map_err(|e| parse_err(format!("json: {e}")))?;
    let expected = m
        .rows
        .checked_mul(m.cols)
        .ok_or_else(|| parse_err("rows × cols overflows"))?;
    if expected != m.data.len() {
        return Err(parse_err(format!(
            "{}x{} matrix needs {expected} values, got {}",
            m.rows,
            m.cols,
            m.data.len()
        )));
    }
    if expected == 0 {
        return Err(parse_err("matrix is empty"));
    }
    Ok(Mat::from_row_slice(m.rows, m.cols, &m.data))
}

pub fn matrix_to_json_value(m: &Mat) -> serde_json::Value {
    let data: Vec<f64> = m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
    serde_json::json!({ "rows": m.nrows(), "cols": m.ncols(), "data": data })
}

/// Nested row arrays, used inside reports.
pub fn matrix_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn matrix_to_csv(m: &Mat) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Reads a matrix, choosing the format by `format` or the file extension.
pub fn read_matrix(path: &Path, format: Option<MatrixFormat>, has_header: bool) -> Result<Mat> {
    let format = format
        .or_else(|| MatrixFormat::from_path(path))
        .ok_or_else(|| parse_err(format!("cannot infer format of {}", path.display())))?;
    let bytes = std::fs::read(path)
        .map_err(|e| MdfaError::InvalidInput(format!("{}: {e}", path.display())))?;
    match format {
        MatrixFormat::Csv => parse_matrix_csv(&bytes, has_header),
        MatrixFormat::Json => parse_matrix_json(&bytes),
    }
}
