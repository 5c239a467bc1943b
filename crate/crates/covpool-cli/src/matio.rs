//! Matrix CSV reading and writing.
//!
//! The on-disk convention is one observation (or matrix row) per CSV
//! record. A header row is optional on input and detected by whether the
//! first record parses as numbers. Complex matrices are stored as paired
//! columns named `<name>_re,<name>_im`; a header with that pairing switches
//! the reader to complex mode, everything else is read as real. Writers
//! always emit a header (`X1..Xp` real, `X1_re,X1_im,..` complex), so the
//! files round-trip through the same reader.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use covpool::Complex64;
use nalgebra::DMatrix;

use crate::CliError;

/// A matrix read from disk, in whichever field the file declared.
#[derive(Debug, Clone)]
pub enum MatrixData {
    Real(DMatrix<f64>),
    Complex(DMatrix<Complex64>),
}

impl MatrixData {
    pub fn ncols(&self) -> usize {
        match self {
            Self::Real(m) => m.ncols(),
            Self::Complex(m) => m.ncols(),
        }
    }

    pub fn field_name(&self) -> &'static str {
        match self {
            Self::Real(_) => "real",
            Self::Complex(_) => "complex",
        }
    }

    /// Widens a real matrix to complex; complex stays as is.
    pub fn into_complex(self) -> DMatrix<Complex64> {
        match self {
            Self::Real(m) => m.map(|v| Complex64::new(v, 0.0)),
            Self::Complex(m) => m,
        }
    }
}

fn data_err(path: &Path, what: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {what}", path.display()))
}

/// Splits a header into complex column pairs if every column follows the
/// `name_re,name_im` convention; `None` means a real header.
fn complex_pairing(header: &[String]) -> Option<usize> {
    if header.is_empty() || header.len() % 2 != 0 {
        return None;
    }
    for pair in header.chunks_exact(2) {
        let re = pair[0].strip_suffix("_re")?;
        let im = pair[1].strip_suffix("_im")?;
        if re != im {
            return None;
        }
    }
    Some(header.len() / 2)
}

fn parse_cell(path: &Path, row: usize, col: usize, cell: &str) -> Result<f64, CliError> {
    let value: f64 = cell.trim().parse().map_err(|_| {
        data_err(path, format!("row {row}, column {col}: {cell:?} is not a number"))
    })?;
    if !value.is_finite() {
        return Err(data_err(path, format!("row {row}, column {col}: non-finite value {cell}")));
    }
    Ok(value)
}

/// Reads a matrix, detecting real versus complex layout from the header.
pub fn read_matrix(path: &Path) -> Result<MatrixData, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| data_err(path, e))?;

    let mut records: Vec<csv::StringRecord> = Vec::new();
    for record in reader.records() {
        records.push(record.map_err(|e| data_err(path, e))?);
    }
    if records.is_empty() {
        return Err(data_err(path, "the file has no rows"));
    }

    // A header is any first record that does not parse as numbers.
    let first_is_header = records[0].iter().any(|cell| cell.trim().parse::<f64>().is_err());
    let header: Option<Vec<String>> = first_is_header
        .then(|| records[0].iter().map(str::to_string).collect());
    let data_rows = &records[usize::from(first_is_header)..];
    if data_rows.is_empty() {
        return Err(data_err(path, "the file has a header but no data rows"));
    }

    let width = data_rows[0].len();
    let mut values = Vec::with_capacity(data_rows.len() * width);
    for (i, record) in data_rows.iter().enumerate() {
        if record.len() != width {
            return Err(data_err(
                path,
                format!("row {} has {} cells but row 1 has {width}", i + 1, record.len()),
            ));
        }
        for (j, cell) in record.iter().enumerate() {
            values.push(parse_cell(path, i + 1, j + 1, cell)?);
        }
    }

    let n = data_rows.len();
    match header.as_deref().and_then(complex_pairing) {
        Some(p) => {
            let m = DMatrix::from_fn(n, p, |i, j| {
                Complex64::new(values[i * width + 2 * j], values[i * width + 2 * j + 1])
            });
            Ok(MatrixData::Complex(m))
        }
        None => {
            let m = DMatrix::from_fn(n, width, |i, j| values[i * width + j]);
            Ok(MatrixData::Real(m))
        }
    }
}

/// Reads a matrix that must be real.
pub fn read_real_matrix(path: &Path) -> Result<DMatrix<f64>, CliError> {
    match read_matrix(path)? {
        MatrixData::Real(m) => Ok(m),
        MatrixData::Complex(_) => Err(data_err(
            path,
            "expected a real matrix, but the header declares complex re/im column pairs",
        )),
    }
}

/// Renders a real matrix as CSV with an `X1..Xp` header.
pub fn real_matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for j in 0..m.ncols() {
        if j > 0 {
            out.push(',');
        }
        let _ = write!(out, "X{}", j + 1);
    }
    out.push('\n');
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", m[(i, j)]);
        }
        out.push('\n');
    }
    out
}

/// Renders a complex matrix as CSV with an `X1_re,X1_im,..` header.
pub fn complex_matrix_csv(m: &DMatrix<Complex64>) -> String {
    let mut out = String::new();
    for j in 0..m.ncols() {
        if j > 0 {
            out.push(',');
        }
        let _ = write!(out, "X{0}_re,X{0}_im", j + 1);
    }
    out.push('\n');
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            let v = m[(i, j)];
            let _ = write!(out, "{},{}", v.re, v.im);
        }
        out.push('\n');
    }
    out
}

/// Writes text to a file, mapping failures to data errors.
pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)
        .map_err(|e| CliError::Data(format!("failed to write {}: {e}", path.display())))
}
