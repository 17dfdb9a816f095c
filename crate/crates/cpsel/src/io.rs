//! CSV ingestion and emission for matrices.
//!
//! All matrix files are headerless numeric CSV. Floats are written with the
//! shortest decimal representation that parses back to the identical bits,
//! so a write/read round trip is lossless.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::SequenceMatrix;

/// Reads a headerless numeric CSV into a dense matrix. Every row must have
/// the same number of fields; errors carry 1-based row/column locations.
pub fn read_matrix<R: Read>(input: R) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(record.len());
        for (col_idx, field) in record.iter().enumerate() {
            let value: f64 = field.parse().map_err(|_| {
                Error::Parse(format!(
                    "row {}, column {}: cannot parse {field:?} as a number",
                    row_idx + 1,
                    col_idx + 1
                ))
            })?;
            row.push(value);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse(format!(
                    "row {} has {} fields, expected {}",
                    row_idx + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("input contains no data rows".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| {
        rows[i][j]
    }))
}

pub fn read_matrix_file<P: AsRef<Path>>(path: P) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))?;
    read_matrix(BufReader::new(file)).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Reads a data file as an `N x T` sequence (dimensions in rows, time in
/// columns).
pub fn read_sequence_file<P: AsRef<Path>>(path: P) -> Result<SequenceMatrix> {
    SequenceMatrix::new(read_matrix_file(path)?)
}

/// Writes a matrix as headerless CSV, one line per row.
pub fn write_matrix<W: Write>(out: W, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| format!("{v}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix_file<P: AsRef<Path>>(path: P, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path)
        .map_err(|e| Error::InvalidInput(format!("cannot create {}: {e}", path.display())))?;
    write_matrix(BufWriter::new(file), m)
}
