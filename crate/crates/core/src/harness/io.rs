//! Dense matrix files.
//!
//! Two formats are understood and told apart by their first bytes:
//!
//! - CSV: a first record `rows,cols`, then one record per row.
//! - Binary: the magic `DIRSMAT\0`, `rows` and `cols` as little-endian `u64`,
//!   then `rows * cols` little-endian `f64` values in row-major order.
//!
//! Vectors are stored as `n x 1` or `1 x n` matrices.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const BINARY_MAGIC: &[u8; 8] = b"DIRSMAT\0";

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let mut bytes = Vec::new();
    File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    if bytes.starts_with(BINARY_MAGIC) {
        parse_binary(&bytes)
    } else {
        parse_csv(&bytes)
    }
}

pub fn read_vector(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let m = read_matrix(path)?;
    if m.rows() != 1 && m.cols() != 1 {
        return Err(Error::Invalid(format!("expected a vector, found a {}x{} matrix", m.rows(), m.cols())));
    }
    Ok(m.data().to_vec())
}

fn parse_binary(bytes: &[u8]) -> Result<DenseMatrix> {
    let header = BINARY_MAGIC.len() + 16;
    if bytes.len() < header {
        return Err(Error::Invalid("binary matrix file is truncated".into()));
    }
    let dim = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("eight bytes"));
    let rows = usize::try_from(dim(8)).map_err(|_| Error::Invalid("row count overflows".into()))?;
    let cols = usize::try_from(dim(16)).map_err(|_| Error::Invalid("column count overflows".into()))?;
    let count = rows.checked_mul(cols).ok_or_else(|| Error::Invalid("matrix size overflows".into()))?;
    let body = &bytes[header..];
    if body.len() != count * 8 {
        return Err(Error::Invalid(format!("expected {} data bytes for {rows}x{cols}, found {}", count * 8, body.len())));
    }
    let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes"))).collect();
    DenseMatrix::new(rows, cols, data)
}

fn parse_csv(bytes: &[u8]) -> Result<DenseMatrix> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(bytes);
    let mut records = reader.records();
    let header = records.next().ok_or_else(|| Error::Invalid("empty matrix file".into()))??;
    let field = |s: &str| -> Result<usize> { s.parse().map_err(|_| Error::Invalid(format!("bad dimension `{s}` in header"))) };
    if header.len() != 2 {
        return Err(Error::Invalid("CSV header must be `rows,cols`".into()));
    }
    let (rows, cols) = (field(&header[0])?, field(&header[1])?);
    let mut data = Vec::with_capacity(rows * cols);
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != cols {
            return Err(Error::Invalid(format!("row {i} has {} entries, expected {cols}", rec.len())));
        }
        for v in rec.iter() {
            data.push(v.parse::<f64>().map_err(|_| Error::Invalid(format!("bad number `{v}` in row {i}")))?);
        }
    }
    if data.len() != rows * cols {
        return Err(Error::Invalid(format!("header says {rows}x{cols} but found {} values", data.len())));
    }
    DenseMatrix::new(rows, cols, data)
}

pub fn write_matrix_csv(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(BufWriter::new(File::create(path)?));
    w.write_record([m.rows().to_string(), m.cols().to_string()])?;
    for i in 0..m.rows() {
        w.write_record(m.row(i).iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix_binary(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    for v in m.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_vector_csv(path: impl AsRef<Path>, v: &[f64]) -> Result<()> {
    write_matrix_csv(path, &DenseMatrix::new(v.len(), 1, v.to_vec())?)
}
