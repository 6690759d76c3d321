//! Numeric CSV tables with a header row. Numbers are written with 17
//! significant digits so a read-back reproduces them exactly.

use std::path::Path;

use nalgebra::DMatrix;

use crate::Failure;

pub struct Table {
    pub header: Vec<String>,
    pub rows: DMatrix<f64>,
}

pub fn read(path: &Path) -> Result<Table, Failure> {
    let bad = |e: csv::Error| Failure::data(format!("{}: {e}", path.display()));
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(bad)?;
    let header: Vec<String> = rdr.headers().map_err(bad)?.iter().map(str::to_string).collect();
    let mut values = Vec::new();
    let mut n = 0;
    for record in rdr.records() {
        let record = record.map_err(bad)?;
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| {
                Failure::data(format!("{} row {}: cannot parse '{field}'", path.display(), n + 1))
            })?;
            values.push(v);
        }
        n += 1;
    }
    Ok(Table {
        rows: DMatrix::from_row_slice(n, header.len(), &values),
        header,
    })
}

pub fn number(v: f64) -> String {
    format!("{v:.16e}")
}

/// Rows of already formatted fields.
pub fn write_fields(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), Failure> {
    let bad = |e: csv::Error| Failure::data(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(bad)?;
    w.write_record(header).map_err(bad)?;
    for r in rows {
        w.write_record(r).map_err(bad)?;
    }
    w.flush().map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
}

pub fn write(path: &Path, header: &[String], rows: &DMatrix<f64>) -> Result<(), Failure> {
    let fields: Vec<Vec<String>> = (0..rows.nrows()).map(|i| rows.row(i).iter().map(|v| number(*v)).collect()).collect();
    write_fields(path, header, &fields)
}

/// `x1..xp` followed by `extra`.
pub fn coordinate_header(p: usize, extra: &[&str]) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).chain(extra.iter().map(|s| s.to_string())).collect()
}
