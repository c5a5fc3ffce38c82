//! Dataset CSV: header `x1..x{dx},a,y1..y{d}`, 17 significant digits.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::dgp::Dataset;
use crate::error::{Error, Result};

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_dataset<W: Write>(dataset: &Dataset, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let mut header: Vec<String> = (1..=dataset.dim_x()).map(|j| format!("x{j}")).collect();
    header.push("a".into());
    header.extend((1..=dataset.dim_y()).map(|j| format!("y{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..dataset.n() {
        let mut row: Vec<String> = dataset.x.row(i).iter().map(|v| fmt(*v)).collect();
        row.push(if dataset.a[i] { "1" } else { "0" }.into());
        row.extend(dataset.y.row(i).iter().map(|v| fmt(*v)));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset_file(dataset: &Dataset, path: &Path) -> Result<()> {
    write_dataset(dataset, std::io::BufWriter::new(std::fs::File::create(path)?))
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { row: 0, message: format!("{other:?}") },
    }
}

/// Read a dataset; `row` in parse errors is the 1-based line number in the file.
pub fn read_dataset<R: Read>(input: R) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input);
    let header = r.headers().map_err(|e| Error::Parse { row: 1, message: e.to_string() })?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let a_col = names
        .iter()
        .position(|h| *h == "a")
        .ok_or_else(|| Error::Parse { row: 1, message: "missing `a` column".into() })?;
    let dx = a_col;
    let dy = names.len() - a_col - 1;
    let expected: Vec<String> = (1..=dx)
        .map(|j| format!("x{j}"))
        .chain(std::iter::once("a".to_string()))
        .chain((1..=dy).map(|j| format!("y{j}")))
        .collect();
    if dx == 0 || dy == 0 || names != expected {
        return Err(Error::Parse { row: 1, message: format!("header must be {}", expected.join(",")) });
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut a = Vec::new();
    for (idx, record) in r.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| Error::Parse { row: line, message: e.to_string() })?;
        if record.len() != names.len() {
            return Err(Error::Parse {
                row: line,
                message: format!("expected {} fields, found {}", names.len(), record.len()),
            });
        }
        for (col, field) in record.iter().enumerate() {
            let field = field.trim();
            if col == a_col {
                a.push(match field {
                    "1" => true,
                    "0" => false,
                    other => {
                        return Err(Error::Parse { row: line, message: format!("treatment must be 0 or 1, got {other:?}") })
                    }
                });
                continue;
            }
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Parse { row: line, message: format!("column {}: not a number: {field:?}", names[col]) })?;
            if !v.is_finite() {
                return Err(Error::Parse { row: line, message: format!("column {}: non-finite value", names[col]) });
            }
            if col < a_col {
                xs.push(v);
            } else {
                ys.push(v);
            }
        }
    }
    let n = a.len();
    Dataset::new(DMatrix::from_row_slice(n, dx, &xs), a, DMatrix::from_row_slice(n, dy, &ys))
}

pub fn read_dataset_file(path: &Path) -> Result<Dataset> {
    read_dataset(std::io::BufReader::new(std::fs::File::open(path)?))
}
