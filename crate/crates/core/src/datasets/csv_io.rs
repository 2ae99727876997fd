use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Reads a numeric CSV file with a header row. Every column other than
/// `target` becomes a feature.
pub fn load_csv(path: impl AsRef<Path>, target: &str) -> Result<Dataset> {
    read_csv(File::open(path)?, target)
}

/// Like [`load_csv`] for any reader. Parse errors report the 1-based line
/// number, counting the header as line 1.
pub fn read_csv<R: Read>(reader: R, target: &str) -> Result<Dataset> {
    let table = read_table(reader)?;
    let target_idx = table
        .headers
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| Error::MissingColumn(target.to_string()))?;
    let (names, x) = table.features(Some(target_idx))?;
    let y = table.rows.iter().map(|r| r[target_idx]).collect();
    Dataset::new(x, y)?.with_feature_names(names)
}

/// Reads every column except `exclude` (when present) as an input matrix,
/// returning the column names alongside.
pub fn read_features<R: Read>(reader: R, exclude: Option<&str>) -> Result<(Vec<String>, Matrix)> {
    let table = read_table(reader)?;
    let skip = exclude.and_then(|name| table.headers.iter().position(|h| h == name));
    table.features(skip)
}

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    fn features(&self, skip: Option<usize>) -> Result<(Vec<String>, Matrix)> {
        let keep: Vec<usize> = (0..self.headers.len())
            .filter(|&j| Some(j) != skip)
            .collect();
        let names = keep.iter().map(|&j| self.headers[j].clone()).collect();
        let xs = self
            .rows
            .iter()
            .flat_map(|r| keep.iter().map(move |&j| r[j]))
            .collect();
        Ok((
            names,
            Matrix::from_row_major(self.rows.len(), keep.len(), xs)?,
        ))
    }
}

fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Error::Empty("csv file has no header".into()));
    }
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row: line,
                column: String::new(),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                cell.parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        row: line,
                        column: headers[j].clone(),
                        message: if cell.is_empty() {
                            "missing value".into()
                        } else {
                            format!("'{cell}' is not a finite number")
                        },
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Empty("csv file has no data rows".into()));
    }
    Ok(Table { headers, rows })
}

/// Writes features followed by the target column `target`. Unnamed features
/// are called `x1, x2, …`.
pub fn write_csv<W: Write>(data: &Dataset, target: &str, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = match data.feature_names() {
        Some(names) => names.to_vec(),
        None => (1..=data.dim()).map(|j| format!("x{j}")).collect(),
    };
    header.push(target.to_string());
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for i in 0..data.n() {
        record.clear();
        record.extend(data.point(i).iter().map(|v| v.to_string()));
        record.push(data.y()[i].to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
