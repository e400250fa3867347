use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CensoredEntry, Dataset};

/// Version tag written into every JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;

/// A censored covariate stored as a value column and a 0/1 flag column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CensorColumns {
    pub value: String,
    pub flag: String,
}

/// How the columns of a CSV file map onto the dataset. Columns that are
/// neither covariates, censoring flags, nor ignored become features.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CsvLayout {
    pub covariates: Vec<String>,
    pub censor: Vec<CensorColumns>,
    pub ignore: Vec<String>,
}

/// Header and numeric body of a CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: DMatrix<f64>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        self.column_index(name).map(|c| self.rows.column(c).iter().copied().collect())
    }
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse { line: line as usize, message: message.into() }
}

/// Read a rectangular numeric CSV with a header row.
pub fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(parse_err(1, "missing header row"));
    }
    let mut seen = HashSet::new();
    for h in &header {
        if h.is_empty() {
            return Err(parse_err(1, "empty column name"));
        }
        if !seen.insert(h.as_str()) {
            return Err(parse_err(1, format!("duplicate column '{h}'")));
        }
    }
    let mut values = Vec::new();
    let mut nrows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(nrows as u64 + 2);
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != header.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        for (cell, name) in rec.iter().zip(&header) {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, format!("column '{name}': '{cell}' is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("column '{name}': non-finite value '{cell}'")));
            }
            values.push(v);
        }
        nrows += 1;
    }
    Ok(Table { rows: DMatrix::from_row_slice(nrows, header.len(), &values), header })
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn load_table(path: &Path) -> Result<Table> {
    read_table(open(path)?)
}

/// Build a dataset from a parsed table.
pub fn table_to_dataset(table: &Table, layout: &CsvLayout) -> Result<Dataset> {
    let need = |name: &str| {
        table.column_index(name).ok_or_else(|| Error::invalid(format!("column '{name}' not found in the CSV header")))
    };
    let mut covariates = layout.covariates.clone();
    for c in &layout.censor {
        if !covariates.contains(&c.value) {
            covariates.push(c.value.clone());
        }
    }
    let cov_idx: Vec<usize> = covariates.iter().map(|c| need(c)).collect::<Result<_>>()?;
    let flag_idx: Vec<usize> = layout.censor.iter().map(|c| need(&c.flag)).collect::<Result<_>>()?;
    let ignore_idx: Vec<usize> = layout.ignore.iter().map(|c| need(c)).collect::<Result<_>>()?;
    if flag_idx.iter().any(|f| cov_idx.contains(f)) {
        return Err(Error::invalid("a censoring flag column cannot also be a covariate"));
    }
    let feature_idx: Vec<usize> =
        (0..table.header.len()).filter(|c| !cov_idx.contains(c) && !flag_idx.contains(c) && !ignore_idx.contains(c)).collect();
    if feature_idx.is_empty() {
        return Err(Error::invalid("no feature columns left after removing covariates and flags"));
    }
    let n = table.rows.nrows();
    let y = DMatrix::from_fn(n, feature_idx.len(), |i, j| table.rows[(i, feature_idx[j])]);
    let x = DMatrix::from_fn(n, cov_idx.len(), |i, c| table.rows[(i, cov_idx[c])]);
    let mut censored = Vec::new();
    for (c, cols) in layout.censor.iter().enumerate() {
        let col = covariates.iter().position(|v| *v == cols.value).expect("added above");
        for i in 0..n {
            let flag = table.rows[(i, flag_idx[c])];
            if flag == 1.0 {
                censored.push(CensoredEntry { row: i, col, lower: x[(i, col)], upper: f64::INFINITY });
            } else if flag != 0.0 {
                // header is line 1
                return Err(parse_err(i as u64 + 2, format!("censoring flag '{}' must be 0 or 1, got {flag}", cols.flag)));
            }
        }
    }
    let names = |idx: &[usize]| idx.iter().map(|&k| table.header[k].clone()).collect::<Vec<_>>();
    Dataset::new(y, x, censored, names(&feature_idx), covariates)
}

/// Load a dataset: features are standardized, covariates keep their units
/// with the standardizing transform recorded.
pub fn load_csv(path: &Path, layout: &CsvLayout) -> Result<Dataset> {
    table_to_dataset(&load_table(path)?, layout)
}

/// Shortest round-trip decimal form, so files are byte-stable and exact.
fn fmt_cell(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else {
        format!("{v}")
    }
}

pub fn write_table<W: Write>(mut w: W, header: &[String], rows: &DMatrix<f64>) -> Result<()> {
    if header.len() != rows.ncols() {
        return Err(Error::invalid("header length does not match the column count"));
    }
    writeln!(w, "{}", header.join(","))?;
    for i in 0..rows.nrows() {
        let line: Vec<String> = rows.row(i).iter().map(|v| fmt_cell(*v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(path: &Path, header: &[String], rows: &DMatrix<f64>) -> Result<()> {
    write_table(create(path)?, header, rows)
}

/// JSON formatter that writes every float with 17 significant digits and
/// non-finite values as `null`.
struct SigDigits;

impl serde_json::ser::Formatter for SigDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        if v.is_finite() {
            write!(w, "{v:.16e}")
        } else {
            w.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        self.write_f64(w, v as f64)
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigDigits);
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("JSON is UTF-8"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(to_json_string(value)?.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let mut s = String::new();
    open(path)?.read_to_string(&mut s)?;
    Ok(serde_json::from_str(&s)?)
}

/// Row-major nested vectors for JSON output.
pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn rows_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != c) {
        return Err(Error::invalid("ragged matrix"));
    }
    Ok(DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
}
