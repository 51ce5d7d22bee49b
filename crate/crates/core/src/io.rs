//! File helpers shared by the CLI commands: atomic writes, numeric CSV
//! matrices with a header row, and JSON documents.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp: PathBuf = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Scientific notation with 17 significant digits; parses back to the same bits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn matrix_to_csv(m: &DMatrix<f64>, header: &[String]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    let mut line = String::new();
    for i in 0..m.nrows() {
        line.clear();
        for j in 0..m.ncols() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&fmt_f64(m[(i, j)]));
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>, header: &[String]) -> Result<()> {
    if header.len() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} header names for {} columns",
            header.len(),
            m.ncols()
        )));
    }
    write_atomic(path, matrix_to_csv(m, header).as_bytes())
}

/// Column names `c1..cn`.
pub fn numbered_header(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// A numeric CSV: header names plus rows. Cells that are empty or `NA`
/// (any case) are read as `None`.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

pub fn read_csv_table(path: &Path) -> Result<CsvTable> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let mut row = Vec::with_capacity(record.len());
        for (col, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
                row.push(None);
                continue;
            }
            let x: f64 = cell.parse().map_err(|_| Error::Schema {
                path: path.to_path_buf(),
                message: format!("row {} column {}: `{cell}` is not a number", line + 2, col + 1),
            })?;
            row.push(Some(x));
        }
        rows.push(row);
    }
    Ok(CsvTable { header, rows })
}

/// Reads the named numeric columns of a CSV whose other columns may hold
/// text. Returns one vector per row, in the order of `names`.
pub fn read_csv_table_columns(path: &Path, names: &[&str]) -> Result<Vec<Vec<f64>>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader.headers().map_err(csv_err)?.clone();
    let cols: Vec<usize> = names
        .iter()
        .map(|name| {
            header.iter().position(|h| h.trim() == *name).ok_or_else(|| Error::Schema {
                path: path.to_path_buf(),
                message: format!("missing column `{name}`"),
            })
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let row = cols
            .iter()
            .map(|&c| {
                let cell = record.get(c).unwrap_or("").trim();
                cell.parse::<f64>().map_err(|_| Error::Schema {
                    path: path.to_path_buf(),
                    message: format!("row {} column `{}`: `{cell}` is not a number", line + 2, &header[c]),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Reads a complete numeric matrix; any missing cell is a schema error.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let table = read_csv_table(path)?;
    let ncols = table.header.len();
    let mut values = Vec::with_capacity(table.rows.len() * ncols);
    for (i, row) in table.rows.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            values.push(cell.ok_or_else(|| Error::Schema {
                path: path.to_path_buf(),
                message: format!("row {} column {} is missing", i + 2, j + 1),
            })?);
        }
    }
    Ok(DMatrix::from_row_slice(table.rows.len(), ncols, &values))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}
