//! CSV and config-file plumbing.
//!
//! Matrices are plain comma-separated numbers with an optional header row.
//! Parse errors carry zero-based data coordinates (the header is not counted).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Result, SicError};
use crate::fit::PathPoint;
use crate::model::CountDataset;

/// A numeric table read from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub values: DMatrix<f64>,
}

pub fn read_table(path: &Path, header: bool) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let names = if header {
        Some(reader.headers()?.iter().map(str::to_string).collect::<Vec<_>>())
    } else {
        None
    };
    let mut width = names.as_ref().map(Vec::len);
    let mut data = Vec::new();
    let mut rows = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { len, expected_len, .. } => SicError::Parse {
                row,
                col: (*len).min(*expected_len) as usize,
                msg: format!("ragged row: {len} fields, expected {expected_len}"),
            },
            _ => SicError::Csv(e),
        })?;
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(SicError::Parse {
                row,
                col: record.len().min(expected),
                msg: format!("ragged row: {} fields, expected {expected}", record.len()),
            });
        }
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| SicError::Parse {
                row,
                col,
                msg: format!("'{cell}' is not a number"),
            })?;
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(SicError::Parse {
            row: 0,
            col: 0,
            msg: format!("{} has no data rows", path.display()),
        });
    }
    let cols = width.unwrap_or(0);
    Ok(Table {
        header: names,
        values: DMatrix::from_row_slice(rows, cols, &data),
    })
}

/// Writes `m` row by row; numbers use the shortest representation that reads
/// back to the same `f64`.
pub fn write_table(path: &Path, m: &DMatrix<f64>, header: Option<&[String]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if let Some(h) = header {
        if h.len() != m.ncols() {
            return Err(SicError::Dimension(format!("{} header names for {} columns", h.len(), m.ncols())));
        }
        w.write_record(h)?;
    }
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Column names `prefix1 .. prefixK`.
pub fn default_names(prefix: &str, k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("{prefix}{i}")).collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadOptions {
    /// All files start with a header row.
    pub header: bool,
    /// Zero-based column of the covariate file holding a natural-scale sampling
    /// effort. It is removed from the covariates and its logarithm becomes the
    /// offset of every count column.
    pub offset_log_col: Option<usize>,
}

/// A dataset plus the names found in the file headers.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub data: CountDataset,
    pub species: Vec<String>,
    pub covariates: Vec<String>,
}

fn is_intercept(x: &DMatrix<f64>) -> bool {
    x.ncols() > 0 && x.column(0).iter().all(|&v| v == 1.0)
}

/// Covariates (intercept first) and offsets, without counts.
#[derive(Debug, Clone)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub o: Option<DMatrix<f64>>,
    pub covariates: Vec<String>,
}

/// Reads covariates for `n` rows and `p` count columns. Without a covariate file
/// the design is the intercept alone. A column of ones is put in front unless the
/// first column already is one.
pub fn load_design(x_path: Option<&Path>, o_path: Option<&Path>, n: usize, p: usize, opts: &LoadOptions) -> Result<Design> {
    let (mut x, mut covariates) = match x_path {
        Some(path) => {
            let t = read_table(path, opts.header)?;
            if t.values.nrows() != n {
                return Err(SicError::Dimension(format!(
                    "{} has {} rows, expected {n}",
                    path.display(),
                    t.values.nrows()
                )));
            }
            let names = t.header.unwrap_or_else(|| default_names("x", t.values.ncols()));
            (t.values, names)
        }
        None => (DMatrix::zeros(n, 0), Vec::new()),
    };

    let mut o = match o_path {
        Some(path) => Some(read_table(path, opts.header)?.values),
        None => None,
    };
    if let Some(col) = opts.offset_log_col {
        if o.is_some() {
            return Err(SicError::Usage("give either an offset file or an offset column, not both".into()));
        }
        if col >= x.ncols() {
            return Err(SicError::Usage(format!("offset column {col} is out of range ({} covariates)", x.ncols())));
        }
        let mut logged = DMatrix::zeros(n, p);
        for i in 0..n {
            let v = x[(i, col)];
            if !(v > 0.0) || !v.is_finite() {
                return Err(SicError::Parse {
                    row: i,
                    col,
                    msg: format!("offset effort must be positive, got {v}"),
                });
            }
            logged.row_mut(i).fill(v.ln());
        }
        x = x.remove_column(col);
        covariates.remove(col);
        o = Some(logged);
    }
    if let Some(o) = &o {
        if o.shape() != (n, p) {
            return Err(SicError::Dimension(format!("offsets are {:?}, expected ({n}, {p})", o.shape())));
        }
    }

    if !is_intercept(&x) {
        x = x.insert_column(0, 1.0);
        covariates.insert(0, "intercept".into());
    }
    Ok(Design { x, o, covariates })
}

/// Reads counts, optional covariates and optional offsets.
pub fn load_dataset(y_path: &Path, x_path: Option<&Path>, o_path: Option<&Path>, opts: &LoadOptions) -> Result<LoadedDataset> {
    let y = read_table(y_path, opts.header)?;
    let (n, p) = y.values.shape();
    let species = y.header.clone().unwrap_or_else(|| default_names("y", p));
    let design = load_design(x_path, o_path, n, p, opts)?;
    let data = CountDataset::new(y.values, design.x, design.o)?;
    Ok(LoadedDataset {
        data,
        species,
        covariates: design.covariates,
    })
}

/// Long-format path: one row per `(step, coefficient)`.
pub fn write_path(path: &Path, points: &[PathPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "eps", "coef_row", "coef_col", "value"])?;
    for pt in points {
        for j in 0..pt.b.ncols() {
            for k in 0..pt.b.nrows() {
                w.write_record([
                    pt.step.to_string(),
                    pt.eps.to_string(),
                    k.to_string(),
                    j.to_string(),
                    pt.b[(k, j)].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Flat `key = value` settings. Blank lines and lines starting with `#` are
/// skipped; dashes and underscores in keys are interchangeable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                SicError::Usage(format!("config line {}: expected key=value, got '{line}'", line_no + 1))
            })?;
            let key = Self::normalize(key);
            if key.is_empty() {
                return Err(SicError::Usage(format!("config line {}: empty key", line_no + 1)));
            }
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(SicError::Usage(format!("config key '{key}' given twice")));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    fn normalize(key: &str) -> String {
        key.trim().replace('-', "_")
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(&Self::normalize(key)).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(Self::normalize(key), value.to_string());
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Parses `key` when present.
    pub fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| SicError::Usage(format!("config key '{key}': cannot parse '{v}'"))),
        }
    }

    /// Sorted `key = value` lines.
    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
