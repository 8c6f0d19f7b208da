//! Row-major datasets of i.i.d. observations.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optional tagging of one column as the response and others as covariates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnRoles {
    pub response: usize,
    pub covariates: Vec<usize>,
}

/// `n` observations `Z_i` in `R^d`, stored row-major.
///
/// Row order carries no meaning; every estimator in this crate is invariant
/// to permutations of the rows up to floating point summation error.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    n: usize,
    d: usize,
    names: Vec<String>,
    roles: Option<ColumnRoles>,
}

impl Dataset {
    /// Builds a dataset from a flat row-major buffer.
    pub fn from_flat(values: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidInput("rows must have at least one column".into()));
        }
        if values.len() % d != 0 {
            return Err(Error::InvalidInput(format!(
                "buffer of length {} is not a multiple of the row width {d}",
                values.len()
            )));
        }
        let n = values.len() / d;
        if n < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 rows, got {n}")));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite entry in row {} column {}",
                pos / d,
                pos % d
            )));
        }
        let names = (0..d).map(|j| format!("z{j}")).collect();
        Ok(Dataset { values, n, d, names, roles: None })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::InvalidInput(format!(
                    "row {i} has {} columns, expected {d}",
                    r.len()
                )));
            }
            values.extend_from_slice(r);
        }
        Self::from_flat(values, d)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.d {
            return Err(Error::InvalidInput(format!(
                "{} column names for {} columns",
                names.len(),
                self.d
            )));
        }
        self.names = names;
        Ok(self)
    }

    pub fn with_roles(mut self, roles: ColumnRoles) -> Result<Self> {
        let bad = std::iter::once(roles.response)
            .chain(roles.covariates.iter().copied())
            .find(|&c| c >= self.d);
        if let Some(c) = bad {
            return Err(Error::InvalidInput(format!("column {c} out of range (d = {})", self.d)));
        }
        self.roles = Some(roles);
        Ok(self)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.d)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn roles(&self) -> Option<&ColumnRoles> {
        self.roles.as_ref()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|c| c == name)
    }

    /// New dataset made of the given rows, in the given order (repeats allowed).
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            if i >= self.n {
                return Err(Error::InvalidInput(format!("row {i} out of range")));
            }
            values.extend_from_slice(self.row(i));
        }
        let mut out = Self::from_flat(values, self.d)?;
        out.names = self.names.clone();
        out.roles = self.roles.clone();
        Ok(out)
    }

    /// Standardizes the given columns to zero mean and unit (population) variance.
    pub fn standardize_columns(&mut self, cols: &[usize]) {
        let n = self.n as f64;
        for &j in cols {
            let mean = self.rows().map(|r| r[j]).sum::<f64>() / n;
            let var = self.rows().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd == 0.0 {
                continue;
            }
            for i in 0..self.n {
                let v = &mut self.values[i * self.d + j];
                *v = (*v - mean) / sd;
            }
        }
    }

    /// Reads a comma separated file with a header row.
    ///
    /// Non-numeric cells are reported together with the 1-based line number
    /// of the file.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        Self::from_csv_reader_with(reader, |_, _, cell| cell.trim().parse::<f64>().ok())
    }

    /// Like [`Dataset::from_csv_reader`] with a custom cell parser receiving
    /// `(column name, column index, raw cell)`.
    pub fn from_csv_reader_with<R, F>(reader: R, parse: F) -> Result<Self>
    where
        R: std::io::Read,
        F: Fn(&str, usize, &str) -> Option<f64>,
    {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| csv_error(&e))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let d = headers.len();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(&e))?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            if rec.len() != d {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {d} fields, found {}", rec.len()),
                });
            }
            for (j, cell) in rec.iter().enumerate() {
                match parse(&headers[j], j, cell) {
                    Some(v) if v.is_finite() => values.push(v),
                    _ => {
                        return Err(Error::Parse {
                            line,
                            message: format!("column '{}': cannot parse '{}'", headers[j], cell),
                        })
                    }
                }
            }
        }
        Self::from_flat(values, d)?.with_names(headers)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref()).map_err(|e| Error::Io(e.to_string()))?;
        w.write_record(&self.names).map_err(|e| Error::Io(e.to_string()))?;
        for r in self.rows() {
            w.write_record(r.iter().map(|v| format!("{v:e}")))
                .map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_error(e: &csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse { line, message: e.to_string() }
}
