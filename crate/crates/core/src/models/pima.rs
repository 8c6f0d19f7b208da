//! Loader for the Pima Indians diabetes data (768 rows, 8 covariates and a
//! binary outcome), in either the mlbench or the common Kaggle column naming.
//!
//! Zeros in glucose, blood pressure, skin thickness, insulin and BMI are
//! physiologically impossible and are treated as missing, as are `NA` cells.
//! Incomplete rows are dropped, leaving 392 complete cases in the standard
//! file, and the covariates are standardized.

use std::path::Path;

use crate::data::{ColumnRoles, Dataset};
use crate::error::{Error, Result};

use super::design::LinearDesign;
use super::logistic::RidgeLogistic;
use super::losses::Brier;

pub const COVARIATES: [&str; 8] =
    ["pregnant", "glucose", "pressure", "triceps", "insulin", "mass", "pedigree", "age"];

const ALIASES: [&[&str]; 9] = [
    &["pregnant", "pregnancies", "npreg"],
    &["glucose", "glu", "plasma"],
    &["pressure", "bloodpressure", "bp"],
    &["triceps", "skinthickness", "skin"],
    &["insulin", "serum"],
    &["mass", "bmi"],
    &["pedigree", "diabetespedigreefunction", "ped"],
    &["age"],
    &["diabetes", "outcome", "class", "type"],
];

const ZERO_IS_MISSING: [usize; 5] = [1, 2, 3, 4, 5];

fn canonical(header: &str) -> Option<usize> {
    let h: String = header.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_lowercase();
    ALIASES.iter().position(|names| names.contains(&h.as_str()))
}

fn outcome(cell: &str) -> Option<f64> {
    match cell.trim().to_lowercase().as_str() {
        "pos" | "yes" | "1" | "tested_positive" | "positive" => Some(1.0),
        "neg" | "no" | "0" | "tested_negative" | "negative" => Some(0.0),
        _ => None,
    }
}

/// Parses the raw file into complete cases: 8 standardized covariates
/// followed by the 0/1 outcome.
pub fn load_pima<R: std::io::Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    let mut map = [usize::MAX; 9];
    for (j, h) in headers.iter().enumerate() {
        if let Some(c) = canonical(h) {
            map[c] = j;
        }
    }
    if map.contains(&usize::MAX) {
        return Err(Error::InvalidInput(format!(
            "expected the 8 Pima covariates and an outcome column, found headers {headers:?}"
        )));
    }
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let mut row = [0.0; 9];
        let mut complete = true;
        for (c, &j) in map.iter().enumerate() {
            let cell = rec.get(j).unwrap_or("").trim();
            if c == 8 {
                row[c] = outcome(cell)
                    .ok_or_else(|| Error::Parse { line, message: format!("unrecognized outcome '{cell}'") })?;
                continue;
            }
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell == "?" {
                complete = false;
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::Parse { line, message: format!("column '{}': cannot parse '{cell}'", headers[j]) })?;
            if v == 0.0 && ZERO_IS_MISSING.contains(&c) {
                complete = false;
            }
            row[c] = v;
        }
        if complete {
            values.extend_from_slice(&row);
        }
    }
    let names = COVARIATES.iter().map(|s| s.to_string()).chain(["diabetes".to_string()]).collect();
    let mut ds = Dataset::from_flat(values, 9)?
        .with_names(names)?
        .with_roles(ColumnRoles { response: 8, covariates: (0..8).collect() })?;
    ds.standardize_columns(&(0..8).collect::<Vec<_>>());
    Ok(ds)
}

pub fn load_pima_path(path: impl AsRef<Path>) -> Result<Dataset> {
    let f = std::fs::File::open(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    load_pima(f)
}

/// Penalized logistic model with Brier loss wired to a dataset produced by
/// [`load_pima`]: `p = 9` (intercept plus 8 slopes), `q = 1`.
pub fn make_pima_model(data: &Dataset) -> Result<(RidgeLogistic, Brier)> {
    let design = LinearDesign::from_roles(data)?;
    if design.p() != 9 {
        return Err(Error::InvalidInput(format!("expected 8 covariates, found {}", design.p() - 1)));
    }
    Ok((RidgeLogistic::new(design.clone()), Brier::new(design)))
}
