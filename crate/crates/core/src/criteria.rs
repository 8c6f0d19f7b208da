//! Risk estimates as functions of `lambda`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{self, dtheta_mean, solve_theta_with, SolveResult, SolverOptions};
use crate::linalg;
use crate::model::{Loss, Model};

/// Which risk estimate to compute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Criterion {
    /// Training error `n^-1 sum psi(Z_i, theta_hat)`.
    Te,
    /// Leave-one-out cross-validation by refitting.
    CvExact,
    /// Leave-one-out cross-validation from the one-step influence update.
    CvFast,
    /// Training error minus `n^-1 Tr(J^-1 C)`.
    TeTraceCorrected,
    /// Fit on a seeded random part, evaluate on the other `split` fraction.
    Holdout { split: f64, seed: u64 },
    Aic,
    Bic,
    Tic,
}

impl Criterion {
    pub fn tag(&self) -> &'static str {
        match self {
            Criterion::Te => "TE",
            Criterion::CvExact => "CV_EXACT",
            Criterion::CvFast => "CV_FAST",
            Criterion::TeTraceCorrected => "TE_TRACE_CORRECTED",
            Criterion::Holdout { .. } => "HOLDOUT",
            Criterion::Aic => "AIC",
            Criterion::Bic => "BIC",
            Criterion::Tic => "TIC",
        }
    }

    /// Parses the tags returned by [`Criterion::tag`], case-insensitively;
    /// holdout gets a 50/50 split with seed 0.
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "TE" => Criterion::Te,
            "CV_EXACT" | "CV" | "LOOCV" => Criterion::CvExact,
            "CV_FAST" => Criterion::CvFast,
            "TE_TRACE_CORRECTED" => Criterion::TeTraceCorrected,
            "HOLDOUT" => Criterion::Holdout { split: 0.5, seed: 0 },
            "AIC" => Criterion::Aic,
            "BIC" => Criterion::Bic,
            "TIC" => Criterion::Tic,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionValue {
    pub value: f64,
    pub method: Criterion,
    pub lambda: Vec<f64>,
    pub diagnostics: BTreeMap<String, f64>,
}

impl CriterionValue {
    fn new(value: f64, method: Criterion, lambda: &[f64]) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::NonFinite { what: "criterion" });
        }
        Ok(CriterionValue { value, method, lambda: lambda.to_vec(), diagnostics: BTreeMap::new() })
    }

    fn with(mut self, key: &str, v: f64) -> Self {
        self.diagnostics.insert(key.to_string(), v);
        self
    }

    pub fn trace_correction(&self) -> Option<f64> {
        self.diagnostics.get("trace_correction").copied()
    }
}

/// A criterion value together with the full-data fit it was computed at.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: CriterionValue,
    pub fit: SolveResult,
}

/// Solves at `lambda` from `warm` (falling back to the model's initial
/// value if that fails), or from the initial value directly.
pub fn fit_at<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    lambda: &[f64],
    warm: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<SolveResult> {
    let init = model.initial_theta(data);
    if let Some(w) = warm {
        if let Ok(fit) = solve_theta_with(model, data, lambda, w, opts) {
            return Ok(fit);
        }
    }
    solve_theta_with(model, data, lambda, &init, opts)
}

/// Training error and the moment matrices `C = n^-1 sum phi grad_psi^T` and
/// `K = n^-1 sum phi phi^T` at a fit.
pub struct Moments {
    pub te: f64,
    pub c: DMatrix<f64>,
    pub k: DMatrix<f64>,
}

pub fn moments<M: Model + ?Sized, L: Loss + ?Sized>(model: &M, loss: &L, data: &Dataset, fit: &SolveResult) -> Moments {
    let p = model.dims().p;
    let (theta, lambda) = (&fit.theta_hat, &fit.lambda);
    let v = linalg::row_mean(data, None, 1 + 2 * p * p, 2 * p, |z, acc, s| {
        let (phi, g) = s.split_at_mut(p);
        model.phi(z, theta, lambda, phi);
        loss.grad_psi(z, theta, g);
        acc[0] += loss.psi(z, theta);
        for b in 0..p {
            for a in 0..p {
                acc[1 + a + b * p] += phi[a] * g[b];
                acc[1 + p * p + a + b * p] += phi[a] * phi[b];
            }
        }
    });
    Moments {
        te: v[0],
        c: DMatrix::from_column_slice(p, p, &v[1..1 + p * p]),
        k: DMatrix::from_column_slice(p, p, &v[1 + p * p..]),
    }
}

fn mean_psi<L: Loss + ?Sized>(loss: &L, data: &Dataset, theta: &[f64]) -> f64 {
    linalg::row_mean(data, None, 1, 0, |z, acc, _| acc[0] += loss.psi(z, theta))[0]
}

/// Evaluates `criterion` at `lambda`, reusing `warm` as the starting point
/// of the full-data solve.
pub fn evaluate<M: Model + ?Sized, L: Loss + ?Sized>(
    model: &M,
    loss: &L,
    data: &Dataset,
    lambda: &[f64],
    criterion: Criterion,
    warm: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<Evaluation> {
    if let Criterion::Holdout { split, seed } = criterion {
        let fit = fit_at(model, data, lambda, warm, opts)?;
        let value = holdout_value(model, loss, data, lambda, split, seed, opts)?;
        return Ok(Evaluation { value, fit });
    }
    let fit = fit_at(model, data, lambda, warm, opts)?;
    let value = value_at_fit(model, loss, data, &fit, criterion)?;
    Ok(Evaluation { value, fit })
}

/// Criterion value given the full-data fit at `fit.lambda`.
pub fn value_at_fit<M: Model + ?Sized, L: Loss + ?Sized>(
    model: &M,
    loss: &L,
    data: &Dataset,
    fit: &SolveResult,
    criterion: Criterion,
) -> Result<CriterionValue> {
    let n = data.n() as f64;
    let p = model.dims().p as f64;
    let lambda = &fit.lambda;
    match criterion {
        Criterion::Te => CriterionValue::new(mean_psi(loss, data, &fit.theta_hat), criterion, lambda),
        Criterion::CvExact => loocv_exact_at(model, loss, data, fit),
        Criterion::CvFast => loocv_fast_at(model, loss, data, fit),
        Criterion::TeTraceCorrected => {
            let m = moments(model, loss, data, fit);
            let tc = trace_term(&fit.j_hat, &m.c)? / n;
            Ok(CriterionValue::new(m.te - tc, criterion, lambda)?.with("trace_correction", tc))
        }
        Criterion::Aic => CriterionValue::new(mean_psi(loss, data, &fit.theta_hat) + p / n, criterion, lambda),
        Criterion::Bic => {
            CriterionValue::new(mean_psi(loss, data, &fit.theta_hat) + p * n.ln() / n, criterion, lambda)
        }
        Criterion::Tic => {
            let m = moments(model, loss, data, fit);
            let tc = trace_term(&fit.j_hat, &m.k)? / n;
            Ok(CriterionValue::new(m.te + tc, criterion, lambda)?.with("trace_correction", tc))
        }
        Criterion::Holdout { .. } => Err(Error::InvalidInput("holdout needs the raw data split".into())),
    }
}

/// `Tr(J^-1 M)`.
fn trace_term(j: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<f64> {
    Ok(linalg::checked_solve(j, m)?.trace())
}

fn loocv_exact_at<M: Model + ?Sized, L: Loss + ?Sized>(
    model: &M,
    loss: &L,
    data: &Dataset,
    fit: &SolveResult,
) -> Result<CriterionValue> {
    let n = data.n();
    if n < 3 {
        return Err(Error::InvalidInput("leave-one-out needs at least 3 rows".into()));
    }
    let lambda = &fit.lambda;
    let chord = dtheta_mean(model, data, &fit.theta_hat, lambda, None).lu();
    let cold = model.initial_theta(data);
    let opts = SolverOptions::default();
    let per_row: Vec<Option<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let root = estimator::newton(model, data, lambda, &fit.theta_hat, Some(i), &opts, Some(&chord))
                .or_else(|_| estimator::newton(model, data, lambda, &cold, Some(i), &opts, None))
                .ok()?;
            let v = loss.psi(data.row(i), &root.theta);
            v.is_finite().then_some(v)
        })
        .collect();
    let failed: Vec<usize> = (0..n).filter(|&i| per_row[i].is_none()).collect();
    if failed.len() * 100 > n {
        return Err(Error::RefitFailure { failed, n });
    }
    let ok = n - failed.len();
    let value = per_row.iter().flatten().sum::<f64>() / ok as f64;
    Ok(CriterionValue::new(value, Criterion::CvExact, lambda)?.with("refit_failures", failed.len() as f64))
}

fn loocv_fast_at<M: Model + ?Sized, L: Loss + ?Sized>(
    model: &M,
    loss: &L,
    data: &Dataset,
    fit: &SolveResult,
) -> Result<CriterionValue> {
    let p = model.dims().p;
    let n = data.n() as f64;
    let jinv = linalg::checked_inverse(&fit.j_hat)?;
    let (theta, lambda) = (&fit.theta_hat, &fit.lambda);
    // theta_(-i) ~ theta_hat - n^-1 J^-1 phi_i
    let v = linalg::row_mean(data, None, 1, 2 * p, |z, acc, s| {
        let (phi, t) = s.split_at_mut(p);
        model.phi(z, theta, lambda, phi);
        for a in 0..p {
            t[a] = theta[a] - (0..p).map(|b| jinv[(a, b)] * phi[b]).sum::<f64>() / n;
        }
        acc[0] += loss.psi(z, t);
    });
    let m = moments(model, loss, data, fit);
    let tc = (&jinv * &m.c).trace() / n;
    Ok(CriterionValue::new(v[0], Criterion::CvFast, lambda)?.with("trace_correction", tc))
}

fn holdout_value<M: Model + ?Sized, L: Loss + ?Sized>(
    model: &M,
    loss: &L,
    data: &Dataset,
    lambda: &[f64],
    split: f64,
    seed: u64,
    opts: &SolverOptions,
) -> Result<CriterionValue> {
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::InvalidInput(format!("holdout split {split} outside (0, 1)")));
    }
    let (tune_rows, fit_rows) = holdout_partition(data.n(), split, seed);
    let p = model.dims().p;
    if tune_rows.len() < p + 1 || fit_rows.len() < p + 1 {
        return Err(Error::InvalidInput(format!("holdout parts need at least {} rows each", p + 1)));
    }
    let fit_part = data.select_rows(&fit_rows)?;
    let tune_part = data.select_rows(&tune_rows)?;
    let fit = fit_at(model, &fit_part, lambda, None, opts)?;
    let value = mean_psi(loss, &tune_part, &fit.theta_hat);
    Ok(CriterionValue::new(value, Criterion::Holdout { split, seed }, lambda)?
        .with("tuning_rows", tune_rows.len() as f64))
}

/// Seeded Fisher-Yates shuffle of `0..n`; the first `floor(split * n)`
/// indices evaluate the loss, the rest fit the model.
pub fn holdout_partition(n: usize, split: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut SplitMix64::seed_from_u64(seed));
    let cut = (split * n as f64).floor() as usize;
    let rest = idx.split_off(cut);
    (idx, rest)
}

fn fit_default<M: Model + ?Sized>(model: &M, data: &Dataset, lambda: &[f64]) -> Result<SolveResult> {
    fit_at(model, data, lambda, None, &SolverOptions::default())
}

/// `TE(lambda) = n^-1 sum_i psi(Z_i, theta_hat(lambda))`.
pub fn training_error<M: Model + ?Sized, L: Loss + ?Sized>(
    model: &M,
    loss: &L,
    data: &Dataset,
    lambda: &[f64],
) -> Result<CriterionValue> {
    value_at_fit(model, loss, data, &fit_default(model, data, lambda)?, Criterion::Te)
}

/// Leave-one-out cross-validation with `n` refits warm-started at
/// `theta_hat(lambda)`.
///
/// A failed refit is retried once from the model's initial value. Up to 1%
/// of rows may fail, in which case the average runs over the remaining rows
/// and `diagnostics["refit_failures"]` counts them.
pub fn loocv_exact<M: Model + ?Sized, L: Loss + ?Sized>(
    model: &M,
    loss: &L,
    data: &Dataset,
    lambda: &[f64],
) -> Result<CriterionValue> {
    loocv_exact_at(model, loss, data, &fit_default(model, data, lambda)?)
}

/// Leave-one-out cross-validation without refitting: each
/// `theta_hat_(-i)` is replaced by `theta_hat - n^-1 J^-1 phi(Z_i, theta_hat)`.
pub fn loocv_fast<M: Model + ?Sized, L: Loss + ?Sized>(
    model: &M,
    loss: &L,
    data: &Dataset,
    lambda: &[f64],
) -> Result<CriterionValue> {
    loocv_fast_at(model, loss, data, &fit_default(model, data, lambda)?)
}

/// `TE(lambda) - n^-1 Tr(J^-1 C)`, with the correction in
/// `diagnostics["trace_correction"]`.
pub fn te_trace_corrected<M: Model + ?Sized, L: Loss + ?Sized>(
    model: &M,
    loss: &L,
    data: &Dataset,
    lambda: &[f64],
) -> Result<CriterionValue> {
    value_at_fit(model, loss, data, &fit_default(model, data, lambda)?, Criterion::TeTraceCorrected)
}

pub fn holdout_error<M: Model + ?Sized, L: Loss + ?Sized>(
    model: &M,
    loss: &L,
    data: &Dataset,
    lambda: &[f64],
    split: f64,
    seed: u64,
) -> Result<CriterionValue> {
    holdout_value(model, loss, data, lambda, split, seed, &SolverOptions::default())
}

/// Information criteria for a likelihood model; `neg_log_lik` must be
/// `-log f`, so that its training error is `-n^-1 log L`.
pub fn info_criterion<M: Model + ?Sized, L: Loss + ?Sized>(
    model: &M,
    neg_log_lik: &L,
    data: &Dataset,
    lambda: &[f64],
    kind: Criterion,
) -> Result<CriterionValue> {
    if !matches!(kind, Criterion::Aic | Criterion::Bic | Criterion::Tic) {
        return Err(Error::InvalidInput(format!("{} is not an information criterion", kind.tag())));
    }
    value_at_fit(model, neg_log_lik, data, &fit_default(model, data, lambda)?, kind)
}

#[cfg(test)]
mod tests;
