//! Minimization of a criterion over a box of tuning parameters.
//!
//! For a scalar `lambda` the criterion is evaluated on a uniform grid, the
//! best grid bracket is refined by golden-section search, and the answer is
//! the smallest value seen (ties go to the smaller `lambda`). For `q > 1` a
//! coordinate pattern search starts from the best point of a product grid.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::criteria::{evaluate, Criterion};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{theta_prime, SolveResult, SolverOptions};
use crate::model::{BoxDomain, Loss, Model};
use crate::report::matrix_rows;

const GOLDEN: f64 = 0.618_033_988_749_894_9;
const REFINE_WIDTH: f64 = 1e-6;
const BOUNDARY_CLOSE: f64 = 1e-9;
const SLOPE_STEP: f64 = 1e-5;
const MAX_PRODUCT_GRID: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BoundaryStatus {
    Interior,
    LowerBoundary,
    UpperBoundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub lambda: Vec<f64>,
    /// `None` when the criterion could not be evaluated.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub schema_version: u32,
    pub model: String,
    pub loss: String,
    pub n: usize,
    pub theta_hat: Vec<f64>,
    pub lambda_hat: Vec<f64>,
    #[serde(with = "matrix_rows")]
    pub d_hat: DMatrix<f64>,
    pub boundary_status: Vec<BoundaryStatus>,
    pub criterion: Criterion,
    pub criterion_value: f64,
    pub criterion_slope_at_opt: Vec<f64>,
    pub lambda_bounds: BoxDomain,
    pub trace: Vec<TracePoint>,
    /// Free-form remarks, such as how a truncation case was decided.
    #[serde(default)]
    pub notes: Vec<String>,
}

impl FitResult {
    pub fn is_interior(&self) -> bool {
        self.boundary_status.iter().all(|s| *s == BoundaryStatus::Interior)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOptions {
    pub grid_size: usize,
    pub seed: u64,
    pub solver: SolverOptions,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions { grid_size: 21, seed: 0, solver: SolverOptions::default() }
    }
}

impl TuneOptions {
    pub fn grid(grid_size: usize) -> Self {
        TuneOptions { grid_size, ..Self::default() }
    }
}

/// Criterion along `lambda` with warm starts and a record of every
/// evaluation.
struct Objective<'a, M: ?Sized, L: ?Sized> {
    model: &'a M,
    loss: &'a L,
    data: &'a Dataset,
    criterion: Criterion,
    solver: &'a SolverOptions,
    warm: Option<Vec<f64>>,
    trace: Vec<TracePoint>,
    failures: usize,
}

impl<M: Model + ?Sized, L: Loss + ?Sized> Objective<'_, M, L> {
    fn eval_full(&mut self, lambda: &[f64]) -> Result<(f64, SolveResult)> {
        let ev = evaluate(self.model, self.loss, self.data, lambda, self.criterion, self.warm.as_deref(), self.solver)?;
        self.warm = Some(ev.fit.theta_hat.clone());
        Ok((ev.value.value, ev.fit))
    }

    fn eval(&mut self, lambda: &[f64]) -> f64 {
        match self.eval_full(lambda) {
            Ok((v, _)) => {
                self.trace.push(TracePoint { lambda: lambda.to_vec(), value: Some(v) });
                v
            }
            Err(_) => {
                self.failures += 1;
                self.trace.push(TracePoint { lambda: lambda.to_vec(), value: None });
                f64::INFINITY
            }
        }
    }
}

/// `a` is better than `b`: strictly smaller value, or equal value at a
/// lexicographically smaller `lambda`.
fn better(a: (f64, &[f64]), b: (f64, &[f64])) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1.iter().zip(b.1).find(|(x, y)| x != y).is_some_and(|(x, y)| x < y))
}

fn axis_grid(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    (0..m)
        .map(|k| if k + 1 == m { hi } else { lo + (hi - lo) * k as f64 / (m - 1) as f64 })
        .collect()
}

fn golden_section<F: FnMut(f64) -> f64>(mut lo: f64, mut hi: f64, tol: f64, mut f: F) -> (f64, f64) {
    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        // on ties keep the left part, moving towards smaller lambda
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Minimizes `criterion` over `bounds` and assembles the fit at the optimum.
pub fn tune<M: Model + ?Sized, L: Loss + ?Sized>(
    model: &M,
    loss: &L,
    data: &Dataset,
    criterion: Criterion,
    bounds: &BoxDomain,
    opts: &TuneOptions,
) -> Result<FitResult> {
    let q = model.dims().q;
    if bounds.dim() != q {
        return Err(Error::InvalidInput(format!("tuning box has {} axes, model has q = {q}", bounds.dim())));
    }
    if opts.grid_size < 5 {
        return Err(Error::InvalidInput("grid size must be at least 5".into()));
    }
    if let Some(dom) = model.lambda_domain() {
        if !dom.contains(&bounds.lower) || !dom.contains(&bounds.upper) {
            return Err(Error::EvaluationOutsideDomain);
        }
    }
    let criterion = match criterion {
        Criterion::Holdout { split, .. } => Criterion::Holdout { split, seed: opts.seed },
        c => c,
    };
    let mut obj = Objective {
        model,
        loss,
        data,
        criterion,
        solver: &opts.solver,
        warm: None,
        trace: Vec::new(),
        failures: 0,
    };
    let best = if q == 1 { search_scalar(&mut obj, bounds, opts.grid_size)? } else { search_pattern(&mut obj, bounds, opts.grid_size)? };
    let (value, fit) = obj.eval_full(&best)?;
    let d_hat = theta_prime(model, data, &fit)?;

    let mut slope = vec![0.0; q];
    let mut status = vec![BoundaryStatus::Interior; q];
    for j in 0..q {
        let w = bounds.width(j);
        let h = SLOPE_STEP * w;
        let at = |obj: &mut Objective<'_, M, L>, x: f64| {
            let mut l = best.clone();
            l[j] = x;
            obj.eval_full(&l).map(|(v, _)| v)
        };
        let near_lower = best[j] - bounds.lower[j] <= BOUNDARY_CLOSE * w;
        let near_upper = bounds.upper[j] - best[j] <= BOUNDARY_CLOSE * w;
        slope[j] = if near_lower || best[j] - h < bounds.lower[j] {
            (at(&mut obj, best[j] + h)? - value) / h
        } else if near_upper || best[j] + h > bounds.upper[j] {
            (value - at(&mut obj, best[j] - h)?) / h
        } else {
            (at(&mut obj, best[j] + h)? - at(&mut obj, best[j] - h)?) / (2.0 * h)
        };
        if near_lower && slope[j] > 0.0 {
            status[j] = BoundaryStatus::LowerBoundary;
        } else if near_upper && slope[j] < 0.0 {
            status[j] = BoundaryStatus::UpperBoundary;
        }
    }
    Ok(FitResult {
        schema_version: crate::report::SCHEMA_VERSION,
        model: model.name().to_string(),
        loss: loss.name().to_string(),
        n: data.n(),
        theta_hat: fit.theta_hat,
        lambda_hat: best,
        d_hat,
        boundary_status: status,
        criterion,
        criterion_value: value,
        criterion_slope_at_opt: slope,
        lambda_bounds: bounds.clone(),
        trace: obj.trace,
        notes: Vec::new(),
    })
}

fn check_failures<M: ?Sized, L: ?Sized>(obj: &Objective<'_, M, L>, total: usize) -> Result<()> {
    if obj.failures * 5 > total {
        return Err(Error::CriterionFailure { failed: obj.failures, total });
    }
    Ok(())
}

fn search_scalar<M: Model + ?Sized, L: Loss + ?Sized>(
    obj: &mut Objective<'_, M, L>,
    bounds: &BoxDomain,
    grid_size: usize,
) -> Result<Vec<f64>> {
    let (a, b) = (bounds.lower[0], bounds.upper[0]);
    let grid = axis_grid(a, b, grid_size);
    let values: Vec<f64> = grid.iter().map(|&l| obj.eval(&[l])).collect();
    check_failures(obj, grid_size)?;
    let k = (0..grid_size).fold(0, |k, i| if values[i] < values[k] { i } else { k });
    if !values[k].is_finite() {
        return Err(Error::CriterionFailure { failed: obj.failures, total: grid_size });
    }
    let lo = grid[k.saturating_sub(1)];
    let hi = grid[(k + 1).min(grid_size - 1)];
    let (xg, fg) = golden_section(lo, hi, REFINE_WIDTH * (b - a), |x| obj.eval(&[x]));
    let mut best = (values[k], grid[k]);
    for (&v, &l) in values.iter().zip(&grid) {
        if better((v, &[l]), (best.0, &[best.1])) {
            best = (v, l);
        }
    }
    if better((fg, &[xg]), (best.0, &[best.1])) {
        best = (fg, xg);
    }
    Ok(vec![best.1])
}

fn search_pattern<M: Model + ?Sized, L: Loss + ?Sized>(
    obj: &mut Objective<'_, M, L>,
    bounds: &BoxDomain,
    grid_size: usize,
) -> Result<Vec<f64>> {
    let q = bounds.dim();
    let per_axis = {
        let mut m = grid_size;
        while m > 2 && m.pow(q as u32) > MAX_PRODUCT_GRID {
            m -= 1;
        }
        m
    };
    let axes: Vec<Vec<f64>> = (0..q).map(|j| axis_grid(bounds.lower[j], bounds.upper[j], per_axis)).collect();
    let total = per_axis.pow(q as u32);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut idx = vec![0usize; q];
    for _ in 0..total {
        let l: Vec<f64> = (0..q).map(|j| axes[j][idx[j]]).collect();
        let v = obj.eval(&l);
        if best.as_ref().is_none_or(|(bv, bl)| better((v, &l), (*bv, bl))) {
            best = Some((v, l));
        }
        for j in 0..q {
            idx[j] += 1;
            if idx[j] < per_axis {
                break;
            }
            idx[j] = 0;
        }
    }
    check_failures(obj, total)?;
    let (mut fv, mut x) = best.expect("non-empty grid");
    if !fv.is_finite() {
        return Err(Error::CriterionFailure { failed: obj.failures, total });
    }
    let mut step: Vec<f64> = (0..q).map(|j| bounds.width(j) / (per_axis - 1) as f64).collect();
    while (0..q).any(|j| step[j] >= REFINE_WIDTH * bounds.width(j)) {
        let mut improved = false;
        for j in 0..q {
            for dir in [-1.0, 1.0] {
                let mut t = x.clone();
                t[j] = (t[j] + dir * step[j]).clamp(bounds.lower[j], bounds.upper[j]);
                if t[j] == x[j] {
                    continue;
                }
                let v = obj.eval(&t);
                if v < fv {
                    fv = v;
                    x = t;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step.iter_mut().for_each(|s| *s *= 0.5);
        }
    }
    Ok(x)
}

/// Case of the truncated estimator for a scalar `lambda` on `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruncationCase {
    /// Unconstrained minimizer clearly below `a`.
    A,
    /// Unconstrained minimizer clearly above `b`.
    B,
    /// Within `delta` of `a`.
    C,
    /// Within `delta` of `b`.
    D,
    Interior,
}

/// `delta = 2 n^(-1/2) (b - a)`.
pub fn boundary_margin(n: usize, width: f64) -> f64 {
    2.0 * width / (n as f64).sqrt()
}

pub fn classify_truncation(lambda_g: f64, a: f64, b: f64, n: usize) -> TruncationCase {
    let delta = boundary_margin(n, b - a);
    if lambda_g < a - delta {
        TruncationCase::A
    } else if lambda_g > b + delta {
        TruncationCase::B
    } else if (lambda_g - a).abs() <= delta {
        TruncationCase::C
    } else if (lambda_g - b).abs() <= delta {
        TruncationCase::D
    } else {
        TruncationCase::Interior
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedEstimate {
    pub theta_hat: Vec<f64>,
    /// Minimizer over the extended interval (or over `[a, b]` when the model
    /// cannot be evaluated outside it).
    pub lambda_global: f64,
    pub lambda_used: f64,
    pub case: TruncationCase,
    pub extended: bool,
}

/// `theta_hat(clamp(lambda_g, a, b))` with its case label.
pub fn truncate_at<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    lambda_g: f64,
    bounds: &BoxDomain,
    solver: &SolverOptions,
) -> Result<TruncatedEstimate> {
    let (a, b) = (bounds.lower[0], bounds.upper[0]);
    let used = lambda_g.clamp(a, b);
    let fit = crate::criteria::fit_at(model, data, &[used], None, solver)?;
    Ok(TruncatedEstimate {
        theta_hat: fit.theta_hat,
        lambda_global: lambda_g,
        lambda_used: used,
        case: classify_truncation(lambda_g, a, b, data.n()),
        extended: true,
    })
}

/// The truncated estimator for a scalar tuning parameter.
///
/// The unconstrained minimizer is searched on `[a - w/2, b + w/2]` when the
/// model allows evaluation there. Otherwise it is the constrained optimum of
/// `fit`, and a boundary optimum whose criterion slope points outward is
/// labelled as case A or B.
pub fn truncated_estimate<M: Model + ?Sized, L: Loss + ?Sized>(
    model: &M,
    loss: &L,
    data: &Dataset,
    fit: &FitResult,
    opts: &TuneOptions,
) -> Result<TruncatedEstimate> {
    if fit.lambda_hat.len() != 1 {
        return Err(Error::InvalidInput("truncation needs a scalar tuning parameter".into()));
    }
    let bounds = &fit.lambda_bounds;
    let (a, b) = (bounds.lower[0], bounds.upper[0]);
    let w = b - a;
    let wide = BoxDomain::interval(a - w / 2.0, b + w / 2.0)?;
    let allowed = model.lambda_domain().is_none_or(|d| d.contains(&wide.lower) && d.contains(&wide.upper));
    if allowed {
        let grid = TuneOptions { grid_size: 2 * opts.grid_size - 1, ..opts.clone() };
        let g = tune(model, loss, data, fit.criterion, &wide, &grid)?;
        return truncate_at(model, data, g.lambda_hat[0], bounds, &opts.solver);
    }
    let lg = fit.lambda_hat[0];
    let mut est = truncate_at(model, data, lg, bounds, &opts.solver)?;
    est.extended = false;
    est.case = match fit.boundary_status[0] {
        BoundaryStatus::LowerBoundary => TruncationCase::A,
        BoundaryStatus::UpperBoundary => TruncationCase::B,
        BoundaryStatus::Interior => classify_truncation(lg, a, b, data.n()),
    };
    Ok(est)
}

#[cfg(test)]
mod tests;
