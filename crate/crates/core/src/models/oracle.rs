//! Direct linear-algebra formulas for ridge regression, independent of the
//! Newton path, used to check it.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};

use super::design::LinearDesign;

fn design_matrix(data: &Dataset, dz: &LinearDesign) -> (DMatrix<f64>, DVector<f64>) {
    let (n, p) = (data.n(), dz.p());
    let x = DMatrix::from_fn(n, p, |i, k| dz.x(data.row(i), k));
    let y = DVector::from_fn(n, |i, _| dz.y(data.row(i)));
    (x, y)
}

fn penalty(dz: &LinearDesign) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_fn(dz.p(), |k, _| dz.pen(k)))
}

fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    a.cholesky()
        .map(|c| c.solve(b))
        .ok_or_else(|| Error::RankDeficient("penalized Gram matrix is not positive definite".into()))
}

/// `(n^-1 X~^T X~ + lambda P)^-1 n^-1 X~^T y`.
pub fn ridge_closed_form(data: &Dataset, lambda: f64, dz: &LinearDesign) -> Result<Vec<f64>> {
    let (x, y) = design_matrix(data, dz);
    let n = data.n() as f64;
    let a = x.transpose() * &x / n + penalty(dz) * lambda;
    Ok(solve_spd(a, &(x.transpose() * y / n))?.iter().copied().collect())
}

/// `d theta_hat / d lambda = -(n^-1 X~^T X~ + lambda P)^-1 P theta_hat`.
pub fn ridge_derivative_closed_form(data: &Dataset, lambda: f64, dz: &LinearDesign) -> Result<Vec<f64>> {
    let (x, _) = design_matrix(data, dz);
    let n = data.n() as f64;
    let beta = DVector::from_vec(ridge_closed_form(data, lambda, dz)?);
    let a = x.transpose() * &x / n + penalty(dz) * lambda;
    Ok(solve_spd(a, &(penalty(dz) * beta))?.iter().map(|v| -v).collect())
}

/// Exact leave-one-out squared error of ridge regression.
///
/// Dropping a row from the mean objective leaves the penalty at
/// `(n - 1) lambda` relative to the summed squares, so the shortcut uses
/// `H = X~ (X~^T X~ + (n - 1) lambda P)^-1 X~^T` and the residuals of the
/// full-data fit under that same penalty: `CV = n^-1 sum (e_i / (1 - h_ii))^2`.
pub fn ridge_loocv_closed_form(data: &Dataset, lambda: f64, dz: &LinearDesign) -> Result<f64> {
    let (x, y) = design_matrix(data, dz);
    let n = data.n();
    let a = x.transpose() * &x + penalty(dz) * (lambda * (n as f64 - 1.0));
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("penalized Gram matrix is not positive definite".into()))?;
    let beta = chol.solve(&(x.transpose() * &y));
    let ainv_xt = chol.solve(&x.transpose());
    let mut total = 0.0;
    for i in 0..n {
        let h = x.row(i).dot(&ainv_xt.column(i).transpose());
        if h >= 1.0 - 1e-12 {
            return Err(Error::RankDeficient(format!("row {i} has leverage 1")));
        }
        let e = y[i] - x.row(i).dot(&beta.transpose());
        total += (e / (1.0 - h)).powi(2);
    }
    Ok(total / n as f64)
}
