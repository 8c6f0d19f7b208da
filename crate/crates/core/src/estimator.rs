//! Newton solver for `Phi_n(theta, lambda) = n^-1 sum_i phi(Z_i, theta, lambda) = 0`
//! and the implicit derivative of `lambda -> theta_hat(lambda)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, CONDITION_LIMIT};
use crate::model::Model;

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Absolute residual tolerance; `None` means `1e-10 * (1 + |theta_init|)`.
    pub tol: Option<f64>,
    pub max_iter: usize,
    /// Extra full Newton steps after convergence, each kept only if it does
    /// not increase the residual.
    pub polish: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: None, max_iter: 100, polish: 0 }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        SolverOptions { tol: Some(tol), ..Self::default() }
    }

    /// Solves to the floating point floor; used where solutions are
    /// differenced at small steps.
    pub fn tight() -> Self {
        SolverOptions { polish: 2, ..Self::default() }
    }

    fn tolerance(&self, theta_init: &[f64]) -> f64 {
        self.tol.unwrap_or_else(|| 1e-10 * (1.0 + norm(theta_init)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub theta_hat: Vec<f64>,
    pub lambda: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    /// `-d Phi_n / d theta` at the solution.
    pub j_hat: DMatrix<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `Phi_n(theta, lambda)`, optionally leaving out one row.
pub fn phi_mean<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    theta: &[f64],
    lambda: &[f64],
    skip: Option<usize>,
) -> Vec<f64> {
    let p = model.dims().p;
    linalg::row_mean(data, skip, p, p, |z, acc, s| {
        model.phi(z, theta, lambda, s);
        for (a, v) in acc.iter_mut().zip(s.iter()) {
            *a += v;
        }
    })
}

/// `d Phi_n / d theta` as a `p x p` matrix.
pub fn dtheta_mean<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    theta: &[f64],
    lambda: &[f64],
    skip: Option<usize>,
) -> DMatrix<f64> {
    let p = model.dims().p;
    let v = linalg::row_mean(data, skip, p * p, p * p, |z, acc, s| {
        model.dphi_dtheta(z, theta, lambda, s);
        for (a, v) in acc.iter_mut().zip(s.iter()) {
            *a += v;
        }
    });
    DMatrix::from_vec(p, p, v)
}

/// `d Phi_n / d lambda` as a `p x q` matrix.
pub fn dlambda_mean<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    theta: &[f64],
    lambda: &[f64],
    skip: Option<usize>,
) -> DMatrix<f64> {
    let dims = model.dims();
    let len = dims.p * dims.q;
    let v = linalg::row_mean(data, skip, len, len, |z, acc, s| {
        model.dphi_dlambda(z, theta, lambda, s);
        for (a, v) in acc.iter_mut().zip(s.iter()) {
            *a += v;
        }
    });
    DMatrix::from_vec(dims.p, dims.q, v)
}

fn check_inputs<M: Model + ?Sized>(model: &M, data: &Dataset, lambda: &[f64], theta: &[f64]) -> Result<()> {
    let dims = model.dims();
    if data.d() != dims.d {
        return Err(Error::InvalidInput(format!("data rows have {} columns, model expects {}", data.d(), dims.d)));
    }
    if lambda.len() != dims.q || theta.len() != dims.p {
        return Err(Error::InvalidInput(format!(
            "expected theta of length {} and lambda of length {}",
            dims.p, dims.q
        )));
    }
    if let Some(dom) = model.theta_domain() {
        if !dom.contains(theta) {
            return Err(Error::InvalidInput("initial theta outside the parameter domain".into()));
        }
    }
    Ok(())
}

pub(crate) struct Root {
    pub theta: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Damped Newton iteration. With `frozen` set, the given matrix (an
/// approximation to `d Phi / d theta`) is used for every step until a step
/// fails to decrease the residual, after which fresh Jacobians are used.
pub(crate) fn newton<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    lambda: &[f64],
    theta_init: &[f64],
    skip: Option<usize>,
    opts: &SolverOptions,
    frozen: Option<&nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
) -> Result<Root> {
    let tol = opts.tolerance(theta_init);
    let domain = model.theta_domain();
    let mut theta = theta_init.to_vec();
    let mut r = phi_mean(model, data, &theta, lambda, skip);
    let mut f = r.iter().map(|v| v * v).sum::<f64>();
    if !f.is_finite() {
        return Err(Error::NonFinite { what: "estimating function" });
    }
    let mut use_frozen = frozen.is_some();
    let mut iterations = 0;
    let mut trial = vec![0.0; theta.len()];
    while f.sqrt() > tol {
        if iterations == opts.max_iter {
            return Err(Error::NoConvergence { iterations, residual: f.sqrt() });
        }
        iterations += 1;
        let rv = DVector::from_column_slice(&r);
        let step = match (use_frozen, frozen) {
            (true, Some(lu)) => lu.solve(&rv).ok_or(Error::SingularJacobian { condition: f64::INFINITY })?,
            _ => {
                let g = dtheta_mean(model, data, &theta, lambda, skip);
                linalg::checked_solve(&g, &DMatrix::from_column_slice(r.len(), 1, &r))?.column(0).into_owned()
            }
        };
        let mut t = 1.0;
        let mut accepted = false;
        let mut projected = false;
        for _ in 0..=MAX_HALVINGS {
            for k in 0..theta.len() {
                trial[k] = theta[k] - t * step[k];
            }
            if let Some(dom) = domain {
                if !dom.contains(&trial) {
                    dom.project(&mut trial);
                    projected = true;
                }
            }
            let rt = phi_mean(model, data, &trial, lambda, skip);
            let ft = rt.iter().map(|v| v * v).sum::<f64>();
            if ft.is_finite() && ft <= (1.0 - 2.0 * ARMIJO * t) * f {
                theta.copy_from_slice(&trial);
                r = rt;
                f = ft;
                accepted = true;
                break;
            }
            if use_frozen {
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            if use_frozen {
                use_frozen = false;
                continue;
            }
            if projected {
                return Err(Error::DomainEscape);
            }
            return Err(Error::NoConvergence { iterations, residual: f.sqrt() });
        }
    }
    for _ in 0..opts.polish {
        let g = dtheta_mean(model, data, &theta, lambda, skip);
        let Ok(step) = linalg::checked_solve(&g, &DMatrix::from_column_slice(r.len(), 1, &r)) else {
            break;
        };
        for k in 0..theta.len() {
            trial[k] = theta[k] - step[(k, 0)];
        }
        if let Some(dom) = domain {
            dom.project(&mut trial);
        }
        let rt = phi_mean(model, data, &trial, lambda, skip);
        let ft = rt.iter().map(|v| v * v).sum::<f64>();
        if !(ft <= f) {
            break;
        }
        theta.copy_from_slice(&trial);
        r = rt;
        f = ft;
    }
    Ok(Root { theta, iterations, residual: norm(&r) })
}

fn finish<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    lambda: &[f64],
    skip: Option<usize>,
    root: Root,
) -> Result<SolveResult> {
    let j_hat = -dtheta_mean(model, data, &root.theta, lambda, skip);
    if j_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "Jacobian" });
    }
    Ok(SolveResult {
        theta_hat: root.theta,
        lambda: lambda.to_vec(),
        iterations: root.iterations,
        residual_norm: root.residual,
        j_hat,
    })
}

/// Solves `Phi_n(theta, lambda) = 0` from `theta_init`.
///
/// ```
/// use tuning_inference::{data::Dataset, estimator::solve_theta, model::ModelSpec};
/// // phi = z - theta: the root is the sample mean
/// let m = ModelSpec::new(1, 1, 1, |z, t, _l, o| o[0] = z[0] - t[0]);
/// let data = Dataset::from_rows(&[[1.0], [2.0], [6.0]]).unwrap();
/// let fit = solve_theta(&m, &data, &[0.0], &[0.0], None).unwrap();
/// assert!((fit.theta_hat[0] - 3.0).abs() < 1e-8);
/// assert!((fit.j_hat[(0, 0)] - 1.0).abs() < 1e-8);
/// ```
pub fn solve_theta<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    lambda: &[f64],
    theta_init: &[f64],
    tol: Option<f64>,
) -> Result<SolveResult> {
    solve_theta_with(model, data, lambda, theta_init, &SolverOptions { tol, ..SolverOptions::default() })
}

pub fn solve_theta_with<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    lambda: &[f64],
    theta_init: &[f64],
    opts: &SolverOptions,
) -> Result<SolveResult> {
    check_inputs(model, data, lambda, theta_init)?;
    let root = newton(model, data, lambda, theta_init, None, opts, None)?;
    finish(model, data, lambda, None, root)
}

/// Solves the estimating equation over all rows except row `i` (0-based).
pub fn solve_loo<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    lambda: &[f64],
    i: usize,
    warm_start: &[f64],
    tol: Option<f64>,
) -> Result<SolveResult> {
    if data.n() < 3 {
        return Err(Error::InvalidInput("leave-one-out needs at least 3 rows".into()));
    }
    if i >= data.n() {
        return Err(Error::InvalidInput(format!("row {i} out of range")));
    }
    check_inputs(model, data, lambda, warm_start)?;
    let opts = SolverOptions { tol, ..SolverOptions::default() };
    let root = newton(model, data, lambda, warm_start, Some(i), &opts, None)?;
    finish(model, data, lambda, Some(i), root)
}

/// `D = J^-1 d Phi_n / d lambda` at a solution: the derivative of
/// `lambda -> theta_hat(lambda)`, as a `p x q` matrix.
pub fn theta_prime<M: Model + ?Sized>(model: &M, data: &Dataset, solve: &SolveResult) -> Result<DMatrix<f64>> {
    let dl = dlambda_mean(model, data, &solve.theta_hat, &solve.lambda, None);
    linalg::checked_solve(&solve.j_hat, &dl)
}

/// Condition number of `J_hat`, and whether it passes the singularity limit.
pub fn jacobian_condition(solve: &SolveResult) -> (f64, bool) {
    let c = linalg::condition_number(&solve.j_hat);
    (c, c <= CONDITION_LIMIT)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoxDomain, ModelSpec};

    fn mean_model() -> ModelSpec {
        // shrunken mean: phi = z - theta - lambda * theta
        ModelSpec::new(1, 1, 1, |z, t, l, o| o[0] = z[0] - (1.0 + l[0]) * t[0])
    }

    #[test]
    fn nonlinear_root_and_derivative() {
        // phi = z - exp(theta) / (1 + lambda): root log((1+lambda) mean z)
        let m = ModelSpec::new(1, 1, 1, |z, t, l, o| o[0] = z[0] - t[0].exp() / (1.0 + l[0]));
        let data = Dataset::from_rows(&[[1.0], [2.0], [4.0], [5.0]]).unwrap();
        let fit = solve_theta(&m, &data, &[0.5], &[0.0], None).unwrap();
        assert!((fit.theta_hat[0] - (1.5f64 * 3.0).ln()).abs() < 1e-10);
        let d = theta_prime(&m, &data, &fit).unwrap();
        assert!((d[(0, 0)] - 1.0 / 1.5).abs() < 1e-7);
    }

    #[test]
    fn residual_recomputes_exactly() {
        let m = mean_model();
        let data = Dataset::from_rows(&[[0.3], [1.1], [-2.0], [0.7]]).unwrap();
        let fit = solve_theta(&m, &data, &[0.2], &[5.0], None).unwrap();
        let r = phi_mean(&m, &data, &fit.theta_hat, &[0.2], None);
        assert_eq!(norm(&r), fit.residual_norm);
    }

    #[test]
    fn loo_skips_row() {
        let m = mean_model();
        let data = Dataset::from_rows(&[[1.0], [2.0], [9.0]]).unwrap();
        let loo = solve_loo(&m, &data, &[0.0], 2, &[4.0], None).unwrap();
        assert!((loo.theta_hat[0] - 1.5).abs() < 1e-12);
        assert!(solve_loo(&m, &data, &[0.0], 3, &[4.0], None).is_err());
    }

    #[test]
    fn singular_and_domain_errors() {
        let flat = ModelSpec::new(1, 1, 1, |z, _t, _l, o| o[0] = z[0]);
        let data = Dataset::from_rows(&[[1.0], [2.0]]).unwrap();
        assert!(matches!(
            solve_theta(&flat, &data, &[0.0], &[0.0], None),
            Err(Error::SingularJacobian { .. })
        ));
        let boxed = mean_model().with_theta_domain(BoxDomain::interval(-1.0, 1.0).unwrap());
        let far = Dataset::from_rows(&[[10.0], [12.0]]).unwrap();
        assert!(matches!(
            solve_theta(&boxed, &far, &[0.0], &[0.0], None),
            Err(Error::DomainEscape)
        ));
    }
}
