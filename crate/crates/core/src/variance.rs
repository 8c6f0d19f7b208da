//! Variance of `theta_hat(lambda_hat)` accounting for the randomness of a
//! tuned `lambda_hat`, next to the classic sandwich that treats it as fixed.
//!
//! With `alpha = (theta, lambda, vec D)` the tuned estimator solves the
//! stacked equation `n^-1 sum eta(Z_i, alpha) = 0`, where
//!
//! ```text
//! eta = ( phi(z, theta, lambda),
//!         D^T grad_psi(z, theta),
//!         vec(d_theta phi(z, theta, lambda) D + d_lambda phi(z, theta, lambda)) )
//! ```
//!
//! Its `theta` block has the asymptotic variance `A* K* A*^T` with
//! `K* = E eta eta^T` and `A* = (A1, A2, A3)`:
//!
//! ```text
//! A1 = J^-1 - D Z1^-1 (D^T Z2 + W) J^-1
//! A2 = -D Z1^-1
//! A3 = -D Z1^-1 M
//! ```
//!
//! where `J = -d_theta Phi`, `Z2` is the Hessian of the average loss, `b` its
//! gradient, `Z1` the Hessian of the profiled training error in `lambda`,
//! row `j` of `W` is `b^T J^-1 W^j` with `W^j = D_j^T H phi + d_lambda_j d_theta phi`,
//! and `M` is block diagonal with `q` copies of `b^T J^-1`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::criteria::{evaluate, fit_at, Criterion};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{theta_prime, SolverOptions};
use crate::linalg::{self, symmetrize, CONDITION_LIMIT};
use crate::model::{Dims, Loss, Model};
use crate::numdiff;
use crate::report::{matrix_rows, opt_matrix_rows};
use crate::tuner::{boundary_margin, BoundaryStatus, FitResult};

/// Smallest-to-largest singular value ratio below which the stacked
/// Jacobian is taken to signal a flat `theta_0(lambda)`.
pub const FLAT_RATIO: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Z1Method {
    /// Second differences of `lambda -> TE(lambda)` with Richardson refinement.
    #[default]
    Profile,
    /// `D^T Z2 D + b^T dD/dlambda`, differentiating `D` over refits.
    ChainRule,
    /// Second differences of the criterion that was minimized (for instance
    /// cross-validation) instead of the training error. Both have the same
    /// limit, and this one is positive at an interior minimum.
    TuningCriterion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceOptions {
    pub z1: Z1Method,
    /// Assemble the tuning-aware pieces even when the fit is on the boundary.
    pub force_full: bool,
}

impl Default for VarianceOptions {
    fn default() -> Self {
        VarianceOptions { z1: Z1Method::Profile, force_full: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub theta_hat: Vec<f64>,
    pub lambda_hat: Vec<f64>,
    pub n: usize,
    #[serde(with = "matrix_rows")]
    pub j_hat: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub k_hat: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub d_hat: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub z2_hat: DMatrix<f64>,
    pub b_hat: Vec<f64>,
    /// `q x p`.
    #[serde(with = "matrix_rows")]
    pub w_hat: DMatrix<f64>,
    /// `q x pq`.
    #[serde(with = "matrix_rows")]
    pub m_hat: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub kstar_hat: DMatrix<f64>,
    #[serde(with = "opt_matrix_rows")]
    pub z1_hat: Option<DMatrix<f64>>,
    #[serde(with = "opt_matrix_rows")]
    pub a1: Option<DMatrix<f64>>,
    /// `p x q`, acting on the `D^T grad_psi` block of `eta`.
    #[serde(with = "opt_matrix_rows")]
    pub a2: Option<DMatrix<f64>>,
    #[serde(with = "opt_matrix_rows")]
    pub a3: Option<DMatrix<f64>>,
    #[serde(with = "opt_matrix_rows")]
    pub astar: Option<DMatrix<f64>>,
}

impl VarianceComponents {
    pub fn is_full(&self) -> bool {
        self.astar.is_some()
    }
}

/// Length of `eta`: `p + q + pq`.
pub fn eta_len(dims: Dims) -> usize {
    dims.p + dims.q + dims.p * dims.q
}

/// Scratch length needed by [`eta_into`].
fn eta_scratch(d: Dims) -> usize {
    2 * d.p + d.p * d.p + d.p * d.q
}

/// Writes `eta(z, alpha)` into `out`. The first `2p + p^2 + pq` entries of
/// `scratch` hold `phi`, `grad_psi`, `d_theta phi`, `d_lambda phi` afterwards.
#[allow(clippy::too_many_arguments)]
fn eta_into<M: Model + ?Sized, L: Loss + ?Sized>(
    model: &M,
    loss: &L,
    z: &[f64],
    theta: &[f64],
    lambda: &[f64],
    d: &[f64],
    scratch: &mut [f64],
    out: &mut [f64],
) {
    let Dims { p, q, .. } = model.dims();
    let (phi, rest) = scratch.split_at_mut(p);
    let (grad, rest) = rest.split_at_mut(p);
    let (dtheta, rest) = rest.split_at_mut(p * p);
    let dlambda = &mut rest[..p * q];
    model.phi(z, theta, lambda, phi);
    loss.grad_psi(z, theta, grad);
    model.dphi_dtheta(z, theta, lambda, dtheta);
    model.dphi_dlambda(z, theta, lambda, dlambda);
    out[..p].copy_from_slice(phi);
    for j in 0..q {
        out[p + j] = (0..p).map(|a| d[a + j * p] * grad[a]).sum();
    }
    for j in 0..q {
        for k in 0..p {
            let s: f64 = (0..p).map(|a| dtheta[k + a * p] * d[a + j * p]).sum();
            out[p + q + k + j * p] = s + dlambda[k + j * p];
        }
    }
}

/// `eta(z, alpha)` with `D` given column-major (`p x q`).
pub fn eta<M: Model + ?Sized, L: Loss + ?Sized>(
    model: &M,
    loss: &L,
    z: &[f64],
    theta: &[f64],
    lambda: &[f64],
    d: &DMatrix<f64>,
) -> Vec<f64> {
    let dims = model.dims();
    let mut out = vec![0.0; eta_len(dims)];
    let mut scratch = vec![0.0; eta_scratch(dims)];
    eta_into(model, loss, z, theta, lambda, d.as_slice(), &mut scratch, &mut out);
    out
}

/// `n^-1 sum_i eta(Z_i, alpha)` for `alpha = (theta, lambda, vec D)`.
pub fn eta_mean<M: Model + ?Sized, L: Loss + ?Sized>(model: &M, loss: &L, data: &Dataset, alpha: &[f64]) -> Vec<f64> {
    let dims = model.dims();
    let Dims { p, q, .. } = dims;
    let r = eta_len(dims);
    let (theta, rest) = alpha.split_at(p);
    let (lambda, d) = rest.split_at(q);
    linalg::row_mean(data, None, r, r + eta_scratch(dims), |z, acc, s| {
        let (e, scratch) = s.split_at_mut(r);
        eta_into(model, loss, z, theta, lambda, d, scratch, e);
        for (a, v) in acc.iter_mut().zip(e.iter()) {
            *a += v;
        }
    })
}

fn tight() -> SolverOptions {
    SolverOptions::tight()
}

fn lambda_allowed<M: Model + ?Sized>(model: &M, lambda: &[f64]) -> bool {
    model.lambda_domain().is_none_or(|d| d.contains(lambda))
}

/// Second derivatives of `f` at `x` from differences at steps `h` and
/// `h / 2`, combined by Richardson extrapolation. Axes flagged in `forward`
/// use one-sided stencils.
fn hessian_richardson<F>(x: &[f64], h: &[f64], forward: &[bool], mut f: F) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let q = x.len();
    let f0 = f(x)?;
    let mut at = |shift: &[(usize, f64)]| -> Result<f64> {
        let mut y = x.to_vec();
        for &(j, s) in shift {
            y[j] += s;
        }
        f(&y)
    };
    let mut stencil = |scale: f64| -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(q, q);
        for j in 0..q {
            let hj = h[j] * scale;
            m[(j, j)] = if forward[j] {
                (at(&[(j, 2.0 * hj)])? - 2.0 * at(&[(j, hj)])? + f0) / (hj * hj)
            } else {
                (at(&[(j, hj)])? - 2.0 * f0 + at(&[(j, -hj)])?) / (hj * hj)
            };
            for k in 0..j {
                let hk = h[k] * scale;
                let v = if forward[j] || forward[k] {
                    (at(&[(j, hj), (k, hk)])? - at(&[(j, hj)])? - at(&[(k, hk)])? + f0) / (hj * hk)
                } else {
                    (at(&[(j, hj), (k, hk)])? - at(&[(j, hj), (k, -hk)])? - at(&[(j, -hj), (k, hk)])?
                        + at(&[(j, -hj), (k, -hk)])?)
                        / (4.0 * hj * hk)
                };
                m[(j, k)] = v;
                m[(k, j)] = v;
            }
        }
        Ok(m)
    };
    let coarse = stencil(1.0)?;
    let fine = stencil(0.5)?;
    let one_sided = forward.iter().any(|&b| b);
    Ok(if one_sided { fine * 2.0 - coarse } else { (fine * 4.0 - coarse) / 3.0 })
}

fn profile_steps<M: Model + ?Sized>(model: &M, lambda: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let h: Vec<f64> = lambda.iter().map(|l| 1e-3 * (1.0 + l.abs())).collect();
    let forward = (0..lambda.len())
        .map(|j| {
            let mut lo = lambda.to_vec();
            lo[j] -= h[j];
            !lambda_allowed(model, &lo)
        })
        .collect();
    (h, forward)
}

/// Hessian of `lambda -> TE(lambda)` at `lambda`, refitting tightly at
/// every stencil point.
pub fn z1_profile<M: Model + ?Sized, L: Loss + ?Sized>(
    model: &M,
    loss: &L,
    data: &Dataset,
    theta_hat: &[f64],
    lambda: &[f64],
) -> Result<DMatrix<f64>> {
    let (h, forward) = profile_steps(model, lambda);
    let opts = tight();
    let z = hessian_richardson(lambda, &h, &forward, |l| {
        let fit = fit_at(model, data, l, Some(theta_hat), &opts)?;
        Ok(linalg::row_mean(data, None, 1, 0, |z, acc, _| acc[0] += loss.psi(z, &fit.theta_hat))[0])
    })?;
    Ok(symmetrize(&z))
}

/// Hessian of the tuning criterion at `lambda`.
pub fn z1_criterion<M: Model + ?Sized, L: Loss + ?Sized>(
    model: &M,
    loss: &L,
    data: &Dataset,
    theta_hat: &[f64],
    lambda: &[f64],
    criterion: Criterion,
) -> Result<DMatrix<f64>> {
    let (h, forward) = profile_steps(model, lambda);
    let opts = tight();
    let z = hessian_richardson(lambda, &h, &forward, |l| {
        Ok(evaluate(model, loss, data, l, criterion, Some(theta_hat), &opts)?.value.value)
    })?;
    Ok(symmetrize(&z))
}

/// `Z1 = D^T Z2 D + b^T dD/dlambda`, with `dD/dlambda` from central
/// differences of refitted implicit derivatives.
pub fn z1_chain_rule<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    theta_hat: &[f64],
    lambda: &[f64],
    d: &DMatrix<f64>,
    z2: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let q = lambda.len();
    let (h, forward) = profile_steps(model, lambda);
    let opts = tight();
    let d_at = |l: &[f64]| -> Result<DMatrix<f64>> {
        let fit = fit_at(model, data, l, Some(theta_hat), &opts)?;
        theta_prime(model, data, &fit)
    };
    let mut bdd = DMatrix::zeros(q, q);
    for k in 0..q {
        let diff = |scale: f64| -> Result<DMatrix<f64>> {
            let hk = h[k] * scale;
            let mut up = lambda.to_vec();
            up[k] += hk;
            if forward[k] {
                Ok((d_at(&up)? - d) / hk)
            } else {
                let mut down = lambda.to_vec();
                down[k] -= hk;
                Ok((d_at(&up)? - d_at(&down)?) / (2.0 * hk))
            }
        };
        let dd = if forward[k] { diff(0.5)? * 2.0 - diff(1.0)? } else { (diff(0.5)? * 4.0 - diff(1.0)?) / 3.0 };
        for j in 0..q {
            bdd[(j, k)] = b.dot(&dd.column(j));
        }
    }
    Ok(symmetrize(&(d.transpose() * z2 * d + bdd)))
}

/// Every plug-in ingredient of the tuning-aware variance at `fit`.
///
/// For a boundary fit (and without `force_full`) only the pointwise pieces
/// are filled in and the `A` matrices are left empty.
pub fn assemble_components<M: Model + ?Sized, L: Loss + ?Sized>(
    model: &M,
    loss: &L,
    data: &Dataset,
    fit: &FitResult,
    opts: &VarianceOptions,
) -> Result<VarianceComponents> {
    let dims = model.dims();
    let Dims { p, q, .. } = dims;
    let theta = &fit.theta_hat;
    let lambda = &fit.lambda_hat;
    if theta.len() != p || lambda.len() != q || fit.d_hat.shape() != (p, q) {
        return Err(Error::InvalidInput("fit dimensions do not match the model".into()));
    }
    let d = &fit.d_hat;
    let ds = d.as_slice();
    let r = eta_len(dims);
    // layout: b | Z2 | K | dtheta Phi | H phi (p blocks) | d_lambda d_theta phi (q blocks) | K*
    let o_z2 = p;
    let o_k = o_z2 + p * p;
    let o_j = o_k + p * p;
    let o_h = o_j + p * p;
    let o_x = o_h + p * p * p;
    let o_ks = o_x + q * p * p;
    let len = o_ks + r * r;
    let scratch = p * p + p * p * p + q * p * p + r + eta_scratch(dims);
    let sums = linalg::row_mean(data, None, len, scratch, |z, acc, s| {
        let (hpsi, rest) = s.split_at_mut(p * p);
        let (hphi, rest) = rest.split_at_mut(p * p * p);
        let (mixed, rest) = rest.split_at_mut(q * p * p);
        let (e, buf) = rest.split_at_mut(r);
        eta_into(model, loss, z, theta, lambda, ds, buf, e);
        let (phi, rest) = buf.split_at(p);
        let grad = &rest[..p];
        let dtheta = &rest[p..p + p * p];
        loss.hess_psi(z, theta, hpsi);
        model.hess_phi_theta(z, theta, lambda, hphi);
        model.dphi_dlambda_dtheta(z, theta, lambda, mixed);
        for a in 0..p {
            acc[a] += grad[a];
        }
        for (a, v) in hpsi.iter().enumerate() {
            acc[o_z2 + a] += v;
        }
        for b in 0..p {
            for a in 0..p {
                acc[o_k + a + b * p] += phi[a] * phi[b];
            }
        }
        for (a, v) in dtheta.iter().enumerate() {
            acc[o_j + a] += v;
        }
        for (a, v) in hphi.iter().enumerate() {
            acc[o_h + a] += v;
        }
        for (a, v) in mixed.iter().enumerate() {
            acc[o_x + a] += v;
        }
        for b in 0..r {
            for a in 0..r {
                acc[o_ks + a + b * r] += e[a] * e[b];
            }
        }
    });
    let b = DVector::from_column_slice(&sums[..p]);
    let z2 = symmetrize(&DMatrix::from_column_slice(p, p, &sums[o_z2..o_k]));
    let k = symmetrize(&DMatrix::from_column_slice(p, p, &sums[o_k..o_j]));
    let j = -DMatrix::from_column_slice(p, p, &sums[o_j..o_h]);
    let kstar = symmetrize(&DMatrix::from_column_slice(r, r, &sums[o_ks..]));
    let jinv = linalg::checked_inverse(&j)?;
    let bj = (jinv.transpose() * &b).transpose(); // b^T J^-1, 1 x p

    // W^j: row k = D_j^T H phi^k + (d_lambda_j d_theta phi)_k
    let hphi = &sums[o_h..o_x];
    let mixed = &sums[o_x..o_ks];
    let mut w = DMatrix::zeros(q, p);
    for jj in 0..q {
        let wj = DMatrix::from_fn(p, p, |row, col| {
            let h: f64 = (0..p).map(|a| d[(a, jj)] * hphi[row * p * p + a + col * p]).sum();
            h + mixed[jj * p * p + row + col * p]
        });
        w.row_mut(jj).copy_from(&(&bj * wj));
    }
    let mut m = DMatrix::zeros(q, p * q);
    for jj in 0..q {
        m.view_mut((jj, jj * p), (1, p)).copy_from(&bj);
    }

    let full = fit.is_interior() || opts.force_full;
    let (mut z1, mut a1, mut a2, mut a3, mut astar) = (None, None, None, None, None);
    if full {
        let z1m = match opts.z1 {
            Z1Method::Profile => z1_profile(model, loss, data, theta, lambda)?,
            Z1Method::ChainRule => z1_chain_rule(model, data, theta, lambda, d, &z2, &b)?,
            Z1Method::TuningCriterion => z1_criterion(model, loss, data, theta, lambda, fit.criterion)?,
        };
        // with D = 0 every tuning term vanishes whatever Z1 is (and Z1 is then
        // typically singular, the criterion being flat in lambda)
        let dz = if d.iter().all(|v| *v == 0.0) {
            DMatrix::zeros(p, q)
        } else {
            d * linalg::checked_inverse(&z1m)?
        };
        let a1m = &jinv - &dz * (d.transpose() * &z2 + &w) * &jinv;
        let a2m = -&dz;
        let a3m = -&dz * &m;
        let mut s = DMatrix::zeros(p, r);
        s.view_mut((0, 0), (p, p)).copy_from(&a1m);
        s.view_mut((0, p), (p, q)).copy_from(&a2m);
        s.view_mut((0, p + q), (p, p * q)).copy_from(&a3m);
        z1 = Some(z1m);
        a1 = Some(a1m);
        a2 = Some(a2m);
        a3 = Some(a3m);
        astar = Some(s);
    }
    Ok(VarianceComponents {
        theta_hat: theta.clone(),
        lambda_hat: lambda.clone(),
        n: data.n(),
        j_hat: j,
        k_hat: k,
        d_hat: d.clone(),
        z2_hat: z2,
        b_hat: b.iter().copied().collect(),
        w_hat: w,
        m_hat: m,
        kstar_hat: kstar,
        z1_hat: z1,
        a1,
        a2,
        a3,
        astar,
    })
}

/// `V1 = A* K* A*^T`.
pub fn variance_tuned(c: &VarianceComponents) -> Result<DMatrix<f64>> {
    let a = c.astar.as_ref().ok_or(Error::BoundaryFit)?;
    Ok(symmetrize(&(a * &c.kstar_hat * a.transpose())))
}

/// `V2 = J^-1 K J^-T`.
pub fn variance_pointwise(c: &VarianceComponents) -> Result<DMatrix<f64>> {
    let jinv = linalg::checked_inverse(&c.j_hat)?;
    Ok(symmetrize(&(&jinv * &c.k_hat * jinv.transpose())))
}

/// Influence of the tuned parameter, `L = -Z1^-1 [(D^T Z2 + W) J^-1, I, M]`:
/// `sqrt(n)(lambda_hat - lambda_0)` is asymptotically `L eta_bar`, and
/// `A* = [J^-1, 0, 0] + D L`.
pub fn lambda_influence(c: &VarianceComponents) -> Result<DMatrix<f64>> {
    let z1 = c.z1_hat.as_ref().ok_or(Error::BoundaryFit)?;
    let z1inv = linalg::checked_inverse(z1)?;
    let jinv = linalg::checked_inverse(&c.j_hat)?;
    let (p, q) = (c.theta_hat.len(), c.lambda_hat.len());
    let mut g = DMatrix::zeros(q, p + q + p * q);
    g.view_mut((0, 0), (q, p)).copy_from(&((c.d_hat.transpose() * &c.z2_hat + &c.w_hat) * &jinv));
    g.view_mut((0, p), (q, q)).fill_with_identity();
    g.view_mut((0, p + q), (q, p * q)).copy_from(&c.m_hat);
    Ok(-(z1inv * g))
}

/// Full variance of `alpha = (theta, lambda, vec D)`: `Psi'^-1 K* Psi'^-T`,
/// with `Psi'` the numerical Jacobian of the `eta` mean at `alpha_hat`.
pub fn variance_alpha<M: Model + ?Sized, L: Loss + ?Sized>(
    model: &M,
    loss: &L,
    data: &Dataset,
    c: &VarianceComponents,
) -> Result<DMatrix<f64>> {
    let r = eta_len(model.dims());
    let psi_prime = stacked_jacobian(model, loss, data, c);
    let sv = psi_prime.clone().singular_values();
    let ratio = sv.min() / sv.max();
    if !(ratio >= FLAT_RATIO) {
        return Err(Error::FlatLimitSuspected { ratio });
    }
    if 1.0 / ratio > CONDITION_LIMIT {
        return Err(Error::SingularJacobian { condition: 1.0 / ratio });
    }
    let inv = linalg::checked_inverse(&psi_prime)?;
    debug_assert_eq!(inv.nrows(), r);
    Ok(symmetrize(&(&inv * &c.kstar_hat * inv.transpose())))
}

/// `d/d alpha` of the `eta` mean at `alpha_hat`, by central differences.
pub fn stacked_jacobian<M: Model + ?Sized, L: Loss + ?Sized>(
    model: &M,
    loss: &L,
    data: &Dataset,
    c: &VarianceComponents,
) -> DMatrix<f64> {
    let r = eta_len(model.dims());
    let alpha: Vec<f64> =
        c.theta_hat.iter().chain(&c.lambda_hat).chain(c.d_hat.as_slice()).copied().collect();
    let mut out = vec![0.0; r * r];
    numdiff::jacobian(&alpha, r, |a, o| o.copy_from_slice(&eta_mean(model, loss, data, a)), &mut out);
    DMatrix::from_vec(r, r, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Selected {
    V1,
    V2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VarianceFlag {
    /// Boundary optimum with a criterion slope so small that the
    /// unconstrained optimum sits within the boundary margin; the limit law
    /// is then a mixture and neither V1 nor V2 is exact.
    NondegenerateBoundary,
    FlatLimitSuspected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub schema_version: u32,
    pub n: usize,
    #[serde(with = "opt_matrix_rows")]
    pub v1: Option<DMatrix<f64>>,
    #[serde(with = "matrix_rows")]
    pub v2: DMatrix<f64>,
    #[serde(with = "opt_matrix_rows")]
    pub v_alpha: Option<DMatrix<f64>>,
    pub selected: Selected,
    /// `sqrt(diag(selected) / n)`.
    pub standard_errors: Vec<f64>,
    pub boundary_status: Vec<BoundaryStatus>,
    pub flags: Vec<VarianceFlag>,
}

impl VarianceReport {
    pub fn selected_matrix(&self) -> &DMatrix<f64> {
        match self.selected {
            Selected::V1 => self.v1.as_ref().unwrap_or(&self.v2),
            Selected::V2 => &self.v2,
        }
    }
}

/// Tuning-aware variance for interior fits, pointwise sandwich for
/// boundary fits.
///
/// A boundary fit whose extrapolated unconstrained optimum
/// `lambda_hat - slope / Z1` lies within `2 n^-1/2` axis widths of the
/// boundary is flagged [`VarianceFlag::NondegenerateBoundary`]. `z1_at_fit`
/// supplies the profile curvature for that check when available.
pub fn select_variance(
    c: &VarianceComponents,
    fit: &FitResult,
    z1_at_fit: Option<&DMatrix<f64>>,
) -> Result<VarianceReport> {
    let v2 = variance_pointwise(c)?;
    let v1 = if c.is_full() { Some(variance_tuned(c)?) } else { None };
    let mut flags = Vec::new();
    let selected = if fit.is_interior() && v1.is_some() { Selected::V1 } else { Selected::V2 };
    if !fit.is_interior() {
        let z1 = z1_at_fit.or(c.z1_hat.as_ref());
        for (j, s) in fit.boundary_status.iter().enumerate() {
            if *s == BoundaryStatus::Interior {
                continue;
            }
            let slope = fit.criterion_slope_at_opt[j];
            let margin = boundary_margin(c.n, fit.lambda_bounds.width(j));
            let near_zero = match z1 {
                Some(z) if z[(j, j)] > 0.0 => (slope / z[(j, j)]).abs() <= margin,
                _ => slope == 0.0,
            };
            if near_zero && !flags.contains(&VarianceFlag::NondegenerateBoundary) {
                flags.push(VarianceFlag::NondegenerateBoundary);
            }
        }
    }
    let chosen = if selected == Selected::V1 { v1.as_ref().unwrap() } else { &v2 };
    let n = c.n as f64;
    let standard_errors = chosen.diagonal().iter().map(|v| (v.max(0.0) / n).sqrt()).collect();
    Ok(VarianceReport {
        schema_version: crate::report::SCHEMA_VERSION,
        n: c.n,
        v1,
        v2,
        v_alpha: None,
        selected,
        standard_errors,
        boundary_status: fit.boundary_status.clone(),
        flags,
    })
}

/// Components, selection and (for interior fits) the full-vector variance
/// in one call. A flat-limit failure of the full-vector variance is
/// recorded as a flag rather than an error.
pub fn variance_report<M: Model + ?Sized, L: Loss + ?Sized>(
    model: &M,
    loss: &L,
    data: &Dataset,
    fit: &FitResult,
    opts: &VarianceOptions,
) -> Result<(VarianceComponents, VarianceReport)> {
    let c = assemble_components(model, loss, data, fit, opts)?;
    let z1_boundary = if fit.is_interior() || c.z1_hat.is_some() {
        None
    } else {
        z1_profile(model, loss, data, &fit.theta_hat, &fit.lambda_hat).ok()
    };
    let mut report = select_variance(&c, fit, z1_boundary.as_ref())?;
    if c.is_full() {
        match variance_alpha(model, loss, data, &c) {
            Ok(v) => report.v_alpha = Some(v),
            Err(Error::FlatLimitSuspected { .. }) => report.flags.push(VarianceFlag::FlatLimitSuspected),
            Err(Error::SingularJacobian { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok((c, report))
}
