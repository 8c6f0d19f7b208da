//! Pluggable estimating functions `phi(z, theta, lambda)` and losses `psi(z, theta)`.
//!
//! Both traits only require the function value. Every derivative has a
//! default implementation by central finite differences (see
//! [`crate::numdiff`]), so a model is complete as soon as `phi` is written;
//! built-in models override the defaults with analytic forms.
//!
//! Matrix outputs are column-major slices:
//!
//! * `dphi_dtheta`: `p x p`, entry `(k, m)` is `d phi_k / d theta_m`.
//! * `dphi_dlambda`: `p x q`.
//! * `hess_phi_theta`: `p` consecutive `p x p` blocks, block `k` is the
//!   Hessian of `phi_k` in `theta`.
//! * `dphi_dlambda_dtheta`: `q` consecutive `p x p` blocks, block `j` has
//!   entries `d^2 phi_k / (d lambda_j d theta_m)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::numdiff;

/// Dimensions of a model: parameter `p`, tuning parameter `q`, data row `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub p: usize,
    pub q: usize,
    pub d: usize,
}

/// Axis-aligned box `prod [lower_j, upper_j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> crate::Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(crate::Error::InvalidInput("box bounds must have equal, nonzero length".into()));
        }
        if lower.iter().zip(&upper).any(|(a, b)| !(a < b)) {
            return Err(crate::Error::InvalidInput(format!(
                "box needs lower < upper in every coordinate, got {lower:?} / {upper:?}"
            )));
        }
        Ok(BoxDomain { lower, upper })
    }

    pub fn interval(a: f64, b: f64) -> crate::Result<Self> {
        Self::new(vec![a], vec![b])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, j: usize) -> f64 {
        self.upper[j] - self.lower[j]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (a, b))| *a <= *v && *v <= *b)
    }

    pub fn project(&self, x: &mut [f64]) {
        for (v, (a, b)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*a, *b);
        }
    }
}

/// An estimating function `phi: R^d x R^p x R^q -> R^p`; `theta_hat(lambda)`
/// solves `n^-1 sum_i phi(Z_i, theta, lambda) = 0`.
pub trait Model: Send + Sync {
    fn dims(&self) -> Dims;

    fn phi(&self, z: &[f64], theta: &[f64], lambda: &[f64], out: &mut [f64]);

    fn dphi_dtheta(&self, z: &[f64], theta: &[f64], lambda: &[f64], out: &mut [f64]) {
        fd_dphi_dtheta(self, z, theta, lambda, out)
    }

    fn dphi_dlambda(&self, z: &[f64], theta: &[f64], lambda: &[f64], out: &mut [f64]) {
        fd_dphi_dlambda(self, z, theta, lambda, out)
    }

    fn hess_phi_theta(&self, z: &[f64], theta: &[f64], lambda: &[f64], out: &mut [f64]) {
        fd_hess_phi_theta(self, z, theta, lambda, out)
    }

    fn dphi_dlambda_dtheta(&self, z: &[f64], theta: &[f64], lambda: &[f64], out: &mut [f64]) {
        fd_dphi_dlambda_dtheta(self, z, theta, lambda, out)
    }

    fn theta_domain(&self) -> Option<&BoxDomain> {
        None
    }

    /// Set of `lambda` where `phi` can be evaluated at all, if restricted.
    fn lambda_domain(&self) -> Option<&BoxDomain> {
        None
    }

    fn initial_theta(&self, _data: &Dataset) -> Vec<f64> {
        vec![0.0; self.dims().p]
    }

    fn name(&self) -> &str {
        "custom"
    }
}

pub fn fd_dphi_dtheta<M: Model + ?Sized>(m: &M, z: &[f64], theta: &[f64], lambda: &[f64], out: &mut [f64]) {
    let p = m.dims().p;
    numdiff::jacobian(theta, p, |t, o| m.phi(z, t, lambda, o), out);
}

pub fn fd_dphi_dlambda<M: Model + ?Sized>(m: &M, z: &[f64], theta: &[f64], lambda: &[f64], out: &mut [f64]) {
    let p = m.dims().p;
    numdiff::jacobian(lambda, p, |l, o| m.phi(z, theta, l, o), out);
}

pub fn fd_hess_phi_theta<M: Model + ?Sized>(m: &M, z: &[f64], theta: &[f64], lambda: &[f64], out: &mut [f64]) {
    let p = m.dims().p;
    numdiff::hessians(theta, p, |t, o| m.phi(z, t, lambda, o), out);
}

pub fn fd_dphi_dlambda_dtheta<M: Model + ?Sized>(
    m: &M,
    z: &[f64],
    theta: &[f64],
    lambda: &[f64],
    out: &mut [f64],
) {
    let p = m.dims().p;
    numdiff::mixed(theta, lambda, p, |t, l, o| m.phi(z, t, l, o), out);
}

/// A loss `psi: R^d x R^p -> R` whose average is the risk being estimated.
pub trait Loss: Send + Sync {
    fn psi(&self, z: &[f64], theta: &[f64]) -> f64;

    fn grad_psi(&self, z: &[f64], theta: &[f64], out: &mut [f64]) {
        numdiff::gradient(theta, |t| self.psi(z, t), out)
    }

    fn hess_psi(&self, z: &[f64], theta: &[f64], out: &mut [f64]) {
        numdiff::hessians(theta, 1, |t, o| o[0] = self.psi(z, t), out)
    }

    fn name(&self) -> &str {
        "custom"
    }
}

impl<M: Model + ?Sized> Model for Arc<M> {
    fn dims(&self) -> Dims {
        (**self).dims()
    }
    fn phi(&self, z: &[f64], t: &[f64], l: &[f64], o: &mut [f64]) {
        (**self).phi(z, t, l, o)
    }
    fn dphi_dtheta(&self, z: &[f64], t: &[f64], l: &[f64], o: &mut [f64]) {
        (**self).dphi_dtheta(z, t, l, o)
    }
    fn dphi_dlambda(&self, z: &[f64], t: &[f64], l: &[f64], o: &mut [f64]) {
        (**self).dphi_dlambda(z, t, l, o)
    }
    fn hess_phi_theta(&self, z: &[f64], t: &[f64], l: &[f64], o: &mut [f64]) {
        (**self).hess_phi_theta(z, t, l, o)
    }
    fn dphi_dlambda_dtheta(&self, z: &[f64], t: &[f64], l: &[f64], o: &mut [f64]) {
        (**self).dphi_dlambda_dtheta(z, t, l, o)
    }
    fn theta_domain(&self) -> Option<&BoxDomain> {
        (**self).theta_domain()
    }
    fn lambda_domain(&self) -> Option<&BoxDomain> {
        (**self).lambda_domain()
    }
    fn initial_theta(&self, data: &Dataset) -> Vec<f64> {
        (**self).initial_theta(data)
    }
    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<L: Loss + ?Sized> Loss for Arc<L> {
    fn psi(&self, z: &[f64], t: &[f64]) -> f64 {
        (**self).psi(z, t)
    }
    fn grad_psi(&self, z: &[f64], t: &[f64], o: &mut [f64]) {
        (**self).grad_psi(z, t, o)
    }
    fn hess_psi(&self, z: &[f64], t: &[f64], o: &mut [f64]) {
        (**self).hess_psi(z, t, o)
    }
    fn name(&self) -> &str {
        (**self).name()
    }
}

/// Hides a model's analytic derivatives so every derivative falls back to
/// finite differences over `phi`.
pub struct FiniteDifferenced<M>(pub M);

impl<M: Model> Model for FiniteDifferenced<M> {
    fn dims(&self) -> Dims {
        self.0.dims()
    }
    fn phi(&self, z: &[f64], t: &[f64], l: &[f64], o: &mut [f64]) {
        self.0.phi(z, t, l, o)
    }
    fn theta_domain(&self) -> Option<&BoxDomain> {
        self.0.theta_domain()
    }
    fn lambda_domain(&self) -> Option<&BoxDomain> {
        self.0.lambda_domain()
    }
    fn initial_theta(&self, data: &Dataset) -> Vec<f64> {
        self.0.initial_theta(data)
    }
}

pub struct FiniteDifferencedLoss<L>(pub L);

impl<L: Loss> Loss for FiniteDifferencedLoss<L> {
    fn psi(&self, z: &[f64], t: &[f64]) -> f64 {
        self.0.psi(z, t)
    }
}

type PhiFn = dyn Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync;
type PsiFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// Closure-backed model. Absent derivative handles use finite differences.
///
/// ```
/// use tuning_inference::model::{Model, ModelSpec};
/// // sample mean shrunk towards zero: phi = z - (1 + lambda) theta
/// let m = ModelSpec::new(1, 1, 1, |z, t, l, o| o[0] = z[0] - (1.0 + l[0]) * t[0]);
/// let mut j = [0.0];
/// m.dphi_dtheta(&[2.0], &[0.5], &[0.25], &mut j);
/// assert!((j[0] + 1.25).abs() < 1e-8);
/// ```
pub struct ModelSpec {
    dims: Dims,
    phi: Box<PhiFn>,
    dphi_dtheta: Option<Box<PhiFn>>,
    dphi_dlambda: Option<Box<PhiFn>>,
    hess_phi_theta: Option<Box<PhiFn>>,
    dphi_dlambda_dtheta: Option<Box<PhiFn>>,
    theta_domain: Option<BoxDomain>,
    lambda_domain: Option<BoxDomain>,
    initial: Option<Vec<f64>>,
    name: String,
}

impl ModelSpec {
    pub fn new<F>(p: usize, q: usize, d: usize, phi: F) -> Self
    where
        F: Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        ModelSpec {
            dims: Dims { p, q, d },
            phi: Box::new(phi),
            dphi_dtheta: None,
            dphi_dlambda: None,
            hess_phi_theta: None,
            dphi_dlambda_dtheta: None,
            theta_domain: None,
            lambda_domain: None,
            initial: None,
            name: "custom".into(),
        }
    }

    pub fn with_dphi_dtheta<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.dphi_dtheta = Some(Box::new(f));
        self
    }

    pub fn with_dphi_dlambda<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.dphi_dlambda = Some(Box::new(f));
        self
    }

    pub fn with_hess_phi_theta<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.hess_phi_theta = Some(Box::new(f));
        self
    }

    pub fn with_dphi_dlambda_dtheta<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.dphi_dlambda_dtheta = Some(Box::new(f));
        self
    }

    pub fn with_theta_domain(mut self, d: BoxDomain) -> Self {
        self.theta_domain = Some(d);
        self
    }

    pub fn with_lambda_domain(mut self, d: BoxDomain) -> Self {
        self.lambda_domain = Some(d);
        self
    }

    pub fn with_initial_theta(mut self, t: Vec<f64>) -> Self {
        self.initial = Some(t);
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

impl Model for ModelSpec {
    fn dims(&self) -> Dims {
        self.dims
    }
    fn phi(&self, z: &[f64], t: &[f64], l: &[f64], o: &mut [f64]) {
        (self.phi)(z, t, l, o)
    }
    fn dphi_dtheta(&self, z: &[f64], t: &[f64], l: &[f64], o: &mut [f64]) {
        match &self.dphi_dtheta {
            Some(f) => f(z, t, l, o),
            None => fd_dphi_dtheta(self, z, t, l, o),
        }
    }
    fn dphi_dlambda(&self, z: &[f64], t: &[f64], l: &[f64], o: &mut [f64]) {
        match &self.dphi_dlambda {
            Some(f) => f(z, t, l, o),
            None => fd_dphi_dlambda(self, z, t, l, o),
        }
    }
    fn hess_phi_theta(&self, z: &[f64], t: &[f64], l: &[f64], o: &mut [f64]) {
        match &self.hess_phi_theta {
            Some(f) => f(z, t, l, o),
            None => fd_hess_phi_theta(self, z, t, l, o),
        }
    }
    fn dphi_dlambda_dtheta(&self, z: &[f64], t: &[f64], l: &[f64], o: &mut [f64]) {
        match &self.dphi_dlambda_dtheta {
            Some(f) => f(z, t, l, o),
            None => fd_dphi_dlambda_dtheta(self, z, t, l, o),
        }
    }
    fn theta_domain(&self) -> Option<&BoxDomain> {
        self.theta_domain.as_ref()
    }
    fn lambda_domain(&self) -> Option<&BoxDomain> {
        self.lambda_domain.as_ref()
    }
    fn initial_theta(&self, _data: &Dataset) -> Vec<f64> {
        self.initial.clone().unwrap_or_else(|| vec![0.0; self.dims.p])
    }
    fn name(&self) -> &str {
        &self.name
    }
}

/// Closure-backed loss.
pub struct LossSpec {
    psi: Box<PsiFn>,
    grad: Option<Box<GradFn>>,
    hess: Option<Box<GradFn>>,
    name: String,
}

impl LossSpec {
    pub fn new<F>(psi: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        LossSpec { psi: Box::new(psi), grad: None, hess: None, name: "custom".into() }
    }

    pub fn with_grad<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.grad = Some(Box::new(f));
        self
    }

    pub fn with_hess<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.hess = Some(Box::new(f));
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

impl Loss for LossSpec {
    fn psi(&self, z: &[f64], t: &[f64]) -> f64 {
        (self.psi)(z, t)
    }
    fn grad_psi(&self, z: &[f64], t: &[f64], o: &mut [f64]) {
        match &self.grad {
            Some(f) => f(z, t, o),
            None => numdiff::gradient(t, |x| (self.psi)(z, x), o),
        }
    }
    fn hess_psi(&self, z: &[f64], t: &[f64], o: &mut [f64]) {
        match &self.hess {
            Some(f) => f(z, t, o),
            None => numdiff::hessians(t, 1, |x, r| r[0] = (self.psi)(z, x), o),
        }
    }
    fn name(&self) -> &str {
        &self.name
    }
}

/// Largest relative discrepancy (Frobenius, floored at 1) between the
/// model's derivative handles and finite differences of `phi` at one point.
pub fn derivative_discrepancy<M: Model + ?Sized>(m: &M, z: &[f64], theta: &[f64], lambda: &[f64]) -> f64 {
    let Dims { p, q, .. } = m.dims();
    let mut worst: f64 = 0.0;
    let mut compare = |a: &[f64], b: &[f64]| {
        let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
        worst = worst.max(diff / scale);
    };
    let (mut a, mut b) = (vec![0.0; p * p], vec![0.0; p * p]);
    m.dphi_dtheta(z, theta, lambda, &mut a);
    fd_dphi_dtheta(m, z, theta, lambda, &mut b);
    compare(&a, &b);
    let (mut a, mut b) = (vec![0.0; p * q], vec![0.0; p * q]);
    m.dphi_dlambda(z, theta, lambda, &mut a);
    fd_dphi_dlambda(m, z, theta, lambda, &mut b);
    compare(&a, &b);
    let (mut a, mut b) = (vec![0.0; p * p * p], vec![0.0; p * p * p]);
    m.hess_phi_theta(z, theta, lambda, &mut a);
    fd_hess_phi_theta(m, z, theta, lambda, &mut b);
    compare(&a, &b);
    let (mut a, mut b) = (vec![0.0; q * p * p], vec![0.0; q * p * p]);
    m.dphi_dlambda_dtheta(z, theta, lambda, &mut a);
    fd_dphi_dlambda_dtheta(m, z, theta, lambda, &mut b);
    compare(&a, &b);
    worst
}

/// Same as [`derivative_discrepancy`] for a loss.
pub fn loss_derivative_discrepancy<L: Loss + ?Sized>(l: &L, z: &[f64], theta: &[f64]) -> f64 {
    let p = theta.len();
    let (mut a, mut b) = (vec![0.0; p], vec![0.0; p]);
    l.grad_psi(z, theta, &mut a);
    numdiff::gradient(theta, |t| l.psi(z, t), &mut b);
    let rel = |a: &[f64], b: &[f64]| {
        let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        diff / a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0)
    };
    let g = rel(&a, &b);
    let (mut a, mut b) = (vec![0.0; p * p], vec![0.0; p * p]);
    l.hess_psi(z, theta, &mut a);
    numdiff::hessians(theta, 1, |t, o| o[0] = l.psi(z, t), &mut b);
    g.max(rel(&a, &b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_projection() {
        let b = BoxDomain::new(vec![0.0, -1.0], vec![1.0, 1.0]).unwrap();
        let mut x = [2.0, -3.0];
        b.project(&mut x);
        assert_eq!(x, [1.0, -1.0]);
        assert!(b.contains(&x));
        assert!(BoxDomain::interval(1.0, 1.0).is_err());
    }

    #[test]
    fn spec_fallbacks_populated() {
        let m = ModelSpec::new(2, 1, 1, |z, t, l, o| {
            o[0] = z[0] - t[0] * t[1] - l[0] * t[0];
            o[1] = t[1] * t[1] - l[0] * l[0] * t[0];
        });
        let (z, t, l) = ([1.0], [0.5, 2.0], [0.3]);
        let mut j = [0.0; 4];
        m.dphi_dtheta(&z, &t, &l, &mut j);
        let expect = [-2.0 - 0.3, -0.09, -0.5, 4.0];
        for (a, b) in j.iter().zip(expect) {
            assert!((a - b).abs() < 1e-8);
        }
        let mut h = [0.0; 8];
        m.hess_phi_theta(&z, &t, &l, &mut h);
        // phi_0 Hessian: [[0,-1],[-1,0]]; phi_1 Hessian: [[0,0],[0,2]]
        let expect = [0.0, -1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 2.0];
        for (a, b) in h.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6, "{h:?}");
        }
        let mut x = [0.0; 4];
        m.dphi_dlambda_dtheta(&z, &t, &l, &mut x);
        let expect = [-1.0, -0.6, 0.0, 0.0];
        for (a, b) in x.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6, "{x:?}");
        }
    }
}
