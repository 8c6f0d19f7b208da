use crate::data::Dataset;
use crate::model::{BoxDomain, Dims, Model};
use crate::numdiff;

/// A `lambda`-free estimating function `gamma(z, theta)`, the building block
/// of [`Hybrid`]. Derivatives default to finite differences.
pub trait Score: Send + Sync {
    fn p(&self) -> usize;
    fn d(&self) -> usize;
    fn score(&self, z: &[f64], theta: &[f64], out: &mut [f64]);

    fn jacobian(&self, z: &[f64], theta: &[f64], out: &mut [f64]) {
        numdiff::jacobian(theta, self.p(), |t, o| self.score(z, t, o), out)
    }

    fn hessians(&self, z: &[f64], theta: &[f64], out: &mut [f64]) {
        numdiff::hessians(theta, self.p(), |t, o| self.score(z, t, o), out)
    }
}

/// Any model frozen at a fixed `lambda`.
pub struct AtLambda<M> {
    pub model: M,
    pub lambda: Vec<f64>,
}

impl<M: Model> Score for AtLambda<M> {
    fn p(&self) -> usize {
        self.model.dims().p
    }
    fn d(&self) -> usize {
        self.model.dims().d
    }
    fn score(&self, z: &[f64], theta: &[f64], out: &mut [f64]) {
        self.model.phi(z, theta, &self.lambda, out)
    }
    fn jacobian(&self, z: &[f64], theta: &[f64], out: &mut [f64]) {
        self.model.dphi_dtheta(z, theta, &self.lambda, out)
    }
    fn hessians(&self, z: &[f64], theta: &[f64], out: &mut [f64]) {
        self.model.hess_phi_theta(z, theta, &self.lambda, out)
    }
}

type ScoreFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// Closure-backed [`Score`].
pub struct ScoreSpec {
    p: usize,
    d: usize,
    f: Box<ScoreFn>,
    jac: Option<Box<ScoreFn>>,
}

impl ScoreSpec {
    pub fn new<F>(p: usize, d: usize, f: F) -> Self
    where
        F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        ScoreSpec { p, d, f: Box::new(f), jac: None }
    }

    pub fn with_jacobian<F>(mut self, j: F) -> Self
    where
        F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.jac = Some(Box::new(j));
        self
    }
}

impl Score for ScoreSpec {
    fn p(&self) -> usize {
        self.p
    }
    fn d(&self) -> usize {
        self.d
    }
    fn score(&self, z: &[f64], theta: &[f64], out: &mut [f64]) {
        (self.f)(z, theta, out)
    }
    fn jacobian(&self, z: &[f64], theta: &[f64], out: &mut [f64]) {
        match &self.jac {
            Some(j) => j(z, theta, out),
            None => numdiff::jacobian(theta, self.p, |t, o| (self.f)(z, t, o), out),
        }
    }
}

/// Convex combination `phi = lambda gamma_1 + (1 - lambda) gamma_2`, `lambda in [0, 1]`.
///
/// Both scores are evaluated for every row, so `phi` and every derivative
/// need two passes and scratch space; the scratch is kept on the stack for
/// `p <= 8`.
pub struct Hybrid<A, B> {
    pub first: A,
    pub second: B,
    domain: BoxDomain,
    initial: Option<Vec<f64>>,
}

impl<A: Score, B: Score> Hybrid<A, B> {
    pub fn new(first: A, second: B) -> crate::Result<Self> {
        if first.p() != second.p() || first.d() != second.d() {
            return Err(crate::Error::InvalidInput("hybrid components must share p and d".into()));
        }
        Ok(Hybrid { first, second, domain: BoxDomain::interval(0.0, 1.0)?, initial: None })
    }

    pub fn with_initial_theta(mut self, t: Vec<f64>) -> Self {
        self.initial = Some(t);
        self
    }
}

fn with_scratch<R>(len: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
    if len <= 64 {
        let mut buf = [0.0; 64];
        f(&mut buf[..len])
    } else {
        f(&mut vec![0.0; len])
    }
}

impl<A: Score, B: Score> Model for Hybrid<A, B> {
    fn dims(&self) -> Dims {
        Dims { p: self.first.p(), q: 1, d: self.first.d() }
    }

    fn phi(&self, z: &[f64], t: &[f64], l: &[f64], out: &mut [f64]) {
        with_scratch(out.len(), |s| {
            self.first.score(z, t, out);
            self.second.score(z, t, s);
            for (o, v) in out.iter_mut().zip(s.iter()) {
                *o = l[0] * *o + (1.0 - l[0]) * v;
            }
        })
    }

    fn dphi_dtheta(&self, z: &[f64], t: &[f64], l: &[f64], out: &mut [f64]) {
        let mut s = vec![0.0; out.len()];
        self.first.jacobian(z, t, out);
        self.second.jacobian(z, t, &mut s);
        for (o, v) in out.iter_mut().zip(&s) {
            *o = l[0] * *o + (1.0 - l[0]) * v;
        }
    }

    fn dphi_dlambda(&self, z: &[f64], t: &[f64], _l: &[f64], out: &mut [f64]) {
        with_scratch(out.len(), |s| {
            self.first.score(z, t, out);
            self.second.score(z, t, s);
            for (o, v) in out.iter_mut().zip(s.iter()) {
                *o -= v;
            }
        })
    }

    fn hess_phi_theta(&self, z: &[f64], t: &[f64], l: &[f64], out: &mut [f64]) {
        let mut s = vec![0.0; out.len()];
        self.first.hessians(z, t, out);
        self.second.hessians(z, t, &mut s);
        for (o, v) in out.iter_mut().zip(&s) {
            *o = l[0] * *o + (1.0 - l[0]) * v;
        }
    }

    fn dphi_dlambda_dtheta(&self, z: &[f64], t: &[f64], _l: &[f64], out: &mut [f64]) {
        let mut s = vec![0.0; out.len()];
        self.first.jacobian(z, t, out);
        self.second.jacobian(z, t, &mut s);
        for (o, v) in out.iter_mut().zip(&s) {
            *o -= v;
        }
    }

    fn lambda_domain(&self) -> Option<&BoxDomain> {
        Some(&self.domain)
    }

    fn initial_theta(&self, _data: &Dataset) -> Vec<f64> {
        self.initial.clone().unwrap_or_else(|| vec![0.0; self.first.p()])
    }

    fn name(&self) -> &str {
        "hybrid"
    }
}
