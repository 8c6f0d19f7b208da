use crate::data::Dataset;
use crate::model::{Dims, Model};

use super::design::LinearDesign;

#[inline]
pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Penalized logistic regression, per observation
/// `phi = x~ (y - p(x, beta)) - 2 lambda P beta`, the gradient of
/// `y log p + (1 - y) log(1 - p) - lambda |beta_1:|^2`.
///
/// The penalty of the summed log-likelihood is therefore `n lambda |beta_1:|^2`.
#[derive(Debug, Clone)]
pub struct RidgeLogistic {
    pub design: LinearDesign,
}

impl RidgeLogistic {
    pub fn new(design: LinearDesign) -> Self {
        RidgeLogistic { design }
    }

    #[inline]
    pub fn prob(&self, z: &[f64], beta: &[f64]) -> f64 {
        sigmoid(self.design.eta(z, beta))
    }
}

impl Model for RidgeLogistic {
    fn dims(&self) -> Dims {
        Dims { p: self.design.p(), q: 1, d: self.design.d }
    }

    fn phi(&self, z: &[f64], beta: &[f64], lambda: &[f64], out: &mut [f64]) {
        let dz = &self.design;
        let r = dz.y(z) - self.prob(z, beta);
        for (k, o) in out.iter_mut().enumerate() {
            *o = dz.x(z, k) * r - 2.0 * lambda[0] * dz.pen(k) * beta[k];
        }
    }

    fn dphi_dtheta(&self, z: &[f64], beta: &[f64], lambda: &[f64], out: &mut [f64]) {
        let pr = self.prob(z, beta);
        out.fill(0.0);
        self.design.add_outer(z, -pr * (1.0 - pr), out);
        self.design.add_penalty(-2.0 * lambda[0], out);
    }

    fn dphi_dlambda(&self, _z: &[f64], beta: &[f64], _lambda: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = -2.0 * self.design.pen(k) * beta[k];
        }
    }

    fn hess_phi_theta(&self, z: &[f64], beta: &[f64], _lambda: &[f64], out: &mut [f64]) {
        let p = self.design.p();
        let pr = self.prob(z, beta);
        let w = -pr * (1.0 - pr) * (1.0 - 2.0 * pr);
        out.fill(0.0);
        for k in 0..p {
            let block = &mut out[k * p * p..(k + 1) * p * p];
            self.design.add_outer(z, w * self.design.x(z, k), block);
        }
    }

    fn dphi_dlambda_dtheta(&self, _z: &[f64], _beta: &[f64], _lambda: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        self.design.add_penalty(-2.0, out);
    }

    fn initial_theta(&self, _data: &Dataset) -> Vec<f64> {
        vec![0.0; self.design.p()]
    }

    fn name(&self) -> &str {
        "ridge-logistic"
    }
}
