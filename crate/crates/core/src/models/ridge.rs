use crate::data::Dataset;
use crate::model::{Dims, Model};

use super::design::LinearDesign;

/// Penalized least squares:
/// `phi(z, beta, lambda) = -2 x~ (y - beta^T x~) + 2 lambda P beta`.
#[derive(Debug, Clone)]
pub struct RidgeLinear {
    pub design: LinearDesign,
}

impl RidgeLinear {
    pub fn new(design: LinearDesign) -> Self {
        RidgeLinear { design }
    }
}

impl Model for RidgeLinear {
    fn dims(&self) -> Dims {
        Dims { p: self.design.p(), q: 1, d: self.design.d }
    }

    fn phi(&self, z: &[f64], beta: &[f64], lambda: &[f64], out: &mut [f64]) {
        let dz = &self.design;
        let r = dz.y(z) - dz.eta(z, beta);
        for (k, o) in out.iter_mut().enumerate() {
            *o = -2.0 * dz.x(z, k) * r + 2.0 * lambda[0] * dz.pen(k) * beta[k];
        }
    }

    fn dphi_dtheta(&self, z: &[f64], _beta: &[f64], lambda: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        self.design.add_outer(z, 2.0, out);
        self.design.add_penalty(2.0 * lambda[0], out);
    }

    fn dphi_dlambda(&self, _z: &[f64], beta: &[f64], _lambda: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = 2.0 * self.design.pen(k) * beta[k];
        }
    }

    fn hess_phi_theta(&self, _z: &[f64], _beta: &[f64], _lambda: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn dphi_dlambda_dtheta(&self, _z: &[f64], _beta: &[f64], _lambda: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        self.design.add_penalty(2.0, out);
    }

    fn initial_theta(&self, _data: &Dataset) -> Vec<f64> {
        vec![0.0; self.design.p()]
    }

    fn name(&self) -> &str {
        "ridge-linear"
    }
}
