use std::sync::Arc;

use crate::model::Loss;

use super::design::LinearDesign;
use super::gaussian::GaussianLikelihood;
use super::logistic::sigmoid;

type WeightFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// `psi = w(z) (y - beta^T x~)^2`, with `w = 1` unless a weight is set.
#[derive(Clone)]
pub struct SquaredError {
    pub design: LinearDesign,
    weight: Option<Arc<WeightFn>>,
}

impl SquaredError {
    pub fn new(design: LinearDesign) -> Self {
        SquaredError { design, weight: None }
    }

    pub fn with_weight(mut self, w: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.weight = Some(Arc::new(w));
        self
    }

    #[inline]
    fn w(&self, z: &[f64]) -> f64 {
        self.weight.as_ref().map_or(1.0, |w| w(z))
    }
}

impl Loss for SquaredError {
    fn psi(&self, z: &[f64], beta: &[f64]) -> f64 {
        let r = self.design.y(z) - self.design.eta(z, beta);
        self.w(z) * r * r
    }

    fn grad_psi(&self, z: &[f64], beta: &[f64], out: &mut [f64]) {
        let r = self.design.y(z) - self.design.eta(z, beta);
        let s = -2.0 * self.w(z) * r;
        for (k, o) in out.iter_mut().enumerate() {
            *o = s * self.design.x(z, k);
        }
    }

    fn hess_psi(&self, z: &[f64], _beta: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        self.design.add_outer(z, 2.0 * self.w(z), out);
    }

    fn name(&self) -> &str {
        "squared-error"
    }
}

/// Brier score `(y - p)^2` of a logistic fit, where the probability uses
/// only the coefficients flagged in `active` (all by default).
#[derive(Debug, Clone)]
pub struct Brier {
    pub design: LinearDesign,
    pub active: Vec<bool>,
}

impl Brier {
    pub fn new(design: LinearDesign) -> Self {
        let active = vec![true; design.p()];
        Brier { design, active }
    }

    pub fn with_active(mut self, active: Vec<bool>) -> Self {
        assert_eq!(active.len(), self.design.p(), "one flag per coefficient");
        self.active = active;
        self
    }

    #[inline]
    fn prob(&self, z: &[f64], beta: &[f64]) -> f64 {
        let eta: f64 = (0..self.design.p())
            .filter(|&k| self.active[k])
            .map(|k| self.design.x(z, k) * beta[k])
            .sum();
        sigmoid(eta)
    }
}

impl Loss for Brier {
    fn psi(&self, z: &[f64], beta: &[f64]) -> f64 {
        let r = self.design.y(z) - self.prob(z, beta);
        r * r
    }

    fn grad_psi(&self, z: &[f64], beta: &[f64], out: &mut [f64]) {
        let pr = self.prob(z, beta);
        let g = -2.0 * (self.design.y(z) - pr) * pr * (1.0 - pr);
        for (k, o) in out.iter_mut().enumerate() {
            *o = if self.active[k] { g * self.design.x(z, k) } else { 0.0 };
        }
    }

    fn hess_psi(&self, z: &[f64], beta: &[f64], out: &mut [f64]) {
        let p = self.design.p();
        let pr = self.prob(z, beta);
        let v = pr * (1.0 - pr);
        let h = 2.0 * v * v - 2.0 * (self.design.y(z) - pr) * v * (1.0 - 2.0 * pr);
        for b in 0..p {
            for a in 0..p {
                out[a + b * p] = if self.active[a] && self.active[b] {
                    h * self.design.x(z, a) * self.design.x(z, b)
                } else {
                    0.0
                };
            }
        }
    }

    fn name(&self) -> &str {
        "brier"
    }
}

/// `psi = -log f` for [`GaussianLikelihood`].
#[derive(Debug, Clone)]
pub struct GaussianNegLogLik {
    pub model: GaussianLikelihood,
}

impl GaussianNegLogLik {
    pub fn new(model: GaussianLikelihood) -> Self {
        GaussianNegLogLik { model }
    }
}

impl Loss for GaussianNegLogLik {
    fn psi(&self, z: &[f64], t: &[f64]) -> f64 {
        -self.model.log_density(z, t)
    }

    fn grad_psi(&self, z: &[f64], t: &[f64], out: &mut [f64]) {
        use crate::model::Model;
        self.model.phi(z, t, &[0.0], out);
        out.iter_mut().for_each(|v| *v = -*v);
    }

    fn hess_psi(&self, z: &[f64], t: &[f64], out: &mut [f64]) {
        use crate::model::Model;
        self.model.dphi_dtheta(z, t, &[0.0], out);
        out.iter_mut().for_each(|v| *v = -*v);
    }

    fn name(&self) -> &str {
        "gaussian-nll"
    }
}

/// `psi = c`.
#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f64);

impl Loss for Constant {
    fn psi(&self, _z: &[f64], _t: &[f64]) -> f64 {
        self.0
    }
    fn grad_psi(&self, _z: &[f64], _t: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn hess_psi(&self, _z: &[f64], _t: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn name(&self) -> &str {
        "constant"
    }
}
