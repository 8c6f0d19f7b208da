use crate::data::Dataset;
use crate::model::{BoxDomain, Dims, Model};

use super::design::LinearDesign;

/// Gaussian linear model `y = beta^T x~ + e`, `e ~ N(0, s)`, with
/// `theta = (beta, s)` and `phi` the log-likelihood score. With no
/// covariates this is the location-scale model. `lambda` is a dummy
/// coordinate that `phi` does not depend on.
#[derive(Debug, Clone)]
pub struct GaussianLikelihood {
    pub design: LinearDesign,
    domain: BoxDomain,
}

impl GaussianLikelihood {
    pub fn new(design: LinearDesign) -> Self {
        let p = design.p() + 1;
        let mut lower = vec![f64::NEG_INFINITY; p];
        lower[p - 1] = 1e-12;
        let domain = BoxDomain { lower, upper: vec![f64::INFINITY; p] };
        GaussianLikelihood { design, domain }
    }

    /// Univariate `N(mu, s)` on column `col` of rows of width `d`.
    pub fn location(d: usize, col: usize) -> crate::Result<Self> {
        Ok(Self::new(LinearDesign::new(d, col, vec![])?))
    }

    #[inline]
    fn resid(&self, z: &[f64], t: &[f64]) -> f64 {
        self.design.y(z) - self.design.eta(z, t)
    }

    /// `log f(z; theta)`.
    pub fn log_density(&self, z: &[f64], t: &[f64]) -> f64 {
        let s = t[self.design.p()];
        let r = self.resid(z, t);
        -0.5 * (2.0 * std::f64::consts::PI * s).ln() - r * r / (2.0 * s)
    }
}

impl Model for GaussianLikelihood {
    fn dims(&self) -> Dims {
        Dims { p: self.design.p() + 1, q: 1, d: self.design.d }
    }

    fn phi(&self, z: &[f64], t: &[f64], _l: &[f64], out: &mut [f64]) {
        let k = self.design.p();
        let s = t[k];
        let r = self.resid(z, t);
        for (a, o) in out[..k].iter_mut().enumerate() {
            *o = self.design.x(z, a) * r / s;
        }
        out[k] = -0.5 / s + r * r / (2.0 * s * s);
    }

    fn dphi_dtheta(&self, z: &[f64], t: &[f64], _l: &[f64], out: &mut [f64]) {
        let k = self.design.p();
        let p = k + 1;
        let s = t[k];
        let r = self.resid(z, t);
        out.fill(0.0);
        self.design.add_outer_strided(z, -1.0 / s, out, p);
        for a in 0..k {
            let v = -self.design.x(z, a) * r / (s * s);
            out[a + k * p] = v;
            out[k + a * p] = v;
        }
        out[k + k * p] = 0.5 / (s * s) - r * r / (s * s * s);
    }

    fn dphi_dlambda(&self, _z: &[f64], _t: &[f64], _l: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn hess_phi_theta(&self, z: &[f64], t: &[f64], _l: &[f64], out: &mut [f64]) {
        let k = self.design.p();
        let p = k + 1;
        let s = t[k];
        let (s2, s3) = (s * s, s * s * s);
        let r = self.resid(z, t);
        out.fill(0.0);
        for c in 0..k {
            let xc = self.design.x(z, c);
            let block = &mut out[c * p * p..(c + 1) * p * p];
            for a in 0..k {
                let v = xc * self.design.x(z, a) / s2;
                block[a + k * p] = v;
                block[k + a * p] = v;
            }
            block[k + k * p] = 2.0 * xc * r / s3;
        }
        let block = &mut out[k * p * p..];
        self.design.add_outer_strided(z, 1.0 / s2, block, p);
        for a in 0..k {
            let v = 2.0 * self.design.x(z, a) * r / s3;
            block[a + k * p] = v;
            block[k + a * p] = v;
        }
        block[k + k * p] = -1.0 / s3 + 3.0 * r * r / (s2 * s2);
    }

    fn dphi_dlambda_dtheta(&self, _z: &[f64], _t: &[f64], _l: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn theta_domain(&self) -> Option<&BoxDomain> {
        Some(&self.domain)
    }

    fn initial_theta(&self, data: &Dataset) -> Vec<f64> {
        let y = data.column(self.design.response);
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let mut t = vec![0.0; self.design.p() + 1];
        t[0] = mean;
        t[self.design.p()] = var.max(1e-6);
        t
    }

    fn name(&self) -> &str {
        "gaussian"
    }
}
