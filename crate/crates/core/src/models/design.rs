use serde::{Deserialize, Serialize};

use crate::data::{ColumnRoles, Dataset};
use crate::error::{Error, Result};

/// Maps a data row `z` to a response `y` and an intercept-augmented
/// covariate vector `x~ = (1, x)`, with a mask of penalized coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearDesign {
    pub d: usize,
    pub response: usize,
    pub covariates: Vec<usize>,
    /// One flag per coefficient (intercept first).
    pub penalized: Vec<bool>,
}

impl LinearDesign {
    /// Intercept unpenalized, every slope penalized.
    pub fn new(d: usize, response: usize, covariates: Vec<usize>) -> Result<Self> {
        if let Some(&c) = covariates.iter().chain(std::iter::once(&response)).find(|&&c| c >= d) {
            return Err(Error::InvalidInput(format!("column {c} out of range for rows of width {d}")));
        }
        if covariates.contains(&response) {
            return Err(Error::InvalidInput("response column listed as a covariate".into()));
        }
        let mut penalized = vec![true; covariates.len() + 1];
        penalized[0] = false;
        Ok(LinearDesign { d, response, covariates, penalized })
    }

    pub fn from_roles(data: &Dataset) -> Result<Self> {
        let ColumnRoles { response, covariates } = data
            .roles()
            .cloned()
            .ok_or_else(|| Error::InvalidInput("dataset has no response/covariate roles".into()))?;
        Self::new(data.d(), response, covariates)
    }

    pub fn with_penalty_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.p() {
            return Err(Error::InvalidInput(format!("penalty mask needs {} entries", self.p())));
        }
        self.penalized = mask;
        Ok(self)
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.covariates.len() + 1
    }

    #[inline]
    pub fn y(&self, z: &[f64]) -> f64 {
        z[self.response]
    }

    #[inline]
    pub fn x(&self, z: &[f64], k: usize) -> f64 {
        if k == 0 {
            1.0
        } else {
            z[self.covariates[k - 1]]
        }
    }

    #[inline]
    pub fn eta(&self, z: &[f64], beta: &[f64]) -> f64 {
        beta[0] + self.covariates.iter().zip(&beta[1..]).map(|(&c, b)| z[c] * b).sum::<f64>()
    }

    #[inline]
    pub fn pen(&self, k: usize) -> f64 {
        if self.penalized[k] {
            1.0
        } else {
            0.0
        }
    }

    /// Adds `scale * x~ x~^T` into a `p x p` column-major block.
    #[inline]
    pub fn add_outer(&self, z: &[f64], scale: f64, out: &mut [f64]) {
        self.add_outer_strided(z, scale, out, self.p());
    }

    /// As [`LinearDesign::add_outer`] into the leading block of a matrix
    /// with `stride` rows.
    #[inline]
    pub fn add_outer_strided(&self, z: &[f64], scale: f64, out: &mut [f64], stride: usize) {
        let p = self.p();
        for b in 0..p {
            let xb = scale * self.x(z, b);
            for a in 0..p {
                out[a + b * stride] += xb * self.x(z, a);
            }
        }
    }

    /// Adds `scale * P` into a `p x p` column-major block.
    #[inline]
    pub fn add_penalty(&self, scale: f64, out: &mut [f64]) {
        let p = self.p();
        for k in 0..p {
            out[k + k * p] += scale * self.pen(k);
        }
    }
}
