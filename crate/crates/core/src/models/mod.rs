//! Built-in estimating functions and losses.

mod design;
mod gaussian;
mod hybrid;
mod logistic;
mod losses;
pub mod oracle;
pub mod pima;
mod ridge;

pub use design::LinearDesign;
pub use gaussian::GaussianLikelihood;
pub use hybrid::{AtLambda, Hybrid, Score, ScoreSpec};
pub use logistic::{sigmoid, RidgeLogistic};
pub use losses::{Brier, Constant, GaussianNegLogLik, SquaredError};
pub use oracle::{ridge_closed_form, ridge_derivative_closed_form, ridge_loocv_closed_form};
pub use pima::make_pima_model;
pub use ridge::RidgeLinear;

#[cfg(test)]
mod tests;
