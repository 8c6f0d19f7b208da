//! Run configuration: command-line flags merged over an optional JSON file,
//! validated before anything runs.

use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use tuning_inference::criteria::Criterion;
use tuning_inference::data::{ColumnRoles, Dataset};
use tuning_inference::harness::{DgpKind, DgpSpec, Pipeline};
use tuning_inference::model::{BoxDomain, Loss, Model};
use tuning_inference::models::{
    Brier, GaussianLikelihood, GaussianNegLogLik, LinearDesign, RidgeLinear, RidgeLogistic, SquaredError,
};
use tuning_inference::tuner::TuneOptions;
use tuning_inference::variance::{VarianceOptions, Z1Method};
use tuning_inference::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "tuneinf", version, about = "Tuning-aware inference for estimators with a tuning parameter")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Fit,
    Tune,
    Variance,
    Simulate,
    Bootstrap,
    StoneCheck,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the estimating equation at a fixed lambda.
    Fit(Flags),
    /// Minimize a risk criterion over lambda; writes fit.json and trace.csv.
    Tune(Flags),
    /// Tuning-aware and pointwise variances; writes variance.json.
    Variance(Flags),
    /// Monte Carlo replications from a data-generating process.
    Simulate(Flags),
    /// Nonparametric bootstrap of the tuned estimator.
    Bootstrap(Flags),
    /// Scaled gap between exact LOO and the trace-corrected training error over a grid of n.
    StoneCheck(Flags),
}

impl Command {
    pub fn split(self) -> (CommandKind, Flags) {
        match self {
            Command::Fit(f) => (CommandKind::Fit, f),
            Command::Tune(f) => (CommandKind::Tune, f),
            Command::Variance(f) => (CommandKind::Variance, f),
            Command::Simulate(f) => (CommandKind::Simulate, f),
            Command::Bootstrap(f) => (CommandKind::Bootstrap, f),
            Command::StoneCheck(f) => (CommandKind::StoneCheck, f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    RidgeLinear,
    RidgeLogistic,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossName {
    Squared,
    Brier,
    GaussianNll,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Z1Name {
    /// Profile curvature when tuning by training error, the tuning criterion's own curvature otherwise.
    Auto,
    Profile,
    ChainRule,
    Criterion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DgpName {
    GaussMix,
    LinearGaussian,
    LogisticTrue,
    GaussianIid,
}

/// Flags shared by every command. Anything set here overrides `--config`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Flags {
    /// JSON file with any of these settings (kebab-case keys).
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Command the config file is meant for; rejected if it differs.
    #[arg(skip)]
    pub command: Option<CommandKind>,
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelName>,
    /// Defaults to the model's natural loss.
    #[arg(long, value_enum)]
    pub loss: Option<LossName>,
    /// Response column, by name or 0-based index (default: first column).
    #[arg(long)]
    pub response: Option<String>,
    /// Covariate columns (default: all others).
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// te, cv, cv-fast, te-trace-corrected, holdout, aic, bic or tic.
    #[arg(long)]
    pub criterion: Option<String>,
    /// Share of rows used for fitting by the holdout criterion.
    #[arg(long)]
    pub holdout_split: Option<f64>,
    /// Fixed lambda for `fit` and `stone-check`.
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_max: Option<f64>,
    /// Number of grid points before local refinement.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replications or bootstrap resamples.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// How the second derivative of the tuning criterion is estimated.
    #[arg(long, value_enum)]
    pub z1: Option<Z1Name>,
    /// Previously written fit.json to compute variances for.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Data-generating process for `simulate` and `stone-check`.
    #[arg(long, value_enum)]
    pub dgp: Option<DgpName>,
    /// Sample size per simulated dataset.
    #[arg(long)]
    pub n: Option<usize>,
    /// Mixture covariance parameters; one run per value.
    #[arg(long = "c", value_delimiter = ',')]
    pub c_values: Option<Vec<f64>>,
    /// Coefficients (intercept first) for the linear and logistic processes.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub beta: Option<Vec<f64>>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub quadratic: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub mean: Option<f64>,
    #[arg(long)]
    pub sd: Option<f64>,
    /// Sample sizes for `stone-check`.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Histogram bins for draw summaries.
    #[arg(long)]
    pub bins: Option<usize>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f.clone(); } )*
    };
}

impl Flags {
    /// Reads `--config` (if any) and lays the command-line flags over it.
    pub fn resolve(self, kind: CommandKind) -> Result<Flags> {
        let mut base = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                serde_json::from_str::<Flags>(&text).map_err(|e| Error::Parse {
                    line: e.line(),
                    message: format!("{}: {e}", path.display()),
                })?
            }
            None => Flags::default(),
        };
        if let Some(c) = base.command {
            if c != kind {
                return Err(Error::InvalidInput(format!("config file is for command {c:?}, not {kind:?}")));
            }
        }
        let top = self;
        overlay!(base, top; data, model, loss, response, covariates, criterion, holdout_split, lambda, lambda_min,
            lambda_max, grid, seed, reps, threads, out, z1, fit, dgp, n, c_values, beta, sigma, quadratic, mean, sd,
            sizes, bins);
        base.command = Some(kind);
        base.validate()?;
        Ok(base)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if let (Some(a), Some(b)) = (self.lambda_min, self.lambda_max) {
            if !(a < b) {
                return bad("--lambda-min must be below --lambda-max");
            }
        }
        if self.grid.is_some_and(|g| g < 5) {
            return bad("--grid needs at least 5 points");
        }
        if self.reps.is_some_and(|r| r < 2) {
            return bad("--reps needs at least 2");
        }
        if self.threads == Some(0) {
            return bad("--threads must be positive");
        }
        if self.holdout_split.is_some_and(|s| !(s > 0.0 && s < 1.0)) {
            return bad("--holdout-split must lie strictly between 0 and 1");
        }
        if let Some(c) = &self.criterion {
            self.parse_criterion(c)?;
        }
        Ok(())
    }

    fn parse_criterion(&self, s: &str) -> Result<Criterion> {
        let c = Criterion::parse(s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown criterion '{s}'")))?;
        Ok(match c {
            Criterion::Holdout { .. } => {
                Criterion::Holdout { split: self.holdout_split.unwrap_or(0.5), seed: self.seed.unwrap_or(0) }
            }
            c => c,
        })
    }

    pub fn criterion(&self) -> Result<Criterion> {
        self.parse_criterion(self.criterion.as_deref().unwrap_or("cv"))
    }

    pub fn model_name(&self) -> ModelName {
        self.model.unwrap_or(ModelName::RidgeLinear)
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        Ok(dir)
    }

    pub fn bounds(&self) -> Result<BoxDomain> {
        let default = match self.model_name() {
            ModelName::RidgeLogistic => (0.0, 0.1),
            _ => (0.0, 1.0),
        };
        BoxDomain::interval(self.lambda_min.unwrap_or(default.0), self.lambda_max.unwrap_or(default.1))
    }

    pub fn tune_options(&self) -> TuneOptions {
        TuneOptions { grid_size: self.grid.unwrap_or(21), seed: self.seed.unwrap_or(0), ..TuneOptions::default() }
    }

    /// Variance settings for a fit tuned by `criterion`.
    pub fn variance_options(&self, criterion: Criterion) -> VarianceOptions {
        let z1 = match self.z1.unwrap_or(Z1Name::Auto) {
            Z1Name::Auto if criterion == Criterion::Te => Z1Method::Profile,
            Z1Name::Auto => Z1Method::TuningCriterion,
            Z1Name::Profile => Z1Method::Profile,
            Z1Name::ChainRule => Z1Method::ChainRule,
            Z1Name::Criterion => Z1Method::TuningCriterion,
        };
        VarianceOptions { z1, ..VarianceOptions::default() }
    }

    pub fn load_data(&self) -> Result<Dataset> {
        let path = self.data.as_ref().ok_or_else(|| Error::InvalidInput("--data is required".into()))?;
        Dataset::from_csv_path(path)
    }

    /// Response and covariate indices within `names`.
    pub fn roles(&self, names: &[String]) -> Result<ColumnRoles> {
        let find = |s: &str| -> Result<usize> {
            if let Some(i) = names.iter().position(|n| n == s) {
                return Ok(i);
            }
            match s.parse::<usize>() {
                Ok(i) if i < names.len() => Ok(i),
                _ => Err(Error::InvalidInput(format!("no column '{s}' (columns: {})", names.join(", ")))),
            }
        };
        let response = match &self.response {
            Some(r) => find(r)?,
            None => 0,
        };
        let covariates = match &self.covariates {
            Some(c) => c.iter().map(|s| find(s)).collect::<Result<Vec<_>>>()?,
            None => (0..names.len()).filter(|&j| j != response).collect(),
        };
        if covariates.contains(&response) {
            return Err(Error::InvalidInput("the response cannot also be a covariate".into()));
        }
        Ok(ColumnRoles { response, covariates })
    }

    /// Estimating equation and loss for data whose columns are `names`.
    pub fn build(&self, names: &[String]) -> Result<(Arc<dyn Model>, Arc<dyn Loss>)> {
        let roles = self.roles(names)?;
        let design = LinearDesign::new(names.len(), roles.response, roles.covariates)?;
        let model_name = self.model_name();
        let loss_name = self.loss.unwrap_or(match model_name {
            ModelName::RidgeLinear => LossName::Squared,
            ModelName::RidgeLogistic => LossName::Brier,
            ModelName::Gaussian => LossName::GaussianNll,
        });
        let gaussian = GaussianLikelihood::new(design.clone());
        let model: Arc<dyn Model> = match model_name {
            ModelName::RidgeLinear => Arc::new(RidgeLinear::new(design.clone())),
            ModelName::RidgeLogistic => Arc::new(RidgeLogistic::new(design.clone())),
            ModelName::Gaussian => Arc::new(gaussian.clone()),
        };
        let loss: Arc<dyn Loss> = match (loss_name, model_name) {
            (LossName::GaussianNll, ModelName::Gaussian) => Arc::new(GaussianNegLogLik::new(gaussian)),
            (LossName::GaussianNll, _) => {
                return Err(Error::InvalidInput("the gaussian-nll loss needs the gaussian model".into()))
            }
            (_, ModelName::Gaussian) => {
                return Err(Error::InvalidInput("the gaussian model is scored by the gaussian-nll loss".into()))
            }
            (LossName::Squared, _) => Arc::new(SquaredError::new(design)),
            (LossName::Brier, _) => Arc::new(Brier::new(design)),
        };
        Ok((model, loss))
    }

    pub fn pipeline(&self, names: &[String], with_variance: bool) -> Result<Pipeline> {
        let (model, loss) = self.build(names)?;
        let criterion = self.criterion()?;
        Ok(Pipeline::new(model, loss, criterion, self.bounds()?)
            .with_tune(self.tune_options())
            .with_variance(with_variance.then(|| self.variance_options(criterion))))
    }

    /// One process per `--c` value for the mixture, otherwise a single one.
    pub fn dgps(&self) -> Result<Vec<(String, DgpSpec)>> {
        let n = self.n.unwrap_or(100);
        let seed = self.seed.unwrap_or(0);
        let beta = || self.beta.clone().unwrap_or_else(|| vec![1.0, 0.5, -0.5]);
        let kind = |k| DgpSpec::new(k, n, seed);
        Ok(match self.dgp.unwrap_or(DgpName::LinearGaussian) {
            DgpName::GaussMix => self
                .c_values
                .clone()
                .unwrap_or_else(|| vec![0.0])
                .into_iter()
                .map(|c| (format!("c={c}"), kind(DgpKind::GaussMix { c })))
                .collect(),
            DgpName::LinearGaussian => vec![(
                "linear-gaussian".into(),
                kind(DgpKind::LinearGaussian {
                    beta: beta(),
                    sigma: self.sigma.unwrap_or(1.0),
                    quadratic: self.quadratic.unwrap_or(0.0),
                }),
            )],
            DgpName::LogisticTrue => vec![("logistic".into(), kind(DgpKind::LogisticTrue { beta: beta() }))],
            DgpName::GaussianIid => vec![(
                "gaussian-iid".into(),
                kind(DgpKind::GaussianIid { mean: self.mean.unwrap_or(0.0), sd: self.sd.unwrap_or(1.0) }),
            )],
        })
    }
}
