//! Monte Carlo engine: data-generating processes, replication loops, the
//! nonparametric bootstrap and the limiting-law check for truncated
//! estimators.
//!
//! Every output is a pure function of its configuration and master seed.
//! Replication `j` draws from its own stream `stream_seed(seed, j)`, work is
//! spread over the rayon pool, and results are merged in replication order.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, RngCore, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::{SplitMix64, Xoshiro256PlusPlus};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::Criterion;
use crate::data::{ColumnRoles, Dataset};
use crate::error::{Error, Result};
use crate::model::{BoxDomain, Loss, Model};
use crate::models::sigmoid;
use crate::report::{matrix_rows, opt_matrix_rows, SCHEMA_VERSION};
use crate::tuner::{truncated_estimate, tune, BoundaryStatus, TruncationCase, TuneOptions};
use crate::variance::{assemble_components, lambda_influence, variance_report, VarianceOptions};

/// Generator used for all simulation draws.
pub type SimRng = Xoshiro256PlusPlus;

/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_RATE: f64 = 0.05;

/// Seed of stream `j` under master seed `seed`: the `j`-th SplitMix64 jump.
pub fn stream_seed(seed: u64, j: u64) -> u64 {
    SplitMix64::seed_from_u64(seed.wrapping_add(j.wrapping_mul(0x9E37_79B9_7F4A_7C15))).next_u64()
}

pub fn stream_rng(seed: u64, j: u64) -> SimRng {
    SimRng::seed_from_u64(stream_seed(seed, j))
}

/// Draws one observation row.
pub type RowSampler = Arc<dyn Fn(&mut SimRng) -> Vec<f64> + Send + Sync>;

/// Data-generating process. Generated rows put the response in column 0.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DgpKind {
    /// Two-class Gaussian mixture: `Y ~ Bernoulli(1/2)`, `X | Y=0 ~ N(mu, S)`,
    /// `X | Y=1 ~ N(-mu, 2S)` with `mu = (1/2, 1/2)`, `S` having diagonal 2
    /// and off-diagonal `-sqrt(c/2)`, `0 <= c <= 8`. Rows are `(y, x1, x2)`.
    GaussMix { c: f64 },
    /// `y = beta_0 + sum_k beta_k x_k + quadratic x_1^2 + sigma e` with
    /// independent standard normal `x_k` and `e`.
    LinearGaussian {
        beta: Vec<f64>,
        sigma: f64,
        #[serde(default)]
        quadratic: f64,
    },
    /// `P(y = 1 | x) = sigmoid(beta_0 + sum_k beta_k x_k)`, standard normal `x_k`.
    LogisticTrue { beta: Vec<f64> },
    /// A single column of `N(mean, sd^2)` draws.
    GaussianIid { mean: f64, sd: f64 },
    /// User sampler producing rows of width `d`; response in column `response`.
    #[serde(skip)]
    Custom { sampler: RowSampler, d: usize, response: usize },
}

impl std::fmt::Debug for DgpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DgpKind::GaussMix { c } => f.debug_struct("GaussMix").field("c", c).finish(),
            DgpKind::LinearGaussian { beta, sigma, quadratic } => f
                .debug_struct("LinearGaussian")
                .field("beta", beta)
                .field("sigma", sigma)
                .field("quadratic", quadratic)
                .finish(),
            DgpKind::LogisticTrue { beta } => f.debug_struct("LogisticTrue").field("beta", beta).finish(),
            DgpKind::GaussianIid { mean, sd } => {
                f.debug_struct("GaussianIid").field("mean", mean).field("sd", sd).finish()
            }
            DgpKind::Custom { d, response, .. } => {
                f.debug_struct("Custom").field("d", d).field("response", response).finish_non_exhaustive()
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpSpec {
    #[serde(flatten)]
    pub kind: DgpKind,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(kind: DgpKind, n: usize, seed: u64) -> Self {
        DgpSpec { kind, n, seed }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        DgpSpec { seed, ..self.clone() }
    }

    pub fn with_n(&self, n: usize) -> Self {
        DgpSpec { n, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.n == 0 {
            return bad("sample size must be positive".into());
        }
        match &self.kind {
            DgpKind::GaussMix { c } if !(0.0..=8.0).contains(c) => {
                bad(format!("mixture parameter c = {c} outside [0, 8]; the covariance would not be positive semidefinite"))
            }
            DgpKind::LinearGaussian { beta, sigma, quadratic } => {
                if beta.is_empty() || !(*sigma >= 0.0) || !quadratic.is_finite() {
                    bad("linear design needs an intercept and a nonnegative noise level".into())
                } else {
                    Ok(())
                }
            }
            DgpKind::LogisticTrue { beta } if beta.is_empty() => bad("logistic design needs an intercept".into()),
            DgpKind::GaussianIid { sd, .. } if !(*sd >= 0.0) => bad("standard deviation must be nonnegative".into()),
            DgpKind::Custom { d, response, .. } if *response >= *d => {
                bad("custom sampler response index out of range".into())
            }
            _ => Ok(()),
        }
    }

    fn width(&self) -> usize {
        match &self.kind {
            DgpKind::GaussMix { .. } => 3,
            DgpKind::LinearGaussian { beta, .. } | DgpKind::LogisticTrue { beta } => beta.len(),
            DgpKind::GaussianIid { .. } => 1,
            DgpKind::Custom { d, .. } => *d,
        }
    }

    fn draw(&self, rng: &mut SimRng, out: &mut Vec<f64>) {
        let mut z = || -> f64 { rng.sample(StandardNormal) };
        match &self.kind {
            DgpKind::GaussMix { c } => {
                let s = (c / 2.0).sqrt();
                let (z1, z2) = (z(), z());
                let x1 = 2f64.sqrt() * z1;
                let x2 = -s / 2f64.sqrt() * z1 + (2.0 - s * s / 2.0).max(0.0).sqrt() * z2;
                if rng.random_bool(0.5) {
                    out.extend([1.0, -0.5 + 2f64.sqrt() * x1, -0.5 + 2f64.sqrt() * x2]);
                } else {
                    out.extend([0.0, 0.5 + x1, 0.5 + x2]);
                }
            }
            DgpKind::LinearGaussian { beta, sigma, quadratic } => {
                let start = out.len();
                out.push(0.0);
                let mut eta = beta[0];
                for (k, b) in beta.iter().enumerate().skip(1) {
                    let x = z();
                    if k == 1 {
                        eta += quadratic * x * x;
                    }
                    eta += b * x;
                    out.push(x);
                }
                out[start] = eta + sigma * z();
            }
            DgpKind::LogisticTrue { beta } => {
                let start = out.len();
                out.push(0.0);
                let mut eta = beta[0];
                for b in &beta[1..] {
                    let x = z();
                    eta += b * x;
                    out.push(x);
                }
                out[start] = f64::from(rng.random_bool(sigmoid(eta)));
            }
            DgpKind::GaussianIid { mean, sd } => out.push(mean + sd * z()),
            DgpKind::Custom { sampler, d, .. } => {
                let row = sampler(rng);
                assert_eq!(row.len(), *d, "custom sampler returned a row of the wrong width");
                out.extend(row);
            }
        }
    }
}

/// Draws `spec.n` rows from `spec.kind` using `spec.seed`.
pub fn simulate(spec: &DgpSpec) -> Result<Dataset> {
    spec.validate()?;
    let d = spec.width();
    let mut rng = SimRng::seed_from_u64(spec.seed);
    let mut values = Vec::with_capacity(spec.n * d);
    for _ in 0..spec.n {
        spec.draw(&mut rng, &mut values);
    }
    let response = match &spec.kind {
        DgpKind::Custom { response, .. } => *response,
        _ => 0,
    };
    let names = (0..d).map(|j| if j == response { "y".to_string() } else { format!("x{}", j - usize::from(j > response) + 1) });
    Dataset::from_flat(values, d)?
        .with_names(names.collect())?
        .with_roles(ColumnRoles { response, covariates: (0..d).filter(|j| *j != response).collect() })
}

/// What to do with each simulated or resampled dataset.
#[derive(Clone)]
pub struct Pipeline {
    pub model: Arc<dyn Model>,
    pub loss: Arc<dyn Loss>,
    pub criterion: Criterion,
    pub bounds: BoxDomain,
    pub tune: TuneOptions,
    /// `None` skips the variance step.
    pub variance: Option<VarianceOptions>,
}

impl Pipeline {
    pub fn new(model: Arc<dyn Model>, loss: Arc<dyn Loss>, criterion: Criterion, bounds: BoxDomain) -> Self {
        Pipeline { model, loss, criterion, bounds, tune: TuneOptions::default(), variance: Some(VarianceOptions::default()) }
    }

    pub fn with_tune(mut self, tune: TuneOptions) -> Self {
        self.tune = tune;
        self
    }

    pub fn with_variance(mut self, variance: Option<VarianceOptions>) -> Self {
        self.variance = variance;
        self
    }

    /// Tunes on `data` (and estimates variances if configured).
    pub fn run(&self, data: &Dataset, seed: u64) -> Result<Replicate> {
        let opts = TuneOptions { seed, ..self.tune.clone() };
        let fit = tune(&*self.model, &*self.loss, data, self.criterion, &self.bounds, &opts)?;
        let (v1, v2, selected) = match &self.variance {
            Some(vo) => {
                let (_, r) = variance_report(&*self.model, &*self.loss, data, &fit, vo)?;
                let s = r.selected_matrix().clone();
                (r.v1, Some(r.v2), Some(s))
            }
            None => (None, None, None),
        };
        Ok(Replicate {
            index: 0,
            seed,
            lambda_hat: fit.lambda_hat,
            theta_hat: fit.theta_hat,
            boundary_status: fit.boundary_status,
            v1,
            v2,
            selected,
        })
    }
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub index: usize,
    pub seed: u64,
    pub lambda_hat: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub boundary_status: Vec<BoundaryStatus>,
    #[serde(with = "opt_matrix_rows")]
    pub v1: Option<DMatrix<f64>>,
    #[serde(with = "opt_matrix_rows")]
    pub v2: Option<DMatrix<f64>>,
    /// `V1` at an interior fit and `V2` on the boundary.
    #[serde(with = "opt_matrix_rows")]
    pub selected: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub index: usize,
    pub kind: String,
    pub message: String,
}

/// Summaries over replications, all recomputable from `records`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    /// `n` times the sample covariance (divisor `B - 1`) of `theta_hat`.
    #[serde(with = "matrix_rows")]
    pub empirical_variance: DMatrix<f64>,
    #[serde(with = "opt_matrix_rows")]
    pub mean_v1: Option<DMatrix<f64>>,
    pub v1_count: usize,
    #[serde(with = "opt_matrix_rows")]
    pub mean_v2: Option<DMatrix<f64>>,
    pub v2_count: usize,
    #[serde(with = "opt_matrix_rows")]
    pub mean_selected: Option<DMatrix<f64>>,
    /// `|mean V1 - empirical|` entrywise.
    #[serde(with = "opt_matrix_rows")]
    pub abs_error_v1: Option<DMatrix<f64>>,
    #[serde(with = "opt_matrix_rows")]
    pub abs_error_v2: Option<DMatrix<f64>>,
    #[serde(with = "opt_matrix_rows")]
    pub abs_error_selected: Option<DMatrix<f64>>,
}

impl Aggregates {
    pub fn from_records(records: &[Replicate], n: usize) -> Result<Self> {
        let Some(first) = records.first() else {
            return Err(Error::InvalidInput("no successful replications".into()));
        };
        let p = first.theta_hat.len();
        let b = records.len();
        // deviations from the first draw, so identical draws give exactly zero
        let origin = &first.theta_hat;
        let dev = |r: &Replicate, a: usize| r.theta_hat[a] - origin[a];
        let mut mean = vec![0.0; p];
        for r in records {
            for (a, m) in mean.iter_mut().enumerate() {
                *m += dev(r, a);
            }
        }
        mean.iter_mut().for_each(|m| *m /= b as f64);
        let mut cov = DMatrix::zeros(p, p);
        for r in records {
            for a in 0..p {
                for c in 0..p {
                    cov[(a, c)] += (dev(r, a) - mean[a]) * (dev(r, c) - mean[c]);
                }
            }
        }
        let empirical = cov * (n as f64 / (b.max(2) - 1) as f64);
        let average = |pick: fn(&Replicate) -> Option<&DMatrix<f64>>| {
            let mut acc = DMatrix::zeros(p, p);
            let mut count = 0;
            for m in records.iter().filter_map(pick) {
                acc += m;
                count += 1;
            }
            ((count > 0).then(|| acc / count as f64), count)
        };
        let (mean_v1, v1_count) = average(|r| r.v1.as_ref());
        let (mean_v2, v2_count) = average(|r| r.v2.as_ref());
        let (mean_selected, _) = average(|r| r.selected.as_ref());
        let err = |m: &Option<DMatrix<f64>>| m.as_ref().map(|m| (m - &empirical).abs());
        Ok(Aggregates {
            abs_error_v1: err(&mean_v1),
            abs_error_v2: err(&mean_v2),
            abs_error_selected: err(&mean_selected),
            empirical_variance: empirical,
            mean_v1,
            v1_count,
            mean_v2,
            v2_count,
            mean_selected,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub schema_version: u32,
    /// Sample size of each replicated dataset.
    pub n: usize,
    pub requested: usize,
    pub failures: Vec<ReplicationFailure>,
    pub failure_rate: f64,
    pub records: Vec<Replicate>,
    pub aggregates: Aggregates,
}

impl ReplicationSummary {
    /// Draws of coordinate `k` of `theta_hat`, in replication order.
    pub fn draws(&self, k: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.theta_hat[k]).collect()
    }

    /// One row per replication: index, seed, `lambda_hat`, `theta_hat`.
    pub fn write_draws_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref()).map_err(|e| Error::Io(e.to_string()))?;
        if let Some(r) = self.records.first() {
            let mut header = vec!["replication".to_string(), "seed".to_string()];
            header.extend((0..r.lambda_hat.len()).map(|j| format!("lambda_{j}")));
            header.extend((0..r.theta_hat.len()).map(|k| format!("theta_{k}")));
            w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
        }
        for r in &self.records {
            let mut row = vec![r.index.to_string(), r.seed.to_string()];
            row.extend(r.lambda_hat.iter().chain(&r.theta_hat).map(|v| format!("{v:.16e}")));
            w.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))
    }

    /// Histogram bin counts of every `theta_hat` coordinate.
    pub fn write_histograms_csv(&self, path: impl AsRef<Path>, bins: usize) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref()).map_err(|e| Error::Io(e.to_string()))?;
        w.write_record(["coordinate", "lower", "upper", "count"]).map_err(|e| Error::Io(e.to_string()))?;
        let p = self.records.first().map_or(0, |r| r.theta_hat.len());
        for k in 0..p {
            let h = histogram(&self.draws(k), bins);
            for (i, c) in h.counts.iter().enumerate() {
                let (lo, hi) = h.bin(i);
                w.write_record([k.to_string(), format!("{lo:.16e}"), format!("{hi:.16e}"), c.to_string()])
                    .map_err(|e| Error::Io(e.to_string()))?;
            }
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))
    }
}

fn collect(
    outcomes: Vec<Result<Replicate>>,
    n: usize,
) -> Result<ReplicationSummary> {
    let requested = outcomes.len();
    let mut records = Vec::with_capacity(requested);
    let mut failures = Vec::new();
    for (index, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(mut r) => {
                r.index = index;
                records.push(r);
            }
            Err(e) => {
                log::warn!("replication {index} failed: {e}");
                failures.push(ReplicationFailure { index, kind: e.kind().into(), message: e.to_string() });
            }
        }
    }
    let failure_rate = failures.len() as f64 / requested as f64;
    if failure_rate > MAX_FAILURE_RATE {
        return Err(Error::FailureRateExceeded { failed: failures.len(), total: requested });
    }
    let aggregates = Aggregates::from_records(&records, n)?;
    Ok(ReplicationSummary { schema_version: SCHEMA_VERSION, n, requested, failures, failure_rate, records, aggregates })
}

/// Runs simulate, tune and variance once per seed in `seeds`.
pub fn replicate_with_seeds(dgp: &DgpSpec, pipeline: &Pipeline, seeds: &[u64]) -> Result<ReplicationSummary> {
    if seeds.len() < 2 {
        return Err(Error::InvalidInput("at least two replications are needed".into()));
    }
    dgp.validate()?;
    let outcomes: Vec<Result<Replicate>> = seeds
        .par_iter()
        .map(|&s| {
            let data = simulate(&dgp.with_seed(s))?;
            pipeline.run(&data, s)
        })
        .collect();
    collect(outcomes, dgp.n)
}

/// `b` replications; replication `j` uses seed `stream_seed(seed, j)` for
/// both the data and the tuner (`dgp.seed` is ignored).
pub fn replicate(dgp: &DgpSpec, pipeline: &Pipeline, b: usize, seed: u64) -> Result<ReplicationSummary> {
    let seeds: Vec<u64> = (0..b as u64).map(|j| stream_seed(seed, j)).collect();
    replicate_with_seeds(dgp, pipeline, &seeds)
}

/// Nonparametric bootstrap: `b` resamples of the rows of `data` with
/// replacement, each rerun through `pipeline`.
pub fn bootstrap(data: &Dataset, pipeline: &Pipeline, b: usize, seed: u64) -> Result<ReplicationSummary> {
    if b < 2 {
        return Err(Error::InvalidInput("at least two bootstrap resamples are needed".into()));
    }
    let n = data.n();
    let outcomes: Vec<Result<Replicate>> = (0..b as u64)
        .into_par_iter()
        .map(|j| {
            let s = stream_seed(seed, j);
            let mut rng = SimRng::seed_from_u64(s);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            pipeline.run(&data.select_rows(&idx)?, s)
        })
        .collect();
    collect(outcomes, n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lower: f64,
    pub width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn bin(&self, i: usize) -> (f64, f64) {
        let lo = self.lower + i as f64 * self.width;
        (lo, lo + self.width)
    }
}

/// Equal-width bins spanning the range of `values` (non-finite values are
/// skipped; the top edge is included in the last bin).
pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.clone().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo > hi {
        return Histogram { lower: 0.0, width: 0.0, counts: vec![0; bins] };
    }
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0; bins];
    for v in finite {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    Histogram { lower: lo, width, counts }
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_x - F_y|`.
pub fn ks_statistic(x: &[f64], y: &[f64]) -> f64 {
    if x.is_empty() || y.is_empty() {
        return f64::NAN;
    }
    let sorted = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v
    };
    let (x, y) = (sorted(x), sorted(y));
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < x.len() && j < y.len() {
        let t = x[i].min(y[j]);
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / nx - j as f64 / ny).abs());
    }
    d
}

/// Draws from `N(0, v)` for a symmetric positive semidefinite `v`, through
/// its eigendecomposition so that singular `v` is allowed.
pub fn normal_draws(v: &DMatrix<f64>, count: usize, rng: &mut SimRng) -> Vec<DVector<f64>> {
    let eig = SymmetricEigen::new(v.clone());
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|e| e.max(0.0).sqrt()));
    (0..count)
        .map(|_| {
            let z = DVector::from_fn(v.nrows(), |_, _| rng.sample(StandardNormal));
            &root * z
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureOptions {
    /// Size of the pilot sample used to estimate the joint limit.
    pub pilot_n: usize,
    pub mixture_draws: usize,
}

impl Default for MixtureOptions {
    fn default() -> Self {
        MixtureOptions { pilot_n: 20_000, mixture_draws: 20_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureReport {
    pub schema_version: u32,
    pub n: usize,
    pub requested: usize,
    pub failures: Vec<ReplicationFailure>,
    /// Bound of the tuning interval the population optimum sits on.
    pub boundary: f64,
    /// Joint covariance of `(N1, N2, N3)`: the unconstrained fit, the fit at
    /// the boundary and the unconstrained tuning parameter.
    #[serde(with = "matrix_rows")]
    pub joint_covariance: DMatrix<f64>,
    /// Share of mixture draws taken from `N1`.
    pub mixture_weight: f64,
    /// Per-coordinate KS distance between the simulated `sqrt(n)(theta_T -
    /// theta_0)` and the mixture draws.
    pub ks: Vec<f64>,
    pub cases: Vec<TruncationCase>,
    /// `sqrt(n)(theta_T - theta_0)` per replication.
    pub draws: Vec<Vec<f64>>,
}

/// Compares the sampling law of the truncated estimator at a boundary optimum
/// with the limit `I(N3 >= 0) N1 + I(N3 < 0) N2` (at a lower bound; mirrored at
/// an upper bound).
///
/// The joint covariance of `(N1, N2, N3)` is the plug-in sandwich estimated
/// on a large pilot sample from the same process, tuned over the extended
/// interval. `theta_0` is the population parameter.
pub fn mixture_law_check(
    dgp: &DgpSpec,
    pipeline: &Pipeline,
    theta_0: &[f64],
    b: usize,
    seed: u64,
    opts: &MixtureOptions,
) -> Result<MixtureReport> {
    let (model, loss) = (&*pipeline.model, &*pipeline.loss);
    let p = model.dims().p;
    if model.dims().q != 1 || theta_0.len() != p {
        return Err(Error::InvalidInput("the mixture check needs a scalar tuning parameter and p-dimensional theta_0".into()));
    }
    let (a, bb) = (pipeline.bounds.lower[0], pipeline.bounds.upper[0]);
    let w = bb - a;

    let pilot = simulate(&DgpSpec { n: opts.pilot_n, seed: stream_seed(seed, u64::MAX), ..dgp.clone() })?;
    let wide = BoxDomain::interval(a - w / 2.0, bb + w / 2.0)?;
    let wide_opts = TuneOptions { grid_size: 2 * pipeline.tune.grid_size - 1, ..pipeline.tune.clone() };
    let global = tune(model, loss, &pilot, pipeline.criterion, &wide, &wide_opts)?;
    let lower = global.lambda_hat[0] <= (a + bb) / 2.0;
    let boundary = if lower { a } else { bb };
    let vo = VarianceOptions { force_full: true, ..pipeline.variance.clone().unwrap_or_default() };
    let c = assemble_components(model, loss, &pilot, &global, &vo)?;
    let at_bound = crate::criteria::fit_at(model, &pilot, &[boundary], None, &pipeline.tune.solver)?;
    let jb = crate::linalg::checked_inverse(&at_bound.j_hat)?;
    let astar = c.astar.as_ref().ok_or(Error::BoundaryFit)?;
    let r = astar.ncols();
    let mut g = DMatrix::zeros(2 * p + 1, r);
    g.view_mut((0, 0), (p, r)).copy_from(astar);
    g.view_mut((p, 0), (p, p)).copy_from(&jb);
    g.view_mut((2 * p, 0), (1, r)).copy_from(&lambda_influence(&c)?);
    let joint = crate::linalg::symmetrize(&(&g * &c.kstar_hat * g.transpose()));

    let mut rng = stream_rng(seed, u64::MAX - 1);
    let mut take_first = 0usize;
    let mixture: Vec<DVector<f64>> = normal_draws(&joint, opts.mixture_draws, &mut rng)
        .into_iter()
        .map(|v| {
            let n3 = v[2 * p];
            let first = if lower { n3 >= 0.0 } else { n3 <= 0.0 };
            take_first += usize::from(first);
            if first { v.rows(0, p).into_owned() } else { v.rows(p, p).into_owned() }
        })
        .collect();

    let root_n = (dgp.n as f64).sqrt();
    let outcomes: Vec<Result<(Vec<f64>, TruncationCase)>> = (0..b as u64)
        .into_par_iter()
        .map(|j| {
            let s = stream_seed(seed, j);
            let data = simulate(&dgp.with_seed(s))?;
            let opts = TuneOptions { seed: s, ..pipeline.tune.clone() };
            let fit = tune(model, loss, &data, pipeline.criterion, &pipeline.bounds, &opts)?;
            let t = truncated_estimate(model, loss, &data, &fit, &opts)?;
            let draw = t.theta_hat.iter().zip(theta_0).map(|(x, x0)| root_n * (x - x0)).collect();
            Ok((draw, t.case))
        })
        .collect();
    let mut draws = Vec::with_capacity(b);
    let mut cases = Vec::with_capacity(b);
    let mut failures = Vec::new();
    for (index, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok((d, case)) => {
                draws.push(d);
                cases.push(case);
            }
            Err(e) => failures.push(ReplicationFailure { index, kind: e.kind().into(), message: e.to_string() }),
        }
    }
    if failures.len() as f64 > MAX_FAILURE_RATE * b as f64 {
        return Err(Error::FailureRateExceeded { failed: failures.len(), total: b });
    }
    let ks = (0..p)
        .map(|k| {
            let x: Vec<f64> = draws.iter().map(|d| d[k]).collect();
            let y: Vec<f64> = mixture.iter().map(|m| m[k]).collect();
            ks_statistic(&x, &y)
        })
        .collect();
    Ok(MixtureReport {
        schema_version: SCHEMA_VERSION,
        n: dgp.n,
        requested: b,
        failures,
        boundary,
        joint_covariance: joint,
        mixture_weight: take_first as f64 / opts.mixture_draws.max(1) as f64,
        ks,
        cases,
        draws,
    })
}

#[cfg(test)]
mod tests;
