use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use tuning_inference::criteria::{fit_at, loocv_exact, te_trace_corrected, training_error};
use tuning_inference::data::Dataset;
use tuning_inference::estimator::SolverOptions;
use tuning_inference::harness::{self, DgpSpec, ReplicationSummary, Replicate};
use tuning_inference::report::{matrix_rows, read_json, write_json, SCHEMA_VERSION};
use tuning_inference::tuner::{tune, FitResult};
use tuning_inference::variance::variance_report;
use tuning_inference::{Error, Result};

use crate::config::Flags;

const DEFAULT_BINS: usize = 30;

/// Solution of the estimating equation at one fixed `lambda`.
#[derive(Debug, Serialize, Deserialize)]
pub struct FixedFit {
    pub schema_version: u32,
    pub model: String,
    pub loss: String,
    pub n: usize,
    pub lambda: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    #[serde(with = "matrix_rows")]
    pub j_hat: DMatrix<f64>,
    pub training_error: f64,
}

#[derive(Debug, Serialize)]
struct SimulationRun {
    label: String,
    dgp: DgpSpec,
    summary: ReplicationSummary,
}

#[derive(Debug, Serialize)]
struct SimulationOutput {
    schema_version: u32,
    runs: Vec<SimulationRun>,
}

#[derive(Debug, Serialize)]
struct BootstrapOutput {
    schema_version: u32,
    /// Fit and variances on the full data.
    reference: Replicate,
    summary: ReplicationSummary,
}

#[derive(Debug, Serialize)]
struct StoneRow {
    n: usize,
    replications: usize,
    failures: usize,
    median_scaled_gap: f64,
    mean_scaled_gap: f64,
}

#[derive(Debug, Serialize)]
struct StoneOutput {
    schema_version: u32,
    lambda: f64,
    dgp: DgpSpec,
    rows: Vec<StoneRow>,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn csv_io(e: impl std::fmt::Display) -> Error {
    Error::Io(e.to_string())
}

fn fixed_lambda(flags: &Flags) -> Result<Vec<f64>> {
    flags.lambda.map(|l| vec![l]).ok_or_else(|| Error::InvalidInput("--lambda is required".into()))
}

pub fn fit(flags: &Flags) -> Result<()> {
    let data = flags.load_data()?;
    let (model, loss) = flags.build(data.names())?;
    let lambda = fixed_lambda(flags)?;
    let sol = fit_at(&*model, &data, &lambda, None, &SolverOptions::default())?;
    let te = training_error(&*model, &*loss, &data, &lambda)?.value;
    let out = FixedFit {
        schema_version: SCHEMA_VERSION,
        model: model.name().to_string(),
        loss: loss.name().to_string(),
        n: data.n(),
        lambda,
        theta_hat: sol.theta_hat,
        iterations: sol.iterations,
        residual_norm: sol.residual_norm,
        j_hat: sol.j_hat,
        training_error: te,
    };
    write_json(flags.out_dir()?.join("fit.json"), &out)?;
    println!("theta_hat = {:?}", out.theta_hat);
    println!("training error = {}", out.training_error);
    Ok(())
}

fn write_trace(path: &Path, fit: &FitResult) -> Result<()> {
    let mut w = csv_writer(path)?;
    let q = fit.lambda_hat.len();
    let mut header: Vec<String> = (0..q).map(|j| format!("lambda_{j}")).collect();
    header.push("value".into());
    w.write_record(&header).map_err(csv_io)?;
    for pt in &fit.trace {
        let mut rec: Vec<String> = pt.lambda.iter().map(f64::to_string).collect();
        rec.push(pt.value.map(|v| v.to_string()).unwrap_or_default());
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush().map_err(csv_io)
}

fn run_tune(flags: &Flags, data: &Dataset) -> Result<FitResult> {
    let (model, loss) = flags.build(data.names())?;
    tune(&*model, &*loss, data, flags.criterion()?, &flags.bounds()?, &flags.tune_options())
}

pub fn tune_cmd(flags: &Flags) -> Result<()> {
    let data = flags.load_data()?;
    let fit = run_tune(flags, &data)?;
    let dir = flags.out_dir()?;
    write_json(dir.join("fit.json"), &fit)?;
    write_trace(&dir.join("trace.csv"), &fit)?;
    println!("lambda_hat = {:?} ({:?})", fit.lambda_hat, fit.boundary_status);
    println!("theta_hat = {:?}", fit.theta_hat);
    Ok(())
}

pub fn variance(flags: &Flags) -> Result<()> {
    let data = flags.load_data()?;
    let (model, loss) = flags.build(data.names())?;
    let fit: FitResult = match &flags.fit {
        Some(path) => read_json(path)?,
        None => run_tune(flags, &data)?,
    };
    let p = model.dims().p;
    if fit.n != data.n() || fit.theta_hat.len() != p {
        return Err(Error::InvalidInput(format!(
            "fit has n = {} and {} coefficients; data and model give n = {} and {p}",
            fit.n,
            fit.theta_hat.len(),
            data.n()
        )));
    }
    let (_, report) = variance_report(&*model, &*loss, &data, &fit, &flags.variance_options(fit.criterion))?;
    write_json(flags.out_dir()?.join("variance.json"), &report)?;
    println!("selected = {:?}", report.selected);
    println!("standard errors = {:?}", report.standard_errors);
    Ok(())
}

fn file_label(label: &str) -> String {
    label.chars().filter(|c| c.is_ascii_alphanumeric() || *c == '.' || *c == '-').collect()
}

fn write_failures(path: &Path, runs: &[(&str, &ReplicationSummary)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["run", "replication", "kind", "message"]).map_err(csv_io)?;
    for (label, s) in runs {
        for f in &s.failures {
            w.write_record([label.to_string(), f.index.to_string(), f.kind.clone(), f.message.clone()])
                .map_err(csv_io)?;
        }
    }
    w.flush().map_err(csv_io)
}

fn report_summary(label: &str, s: &ReplicationSummary) {
    let a = &s.aggregates;
    println!("{label}: {} of {} replications kept", s.records.len(), s.requested);
    println!("  empirical n*var diag = {:?}", a.empirical_variance.diagonal().as_slice());
    if let Some(m) = &a.mean_selected {
        println!("  mean selected variance diag = {:?}", m.diagonal().as_slice());
    }
}

pub fn simulate(flags: &Flags) -> Result<()> {
    let reps = flags.reps.unwrap_or(100);
    let seed = flags.seed.unwrap_or(0);
    let bins = flags.bins.unwrap_or(DEFAULT_BINS);
    let dir = flags.out_dir()?;
    let dgps = flags.dgps()?;
    let mut runs = Vec::new();
    for (label, dgp) in dgps {
        let probe = harness::simulate(&dgp.with_n(dgp.n.min(10).max(1)))?;
        let pipeline = flags.pipeline(probe.names(), true)?;
        let summary = harness::replicate(&dgp, &pipeline, reps, seed)?;
        report_summary(&label, &summary);
        runs.push(SimulationRun { label, dgp, summary });
    }
    let single = runs.len() == 1;
    for r in &runs {
        let suffix = if single { String::new() } else { format!("_{}", file_label(&r.label)) };
        r.summary.write_draws_csv(dir.join(format!("draws{suffix}.csv")))?;
        r.summary.write_histograms_csv(dir.join(format!("histogram{suffix}.csv")), bins)?;
    }
    let labelled: Vec<_> = runs.iter().map(|r| (r.label.as_str(), &r.summary)).collect();
    write_failures(&dir.join("errors.csv"), &labelled)?;
    write_json(dir.join("summary.json"), &SimulationOutput { schema_version: SCHEMA_VERSION, runs })
}

pub fn bootstrap(flags: &Flags) -> Result<()> {
    let data = flags.load_data()?;
    let reps = flags.reps.unwrap_or(200);
    let seed = flags.seed.unwrap_or(0);
    let dir = flags.out_dir()?;
    let pipeline = flags.pipeline(data.names(), true)?;
    let reference = pipeline.run(&data, seed)?;
    let summary = harness::bootstrap(&data, &pipeline, reps, seed)?;
    report_summary("bootstrap", &summary);
    summary.write_draws_csv(dir.join("draws.csv"))?;
    summary.write_histograms_csv(dir.join("histogram.csv"), flags.bins.unwrap_or(DEFAULT_BINS))?;
    write_failures(&dir.join("errors.csv"), &[("bootstrap", &summary)])?;
    write_json(dir.join("summary.json"), &BootstrapOutput { schema_version: SCHEMA_VERSION, reference, summary })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn stone_check(flags: &Flags) -> Result<()> {
    let reps = flags.reps.unwrap_or(50);
    let seed = flags.seed.unwrap_or(0);
    let lambda = flags.lambda.unwrap_or(0.1);
    let sizes = flags.sizes.clone().unwrap_or_else(|| vec![50, 100, 200, 400]);
    if sizes.iter().any(|&n| n < 10) {
        return Err(Error::InvalidInput("--sizes entries must be at least 10".into()));
    }
    let dgp = flags.dgps()?.into_iter().next().map(|(_, d)| d).expect("at least one process");
    let names = harness::simulate(&dgp.with_n(10))?.names().to_vec();
    let (model, loss) = flags.build(&names)?;
    let dir = flags.out_dir()?;
    let mut w = csv_writer(&dir.join("stone.csv"))?;
    w.write_record(["n", "replication", "seed", "cv", "te_trace_corrected", "scaled_gap"]).map_err(csv_io)?;
    let mut rows = Vec::new();
    for &n in &sizes {
        let results: Vec<(u64, Result<(f64, f64)>)> = (0..reps as u64)
            .into_par_iter()
            .map(|j| {
                let s = harness::stream_seed(seed, j);
                let r = harness::simulate(&dgp.with_n(n).with_seed(s)).and_then(|data| {
                    let cv = loocv_exact(&*model, &*loss, &data, &[lambda])?.value;
                    let tc = te_trace_corrected(&*model, &*loss, &data, &[lambda])?.value;
                    Ok((cv, tc))
                });
                (s, r)
            })
            .collect();
        let mut gaps = Vec::new();
        let mut failures = 0;
        for (j, (s, r)) in results.into_iter().enumerate() {
            match r {
                Ok((cv, tc)) => {
                    let gap = n as f64 * (cv - tc).abs();
                    gaps.push(gap);
                    w.write_record([n.to_string(), j.to_string(), s.to_string(), cv.to_string(), tc.to_string(), gap.to_string()])
                        .map_err(csv_io)?;
                }
                Err(_) => failures += 1,
            }
        }
        if gaps.is_empty() {
            return Err(Error::FailureRateExceeded { failed: failures, total: reps });
        }
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let med = median(&mut gaps);
        println!("n = {n}: median n*|CV - TE_corrected| = {med:.4e}");
        rows.push(StoneRow { n, replications: reps, failures, median_scaled_gap: med, mean_scaled_gap: mean });
    }
    w.flush().map_err(csv_io)?;
    write_json(dir.join("stone.json"), &StoneOutput { schema_version: SCHEMA_VERSION, lambda, dgp, rows })
}
