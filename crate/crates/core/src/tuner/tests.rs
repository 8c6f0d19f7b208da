use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

use super::*;
use crate::criteria::loocv_exact;
use crate::model::{LossSpec, ModelSpec};
use crate::models::{LinearDesign, RidgeLinear, SquaredError};

fn weak_signal(n: usize, seed: u64) -> (Dataset, RidgeLinear, SquaredError) {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let rows: Vec<[f64; 3]> = (0..n)
        .map(|_| {
            let x1: f64 = rng.sample(StandardNormal);
            let x2: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            [0.2 * x1 + 0.3 * x1 * x1 + 0.1 * x2 + 2.0 * e, x1, x2]
        })
        .collect();
    let dz = LinearDesign::new(3, 0, vec![1, 2]).unwrap();
    (Dataset::from_rows(&rows).unwrap(), RidgeLinear::new(dz.clone()), SquaredError::new(dz))
}

/// `theta_hat = mean(z) - lambda`; with `psi = (theta - c)^2` the criterion
/// is minimized at `lambda = mean(z) - c`.
fn shifted_mean(c: f64) -> (ModelSpec, LossSpec) {
    (
        ModelSpec::new(1, 1, 1, |z, t, l, o| o[0] = z[0] - t[0] - l[0]),
        LossSpec::new(move |_z, t| (t[0] - c).powi(2)),
    )
}

#[test]
fn interior_optimum_matches_dense_grid() {
    let (data, model, loss) = weak_signal(60, 11);
    let bounds = BoxDomain::interval(0.0, 2.0).unwrap();
    let fit = tune(&model, &loss, &data, Criterion::CvExact, &bounds, &TuneOptions::grid(11)).unwrap();
    assert_eq!(fit.boundary_status, vec![BoundaryStatus::Interior]);
    let dense: Vec<(f64, f64)> = (0..=400)
        .map(|k| {
            let l = 2.0 * k as f64 / 400.0;
            (l, loocv_exact(&model, &loss, &data, &[l]).unwrap().value)
        })
        .collect();
    let (l_dense, v_dense) = dense.iter().copied().fold((0.0, f64::INFINITY), |b, x| if x.1 < b.1 { x } else { b });
    assert!((fit.lambda_hat[0] - l_dense).abs() <= 2.0 / 400.0, "{} vs {l_dense}", fit.lambda_hat[0]);
    assert!(fit.criterion_value <= v_dense + 1e-12);
    assert!(fit.criterion_slope_at_opt[0].abs() < 1e-3);
    for t in &fit.trace {
        assert!(fit.criterion_value <= t.value.unwrap());
    }
}

#[test]
fn monotone_criterion_lands_on_lower_boundary() {
    let (model, loss) = shifted_mean(10.0);
    let data = Dataset::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
    let fit = tune(&model, &loss, &data, Criterion::Te, &BoxDomain::interval(0.0, 1.0).unwrap(), &TuneOptions::default())
        .unwrap();
    assert_eq!(fit.lambda_hat, vec![0.0]);
    assert_eq!(fit.boundary_status, vec![BoundaryStatus::LowerBoundary]);
    assert!(fit.criterion_slope_at_opt[0] > 0.0);
    assert!(!fit.is_interior());
    let (model, loss) = shifted_mean(-10.0);
    let fit = tune(&model, &loss, &data, Criterion::Te, &BoxDomain::interval(0.0, 1.0).unwrap(), &TuneOptions::default())
        .unwrap();
    assert_eq!(fit.lambda_hat, vec![1.0]);
    assert_eq!(fit.boundary_status, vec![BoundaryStatus::UpperBoundary]);
}

#[test]
fn tuning_is_deterministic_and_scale_free() {
    let (data, model, loss) = weak_signal(40, 12);
    let bounds = BoxDomain::interval(0.0, 2.0).unwrap();
    let a = tune(&model, &loss, &data, Criterion::CvFast, &bounds, &TuneOptions::default()).unwrap();
    let b = tune(&model, &loss, &data, Criterion::CvFast, &bounds, &TuneOptions::default()).unwrap();
    assert_eq!(a, b);
    let scaled = SquaredError::new(model.design.clone()).with_weight(|_| 3.0);
    let c = tune(&model, &scaled, &data, Criterion::CvFast, &bounds, &TuneOptions::default()).unwrap();
    assert!((a.lambda_hat[0] - c.lambda_hat[0]).abs() < 2.0 / 20.0);
}

#[test]
fn pattern_search_finds_two_dimensional_optimum() {
    let model = ModelSpec::new(2, 2, 2, |z, t, l, o| {
        o[0] = z[0] - t[0] - l[0];
        o[1] = z[1] - t[1] - l[1] * l[1];
    });
    let loss = LossSpec::new(|_z, t| (t[0] - 0.3).powi(2) + (t[1] - 0.5).powi(2));
    let data = Dataset::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
    let bounds = BoxDomain::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
    let fit = tune(&model, &loss, &data, Criterion::Te, &bounds, &TuneOptions::default()).unwrap();
    assert!((fit.lambda_hat[0] - 0.7).abs() < 1e-5);
    assert!((fit.lambda_hat[1] - 0.5f64.sqrt()).abs() < 1e-5);
    assert_eq!(fit.d_hat.shape(), (2, 2));
}

#[test]
fn truncation_cases() {
    assert_eq!(classify_truncation(0.5, 0.0, 1.0, 100), TruncationCase::Interior);
    assert_eq!(classify_truncation(1.3, 0.0, 1.0, 100), TruncationCase::B);
    assert_eq!(classify_truncation(-0.3, 0.0, 1.0, 100), TruncationCase::A);
    assert_eq!(classify_truncation(0.1, 0.0, 1.0, 100), TruncationCase::C);
    assert_eq!(classify_truncation(1.15, 0.0, 1.0, 100), TruncationCase::D);
}

#[test]
fn truncated_estimate_clamps_extended_minimizer() {
    // mean(z) = 2, c = 0.7: unconstrained optimum at lambda = 1.3
    let (model, loss) = shifted_mean(0.7);
    let rows: Vec<[f64; 1]> = (0..400).map(|i| [if i % 2 == 0 { 1.5 } else { 2.5 }]).collect();
    let data = Dataset::from_rows(&rows).unwrap();
    let bounds = BoxDomain::interval(0.0, 1.0).unwrap();
    let opts = TuneOptions::default();
    let fit = tune(&model, &loss, &data, Criterion::Te, &bounds, &opts).unwrap();
    let t = truncated_estimate(&model, &loss, &data, &fit, &opts).unwrap();
    assert!((t.lambda_global - 1.3).abs() < 1e-5);
    assert_eq!(t.case, TruncationCase::B);
    assert_eq!(t.lambda_used, 1.0);
    assert!((t.theta_hat[0] - 1.0).abs() < 1e-10);
    let clamped = truncate_at(&model, &data, 1.0, &bounds, &opts.solver).unwrap();
    assert_eq!(clamped.theta_hat, t.theta_hat);
}

#[test]
fn truncation_without_extension_uses_boundary_slope() {
    let (model, loss) = shifted_mean(0.7);
    let model = model.with_lambda_domain(BoxDomain::interval(0.0, 1.0).unwrap());
    let data = Dataset::from_rows(&[[1.5], [2.5]]).unwrap();
    let opts = TuneOptions::default();
    let fit = tune(&model, &loss, &data, Criterion::Te, &BoxDomain::interval(0.0, 1.0).unwrap(), &opts).unwrap();
    let t = truncated_estimate(&model, &loss, &data, &fit, &opts).unwrap();
    assert!(!t.extended);
    assert_eq!(t.case, TruncationCase::B);
}

#[test]
fn fit_result_round_trips_through_json() {
    let (data, model, loss) = weak_signal(30, 13);
    let fit =
        tune(&model, &loss, &data, Criterion::Te, &BoxDomain::interval(0.0, 1.0).unwrap(), &TuneOptions::default())
            .unwrap();
    let s = crate::report::to_json_string(&fit).unwrap();
    let back: FitResult = serde_json::from_str(&s).unwrap();
    assert_eq!(back, fit);
}
