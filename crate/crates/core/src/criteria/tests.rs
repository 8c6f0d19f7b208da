use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

use super::*;
use crate::estimator::solve_theta;
use crate::model::{LossSpec, ModelSpec};
use crate::models::{
    ridge_closed_form, ridge_loocv_closed_form, Constant, GaussianLikelihood, GaussianNegLogLik, LinearDesign,
    RidgeLinear, SquaredError,
};

fn linear_data(n: usize, seed: u64) -> (Dataset, LinearDesign) {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let rows: Vec<[f64; 3]> = (0..n)
        .map(|_| {
            let x1: f64 = rng.sample(StandardNormal);
            let x2: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            [0.5 + x1 - 0.7 * x2 + e, x1, x2]
        })
        .collect();
    (Dataset::from_rows(&rows).unwrap(), LinearDesign::new(3, 0, vec![1, 2]).unwrap())
}

fn ridge(n: usize, seed: u64) -> (Dataset, RidgeLinear, SquaredError) {
    let (data, dz) = linear_data(n, seed);
    (data, RidgeLinear::new(dz.clone()), SquaredError::new(dz))
}

#[test]
fn constant_loss_gives_constant_criteria() {
    let (data, model, _) = ridge(30, 1);
    for lambda in [0.0, 0.7] {
        assert_eq!(training_error(&model, &Constant(2.5), &data, &[lambda]).unwrap().value, 2.5);
        assert_eq!(loocv_exact(&model, &Constant(2.5), &data, &[lambda]).unwrap().value, 2.5);
    }
}

#[test]
fn training_error_is_mean_squared_residual() {
    let (data, model, loss) = ridge(40, 2);
    let beta = ridge_closed_form(&data, 0.0, &model.design).unwrap();
    let direct =
        data.rows().map(|z| (z[0] - model.design.eta(z, &beta)).powi(2)).sum::<f64>() / data.n() as f64;
    let te = training_error(&model, &loss, &data, &[0.0]).unwrap();
    assert!((te.value - direct).abs() < 1e-12);
    assert!(te.trace_correction().is_none());
}

#[test]
fn exact_loocv_matches_hat_matrix_formula() {
    let (data, model, loss) = ridge(50, 3);
    for lambda in [0.0, 0.01, 0.3, 2.0] {
        let cv = loocv_exact(&model, &loss, &data, &[lambda]).unwrap();
        let oracle = ridge_loocv_closed_form(&data, lambda, &model.design).unwrap();
        assert!((cv.value - oracle).abs() < 1e-8, "{} vs {oracle}", cv.value);
        assert_eq!(cv.diagnostics["refit_failures"], 0.0);
    }
}

#[test]
fn exact_loocv_matches_naive_cold_refits_on_three_rows() {
    // phi = z - theta^3 - lambda theta: nonlinear root, solvable per subset
    let model = ModelSpec::new(1, 1, 1, |z, t, l, o| o[0] = z[0] - t[0].powi(3) - l[0] * t[0]);
    let loss = LossSpec::new(|z, t| (z[0] - t[0]).powi(2));
    let data = Dataset::from_rows(&[[0.5], [2.0], [-1.0]]).unwrap();
    let lambda = [0.4];
    let cv = loocv_exact(&model, &loss, &data, &lambda).unwrap();
    let mut naive = 0.0;
    for i in 0..3 {
        let rest: Vec<usize> = (0..3).filter(|&j| j != i).collect();
        let sub = data.select_rows(&rest).unwrap();
        let fit = solve_theta(&model, &sub, &lambda, &[0.0], Some(1e-13)).unwrap();
        naive += (data.row(i)[0] - fit.theta_hat[0]).powi(2);
    }
    assert!((cv.value - naive / 3.0).abs() < 1e-9);
}

#[test]
fn fast_loocv_coincides_on_identical_rows() {
    let model = ModelSpec::new(1, 1, 1, |z, t, _l, o| o[0] = z[0] - t[0]);
    let loss = LossSpec::new(|z, t| (z[0] - t[0]).powi(2) + z[0]);
    let data = Dataset::from_rows(&[[1.5]; 12]).unwrap();
    let fast = loocv_fast(&model, &loss, &data, &[0.0]).unwrap().value;
    let exact = loocv_exact(&model, &loss, &data, &[0.0]).unwrap().value;
    assert!((fast - exact).abs() < 1e-10);
}

#[test]
fn fast_loocv_within_envelope_of_exact() {
    let (data, model, loss) = ridge(200, 4);
    for lambda in [0.0, 0.1] {
        let te = training_error(&model, &loss, &data, &[lambda]).unwrap().value;
        let exact = loocv_exact(&model, &loss, &data, &[lambda]).unwrap().value;
        let fast = loocv_fast(&model, &loss, &data, &[lambda]).unwrap();
        assert!((fast.value - exact).abs() <= 10.0 * (exact - te).abs());
        // the influence update moves away from the training error, like refitting does
        assert!(fast.value > te);
    }
}

#[test]
fn fast_loocv_gap_shrinks_faster_than_one_over_n() {
    let gap = |n: usize| {
        let mut v: Vec<f64> = (0..50)
            .map(|s| {
                let (data, model, loss) = ridge(n, 1000 + s);
                let fast = loocv_fast(&model, &loss, &data, &[0.05]).unwrap().value;
                let exact = ridge_loocv_closed_form(&data, 0.05, &model.design).unwrap();
                n as f64 * (fast - exact).abs()
            })
            .collect();
        v.sort_by(f64::total_cmp);
        v[25]
    };
    assert!(gap(1600) < 0.5 * gap(400));
}

#[test]
fn trace_correction_vanishes_when_loss_ignores_theta() {
    let model = ModelSpec::new(1, 1, 2, |z, t, _l, o| o[0] = z[0] - t[0]);
    let loss = LossSpec::new(|z, _t| z[1] * z[1]).with_grad(|_z, _t, g| g[0] = 0.0);
    let data = Dataset::from_rows(&[[1.0, 2.0], [3.0, -1.0], [0.5, 0.0]]).unwrap();
    let tc = te_trace_corrected(&model, &loss, &data, &[0.0]).unwrap();
    assert_eq!(tc.trace_correction(), Some(0.0));
    assert!((tc.value - 5.0 / 3.0).abs() < 1e-15);
}

#[test]
fn trace_corrected_tracks_exact_loocv_for_ridge() {
    let (data, model, loss) = ridge(400, 5);
    let te = training_error(&model, &loss, &data, &[0.0]).unwrap().value;
    let tc = te_trace_corrected(&model, &loss, &data, &[0.0]).unwrap();
    let cv = ridge_loocv_closed_form(&data, 0.0, &model.design).unwrap();
    // n (CV - TE) is about 2 sigma^2 p = 6
    assert!(((cv - te) * 400.0 - 6.0).abs() < 2.0);
    assert!((tc.value - cv).abs() * 400.0 < 0.2 * (cv - te) * 400.0);
}

#[test]
fn holdout_matches_brute_force_split() {
    let (data, model, loss) = ridge(60, 6);
    let h = holdout_error(&model, &loss, &data, &[0.2], 0.5, 42).unwrap();
    let (tune, fit) = holdout_partition(60, 0.5, 42);
    assert_eq!(tune.len(), 30);
    let beta = ridge_closed_form(&data.select_rows(&fit).unwrap(), 0.2, &model.design).unwrap();
    let direct = tune.iter().map(|&i| (data.row(i)[0] - model.design.eta(data.row(i), &beta)).powi(2)).sum::<f64>()
        / 30.0;
    assert!((h.value - direct).abs() < 1e-12);
    let again = holdout_error(&model, &loss, &data, &[0.2], 0.5, 42).unwrap();
    assert_eq!(h.value.to_bits(), again.value.to_bits());
    let other = holdout_error(&model, &loss, &data, &[0.2], 0.5, 43).unwrap();
    assert_ne!(h.value, other.value);
}

#[test]
fn holdout_equals_training_error_on_identical_rows() {
    let model = ModelSpec::new(1, 1, 2, |z, t, l, o| o[0] = z[0] - (1.0 + l[0]) * t[0]);
    let loss = LossSpec::new(|z, t| (z[1] - t[0]).powi(2));
    let data = Dataset::from_rows(&[[2.0, 0.3]; 10]).unwrap();
    let te = training_error(&model, &loss, &data, &[0.5]).unwrap().value;
    for seed in 0..5 {
        let h = holdout_error(&model, &loss, &data, &[0.5], 0.3, seed).unwrap().value;
        assert!((h - te).abs() < 1e-14);
    }
}

#[test]
fn aic_minus_bic_is_closed_form() {
    let (data, _, _) = ridge(80, 7);
    let m = GaussianLikelihood::location(3, 0).unwrap();
    let nll = GaussianNegLogLik::new(m.clone());
    let aic = info_criterion(&m, &nll, &data, &[0.0], Criterion::Aic).unwrap().value;
    let bic = info_criterion(&m, &nll, &data, &[0.0], Criterion::Bic).unwrap().value;
    let expect = 2.0 * (1.0 - 80f64.ln()) / 80.0;
    assert!((aic - bic - expect).abs() < 1e-14);
    let tic = info_criterion(&m, &nll, &data, &[0.0], Criterion::Tic).unwrap();
    assert!(tic.trace_correction().unwrap() > 0.0);
    assert!(info_criterion(&m, &nll, &data, &[0.0], Criterion::Te).is_err());
}

#[test]
fn criterion_tags_round_trip() {
    for c in [
        Criterion::Te,
        Criterion::CvExact,
        Criterion::CvFast,
        Criterion::TeTraceCorrected,
        Criterion::Aic,
        Criterion::Bic,
        Criterion::Tic,
    ] {
        assert_eq!(Criterion::parse(c.tag()), Some(c));
    }
    assert!(matches!(Criterion::parse("holdout"), Some(Criterion::Holdout { .. })));
}
