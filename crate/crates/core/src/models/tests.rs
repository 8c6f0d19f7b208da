use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

use super::*;
use crate::data::Dataset;
use crate::estimator::{solve_loo, solve_theta, theta_prime};
use crate::model::{derivative_discrepancy, loss_derivative_discrepancy, Model};

fn linear_data(n: usize, seed: u64) -> (Dataset, LinearDesign) {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut rows = Vec::new();
    for _ in 0..n {
        let x1: f64 = rng.sample(StandardNormal);
        let x2: f64 = rng.sample(StandardNormal);
        let e: f64 = rng.sample(StandardNormal);
        rows.push([0.5 + x1 - 0.7 * x2 + e, x1, x2]);
    }
    (Dataset::from_rows(&rows).unwrap(), LinearDesign::new(3, 0, vec![1, 2]).unwrap())
}

fn normals(rng: &mut Xoshiro256PlusPlus, k: usize, scale: f64) -> Vec<f64> {
    (0..k).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

#[test]
fn analytic_derivatives_match_finite_differences() {
    let dz = LinearDesign::new(3, 0, vec![1, 2]).unwrap();
    let logistic_dz = dz.clone();
    let gauss = GaussianLikelihood::new(dz.clone());
    let hybrid = Hybrid::new(
        AtLambda { model: RidgeLinear::new(dz.clone()), lambda: vec![0.3] },
        AtLambda { model: RidgeLogistic::new(dz.clone()), lambda: vec![0.1] },
    )
    .unwrap();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(7);
    for _ in 0..100 {
        let mut z = normals(&mut rng, 3, 1.0);
        let theta = normals(&mut rng, 3, 0.8);
        let lambda = [rng.random_range(0.0..2.0)];
        assert!(derivative_discrepancy(&RidgeLinear::new(dz.clone()), &z, &theta, &lambda) < 1e-5);
        assert!(derivative_discrepancy(&hybrid, &z, &theta, &[lambda[0] / 2.0]) < 1e-5);
        let mut gt = theta.clone();
        gt.push(rng.random_range(0.3..3.0));
        assert!(derivative_discrepancy(&gauss, &z, &gt, &lambda) < 1e-5);
        assert!(loss_derivative_discrepancy(&GaussianNegLogLik::new(gauss.clone()), &z, &gt) < 1e-5);
        assert!(loss_derivative_discrepancy(&SquaredError::new(dz.clone()), &z, &theta) < 1e-5);
        let weighted = SquaredError::new(dz.clone()).with_weight(|z| 1.0 + z[1] * z[1]);
        assert!(loss_derivative_discrepancy(&weighted, &z, &theta) < 1e-5);
        z[0] = f64::from(rng.random_bool(0.5));
        let logistic = RidgeLogistic::new(logistic_dz.clone());
        assert!(derivative_discrepancy(&logistic, &z, &theta, &lambda) < 1e-5);
        let brier = Brier::new(logistic_dz.clone()).with_active(vec![true, true, false]);
        assert!(loss_derivative_discrepancy(&brier, &z, &theta) < 1e-5);
    }
}

#[test]
fn ridge_newton_matches_direct_solve() {
    let (data, dz) = linear_data(60, 1);
    let model = RidgeLinear::new(dz.clone());
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
    for _ in 0..50 {
        let lambda = rng.random_range(0.0..3.0);
        let fit = solve_theta(&model, &data, &[lambda], &[0.0; 3], None).unwrap();
        let oracle = ridge_closed_form(&data, lambda, &dz).unwrap();
        for (a, b) in fit.theta_hat.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        let d = theta_prime(&model, &data, &fit).unwrap();
        let d_oracle = ridge_derivative_closed_form(&data, lambda, &dz).unwrap();
        for (a, b) in d.iter().zip(&d_oracle) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }
}

#[test]
fn ridge_limits() {
    let (data, dz) = linear_data(40, 3);
    let huge = ridge_closed_form(&data, 1e8, &dz).unwrap();
    let ybar = data.column(0).iter().sum::<f64>() / 40.0;
    assert!((huge[0] - ybar).abs() < 1e-4);
    assert!(huge[1].abs() < 1e-4 && huge[2].abs() < 1e-4);
}

#[test]
fn loocv_shortcut_matches_explicit_refits() {
    let (data, dz) = linear_data(25, 4);
    for lambda in [0.0, 0.05, 0.8] {
        let shortcut = ridge_loocv_closed_form(&data, lambda, &dz).unwrap();
        let model = RidgeLinear::new(dz.clone());
        let mut direct = 0.0;
        let mut refit = 0.0;
        for i in 0..data.n() {
            let rest: Vec<usize> = (0..data.n()).filter(|&j| j != i).collect();
            let beta = ridge_closed_form(&data.select_rows(&rest).unwrap(), lambda, &dz).unwrap();
            let z = data.row(i);
            direct += (dz.y(z) - dz.eta(z, &beta)).powi(2);
            let loo = solve_loo(&model, &data, &[lambda], i, &beta, None).unwrap();
            refit += (dz.y(z) - dz.eta(z, &loo.theta_hat)).powi(2);
        }
        direct /= data.n() as f64;
        refit /= data.n() as f64;
        assert!((shortcut - direct).abs() < 1e-10, "{shortcut} vs {direct}");
        assert!((shortcut - refit).abs() < 1e-8);
    }
}

#[test]
fn constant_response_has_zero_loocv() {
    let rows: Vec<[f64; 2]> = (0..10).map(|i| [3.0, i as f64]).collect();
    let data = Dataset::from_rows(&rows).unwrap();
    let dz = LinearDesign::new(2, 0, vec![1]).unwrap();
    assert!(ridge_loocv_closed_form(&data, 0.2, &dz).unwrap() < 1e-20);
}

#[test]
fn gaussian_mle_is_mean_and_variance() {
    let (data, _) = linear_data(50, 5);
    let m = GaussianLikelihood::location(3, 0).unwrap();
    let fit = solve_theta(&m, &data, &[0.0], &m.initial_theta(&data), None).unwrap();
    let y = data.column(0);
    let mean = y.iter().sum::<f64>() / 50.0;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
    assert!((fit.theta_hat[0] - mean).abs() < 1e-10);
    assert!((fit.theta_hat[1] - var).abs() < 1e-9);
}

#[test]
fn hybrid_of_identical_scores_has_no_lambda_dependence() {
    let dz = LinearDesign::new(3, 0, vec![1, 2]).unwrap();
    let h = Hybrid::new(
        AtLambda { model: RidgeLinear::new(dz.clone()), lambda: vec![0.0] },
        AtLambda { model: RidgeLinear::new(dz), lambda: vec![0.0] },
    )
    .unwrap();
    let mut out = [1.0; 3];
    h.dphi_dlambda(&[1.0, 0.5, -0.2], &[0.1, 0.2, 0.3], &[0.4], &mut out);
    assert_eq!(out, [0.0; 3]);
    assert!(h.lambda_domain().is_some());
}

const PIMA_SAMPLE: &str = "\
pregnant,glucose,pressure,triceps,insulin,mass,pedigree,age,diabetes
6,148,72,35,NA,33.6,0.627,50,pos
1,85,66,29,94,26.6,0.351,31,neg
8,183,64,0,0,23.3,0.672,32,pos
1,89,66,23,94,28.1,0.167,21,neg
0,137,40,35,168,43.1,2.288,33,pos
3,78,50,32,88,31,0.248,26,pos
2,197,70,45,543,30.5,0.158,53,pos
";

#[test]
fn pima_loader_drops_incomplete_rows_and_wires_model() {
    let data = pima::load_pima(PIMA_SAMPLE.as_bytes()).unwrap();
    assert_eq!(data.n(), 5);
    assert_eq!(data.d(), 9);
    let (model, _brier) = make_pima_model(&data).unwrap();
    let dims = model.dims();
    assert_eq!((dims.p, dims.q), (9, 1));
    let z = data.row(1);
    let mut phi = [0.0; 9];
    model.phi(z, &[0.0; 9], &[0.0], &mut phi);
    assert!((phi[0] - (z[8] - 0.5)).abs() < 1e-15);
    for k in 1..9 {
        assert!((phi[k] - z[k - 1] * (z[8] - 0.5)).abs() < 1e-15);
    }
}

#[test]
fn pima_loader_accepts_kaggle_names() {
    let text = "Pregnancies,Glucose,BloodPressure,SkinThickness,Insulin,BMI,DiabetesPedigreeFunction,Age,Outcome\n\
                1,85,66,29,94,26.6,0.351,31,0\n2,97,70,45,54,30.5,0.158,53,1\n3,120,60,20,80,25,0.3,40,1\n";
    let data = pima::load_pima(text.as_bytes()).unwrap();
    assert_eq!(data.n(), 3);
    assert_eq!(data.column(8), vec![0.0, 1.0, 1.0]);
    assert!(pima::load_pima("a,b\n1,2\n".as_bytes()).is_err());
}

