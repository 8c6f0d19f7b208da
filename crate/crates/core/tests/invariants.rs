use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use tuning_inference::criteria::{loocv_exact, loocv_fast, training_error, Criterion};
use tuning_inference::data::Dataset;
use tuning_inference::harness::{replicate, simulate, DgpKind, DgpSpec, Pipeline};
use tuning_inference::model::BoxDomain;
use tuning_inference::models::{LinearDesign, RidgeLinear, SquaredError};
use tuning_inference::tuner::{tune, TuneOptions};
use tuning_inference::variance::{variance_report, VarianceOptions, Z1Method};

fn linear(n: usize, seed: u64, beta: Vec<f64>) -> Dataset {
    simulate(&DgpSpec::new(DgpKind::LinearGaussian { beta, sigma: 1.0, quadratic: 0.0 }, n, seed)).unwrap()
}

fn ridge(d: usize) -> (RidgeLinear, SquaredError) {
    let design = LinearDesign::new(d, 0, (1..d).collect()).unwrap();
    (RidgeLinear::new(design.clone()), SquaredError::new(design))
}

fn permuted(data: &Dataset, seed: u64) -> Dataset {
    let mut idx: Vec<usize> = (0..data.n()).collect();
    idx.shuffle(&mut Xoshiro256PlusPlus::seed_from_u64(seed));
    data.select_rows(&idx).unwrap().with_names(data.names().to_vec()).unwrap()
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

fn beta() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, 3)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn criteria_ignore_row_order(n in 30usize..90, seed in 0u64..1000, perm in 0u64..1000, b in beta(), lambda in 0.0..1.0f64) {
        let data = linear(n, seed, b);
        let shuffled = permuted(&data, perm);
        let (m, l) = ridge(3);
        for f in [training_error::<RidgeLinear, SquaredError>, loocv_exact, loocv_fast] {
            let a = f(&m, &l, &data, &[lambda]).unwrap().value;
            let c = f(&m, &l, &shuffled, &[lambda]).unwrap().value;
            prop_assert!(close(&[a], &[c], 1e-10), "{a} vs {c}");
        }
    }

    #[test]
    fn tuned_fit_ignores_row_order(n in 40usize..120, seed in 0u64..1000, perm in 0u64..1000, b in beta()) {
        let data = linear(n, seed, b);
        let shuffled = permuted(&data, perm);
        let (m, l) = ridge(3);
        let bounds = BoxDomain::interval(0.0, 1.0).unwrap();
        let opts = TuneOptions::default();
        let a = tune(&m, &l, &data, Criterion::CvFast, &bounds, &opts).unwrap();
        let c = tune(&m, &l, &shuffled, Criterion::CvFast, &bounds, &opts).unwrap();
        prop_assert_eq!(&a.boundary_status, &c.boundary_status);
        prop_assert!(close(&a.lambda_hat, &c.lambda_hat, 1e-5), "{:?} vs {:?}", a.lambda_hat, c.lambda_hat);
        prop_assert!(close(&a.theta_hat, &c.theta_hat, 1e-5));
    }

    #[test]
    fn variances_are_positive_semidefinite(n in 40usize..120, seed in 0u64..1000, b in beta(), criterion_curvature: bool) {
        let data = linear(n, seed, b);
        let (m, l) = ridge(3);
        let fit = tune(&m, &l, &data, Criterion::CvExact, &BoxDomain::interval(0.0, 1.0).unwrap(), &TuneOptions::default()).unwrap();
        let z1 = if criterion_curvature { Z1Method::TuningCriterion } else { Z1Method::Profile };
        let opts = VarianceOptions { z1, ..VarianceOptions::default() };
        let (_, report) = variance_report(&m, &l, &data, &fit, &opts).unwrap();
        let scale = report.v2.abs().max();
        prop_assert!(min_eigenvalue(&report.v2) >= -1e-10 * scale);
        prop_assert_eq!(&report.v2, &report.v2.transpose());
        if let Some(v1) = &report.v1 {
            prop_assert!(min_eigenvalue(v1) >= -1e-8 * v1.abs().max());
        }
        prop_assert!(report.standard_errors.iter().all(|s| s.is_finite() && *s >= 0.0));
    }

    #[test]
    fn simulation_is_a_function_of_the_seed(seed in any::<u64>(), n in 5usize..50, c in 0.0..8.0f64) {
        let spec = DgpSpec::new(DgpKind::GaussMix { c }, n, seed);
        let first = simulate(&spec).unwrap();
        prop_assert_eq!(&first, &simulate(&spec).unwrap());
        let other = simulate(&spec.with_seed(seed.wrapping_add(1))).unwrap();
        prop_assert_ne!(first.values(), other.values());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 4, ..ProptestConfig::default() })]

    #[test]
    fn replications_are_reproducible(seed in any::<u64>()) {
        let (m, l) = ridge(3);
        let pipeline = Pipeline::new(Arc::new(m), Arc::new(l), Criterion::CvFast, BoxDomain::interval(0.0, 1.0).unwrap())
            .with_variance(Some(VarianceOptions::default()));
        let spec = DgpSpec::new(DgpKind::LinearGaussian { beta: vec![1.0, 0.5, -0.5], sigma: 1.0, quadratic: 0.0 }, 40, 0);
        let a = replicate(&spec, &pipeline, 6, seed).unwrap();
        let b = replicate(&spec, &pipeline, 6, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
