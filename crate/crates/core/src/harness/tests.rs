use super::*;
use crate::model::{LossSpec, ModelSpec};
use crate::models::{LinearDesign, RidgeLinear, SquaredError};

fn cov(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (n - 1.0)
}

fn class_zero(c: f64, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let data = simulate(&DgpSpec::new(DgpKind::GaussMix { c }, n, seed)).unwrap();
    let rows: Vec<&[f64]> = data.rows().filter(|r| r[0] == 0.0).collect();
    (rows.iter().map(|r| r[1]).collect(), rows.iter().map(|r| r[2]).collect())
}

#[test]
fn mixture_covariance_matches_its_definition() {
    let (x1, x2) = class_zero(0.0, 20_000, 1);
    let m = x1.len() as f64;
    assert!(cov(&x1, &x2).abs() < 4.0 / m.sqrt());
    let (x1, x2) = class_zero(2.0, 20_000, 2);
    let m = x1.len() as f64;
    // var of the product of two unit-correlated-by--1/2 N(0,2) coordinates is 4 + 1
    assert!((cov(&x1, &x2) + 1.0).abs() < 4.0 * 5f64.sqrt() / m.sqrt());
    assert!((cov(&x1, &x1) - 2.0).abs() < 0.1);
    let mean: f64 = x1.iter().sum::<f64>() / m;
    assert!((mean - 0.5).abs() < 4.0 * (2.0 / m).sqrt());

    let data = simulate(&DgpSpec::new(DgpKind::GaussMix { c: 2.0 }, 20_000, 3)).unwrap();
    let ones: Vec<&[f64]> = data.rows().filter(|r| r[0] == 1.0).collect();
    let x1: Vec<f64> = ones.iter().map(|r| r[1]).collect();
    let x2: Vec<f64> = ones.iter().map(|r| r[2]).collect();
    assert!((cov(&x1, &x2) + 2.0).abs() < 0.2);
    assert!((ones.len() as f64 / 20_000.0 - 0.5).abs() < 0.02);
}

#[test]
fn simulation_is_seeded_and_validated() {
    for kind in [
        DgpKind::GaussMix { c: 1.0 },
        DgpKind::LinearGaussian { beta: vec![1.0, 2.0, -1.0], sigma: 0.5, quadratic: 0.3 },
        DgpKind::LogisticTrue { beta: vec![0.0, 1.0] },
        DgpKind::GaussianIid { mean: 1.0, sd: 2.0 },
    ] {
        let spec = DgpSpec::new(kind, 50, 9);
        let a = simulate(&spec).unwrap();
        assert_eq!(a.values(), simulate(&spec).unwrap().values());
        assert_ne!(a.values(), simulate(&spec.with_seed(10)).unwrap().values());
        assert_eq!(a.roles().unwrap().response, 0);
    }
    assert!(matches!(simulate(&DgpSpec::new(DgpKind::GaussMix { c: 8.5 }, 10, 0)), Err(Error::InvalidInput(_))));
    assert!(simulate(&DgpSpec::new(DgpKind::GaussMix { c: 8.0 }, 10, 0)).is_ok());
}

#[test]
fn linear_response_follows_the_formula() {
    let spec = DgpSpec::new(DgpKind::LinearGaussian { beta: vec![1.0, 2.0, -1.0], sigma: 0.0, quadratic: 0.5 }, 20, 4);
    for r in simulate(&spec).unwrap().rows() {
        assert!((r[0] - (1.0 + 2.0 * r[1] - r[2] + 0.5 * r[1] * r[1])).abs() < 1e-14);
    }
}

#[test]
fn custom_sampler_and_spec_json() {
    let spec = DgpSpec::new(
        DgpKind::Custom { sampler: Arc::new(|rng: &mut SimRng| vec![rng.random::<f64>(), 3.0]), d: 2, response: 1 },
        5,
        0,
    );
    let data = simulate(&spec).unwrap();
    assert!(data.rows().all(|r| r[1] == 3.0));
    assert_eq!(data.names(), &["x1".to_string(), "y".to_string()]);

    let text = r#"{"kind": "gauss_mix", "c": 1.5, "n": 100, "seed": 4}"#;
    let spec: DgpSpec = serde_json::from_str(text).unwrap();
    assert!(matches!(spec.kind, DgpKind::GaussMix { c } if c == 1.5));
    assert_eq!(spec.n, 100);
    assert!(serde_json::from_str::<DgpSpec>(r#"{"kind": "gauss_mix", "n": 3}"#).is_err());
}

#[test]
fn stream_seeds_are_distinct_and_stable() {
    let s: Vec<u64> = (0..1000).map(|j| stream_seed(42, j)).collect();
    let mut u = s.clone();
    u.sort_unstable();
    u.dedup();
    assert_eq!(u.len(), s.len());
    assert_eq!(stream_seed(42, 7), s[7]);
    assert_ne!(stream_seed(43, 7), s[7]);
}

fn linear_pipeline() -> Pipeline {
    let design = LinearDesign::new(3, 0, vec![1, 2]).unwrap();
    Pipeline::new(
        Arc::new(RidgeLinear::new(design.clone())),
        Arc::new(SquaredError::new(design)),
        Criterion::CvExact,
        BoxDomain::interval(0.0, 1.0).unwrap(),
    )
    .with_tune(TuneOptions::grid(9))
}

fn linear_dgp(n: usize) -> DgpSpec {
    DgpSpec::new(DgpKind::LinearGaussian { beta: vec![0.5, 0.2, -0.1], sigma: 1.0, quadratic: 0.3 }, n, 0)
}

#[test]
fn repeated_seed_gives_identical_replications() {
    let s = replicate_with_seeds(&linear_dgp(40), &linear_pipeline(), &[7, 7]).unwrap();
    let (a, b) = (&s.records[0], &s.records[1]);
    assert_eq!((a.index, b.index), (0, 1));
    assert_eq!(Replicate { index: 1, ..a.clone() }, *b);
}

#[test]
fn replication_is_reproducible_and_aggregates_recompute() {
    let (dgp, pipe) = (linear_dgp(60), linear_pipeline());
    let s = replicate(&dgp, &pipe, 12, 5).unwrap();
    assert_eq!(s, replicate(&dgp, &pipe, 12, 5).unwrap());
    assert_eq!(s.records.len() + s.failures.len(), 12);
    assert_eq!(Aggregates::from_records(&s.records, s.n).unwrap(), s.aggregates);
    assert_eq!(s.aggregates.v2_count, s.records.len());

    let x = s.draws(1);
    let direct = 60.0 * cov(&x, &x);
    assert!((direct - s.aggregates.empirical_variance[(1, 1)]).abs() <= 1e-12 * direct.abs().max(1.0));
    let m: f64 = s.records.iter().map(|r| r.v2.as_ref().unwrap()[(0, 0)]).sum::<f64>() / 12.0;
    assert!((m - s.aggregates.mean_v2.as_ref().unwrap()[(0, 0)]).abs() < 1e-12 * m);

    let json = crate::report::to_json_string(&s).unwrap();
    assert_eq!(serde_json::from_str::<ReplicationSummary>(&json).unwrap(), s);
}

#[test]
fn replication_failures_are_counted() {
    // a dataset with a non-finite entry cannot be built, so that replication fails
    let sampler: RowSampler = Arc::new(|rng: &mut SimRng| {
        let y = if rng.random_bool(0.02) { f64::NAN } else { rng.random::<f64>() };
        vec![y, rng.random::<f64>(), rng.random::<f64>()]
    });
    let dgp = DgpSpec::new(DgpKind::Custom { sampler, d: 3, response: 0 }, 40, 0);
    let pipe = linear_pipeline().with_variance(None);
    match replicate(&dgp, &pipe, 10, 1) {
        Err(Error::FailureRateExceeded { failed, total }) => {
            assert_eq!(total, 10);
            assert!(failed > 0);
        }
        other => panic!("expected a failure-rate error, got {other:?}"),
    }
}

#[test]
fn constant_data_bootstraps_to_a_point() {
    let model = ModelSpec::new(1, 1, 1, |z, t, _l, o| o[0] = z[0] - t[0]);
    let loss = LossSpec::new(|z, t| (z[0] - t[0]).powi(2));
    let pipe = Pipeline::new(Arc::new(model), Arc::new(loss), Criterion::Te, BoxDomain::interval(0.0, 1.0).unwrap())
        .with_tune(TuneOptions::grid(5))
        .with_variance(None);
    let data = Dataset::from_rows(&[[2.5]; 30]).unwrap();
    let s = bootstrap(&data, &pipe, 20, 3).unwrap();
    assert!(s.draws(0).iter().all(|v| *v == s.draws(0)[0]));
    assert_eq!(s.aggregates.empirical_variance[(0, 0)], 0.0);
}

#[test]
fn bootstrap_is_seeded() {
    let data = simulate(&linear_dgp(50)).unwrap();
    let pipe = linear_pipeline().with_variance(None);
    let a = bootstrap(&data, &pipe, 8, 11).unwrap();
    assert_eq!(a, bootstrap(&data, &pipe, 8, 11).unwrap());
    assert_ne!(a.records, bootstrap(&data, &pipe, 8, 12).unwrap().records);
}

#[test]
fn histogram_and_ks() {
    let h = histogram(&[0.0, 0.5, 1.0, 2.0, f64::NAN], 2);
    assert_eq!(h.counts, vec![2, 2]);
    assert_eq!(h.bin(1), (1.0, 2.0));
    assert_eq!(histogram(&[3.0, 3.0], 4).counts.iter().sum::<usize>(), 2);
    assert_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]), 0.0);
    assert_eq!(ks_statistic(&[1.0, 2.0], &[5.0, 6.0, 7.0]), 1.0);
    assert!((ks_statistic(&[1.0, 2.0, 3.0, 4.0], &[3.5, 4.5]) - 0.75).abs() < 1e-15);
}

#[test]
fn normal_draws_handle_singular_covariance() {
    let v = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
    let mut rng = SimRng::seed_from_u64(0);
    let d = normal_draws(&v, 20_000, &mut rng);
    let x: Vec<f64> = d.iter().map(|v| v[0]).collect();
    let y: Vec<f64> = d.iter().map(|v| v[1]).collect();
    assert!(d.iter().all(|v| (v[1] - 2.0 * v[0]).abs() < 1e-12));
    assert!((cov(&x, &x) - 1.0).abs() < 0.05);
    assert!((cov(&x, &y) - 2.0).abs() < 0.1);
}

#[test]
fn degenerate_tuning_reduces_the_mixture_to_one_normal() {
    // plain least squares tuned by its own training error: the unconstrained
    // optimum is lambda = 0 for every sample, so N3 has no spread
    let design = LinearDesign::new(3, 0, vec![1, 2]).unwrap();
    let pipe = Pipeline::new(
        Arc::new(RidgeLinear::new(design.clone())),
        Arc::new(SquaredError::new(design)),
        Criterion::Te,
        BoxDomain::interval(0.0, 1.0).unwrap(),
    );
    let beta = vec![1.0, 0.5, -0.5];
    let dgp = DgpSpec::new(DgpKind::LinearGaussian { beta: beta.clone(), sigma: 1.0, quadratic: 0.0 }, 200, 0);
    let opts = MixtureOptions { pilot_n: 5000, mixture_draws: 5000 };
    let r = mixture_law_check(&dgp, &pipe, &beta, 300, 1, &opts).unwrap();
    assert_eq!(r.boundary, 0.0);
    assert!(r.joint_covariance[(6, 6)] < 1e-8 * r.joint_covariance[(0, 0)], "{}", r.joint_covariance);
    assert!(r.ks.iter().all(|k| *k < 0.1), "{:?}", r.ks);
    let again = mixture_law_check(&dgp, &pipe, &beta, 300, 1, &opts).unwrap();
    assert_eq!(r, again);
}
