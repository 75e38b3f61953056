use std::f64::consts::E;

use crushgraph::simulator::CrushRecord;
use crushgraph::weibull::{dataset_summary, filter_batch, fit, Quantiles, WeibullError, WeibullFit, MIN_VALID};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Weibull};

fn draws(n: usize, m: f64, sigma0: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Weibull::new(sigma0, m).unwrap();
    (0..n).map(|_| dist.sample(&mut rng)).collect()
}

fn record(strength: f64, valid: bool) -> CrushRecord {
    CrushRecord {
        schema: "crushgraph.crush/1".into(),
        particle_id: "p".into(),
        curve: Vec::new(),
        peak_force: 0.0,
        gap_at_peak: 0.0,
        strength,
        valid,
        steps_run: 0,
        failure: None,
    }
}

#[test]
fn recovers_generating_parameters() {
    let f = fit(&draws(1000, 9.690, 10.0, 2024)).unwrap();
    assert!((f.m / 9.690 - 1.0).abs() <= 0.05, "m = {}", f.m);
    assert!((f.sigma0 / 10.0 - 1.0).abs() <= 0.02, "sigma0 = {}", f.sigma0);
    assert!(f.r2 > 0.95 && f.r2 <= 1.0);
    assert_eq!(f.n_valid, 1000);
    assert!((f.survival(f.sigma0) - 1.0 / E).abs() < 1e-12);
}

#[test]
fn ranked_line_is_the_least_squares_fit() {
    // Independent recomputation through a normal-equations solve.
    let s = draws(40, 4.0, 7.0, 3);
    let f = fit(&s).unwrap();
    let mut v = s.clone();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let a = nalgebra::DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { v[i].ln() });
    let y = nalgebra::DVector::from_fn(n, |i, _| {
        let p = 1.0 - (i + 1) as f64 / (n + 1) as f64;
        (-p.ln()).ln()
    });
    let coef = (a.transpose() * &a).lu().solve(&(a.transpose() * &y)).unwrap();
    assert!((coef[1] - f.m).abs() < 1e-9);
    assert!(((-coef[0] / coef[1]).exp() - f.sigma0).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scale_equivariance(seed in 0u64..1000, c in 0.01..100.0f64) {
        let s = draws(35, 6.0, 12.0, seed);
        let f = fit(&s).unwrap();
        let g = fit(&s.iter().map(|x| x * c).collect::<Vec<_>>()).unwrap();
        prop_assert!((g.sigma0 / (c * f.sigma0) - 1.0).abs() < 1e-12);
        prop_assert!((g.m - f.m).abs() < 1e-9);
    }

    #[test]
    fn order_does_not_matter(seed in 0u64..1000) {
        let s = draws(50, 3.0, 20.0, seed);
        let mut t = s.clone();
        t.shuffle(&mut ChaCha8Rng::seed_from_u64(seed + 1));
        prop_assert_eq!(fit(&s).unwrap(), fit(&t).unwrap());
    }

    #[test]
    fn survival_strictly_decreases(seed in 0u64..1000, a in 0.5..30.0f64, step in 0.01..5.0f64) {
        let f = fit(&draws(30, 5.0, 10.0, seed)).unwrap();
        prop_assert!(f.m > 0.0 && f.sigma0 > 0.0);
        // Deep in the tail both values underflow to zero.
        prop_assume!(f.survival(a) > 1e-300);
        prop_assert!(f.survival(a + step) < f.survival(a));
    }
}

#[test]
fn filtering_follows_the_removal_rule() {
    let mut batch: Vec<CrushRecord> = (0..50).map(|k| record(5.0 + k as f64, k < 29)).collect();
    assert_eq!(
        filter_batch(&batch, MIN_VALID),
        Err(WeibullError::InsufficientData { valid: 29, required: 30 })
    );
    batch.iter_mut().for_each(|r| r.valid = true);
    assert_eq!(filter_batch(&batch, MIN_VALID).unwrap().len(), 50);
    assert!(matches!(filter_batch(&[], MIN_VALID), Err(WeibullError::InsufficientData { .. })));
    assert_eq!(fit(&[7.0; 30]), Err(WeibullError::DegenerateSample));
}

#[test]
fn summary_quantiles() {
    let fits: Vec<WeibullFit> = (1..=100)
        .map(|k| WeibullFit {
            m: 1.0 + k as f64 / 10.0,
            sigma0: k as f64,
            r2: 0.9,
            n_valid: 30,
        })
        .collect();
    let s = dataset_summary(&fits).unwrap();
    assert_eq!(s.sigma0.median, 50.5);
    assert_eq!((s.sigma0.min, s.sigma0.max), (1.0, 100.0));
    assert_eq!(s.n_types, 100);
    let one = dataset_summary(&fits[..1]).unwrap();
    assert!(one.sigma0.as_array().iter().all(|v| *v == 1.0));
    assert!(dataset_summary(&[]).is_none());
    assert_eq!(Quantiles::of(&[4.0, 1.0, 3.0, 2.0]).q25, 1.75);
}
