use std::f64::consts::PI;

use infosep::propagation::{
    compare_with_histogram, distance_prior_pdf, l1_tolerance, mixing_element_prior_pdf,
    monte_carlo_mixing_samples, rescale_distance_prior, BallPrior, MIN_VALIDATION_SAMPLES,
};
use infosep_oracle::{integrate, integrate_to_infinity};
use proptest::prelude::*;

#[test]
fn distance_prior_normalizes() {
    for radius in [0.1, 1.0, 2.5, 40.0] {
        let total = integrate(|r| distance_prior_pdf(r, radius).unwrap(), 0.0, radius, 64);
        assert!((total - 1.0).abs() < 1e-10, "R={radius}: {total}");
    }
}

#[test]
fn mixing_prior_normalizes() {
    for radius in [0.5, 1.0, 2.5, 10.0] {
        let lo = 1.0 / (4.0 * PI * radius * radius);
        let total = integrate_to_infinity(|a| mixing_element_prior_pdf(a, radius).unwrap(), lo, 4000);
        assert!((total - 1.0).abs() < 1e-8, "R={radius}: {total}");
    }
}

#[test]
fn mixing_prior_closed_form() {
    let radius = 1.7;
    let lo = 1.0 / (4.0 * PI * radius * radius);
    let c = 3.0 / (16.0 * PI.powf(1.5) * radius.powi(3));
    assert!((c * (2.0 / 3.0) * lo.powf(-1.5) - 1.0).abs() < 1e-14);
    for a in [lo, 2.0 * lo, 1.0, 30.0] {
        let pdf = mixing_element_prior_pdf(a, radius).unwrap();
        assert!((pdf - c * a.powf(-2.5)).abs() <= 1e-14 * pdf);
    }
    assert_eq!(mixing_element_prior_pdf(lo * (1.0 - 1e-12), radius).unwrap(), 0.0);
}

#[test]
fn shell_prior_normalizes() {
    let prior = BallPrior::with_min_radius(2.0, 0.3).unwrap();
    let (lo, hi) = prior.mixing_support();
    let total = integrate(|a| prior.mixing_pdf(a), lo, hi, 4000);
    assert!((total - 1.0).abs() < 1e-8);
}

#[test]
fn monte_carlo_histogram_matches() {
    for (radius, seed) in [(1.0, 7u64), (2.5, 8)] {
        let prior = BallPrior::new(radius).unwrap();
        let samples = monte_carlo_mixing_samples(&prior, 1_000_000, seed).unwrap();
        let lo = 1.0 / (4.0 * PI * radius * radius);
        assert!(samples.iter().all(|&a| a >= lo));
        let cmp = compare_with_histogram(&prior, &samples, 100).unwrap();
        assert!(cmp.l1 < 0.02, "R={radius}: L1 {}", cmp.l1);
        let expected_total: f64 = cmp.bins.iter().map(|b| b.expected).sum();
        assert!((expected_total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn empirical_cdf_at_median() {
    let prior = BallPrior::new(1.3).unwrap();
    let n = 200_000;
    let samples = monte_carlo_mixing_samples(&prior, n, 3).unwrap();
    let median = prior.mixing_quantile(0.5);
    let below = samples.iter().filter(|&&a| a <= median).count() as f64 / n as f64;
    assert!((below - 0.5).abs() < 3.0 / (n as f64).sqrt());
    assert!((prior.mixing_cdf(median) - 0.5).abs() < 1e-14);
}

#[test]
fn doubling_the_radius_quarters_the_samples() {
    let n = 200_001;
    let mut small = monte_carlo_mixing_samples(&BallPrior::new(1.0).unwrap(), n, 11).unwrap();
    let mut large = monte_carlo_mixing_samples(&BallPrior::new(2.0).unwrap(), n, 12).unwrap();
    small.sort_by(f64::total_cmp);
    large.sort_by(f64::total_cmp);
    for q in [0.1, 0.25, 0.5, 0.75] {
        let k = (q * n as f64) as usize;
        let ratio = small[k] / large[k];
        assert!((ratio - 4.0).abs() < 0.05, "quantile {q}: ratio {ratio}");
    }
}

#[test]
fn rescaling_examples() {
    let prior = BallPrior::new(1.0).unwrap();
    let scaled = BallPrior::new(2.0).unwrap();
    assert!((scaled.distance_pdf(1.0).unwrap() * 2.0 - 0.75).abs() < 1e-15);
    assert!((prior.distance_pdf(0.5).unwrap() - 0.75).abs() < 1e-15);

    let identity = rescale_distance_prior(&BallPrior::new(3.0).unwrap(), 1.0, 101).unwrap();
    assert_eq!(identity.max_error(), 0.0);

    for scale in [1e-3, 0.5, 2.0, 1e3] {
        let report = rescale_distance_prior(&prior, scale, 1001).unwrap();
        assert!(report.max_error() < 1e-12, "scale {scale}: {report:?}");
    }
}

#[test]
fn small_sample_rule() {
    assert_eq!(l1_tolerance(1_000_000), 0.02);
    assert_eq!(l1_tolerance(10_000_000), 0.02);
    assert!((l1_tolerance(MIN_VALIDATION_SAMPLES) - 0.1).abs() < 1e-15);
    let prior = BallPrior::new(1.0).unwrap();
    let samples = monte_carlo_mixing_samples(&prior, MIN_VALIDATION_SAMPLES, 5).unwrap();
    let cmp = compare_with_histogram(&prior, &samples, 100).unwrap();
    assert!(cmp.l1 < l1_tolerance(MIN_VALIDATION_SAMPLES));
}

#[test]
fn invalid_inputs() {
    assert!(BallPrior::new(0.0).is_err());
    assert!(BallPrior::with_min_radius(1.0, 1.5).is_err());
    assert!(distance_prior_pdf(-1.0, 1.0).is_err());
    assert!(monte_carlo_mixing_samples(&BallPrior::new(1.0).unwrap(), 0, 0).is_err());
    assert!(rescale_distance_prior(&BallPrior::new(1.0).unwrap(), -2.0, 10).is_err());
}

proptest! {
    #[test]
    fn quantile_inverts_cdf(p in 0.0f64..1.0, radius in 0.1f64..10.0) {
        let prior = BallPrior::new(radius).unwrap();
        let a = prior.mixing_quantile(p);
        prop_assert!((prior.mixing_cdf(a) - p).abs() < 1e-12);
    }

    #[test]
    fn rescaling_holds_for_any_scale(log_scale in -6.0f64..6.0, radius in 0.1f64..10.0) {
        let prior = BallPrior::new(radius).unwrap();
        let report = rescale_distance_prior(&prior, 10f64.powf(log_scale), 101).unwrap();
        prop_assert!(report.mixing_max_rel_error < 1e-12);
        prop_assert!(report.distance_max_abs_error < 1e-12 * (3.0 / radius).max(1.0));
    }

    #[test]
    fn log_derivative_matches(a_rel in 1.0f64..100.0) {
        let prior = BallPrior::new(1.0).unwrap();
        let a = prior.mixing_support().0 * a_rel;
        let fd = infosep_oracle::central_difference(|v| prior.log_mixing_pdf(v), a, 1e-7 * a);
        prop_assert!((fd - prior.log_mixing_pdf_derivative(a)).abs() < 1e-5 * fd.abs());
    }
}
