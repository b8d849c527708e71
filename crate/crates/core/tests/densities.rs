use std::f64::consts::PI;

use infosep::densities::{log_density, log_matrix_prior, score, AmplitudeDensity, MatrixPrior};
use infosep::propagation::BallPrior;
use infosep_oracle::{central_difference, integrate};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn families() -> Vec<AmplitudeDensity> {
    vec![
        AmplitudeDensity::STANDARD_LOGISTIC,
        AmplitudeDensity::Logistic { scale: 0.4 },
        AmplitudeDensity::Laplacian { scale: 1.0 },
        AmplitudeDensity::Laplacian { scale: 2.5 },
        AmplitudeDensity::Gaussian { sigma: 1.0 },
        AmplitudeDensity::Gaussian { sigma: 0.3 },
        AmplitudeDensity::Bimodal { mu: 1.0, sigma: 0.2 },
        AmplitudeDensity::Bimodal { mu: 0.3, sigma: 0.5 },
        AmplitudeDensity::sinusoid_matched(1.0),
    ]
}

#[test]
fn every_family_integrates_to_one() {
    for d in families() {
        let width = 80.0 * d.variance().sqrt().max(1.0);
        let pdf = |s: f64| d.log_density(s).exp();
        // Split at the origin so the Laplacian kink sits on a panel edge.
        let total = integrate(pdf, -width, 0.0, 4000) + integrate(pdf, 0.0, width, 4000);
        assert!((total - 1.0).abs() < 1e-6, "{d}: {total}");
    }
}

#[test]
fn score_matches_finite_differences() {
    for d in families() {
        for k in 0..=2000 {
            let u = -10.0 + 0.01 * k as f64;
            if matches!(d, AmplitudeDensity::Laplacian { .. }) && u.abs() < 1e-4 {
                continue;
            }
            let fd = central_difference(|v| d.log_density(v), u, 1e-5);
            let analytic = score(&d, u).unwrap();
            assert!((fd - analytic).abs() < 1e-6, "{d} at {u}: {analytic} vs {fd}");
        }
    }
}

#[test]
fn closed_form_values() {
    let g = AmplitudeDensity::Gaussian { sigma: 1.0 };
    assert!((log_density(&g, 0.0) + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
    assert_eq!(score(&g, 3.0).unwrap(), -3.0);

    let l = AmplitudeDensity::Laplacian { scale: 1.0 };
    assert!((log_density(&l, 2.0) - (-(2f64.ln()) - 2.0)).abs() < 1e-15);
    assert_eq!(score(&l, -2.0).unwrap(), 1.0);

    let sig = AmplitudeDensity::STANDARD_LOGISTIC;
    assert!((log_density(&sig, 0.0) - 0.25f64.ln()).abs() < 1e-15);
    assert_eq!(score(&sig, 0.0).unwrap(), 0.0);
}

#[test]
fn logistic_score_is_one_minus_twice_sigmoid() {
    let d = AmplitudeDensity::STANDARD_LOGISTIC;
    for k in -40..=40 {
        let u = 0.25 * k as f64;
        let g = 1.0 / (1.0 + (-u).exp());
        assert!((score(&d, u).unwrap() - (1.0 - 2.0 * g)).abs() < 1e-14);
    }
}

#[test]
fn score_shapes() {
    let g = AmplitudeDensity::Gaussian { sigma: 2.0 };
    for u in [-3.0, -0.5, 0.7, 4.0] {
        assert!((score(&g, u).unwrap() + u / 4.0).abs() < 1e-15);
    }
    let l = AmplitudeDensity::Laplacian { scale: 0.5 };
    for u in [-3.0, -0.5, 0.7, 4.0] {
        assert_eq!(score(&l, u).unwrap().abs(), 2.0);
    }
}

#[test]
fn bimodal_score_has_three_zero_crossings() {
    for (mu, sigma) in [(1.0, 0.2), (0.658, 0.259), (2.0, 1.5)] {
        let d = AmplitudeDensity::Bimodal { mu, sigma };
        let grid: Vec<f64> = (0..=4001).map(|k| -10.0 + 0.005 * k as f64 + 0.0012).collect();
        let crossings = grid
            .windows(2)
            .filter(|w| score(&d, w[0]).unwrap().signum() != score(&d, w[1]).unwrap().signum())
            .count();
        assert_eq!(crossings, 3, "mu={mu} sigma={sigma}");
    }
}

#[test]
fn sinusoid_matched_moments() {
    let d = AmplitudeDensity::sinusoid_matched(1.0);
    let AmplitudeDensity::Bimodal { mu, sigma } = d else {
        panic!("expected a bimodal density");
    };
    assert!((mu - 0.658).abs() < 1e-3 && (sigma - 0.259).abs() < 1e-3);
    let pdf = |s: f64| d.log_density(s).exp();
    let m2 = integrate(|s| s * s * pdf(s), -6.0, 6.0, 2000);
    let m4 = integrate(|s| s.powi(4) * pdf(s), -6.0, 6.0, 2000);
    assert!((m2 - 0.5).abs() < 1e-10);
    assert!((m4 - 0.375).abs() < 1e-10);
}

#[test]
fn matrix_prior_values() {
    let box_prior = MatrixPrior::UniformBox { min: -2.0, max: 2.0 };
    let inside = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 1.9, 0.0]);
    assert!((log_matrix_prior(&box_prior, &inside) - 4.0 * 0.25f64.ln()).abs() < 1e-15);
    let outside = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 2.1, 0.0]);
    assert_eq!(log_matrix_prior(&box_prior, &outside), f64::NEG_INFINITY);

    let inv = MatrixPrior::inverse_square(BallPrior::new(1.0).unwrap());
    let one = DMatrix::from_element(1, 1, 1.0);
    let expected = (3.0 / (16.0 * PI.powf(1.5))).ln();
    assert!((log_matrix_prior(&inv, &one) - expected).abs() < 1e-14);
    assert_eq!(log_matrix_prior(&MatrixPrior::None, &one), 0.0);
}

#[test]
fn density_strings_round_trip() {
    for d in families() {
        let parsed: AmplitudeDensity = d.to_string().parse().unwrap();
        assert_eq!(parsed, d);
    }
    let alias: AmplitudeDensity = "logistic-sigmoid-derivative".parse().unwrap();
    assert_eq!(alias, AmplitudeDensity::STANDARD_LOGISTIC);
    assert!("cauchy:1".parse::<AmplitudeDensity>().is_err());
    assert!("gaussian:-1".parse::<AmplitudeDensity>().is_err());
}

proptest! {
    #[test]
    fn gaussian_score_is_linear(u in -50.0f64..50.0, v in -50.0f64..50.0, sigma in 0.1f64..5.0) {
        let d = AmplitudeDensity::Gaussian { sigma };
        let lhs = score(&d, u + v).unwrap();
        let rhs = score(&d, u).unwrap() + score(&d, v).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn symmetric_families_are_even(u in -30.0f64..30.0, scale in 0.1f64..3.0) {
        for d in [
            AmplitudeDensity::Logistic { scale },
            AmplitudeDensity::Laplacian { scale },
            AmplitudeDensity::Gaussian { sigma: scale },
            AmplitudeDensity::Bimodal { mu: scale, sigma: 0.5 },
        ] {
            prop_assert_eq!(d.log_density(u), d.log_density(-u));
        }
    }
}
