use std::f64::consts::PI;

use infosep::localization::{
    chi_squared, fit_waveshapes, forward_gain, gain_matrix, localize, ForwardModel, GeometryConfig,
    LocalizeOptions, Point, SearchRegion, SourceEstimate,
};
use infosep::metrics::amari_index;
use infosep::separation::{separate, SeparationConfig};
use infosep::signalgen::{gen_sources, SourceFamily, SourceSpec};
use infosep::RecordingMatrix;
use nalgebra::{DMatrix, Rotation3, Unit, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn cube() -> Vec<Point> {
    let mut d = Vec::new();
    for x in [-1.0, 1.0] {
        for y in [-1.0, 1.0] {
            for z in [-1.0, 1.0] {
                d.push(Point::new(x, y, z));
            }
        }
    }
    d
}

fn geometry(model: ForwardModel, sigma: f64) -> GeometryConfig {
    GeometryConfig {
        detectors: cube(),
        region: SearchRegion::Ball {
            center: Point::zeros(),
            radius: 0.8,
        },
        model,
        sigmas: vec![sigma],
    }
}

fn waveshapes(n: usize, samples: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, samples, |_, _| StandardNormal.sample(&mut rng))
}

fn estimate(positions: Vec<Point>, orientations: Option<Vec<Point>>, s: DMatrix<f64>) -> SourceEstimate {
    SourceEstimate {
        positions,
        orientations,
        waveshapes: s,
        chi_squared: 0.0,
        warnings: Vec::new(),
    }
}

/// The double sum written out with the gains computed inline.
fn direct_chi_squared(
    x: &DMatrix<f64>,
    det: &[Point],
    sigmas: &[f64],
    pos: &[Point],
    s: &DMatrix<f64>,
) -> f64 {
    let mut total = 0.0;
    for i in 0..det.len() {
        for t in 0..x.ncols() {
            let mut pred = 0.0;
            for (l, p) in pos.iter().enumerate() {
                let dx = det[i][0] - p[0];
                let dy = det[i][1] - p[1];
                let dz = det[i][2] - p[2];
                pred += s[(l, t)] / (4.0 * PI * (dx * dx + dy * dy + dz * dz));
            }
            total += (x[(i, t)] - pred).powi(2) / (2.0 * sigmas[i] * sigmas[i]);
        }
    }
    total
}

#[test]
fn chi_squared_examples() {
    let mut g = geometry(ForwardModel::PointInverseSquare, 0.5);
    let est = estimate(vec![Point::new(0.1, 0.2, -0.3)], None, waveshapes(1, 40, 1));
    let x = est.predict(&g).unwrap();
    assert_eq!(chi_squared(&x, &g, &est).unwrap(), 0.0);

    let shifted = x.add_scalar(0.5);
    let chi = chi_squared(&shifted, &g, &est).unwrap();
    assert!((chi - 8.0 * 40.0 / 2.0).abs() < 1e-9);

    g.sigmas = vec![0.3, 0.5, 0.7, 0.9, 1.1, 1.3, 1.5, 1.7];
    let pos = vec![Point::new(0.1, 0.2, -0.3), Point::new(-0.4, 0.0, 0.25)];
    let s = waveshapes(2, 25, 2);
    let noisy = waveshapes(8, 25, 3);
    let est = estimate(pos.clone(), None, s.clone());
    let expected = direct_chi_squared(&noisy, &g.detectors, &g.sigmas, &pos, &s);
    assert!((chi_squared(&noisy, &g, &est).unwrap() - expected).abs() < 1e-12 * expected);
}

#[test]
fn empty_model_scores_raw_power() {
    let g = geometry(ForwardModel::PointInverseSquare, 0.7);
    let x = waveshapes(8, 30, 4) * 0.7;
    let est = estimate(vec![], None, DMatrix::zeros(0, 30));
    let expected: f64 = x.iter().map(|v| v * v).sum::<f64>() / (2.0 * 0.49);
    assert!((chi_squared(&x, &g, &est).unwrap() - expected).abs() < 1e-12 * expected);
}

#[test]
fn recovers_planted_point_source() {
    let g = geometry(ForwardModel::PointInverseSquare, 1.0);
    let opts = LocalizeOptions::default();
    for (k, truth) in [
        Point::new(0.31, -0.17, 0.12),
        Point::new(-0.5, 0.44, -0.2),
        Point::new(0.0, 0.03, 0.71),
    ]
    .into_iter()
    .enumerate()
    {
        let s = waveshapes(1, 100, 10 + k as u64);
        let x = estimate(vec![truth], None, s.clone()).predict(&g).unwrap();
        let est = localize(&x, &g, 1, &opts).unwrap();
        let err = (est.positions[0] - truth).norm();
        assert!(err < opts.grid_resolution, "error {err}");
        assert!(est.chi_squared < 1e-8);
        assert!(g.region.contains(&est.positions[0]));
    }
}

#[test]
fn recovers_planted_dipoles() {
    let g = geometry(ForwardModel::DipoleHomogeneous, 1.0);
    let pos = vec![Point::new(0.31, -0.17, 0.12), Point::new(-0.25, 0.3, -0.2)];
    let ori = vec![
        Point::new(0.3, 0.5, 0.8).normalize(),
        Point::new(-0.6, 0.2, 0.4).normalize(),
    ];
    let s = waveshapes(2, 60, 20);
    let x = estimate(pos.clone(), Some(ori.clone()), s).predict(&g).unwrap();
    let est = localize(&x, &g, 2, &LocalizeOptions::default()).unwrap();
    assert!(est.chi_squared < 1e-8, "{}", est.chi_squared);
    let orientations = est.orientations.as_ref().unwrap();
    for q in orientations {
        assert!((q.norm() - 1.0).abs() < 1e-9);
    }
    for (p_true, q_true) in pos.iter().zip(&ori) {
        let j = (0..2)
            .min_by(|&a, &b| {
                (est.positions[a] - p_true)
                    .norm()
                    .total_cmp(&(est.positions[b] - p_true).norm())
            })
            .unwrap();
        assert!((est.positions[j] - p_true).norm() < 1e-3);
        assert!(orientations[j].dot(q_true).abs() > 1.0 - 1e-6);
    }
}

#[test]
fn noise_floor_is_half_per_term() {
    let sigma = 0.05;
    let g = geometry(ForwardModel::PointInverseSquare, sigma);
    let truth = estimate(vec![Point::new(0.2, -0.1, 0.3)], None, waveshapes(1, 50, 30));
    let clean = truth.predict(&g).unwrap();
    let reps = 400;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut sum = 0.0;
    for _ in 0..reps {
        let noise = DMatrix::from_fn(8, 50, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z
        });
        sum += chi_squared(&(&clean + noise), &g, &truth).unwrap();
    }
    let mean = sum / reps as f64;
    let expected = 8.0 * 50.0 / 2.0;
    let se = (expected / reps as f64).sqrt();
    assert!((mean - expected).abs() < 5.0 * se, "{mean} vs {expected}");
}

#[test]
fn least_squares_waveshapes_never_lose() {
    let g = geometry(ForwardModel::PointInverseSquare, 1.0);
    let x = waveshapes(8, 40, 40) * 0.01;
    let pos = vec![Point::new(0.1, 0.1, 0.1), Point::new(-0.3, 0.2, 0.0)];
    let best = fit_waveshapes(&x, &g, &pos, None).unwrap();
    let chi_best = chi_squared(&x, &g, &estimate(pos.clone(), None, best.clone())).unwrap();
    for seed in 0..20 {
        let other = &best + waveshapes(2, 40, 100 + seed) * 1e-3;
        let chi = chi_squared(&x, &g, &estimate(pos.clone(), None, other)).unwrap();
        assert!(chi >= chi_best);
    }
}

#[test]
fn localization_is_deterministic() {
    let g = geometry(ForwardModel::PointInverseSquare, 1.0);
    let s = waveshapes(1, 30, 50);
    let x = estimate(vec![Point::new(0.0, 0.0, 0.0)], None, s)
        .predict(&g)
        .unwrap();
    let opts = LocalizeOptions {
        seed: 9,
        ..LocalizeOptions::default()
    };
    let a = localize(&x, &g, 1, &opts).unwrap();
    let b = localize(&x, &g, 1, &opts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn forward_gain_laws() {
    let g = GeometryConfig {
        detectors: vec![Point::new(0.0, 0.0, 1.0), Point::new(0.0, 0.0, 2.0)],
        ..geometry(ForwardModel::PointInverseSquare, 1.0)
    };
    let f = forward_gain(&g, &Point::zeros(), None).unwrap();
    assert_eq!(f[0], 1.0 / (4.0 * PI));
    assert_eq!(f[1], f[0] / 4.0);
    assert!(forward_gain(&g, &Point::new(0.0, 0.0, 1.0), None).is_err());
}

/// With every mixing matrix allowed, the data are an ordinary square mixture
/// and the separation engine recovers the inverse gains.
#[test]
fn uniform_prior_reduces_to_separation() {
    let g = GeometryConfig {
        detectors: vec![
            Point::new(1.0, 0.0, 0.0),
            Point::new(0.0, 1.0, 0.0),
            Point::new(0.0, 0.0, 1.0),
        ],
        ..geometry(ForwardModel::PointInverseSquare, 1.0)
    };
    let pos = vec![
        Point::new(0.5, 0.1, 0.0),
        Point::new(0.0, 0.6, 0.1),
        Point::new(0.1, 0.0, 0.5),
    ];
    let f = gain_matrix(&g, &pos, None).unwrap();
    let specs: Vec<SourceSpec> = (0..3)
        .map(|j| SourceSpec::new(SourceFamily::Laplacian { scale: 1.0 }, 60 + j))
        .collect();
    let s = gen_sources(&specs, 5000).unwrap();
    let x = RecordingMatrix::new(&f * &*s, 0.0).unwrap();
    let cfg = SeparationConfig {
        whiten: true,
        ..SeparationConfig::default()
    };
    let result = separate(&x, &cfg).unwrap();
    assert!(amari_index(&result.w, &f).unwrap() < 0.05);
}

fn rotate_geometry(g: &GeometryConfig, r: &Rotation3<f64>) -> GeometryConfig {
    GeometryConfig {
        detectors: g.detectors.iter().map(|d| r * d).collect(),
        ..g.clone()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chi_squared_is_rotation_invariant(
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in 0.0f64..(2.0 * PI),
        seed in 0u64..1000,
        dipole in any::<bool>(),
    ) {
        prop_assume!(Vector3::from(axis).norm() > 0.1);
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(axis)), angle);
        let model = if dipole { ForwardModel::DipoleHomogeneous } else { ForwardModel::PointInverseSquare };
        let g = geometry(model, 0.2);
        let pos = vec![Point::new(0.3, -0.2, 0.1), Point::new(-0.1, 0.4, -0.3)];
        let ori = vec![Point::new(0.0, 0.6, 0.8), Point::new(1.0, 0.0, 0.0)];
        let s = waveshapes(2, 20, seed);
        let x = waveshapes(8, 20, seed + 1) * 0.1;
        let est = estimate(pos.clone(), dipole.then(|| ori.clone()), s.clone());
        let rotated = estimate(
            pos.iter().map(|p| r * p).collect(),
            dipole.then(|| ori.iter().map(|q| r * q).collect()),
            s,
        );
        let a = chi_squared(&x, &g, &est).unwrap();
        let b = chi_squared(&x, &rotate_geometry(&g, &r), &rotated).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * a.max(1.0));
    }
}
