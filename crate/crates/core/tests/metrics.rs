use infosep::metrics::{build_report, match_components, waveform_correlation, RunArtifacts, RunKind};
use infosep_oracle::pearson;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn noise(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

#[test]
fn truth_matches_itself() {
    let truth = noise(4, 200, 1);
    let report = match_components(&truth, &truth).unwrap();
    assert_eq!(report.permutation, vec![0, 1, 2, 3]);
    assert!(report.correlations.iter().all(|c| (c - 1.0).abs() < 1e-12));
    assert!(report.sign_flips.iter().all(|f| !f));
}

#[test]
fn recovers_permutation_and_signs() {
    let truth = noise(3, 150, 2);
    let mut est = DMatrix::zeros(3, 150);
    est.set_row(0, &(-truth.row(2)));
    est.set_row(1, &truth.row(0));
    est.set_row(2, &(truth.row(1) * 3.0));
    let report = match_components(&est, &truth).unwrap();
    assert_eq!(report.permutation, vec![1, 2, 0]);
    assert_eq!(report.sign_flips, vec![false, false, true]);
    assert!(report.correlations.iter().all(|c| (c - 1.0).abs() < 1e-12));
}

#[test]
fn noisy_correlations_match_direct_evaluation() {
    let truth = noise(3, 500, 3);
    let est = &truth + noise(3, 500, 4) * 0.5;
    let report = match_components(&est, &truth).unwrap();
    for k in 0..3 {
        let direct = pearson(&row(&truth, k), &row(&est, report.permutation[k]));
        assert!((report.correlations[k] - direct.abs()).abs() < 1e-12);
    }
}

#[test]
fn greedy_matching_above_the_exhaustive_limit() {
    let truth = noise(8, 300, 5);
    let order = [3, 7, 0, 5, 1, 6, 2, 4];
    let est = DMatrix::from_fn(8, 300, |i, t| truth[(order[i], t)]);
    let report = match_components(&est, &truth).unwrap();
    for (k, &e) in report.permutation.iter().enumerate() {
        assert_eq!(order[e], k);
    }
}

#[test]
fn mismatched_counts_are_rejected() {
    assert!(match_components(&noise(2, 10, 1), &noise(3, 10, 1)).is_err());
}

#[test]
fn constant_waveforms_have_zero_correlation() {
    assert_eq!(waveform_correlation(&[1.0; 5], &[0.1, 0.2, 0.3, 0.4, 0.5]), 0.0);
}

fn separation_artifacts() -> RunArtifacts {
    let mut a = RunArtifacts::new(RunKind::Separation, "separate");
    a.config = Some(serde_json::json!({"step_size": 0.1}));
    a.seed("sources", 7)
        .metric("final_log_posterior", -123.5)
        .metric("iterations", 40.0)
        .metric("amari_index", 0.01)
        .trace("log_posterior", "separate/trace.csv", &[1.0, 2.0, 3.0]);
    a
}

#[test]
fn separation_report_contents() {
    let report = build_report(&separation_artifacts()).unwrap();
    assert_eq!(report.metrics["amari_index"], 0.01);
    assert_eq!(report.traces["log_posterior"].length, 3);
    let json = report.to_json().unwrap();
    assert!(json.contains("\"schema_version\": 1"));
    assert!(report.summary().contains("amari_index"));
}

#[test]
fn dvca_report_contents() {
    let mut a = RunArtifacts::new(RunKind::Dvca, "dvca");
    a.config = Some(serde_json::json!({}));
    a.metric("residual_power", 1.0)
        .metric("sweeps", 3.0)
        .metric("latency_accuracy", 0.97)
        .trace("residual_power", "dvca/residual_trace.csv", &[3.0, 2.0, 1.0]);
    a.components = Some(match_components(&noise(2, 50, 1), &noise(2, 50, 1)).unwrap());
    let report = build_report(&a).unwrap();
    assert_eq!(report.metrics["latency_accuracy"], 0.97);
    assert_eq!(report.components.unwrap().correlations.len(), 2);
}

#[test]
fn incomplete_artifacts_are_described() {
    let mut a = separation_artifacts();
    a.metrics.remove("iterations");
    let err = build_report(&a).unwrap_err().to_string();
    assert!(err.contains("iterations"), "{err}");
    let mut a = separation_artifacts();
    a.config = None;
    assert!(build_report(&a)
        .unwrap_err()
        .to_string()
        .contains("configuration"));
    let mut a = separation_artifacts();
    a.traces.clear();
    assert!(build_report(&a)
        .unwrap_err()
        .to_string()
        .contains("log_posterior"));
}

#[test]
fn reports_are_byte_identical() {
    let a = build_report(&separation_artifacts()).unwrap().to_json().unwrap();
    let b = build_report(&separation_artifacts()).unwrap().to_json().unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matching_ignores_order_sign_and_scale(
        seed in 0u64..10_000,
        perm in Just((0..4).collect::<Vec<usize>>()).prop_shuffle(),
        signs in prop::collection::vec(any::<bool>(), 4),
        scales in prop::collection::vec(0.01f64..100.0, 4),
    ) {
        let truth = noise(4, 120, seed);
        let est = &truth + noise(4, 120, seed + 1) * 0.3;
        let base = match_components(&est, &truth).unwrap();
        let scrambled = DMatrix::from_fn(4, 120, |i, t| {
            let s = if signs[i] { -scales[i] } else { scales[i] };
            s * est[(perm[i], t)]
        });
        let other = match_components(&scrambled, &truth).unwrap();
        for k in 0..4 {
            prop_assert_eq!(perm[other.permutation[k]], base.permutation[k]);
            prop_assert!((other.correlations[k] - base.correlations[k]).abs() < 1e-12);
            prop_assert!(other.correlations[k].abs() <= 1.0);
        }
    }
}
