//! Separation-quality metrics, component matching and run reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Amari index of `P = W · A_true`:
///
/// ```text
/// AI = 1 / (2N(N-1)) · [ Σ_i (Σ_j |p_ij| / max_k |p_ik| - 1)
///                      + Σ_j (Σ_i |p_ij| / max_k |p_kj| - 1) ]
/// ```
///
/// normalized to `[0, 1]`. It is 0 exactly when `P` is a scaled permutation
/// and 1 when every entry of `P` has the same magnitude. Defined as 0 for
/// `N = 1`.
pub fn amari_index(w: &DMatrix<f64>, a_true: &DMatrix<f64>) -> Result<f64> {
    if !w.is_square() || !a_true.is_square() || w.ncols() != a_true.nrows() {
        return Err(Error::dimension(format!(
            "amari index needs square matrices of equal size, got {:?} and {:?}",
            w.shape(),
            a_true.shape()
        )));
    }
    let n = w.nrows();
    if n == 1 {
        return Ok(0.0);
    }
    let p = (w * a_true).abs();
    let mut total = 0.0;
    for i in 0..n {
        let row = p.row(i);
        let max = row.max();
        if max == 0.0 {
            return Err(Error::Singular("W·A has a zero row".into()));
        }
        total += row.sum() / max - 1.0;
    }
    for j in 0..n {
        let col = p.column(j);
        let max = col.max();
        if max == 0.0 {
            return Err(Error::Singular("W·A has a zero column".into()));
        }
        total += col.sum() / max - 1.0;
    }
    Ok(total / (2.0 * n as f64 * (n as f64 - 1.0)))
}

/// Mean-removed, unit-norm copy of `row`; `None` for a constant row.
fn standardize(row: &[f64]) -> Option<Vec<f64>> {
    let mean = row.iter().sum::<f64>() / row.len() as f64;
    let centered: Vec<f64> = row.iter().map(|v| v - mean).collect();
    let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
    (norm > 0.0).then(|| centered.iter().map(|v| v / norm).collect())
}

/// Correlation of two waveforms after mean removal and unit normalization.
/// A constant waveform has correlation 0 with everything.
pub fn waveform_correlation(a: &[f64], b: &[f64]) -> f64 {
    match (standardize(a), standardize(b)) {
        (Some(x), Some(y)) => x.iter().zip(&y).map(|(p, q)| p * q).sum::<f64>().clamp(-1.0, 1.0),
        _ => 0.0,
    }
}

/// Assignment of estimated components to true components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    /// `permutation[k]` is the estimated component matched to true component `k`.
    pub permutation: Vec<usize>,
    /// Correlation of each true component with its match, after sign correction.
    pub correlations: Vec<f64>,
    /// Whether the matched estimate had to be negated.
    pub sign_flips: Vec<bool>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub amari_index: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub position_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub residual_power: Option<f64>,
}

impl MatchReport {
    pub fn min_correlation(&self) -> f64 {
        self.correlations.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Largest component count matched by exhaustive search; greedy above.
pub const EXHAUSTIVE_MATCH_LIMIT: usize = 6;

/// Matches rows of `estimated` to rows of `truth` maximizing total
/// `|correlation|`.
pub fn match_components(estimated: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<MatchReport> {
    if estimated.nrows() != truth.nrows() {
        return Err(Error::dimension(format!(
            "{} estimated components vs {} true components",
            estimated.nrows(),
            truth.nrows()
        )));
    }
    if estimated.ncols() != truth.ncols() {
        return Err(Error::dimension(format!(
            "estimated waveforms have {} samples, true have {}",
            estimated.ncols(),
            truth.ncols()
        )));
    }
    let n = truth.nrows();
    let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|i| m.row(i).iter().copied().collect())
            .collect()
    };
    let est = rows(estimated);
    let tru = rows(truth);
    // corr[k][e]: true k vs estimate e
    let corr: Vec<Vec<f64>> = tru
        .iter()
        .map(|t| est.iter().map(|e| waveform_correlation(t, e)).collect())
        .collect();

    let permutation = if n <= EXHAUSTIVE_MATCH_LIMIT {
        best_permutation(&corr)
    } else {
        greedy_assignment(&corr)
    };
    let signed: Vec<f64> = (0..n).map(|k| corr[k][permutation[k]]).collect();
    Ok(MatchReport {
        sign_flips: signed.iter().map(|c| *c < 0.0).collect(),
        correlations: signed.iter().map(|c| c.abs()).collect(),
        permutation,
        amari_index: None,
        position_error: None,
        residual_power: None,
    })
}

fn best_permutation(corr: &[Vec<f64>]) -> Vec<usize> {
    let n = corr.len();
    let mut current: Vec<usize> = (0..n).collect();
    let mut best = current.clone();
    let mut best_score = f64::NEG_INFINITY;
    permute(&mut current, 0, &mut |p| {
        let score: f64 = p.iter().enumerate().map(|(k, &e)| corr[k][e].abs()).sum();
        // Strict comparison keeps the first (lexicographically smallest) optimum.
        if score > best_score + 1e-15 {
            best_score = score;
            best.copy_from_slice(p);
        }
    });
    best
}

/// Visits permutations in lexicographic order.
fn permute(items: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items[start..=i].rotate_right(1);
        permute(items, start + 1, visit);
        items[start..=i].rotate_left(1);
    }
}

fn greedy_assignment(corr: &[Vec<f64>]) -> Vec<usize> {
    let n = corr.len();
    let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|k| (0..n).map(move |e| (k, e))).collect();
    pairs.sort_by(|a, b| {
        corr[b.0][b.1]
            .abs()
            .total_cmp(&corr[a.0][a.1].abs())
            .then(a.cmp(b))
    });
    let mut assigned = vec![usize::MAX; n];
    let mut used = vec![false; n];
    for (k, e) in pairs {
        if assigned[k] == usize::MAX && !used[e] {
            assigned[k] = e;
            used[e] = true;
        }
    }
    assigned
}

/// Version of the JSON report layout.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Summary of a per-iteration trace stored in a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    /// Path relative to the report's directory.
    pub path: String,
    pub length: usize,
    pub first: Option<f64>,
    pub last: Option<f64>,
}

/// Deterministic report of one pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub kind: String,
    pub stage: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub metrics: BTreeMap<String, f64>,
    pub flags: BTreeMap<String, bool>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub components: Option<MatchReport>,
    pub traces: BTreeMap<String, TraceSummary>,
    pub warnings: Vec<String>,
}

impl Report {
    /// Human-readable multi-line summary.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} stage '{}'", self.kind, self.stage);
        for (k, v) in &self.seeds {
            let _ = writeln!(out, "  seed {k} = {v}");
        }
        for (k, v) in &self.metrics {
            let _ = writeln!(out, "  {k} = {v}");
        }
        for (k, v) in &self.flags {
            let _ = writeln!(out, "  {k}: {v}");
        }
        if let Some(c) = &self.components {
            let _ = writeln!(out, "  component permutation {:?}", c.permutation);
            for (k, r) in c.correlations.iter().enumerate() {
                let _ = writeln!(out, "  component {k} correlation {r}");
            }
        }
        for (k, t) in &self.traces {
            let _ = writeln!(out, "  trace {k}: {} entries in {}", t.length, t.path);
        }
        for w in &self.warnings {
            let _ = writeln!(out, "  warning: {w}");
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Kinds of run a report can describe, with the metrics each must carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    Simulation,
    Separation,
    Localization,
    Dvca,
    Average,
    PriorValidation,
}

impl RunKind {
    pub fn name(&self) -> &'static str {
        match self {
            RunKind::Simulation => "simulation",
            RunKind::Separation => "separation",
            RunKind::Localization => "localization",
            RunKind::Dvca => "dvca",
            RunKind::Average => "average",
            RunKind::PriorValidation => "prior-validation",
        }
    }

    /// Metrics that must be present for the report to be complete.
    fn required_metrics(&self) -> &'static [&'static str] {
        match self {
            RunKind::Simulation | RunKind::Average => &[],
            RunKind::Separation => &["final_log_posterior", "iterations"],
            RunKind::Localization => &["chi_squared"],
            RunKind::Dvca => &["residual_power", "sweeps"],
            RunKind::PriorValidation => &["l1", "l1_tolerance"],
        }
    }

    fn required_traces(&self) -> &'static [&'static str] {
        match self {
            RunKind::Separation => &["log_posterior"],
            RunKind::Dvca => &["residual_power"],
            _ => &[],
        }
    }
}

/// Everything collected from a completed stage.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub kind: RunKind,
    pub stage: String,
    pub config: Option<serde_json::Value>,
    pub seeds: BTreeMap<String, u64>,
    pub metrics: BTreeMap<String, f64>,
    pub flags: BTreeMap<String, bool>,
    pub components: Option<MatchReport>,
    pub traces: BTreeMap<String, TraceSummary>,
    pub warnings: Vec<String>,
}

impl RunArtifacts {
    pub fn new(kind: RunKind, stage: impl Into<String>) -> Self {
        Self {
            kind,
            stage: stage.into(),
            config: None,
            seeds: BTreeMap::new(),
            metrics: BTreeMap::new(),
            flags: BTreeMap::new(),
            components: None,
            traces: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    pub fn metric(&mut self, name: &str, value: f64) -> &mut Self {
        self.metrics.insert(name.to_string(), value);
        self
    }

    pub fn flag(&mut self, name: &str, value: bool) -> &mut Self {
        self.flags.insert(name.to_string(), value);
        self
    }

    pub fn seed(&mut self, name: &str, value: u64) -> &mut Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn trace(&mut self, name: &str, path: &str, values: &[f64]) -> &mut Self {
        self.traces.insert(
            name.to_string(),
            TraceSummary {
                path: path.to_string(),
                length: values.len(),
                first: values.first().copied(),
                last: values.last().copied(),
            },
        );
        self
    }
}

/// Assembles a report, failing with a descriptive error if the stage did not
/// produce everything its kind requires.
pub fn build_report(artifacts: &RunArtifacts) -> Result<Report> {
    let kind = artifacts.kind;
    let config = artifacts.config.clone().ok_or_else(|| {
        Error::parameter(format!(
            "{} report for stage '{}' is missing its configuration echo",
            kind.name(),
            artifacts.stage
        ))
    })?;
    let missing: Vec<&str> = kind
        .required_metrics()
        .iter()
        .filter(|m| !artifacts.metrics.contains_key(**m))
        .copied()
        .collect();
    if !missing.is_empty() {
        return Err(Error::parameter(format!(
            "{} report for stage '{}' is missing metrics: {}",
            kind.name(),
            artifacts.stage,
            missing.join(", ")
        )));
    }
    let missing_traces: Vec<&str> = kind
        .required_traces()
        .iter()
        .filter(|t| !artifacts.traces.contains_key(**t))
        .copied()
        .collect();
    if !missing_traces.is_empty() {
        return Err(Error::parameter(format!(
            "{} report for stage '{}' is missing traces: {}",
            kind.name(),
            artifacts.stage,
            missing_traces.join(", ")
        )));
    }
    Ok(Report {
        schema_version: REPORT_SCHEMA_VERSION,
        kind: kind.name().to_string(),
        stage: artifacts.stage.clone(),
        config,
        seeds: artifacts.seeds.clone(),
        metrics: artifacts.metrics.clone(),
        flags: artifacts.flags.clone(),
        components: artifacts.components.clone(),
        traces: artifacts.traces.clone(),
        warnings: artifacts.warnings.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn amari_zero_for_exact_inverse() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, -1.0, 0.5, 1.0, 0.2, 0.1, -0.4, 1.5]);
        let w = a.clone().try_inverse().unwrap();
        assert!(amari_index(&w, &a).unwrap() < 1e-12);
    }

    #[test]
    fn amari_invariant_to_scaled_permutation() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, -1.0, 0.5, 1.0, 0.2, 0.1, -0.4, 1.5]);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, -0.5, 7.0]));
        let p = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let w = d * p * a.clone().try_inverse().unwrap();
        assert!(amari_index(&w, &a).unwrap() < 1e-12);
    }

    #[test]
    fn amari_positive_and_bounded() {
        let a = DMatrix::<f64>::identity(2, 2);
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.8, -0.3, 1.0]);
        let v = amari_index(&w, &a).unwrap();
        assert!(v > 0.0 && v <= 1.0);
        let flat = DMatrix::from_element(2, 2, 1.0);
        assert!((amari_index(&flat, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!(amari_index(&DMatrix::identity(2, 2), &DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn matching_recovers_permutation_and_sign() {
        let truth = DMatrix::from_fn(3, 50, |i, t| {
            ((i + 1) as f64 * 0.37 * t as f64).sin() + 0.01 * i as f64
        });
        let mut est = DMatrix::zeros(3, 50);
        est.set_row(0, &(-&truth.row(2)));
        est.set_row(1, &truth.row(0));
        est.set_row(2, &(truth.row(1) * 5.0));
        let report = match_components(&est, &truth).unwrap();
        assert_eq!(report.permutation, vec![1, 2, 0]);
        assert_eq!(report.sign_flips, vec![false, false, true]);
        for c in report.correlations {
            assert!((c - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_matches_exhaustive_on_clear_cases() {
        let corr = vec![vec![0.1, 0.9, 0.0], vec![0.8, 0.2, 0.1], vec![0.0, 0.1, -0.95]];
        assert_eq!(greedy_assignment(&corr), best_permutation(&corr));
    }

    #[test]
    fn count_mismatch_is_an_error() {
        let a = DMatrix::zeros(2, 10);
        let b = DMatrix::zeros(3, 10);
        assert!(match_components(&a, &b).is_err());
    }

    #[test]
    fn missing_artifacts_are_reported() {
        let mut art = RunArtifacts::new(RunKind::Separation, "sep");
        art.config = Some(serde_json::json!({}));
        art.metric("iterations", 3.0);
        let err = build_report(&art).unwrap_err().to_string();
        assert!(err.contains("final_log_posterior"), "{err}");
        art.metric("final_log_posterior", -1.0);
        let err = build_report(&art).unwrap_err().to_string();
        assert!(err.contains("log_posterior"), "{err}");
        art.trace("log_posterior", "trace.csv", &[-2.0, -1.0]);
        let report = build_report(&art).unwrap();
        assert_eq!(report.schema_version, REPORT_SCHEMA_VERSION);
        assert_eq!(report.traces["log_posterior"].length, 2);
    }
}
