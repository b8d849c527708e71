//! Geometry-derived prior for inverse-square mixing coefficients.
//!
//! A source sits uniformly at random inside a ball of radius `R` around a
//! detector. Integrating out the angles gives the distance prior
//! `p(r) = 3 r² / R³`, and pushing that through the propagation law
//! `A = 1 / (4π r²)` gives
//!
//! ```text
//! p(A) = 3 / (16 π^{3/2} R³) · A^{-5/2},    A ≥ (4π R²)^{-1}
//! ```
//!
//! which integrates to exactly one over its support. An optional inner radius
//! `r_min` truncates the distance prior at the near end, capping `A` at
//! `(4π r_min²)^{-1}`; the same algebra applies with `R³` replaced by
//! `R³ - r_min³`.
//!
//! [`monte_carlo_mixing_samples`] draws positions uniformly in the ball and
//! maps them through the propagation law, giving an independent check on the
//! closed forms.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform-in-volume source position prior around a detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallPrior {
    /// Maximum source-detector distance.
    pub radius: f64,
    /// Minimum source-detector distance (0 disables the cap on `A`).
    #[serde(default)]
    pub min_radius: f64,
}

impl BallPrior {
    pub fn new(radius: f64) -> Result<Self> {
        Self::with_min_radius(radius, 0.0)
    }

    pub fn with_min_radius(radius: f64, min_radius: f64) -> Result<Self> {
        let prior = Self { radius, min_radius };
        prior.validate()?;
        Ok(prior)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::parameter(format!(
                "ball radius must be positive and finite, got {}",
                self.radius
            )));
        }
        if !(self.min_radius >= 0.0 && self.min_radius < self.radius) {
            return Err(Error::parameter(format!(
                "min radius must lie in [0, R), got {} with R = {}",
                self.min_radius, self.radius
            )));
        }
        Ok(())
    }

    /// `R³ - r_min³`, proportional to the shell volume.
    fn shell(&self) -> f64 {
        self.radius.powi(3) - self.min_radius.powi(3)
    }

    /// Density of the source-detector distance.
    pub fn distance_pdf(&self, r: f64) -> Result<f64> {
        if r < 0.0 || r.is_nan() {
            return Err(Error::Domain(format!("distance must be nonnegative, got {r}")));
        }
        if r < self.min_radius || r > self.radius {
            return Ok(0.0);
        }
        Ok(3.0 * r * r / self.shell())
    }

    /// Support `[A_min, A_max]` of the mixing-element prior. `A_max` is
    /// infinite when no inner radius is set.
    pub fn mixing_support(&self) -> (f64, f64) {
        let lower = 1.0 / (4.0 * PI * self.radius * self.radius);
        let upper = if self.min_radius > 0.0 {
            1.0 / (4.0 * PI * self.min_radius * self.min_radius)
        } else {
            f64::INFINITY
        };
        (lower, upper)
    }

    /// Normalizing constant `3 / (16 π^{3/2} (R³ - r_min³))`.
    pub fn mixing_normalizer(&self) -> f64 {
        3.0 / (16.0 * PI.powf(1.5) * self.shell())
    }

    pub fn mixing_pdf(&self, a: f64) -> f64 {
        let (lower, upper) = self.mixing_support();
        if a < lower || a > upper {
            return 0.0;
        }
        self.mixing_normalizer() * a.powf(-2.5)
    }

    /// `log p(A)`, `-∞` outside the support.
    pub fn log_mixing_pdf(&self, a: f64) -> f64 {
        let (lower, upper) = self.mixing_support();
        if a < lower || a > upper {
            return f64::NEG_INFINITY;
        }
        self.mixing_normalizer().ln() - 2.5 * a.ln()
    }

    /// `d/dA log p(A) = -5 / (2A)` inside the support.
    pub fn log_mixing_pdf_derivative(&self, a: f64) -> f64 {
        -2.5 / a
    }

    /// Closed-form CDF of the mixing-element prior.
    pub fn mixing_cdf(&self, a: f64) -> f64 {
        let (lower, upper) = self.mixing_support();
        if a <= lower {
            return 0.0;
        }
        if a >= upper {
            return 1.0;
        }
        let r_cubed = (4.0 * PI * a).powf(-1.5);
        (self.radius.powi(3) - r_cubed) / self.shell()
    }

    /// Inverse of [`mixing_cdf`](Self::mixing_cdf) for `p` in `[0, 1]`.
    pub fn mixing_quantile(&self, p: f64) -> f64 {
        let r_cubed = self.radius.powi(3) - p.clamp(0.0, 1.0) * self.shell();
        if r_cubed <= 0.0 {
            return f64::INFINITY;
        }
        1.0 / (4.0 * PI * r_cubed.powf(2.0 / 3.0))
    }
}

/// `3r²/R³` on `[0, R]`, zero beyond; negative `r` is a domain error.
pub fn distance_prior_pdf(r: f64, radius: f64) -> Result<f64> {
    BallPrior::new(radius)?.distance_pdf(r)
}

/// `3 / (16 π^{3/2} R³) · a^{-5/2}` for `a ≥ (4πR²)^{-1}`, zero otherwise.
pub fn mixing_element_prior_pdf(a: f64, radius: f64) -> Result<f64> {
    Ok(BallPrior::new(radius)?.mixing_pdf(a))
}

/// Draws `n` mixing coefficients `1 / (4π r²)` from source positions uniform in
/// the ball (or shell) of `prior`.
///
/// Positions come from rejection sampling the bounding cube. Every draw is a
/// unit-cube point scaled by `R`, so for a fixed seed the samples for radius
/// `kR` are exactly the samples for `R` divided by `k²`.
pub fn monte_carlo_mixing_samples(prior: &BallPrior, n: usize, seed: u64) -> Result<Vec<f64>> {
    prior.validate()?;
    if n == 0 {
        return Err(Error::parameter("sample count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inner = prior.min_radius / prior.radius;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x: f64 = rng.random_range(-1.0..=1.0);
        let y: f64 = rng.random_range(-1.0..=1.0);
        let z: f64 = rng.random_range(-1.0..=1.0);
        let rho_sq = x * x + y * y + z * z;
        if rho_sq > 1.0 || rho_sq == 0.0 || rho_sq < inner * inner {
            continue;
        }
        let r_sq = rho_sq * prior.radius * prior.radius;
        out.push(1.0 / (4.0 * PI * r_sq));
    }
    Ok(out)
}

/// Outcome of checking the priors against the change of units `r → a·r`,
/// `R → a·R`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RescalingReport {
    pub scale: f64,
    pub grid_points: usize,
    /// `max |a · p_{aR}(a r) - p_R(r)|` over the distance grid.
    pub distance_max_abs_error: f64,
    /// `max |p_{aR}(A / a²) / a² - p_R(A)| / p_R(A)` over the mixing grid.
    pub mixing_max_rel_error: f64,
}

impl RescalingReport {
    pub fn max_error(&self) -> f64 {
        self.distance_max_abs_error.max(self.mixing_max_rel_error)
    }
}

/// Evaluates both rescaling identities on a grid of `grid_points` points.
///
/// The distance grid spans `[0, 1.2 R]` so the zero region beyond `R` is
/// covered too; the mixing grid spans quantiles of the mixing prior.
pub fn rescale_distance_prior(prior: &BallPrior, scale: f64, grid_points: usize) -> Result<RescalingReport> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::parameter(format!(
            "rescaling factor must be positive, got {scale}"
        )));
    }
    if grid_points < 2 {
        return Err(Error::parameter("rescaling grid needs at least 2 points"));
    }
    let scaled = BallPrior::with_min_radius(prior.radius * scale, prior.min_radius * scale)?;

    let mut distance_err: f64 = 0.0;
    for k in 0..grid_points {
        let r = 1.2 * prior.radius * k as f64 / (grid_points - 1) as f64;
        let lhs = scaled.distance_pdf(scale * r)? * scale;
        let rhs = prior.distance_pdf(r)?;
        distance_err = distance_err.max((lhs - rhs).abs());
    }

    let mut mixing_err: f64 = 0.0;
    for k in 0..grid_points {
        let p = (k as f64 + 0.5) / grid_points as f64;
        let a = prior.mixing_quantile(p);
        let rhs = prior.mixing_pdf(a);
        let lhs = scaled.mixing_pdf(a / (scale * scale)) / (scale * scale);
        if rhs > 0.0 {
            mixing_err = mixing_err.max(((lhs - rhs) / rhs).abs());
        }
    }

    Ok(RescalingReport {
        scale,
        grid_points,
        distance_max_abs_error: distance_err,
        mixing_max_rel_error: mixing_err,
    })
}

/// One row of the histogram-versus-analytic comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    /// Analytic probability mass of the bin.
    pub expected: f64,
    /// Fraction of samples falling in the bin.
    pub observed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramComparison {
    pub samples: usize,
    pub bins: Vec<HistogramBin>,
    /// `Σ |observed - expected|` over bins.
    pub l1: f64,
}

/// Bins `samples` into `bins` equal-probability bins of the analytic prior and
/// reports the L1 distance between empirical and analytic bin masses.
pub fn compare_with_histogram(
    prior: &BallPrior,
    samples: &[f64],
    bins: usize,
) -> Result<HistogramComparison> {
    if bins == 0 {
        return Err(Error::parameter("histogram needs at least one bin"));
    }
    if samples.is_empty() {
        return Err(Error::parameter("histogram needs at least one sample"));
    }
    let edges: Vec<f64> = (0..=bins)
        .map(|k| prior.mixing_quantile(k as f64 / bins as f64))
        .collect();
    let mut counts = vec![0usize; bins];
    for &a in samples {
        // Edges are increasing; first edge strictly greater than `a` marks the bin.
        let idx = edges[1..].partition_point(|&e| e <= a).min(bins - 1);
        counts[idx] += 1;
    }
    let n = samples.len() as f64;
    let rows: Vec<HistogramBin> = counts
        .iter()
        .enumerate()
        .map(|(k, &c)| HistogramBin {
            lower: edges[k],
            upper: edges[k + 1],
            expected: prior.mixing_cdf(edges[k + 1]) - prior.mixing_cdf(edges[k]),
            observed: c as f64 / n,
        })
        .collect();
    let l1 = rows.iter().map(|b| (b.observed - b.expected).abs()).sum();
    Ok(HistogramComparison {
        samples: samples.len(),
        bins: rows,
        l1,
    })
}

/// Smallest sample count accepted by the prior validation run.
pub const MIN_VALIDATION_SAMPLES: usize = 10_000;

/// Pass threshold for the histogram L1 statistic at `n` samples.
///
/// The statistic's expected value shrinks like `n^{-1/2}` (binomial bin
/// counts), so the threshold is `0.02 · sqrt(10⁶ / n)`, clamped to
/// `[0.02, 0.1]`: 0.02 from 10⁶ samples upward, 0.1 at the 10⁴ minimum.
pub fn l1_tolerance(n: usize) -> f64 {
    (0.02 * (1e6 / n as f64).sqrt()).clamp(0.02, 0.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_pdf_boundary_values() {
        let r = 2.5;
        assert!((distance_prior_pdf(r, r).unwrap() - 3.0 / r).abs() < 1e-15);
        assert_eq!(distance_prior_pdf(0.0, r).unwrap(), 0.0);
        assert_eq!(distance_prior_pdf(r * 1.01, r).unwrap(), 0.0);
        assert!(matches!(distance_prior_pdf(-0.1, r), Err(Error::Domain(_))));
    }

    #[test]
    fn mixing_pdf_support_edge() {
        let radius = 1.7;
        let edge = 1.0 / (4.0 * PI * radius * radius);
        assert_eq!(mixing_element_prior_pdf(edge - 1e-9, radius).unwrap(), 0.0);
        assert!(mixing_element_prior_pdf(edge, radius).unwrap() > 0.0);
        assert_eq!(mixing_element_prior_pdf(0.0, radius).unwrap(), 0.0);
        assert_eq!(mixing_element_prior_pdf(-1.0, radius).unwrap(), 0.0);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let prior = BallPrior::with_min_radius(2.0, 0.3).unwrap();
        for k in 1..20 {
            let p = k as f64 / 20.0;
            let a = prior.mixing_quantile(p);
            assert!((prior.mixing_cdf(a) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn rescaling_by_hand() {
        // 3 · 0.5² / 1³ = 0.75, and 2 · 3 · 1² / 2³ = 0.75.
        assert!((distance_prior_pdf(0.5, 1.0).unwrap() - 0.75).abs() < 1e-15);
        assert!((distance_prior_pdf(1.0, 2.0).unwrap() * 2.0 - 0.75).abs() < 1e-15);
        let prior = BallPrior::new(3.0).unwrap();
        let report = rescale_distance_prior(&prior, 1.0, 101).unwrap();
        assert_eq!(report.max_error(), 0.0);
    }

    #[test]
    fn samples_respect_lower_bound() {
        let prior = BallPrior::new(1.3).unwrap();
        let (lower, _) = prior.mixing_support();
        let samples = monte_carlo_mixing_samples(&prior, 10_000, 5).unwrap();
        assert!(samples.iter().all(|&a| a >= lower));
    }

    #[test]
    fn tolerance_rule() {
        assert_eq!(l1_tolerance(1_000_000), 0.02);
        assert_eq!(l1_tolerance(10_000_000), 0.02);
        assert!((l1_tolerance(10_000) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn invalid_parameters() {
        assert!(BallPrior::new(0.0).is_err());
        assert!(BallPrior::with_min_radius(1.0, 1.0).is_err());
        let prior = BallPrior::new(1.0).unwrap();
        assert!(monte_carlo_mixing_samples(&prior, 0, 1).is_err());
        assert!(rescale_distance_prior(&prior, 0.0, 10).is_err());
    }
}
