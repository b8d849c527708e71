//! Source-amplitude densities and mixing-matrix priors.
//!
//! An [`AmplitudeDensity`] supplies `log q(s)` and its derivative, the score
//! `q'(s) / q(s)` that acts as the nonlinearity of the Infomax learning rule.
//! A [`MatrixPrior`] supplies `log p(A)` and its gradient with respect to the
//! elements of `A`.

use std::f64::consts::{LN_2, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagation::BallPrior;

const HALF_LN_TAU: f64 = 0.918_938_533_204_672_8; // ½ ln(2π)

/// `ln cosh(x)` without overflow for large `|x|`.
fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - LN_2
}

/// Prior density for the amplitude of one source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AmplitudeDensity {
    /// Derivative of the logistic sigmoid, `g'(u/s)/s` with
    /// `g(z) = 1/(1 + e^{-z})`. The classic Infomax choice; super-Gaussian.
    Logistic { scale: f64 },
    /// `exp(-|u|/b) / 2b`.
    Laplacian { scale: f64 },
    /// Zero-mean normal.
    Gaussian { sigma: f64 },
    /// Equal-weight mixture of `N(+mu, sigma²)` and `N(-mu, sigma²)`.
    /// Sub-Gaussian for `mu` large relative to `sigma`.
    Bimodal { mu: f64, sigma: f64 },
}

impl AmplitudeDensity {
    pub const STANDARD_LOGISTIC: Self = AmplitudeDensity::Logistic { scale: 1.0 };

    /// Bimodal density with the second and fourth moments of a sinusoid of
    /// the given amplitude (`a²/2` and `3a⁴/8`).
    pub fn sinusoid_matched(amplitude: f64) -> Self {
        let a2 = amplitude * amplitude;
        AmplitudeDensity::Bimodal {
            mu: (a2 * 3f64.sqrt() / 4.0).sqrt(),
            sigma: (a2 * (2.0 - 3f64.sqrt()) / 4.0).sqrt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        let valid = match *self {
            AmplitudeDensity::Logistic { scale } | AmplitudeDensity::Laplacian { scale } => ok(scale),
            AmplitudeDensity::Gaussian { sigma } => ok(sigma),
            AmplitudeDensity::Bimodal { mu, sigma } => ok(sigma) && mu >= 0.0 && mu.is_finite(),
        };
        if valid {
            Ok(())
        } else {
            Err(Error::parameter(format!("invalid density parameters: {self}")))
        }
    }

    /// `log q(s)`.
    pub fn log_density(&self, s: f64) -> f64 {
        match *self {
            AmplitudeDensity::Logistic { scale } => {
                let z = (s / scale).abs();
                -z - 2.0 * (-z).exp().ln_1p() - scale.ln()
            }
            AmplitudeDensity::Laplacian { scale } => -(2.0 * scale).ln() - s.abs() / scale,
            AmplitudeDensity::Gaussian { sigma } => {
                let z = s / sigma;
                -HALF_LN_TAU - sigma.ln() - 0.5 * z * z
            }
            AmplitudeDensity::Bimodal { mu, sigma } => {
                let var = sigma * sigma;
                -HALF_LN_TAU - sigma.ln() - 0.5 * (s * s + mu * mu) / var + ln_cosh(mu * s / var)
            }
        }
    }

    /// Score `d/ds log q(s)`.
    ///
    /// The Laplacian score at exactly zero is taken as 0 (the midpoint of the
    /// one-sided derivatives).
    pub fn score(&self, s: f64) -> f64 {
        match *self {
            AmplitudeDensity::Logistic { scale } => -(0.5 * s / scale).tanh() / scale,
            AmplitudeDensity::Laplacian { scale } => {
                if s > 0.0 {
                    -1.0 / scale
                } else if s < 0.0 {
                    1.0 / scale
                } else {
                    0.0
                }
            }
            AmplitudeDensity::Gaussian { sigma } => -s / (sigma * sigma),
            AmplitudeDensity::Bimodal { mu, sigma } => {
                let var = sigma * sigma;
                (mu * (mu * s / var).tanh() - s) / var
            }
        }
    }

    /// Score with a domain check: fails where `q(s)` is zero (in floating
    /// point) or `s` is not finite.
    pub fn try_score(&self, s: f64) -> Result<f64> {
        if !s.is_finite() {
            return Err(Error::Domain(format!("score evaluated at non-finite {s}")));
        }
        if self.log_density(s) == f64::NEG_INFINITY {
            return Err(Error::Domain(format!(
                "score evaluated where {self} has zero density (s = {s})"
            )));
        }
        Ok(self.score(s))
    }

    /// Variance of the density.
    pub fn variance(&self) -> f64 {
        match *self {
            AmplitudeDensity::Logistic { scale } => PI * PI * scale * scale / 3.0,
            AmplitudeDensity::Laplacian { scale } => 2.0 * scale * scale,
            AmplitudeDensity::Gaussian { sigma } => sigma * sigma,
            AmplitudeDensity::Bimodal { mu, sigma } => mu * mu + sigma * sigma,
        }
    }

    /// Short identifier used on the command line.
    pub fn family_name(&self) -> &'static str {
        match self {
            AmplitudeDensity::Logistic { .. } => "logistic",
            AmplitudeDensity::Laplacian { .. } => "laplacian",
            AmplitudeDensity::Gaussian { .. } => "gaussian",
            AmplitudeDensity::Bimodal { .. } => "bimodal",
        }
    }
}

impl fmt::Display for AmplitudeDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            AmplitudeDensity::Logistic { scale } => write!(f, "logistic:{scale}"),
            AmplitudeDensity::Laplacian { scale } => write!(f, "laplacian:{scale}"),
            AmplitudeDensity::Gaussian { sigma } => write!(f, "gaussian:{sigma}"),
            AmplitudeDensity::Bimodal { mu, sigma } => write!(f, "bimodal:{mu},{sigma}"),
        }
    }
}

/// Parses `family[:p1[,p2]]`, e.g. `logistic`, `laplacian:0.5`,
/// `bimodal:1.0,0.2`. Omitted parameters default to 1 (bimodal needs both).
impl FromStr for AmplitudeDensity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, params) = match s.split_once(':') {
            Some((n, p)) => (n.trim(), p.trim()),
            None => (s.trim(), ""),
        };
        let values: Vec<f64> = if params.is_empty() {
            Vec::new()
        } else {
            params
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::parameter(format!("bad density parameter {p:?}")))
                })
                .collect::<Result<_>>()?
        };
        let one = |v: &[f64]| -> Result<f64> {
            match v {
                [] => Ok(1.0),
                [x] => Ok(*x),
                _ => Err(Error::parameter(format!("{name} takes one parameter"))),
            }
        };
        let density = match name {
            "logistic" | "logistic-sigmoid-derivative" => AmplitudeDensity::Logistic { scale: one(&values)? },
            "laplacian" => AmplitudeDensity::Laplacian { scale: one(&values)? },
            "gaussian" => AmplitudeDensity::Gaussian { sigma: one(&values)? },
            "bimodal" | "bimodal-mixture" => match values[..] {
                [mu, sigma] => AmplitudeDensity::Bimodal { mu, sigma },
                _ => return Err(Error::parameter("bimodal needs mu,sigma")),
            },
            other => return Err(Error::parameter(format!("unknown density family {other:?}"))),
        };
        density.validate()?;
        Ok(density)
    }
}

/// Prior over the elements of the mixing matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MatrixPrior {
    /// No prior term (flat over all of `R^{N×N}`).
    #[default]
    None,
    /// Independent uniform densities on `[min, max]` for every element.
    UniformBox { min: f64, max: f64 },
    /// The inverse-square propagation prior, elementwise.
    InverseSquare {
        radius: f64,
        #[serde(default)]
        min_radius: f64,
    },
}

impl MatrixPrior {
    pub fn inverse_square(prior: BallPrior) -> Self {
        MatrixPrior::InverseSquare {
            radius: prior.radius,
            min_radius: prior.min_radius,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MatrixPrior::None => Ok(()),
            MatrixPrior::UniformBox { min, max } => {
                if min < max && min.is_finite() && max.is_finite() {
                    Ok(())
                } else {
                    Err(Error::parameter(format!(
                        "uniform box needs finite min < max, got [{min}, {max}]"
                    )))
                }
            }
            MatrixPrior::InverseSquare { radius, min_radius } => {
                BallPrior::with_min_radius(radius, min_radius).map(|_| ())
            }
        }
    }

    fn ball(radius: f64, min_radius: f64) -> BallPrior {
        BallPrior { radius, min_radius }
    }

    /// Log prior of a single element.
    pub fn log_element(&self, a: f64) -> f64 {
        match *self {
            MatrixPrior::None => 0.0,
            MatrixPrior::UniformBox { min, max } => {
                if (min..=max).contains(&a) {
                    -(max - min).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            MatrixPrior::InverseSquare { radius, min_radius } => {
                Self::ball(radius, min_radius).log_mixing_pdf(a)
            }
        }
    }

    /// `Σ_ij log p(A_ij)`; `-∞` if any element leaves the support.
    pub fn log_prior(&self, a: &DMatrix<f64>) -> f64 {
        match self {
            MatrixPrior::None => 0.0,
            _ => a.iter().map(|&v| self.log_element(v)).sum(),
        }
    }

    /// Elementwise `∂ log p(A) / ∂A_ij` inside the support (zero where the
    /// prior is flat or the element is outside the support).
    pub fn gradient(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        match *self {
            MatrixPrior::None | MatrixPrior::UniformBox { .. } => DMatrix::zeros(a.nrows(), a.ncols()),
            MatrixPrior::InverseSquare { radius, min_radius } => {
                let ball = Self::ball(radius, min_radius);
                let (lower, upper) = ball.mixing_support();
                a.map(|v| {
                    if v >= lower && v <= upper {
                        ball.log_mixing_pdf_derivative(v)
                    } else {
                        0.0
                    }
                })
            }
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, MatrixPrior::None)
    }
}

/// Log density of `s` under `d`.
pub fn log_density(d: &AmplitudeDensity, s: f64) -> f64 {
    d.log_density(s)
}

/// Score of `d` at `u`; errors where the density vanishes.
pub fn score(d: &AmplitudeDensity, u: f64) -> Result<f64> {
    d.try_score(u)
}

/// `log p(A)` under `prior`.
pub fn log_matrix_prior(prior: &MatrixPrior, a: &DMatrix<f64>) -> f64 {
    prior.log_prior(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        let g = AmplitudeDensity::Gaussian { sigma: 1.0 };
        assert!((g.log_density(0.0) + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        let l = AmplitudeDensity::Laplacian { scale: 1.0 };
        assert!((l.log_density(2.0) - (-(2.0f64).ln() - 2.0)).abs() < 1e-15);
        let q = AmplitudeDensity::STANDARD_LOGISTIC;
        assert!((q.log_density(0.0) - 0.25f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn logistic_matches_sigmoid_derivative() {
        let q = AmplitudeDensity::Logistic { scale: 1.0 };
        for &u in &[-30.0, -3.0, -0.5, 0.0, 0.7, 4.0, 25.0] {
            let g = 1.0 / (1.0 + f64::exp(-u));
            let expected = (g * (1.0 - g)).ln();
            if u.abs() < 20.0 {
                assert!((q.log_density(u) - expected).abs() < 1e-12, "u = {u}");
            }
            assert!((q.score(u) - (1.0 - 2.0 * g)).abs() < 1e-12);
        }
        assert_eq!(q.score(0.0), 0.0);
    }

    #[test]
    fn score_examples() {
        let g = AmplitudeDensity::Gaussian { sigma: 1.0 };
        assert_eq!(g.score(3.0), -3.0);
        let l = AmplitudeDensity::Laplacian { scale: 1.0 };
        assert_eq!(l.score(-2.0), 1.0);
    }

    #[test]
    fn score_domain_error() {
        let g = AmplitudeDensity::Gaussian { sigma: 1.0 };
        assert!(matches!(g.try_score(1e200), Err(Error::Domain(_))));
        assert!(matches!(g.try_score(f64::NAN), Err(Error::Domain(_))));
        assert!(g.try_score(2.0).is_ok());
    }

    #[test]
    fn bimodal_has_three_zero_crossings() {
        let d = AmplitudeDensity::Bimodal { mu: 1.0, sigma: 0.4 };
        let mut crossings = 0;
        let mut prev = d.score(-10.0);
        for k in 1..=20_000 {
            let u = -10.0 + 20.0 * (k as f64 + 0.5) / 20_000.0;
            let cur = d.score(u);
            if prev.signum() != cur.signum() {
                crossings += 1;
            }
            prev = cur;
        }
        assert_eq!(crossings, 3);
    }

    #[test]
    fn parse_identifiers() {
        assert_eq!(
            "logistic".parse::<AmplitudeDensity>().unwrap(),
            AmplitudeDensity::Logistic { scale: 1.0 }
        );
        assert_eq!(
            "bimodal:1,0.25".parse::<AmplitudeDensity>().unwrap(),
            AmplitudeDensity::Bimodal { mu: 1.0, sigma: 0.25 }
        );
        assert!("laplacian:-1".parse::<AmplitudeDensity>().is_err());
        assert!("cauchy".parse::<AmplitudeDensity>().is_err());
        let d: AmplitudeDensity = "gaussian:2".parse().unwrap();
        assert_eq!(d.to_string().parse::<AmplitudeDensity>().unwrap(), d);
    }

    #[test]
    fn box_prior_values() {
        let p = MatrixPrior::UniformBox { min: -2.0, max: 2.0 };
        let a = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 1.9, 0.0]);
        assert!((p.log_prior(&a) - 4.0 * 0.25f64.ln()).abs() < 1e-14);
        let mut out = a.clone();
        out[(1, 0)] = 2.5;
        assert_eq!(p.log_prior(&out), f64::NEG_INFINITY);
        assert!(MatrixPrior::UniformBox { min: 1.0, max: 1.0 }.validate().is_err());
    }

    #[test]
    fn inverse_square_prior_value() {
        let p = MatrixPrior::InverseSquare {
            radius: 1.0,
            min_radius: 0.0,
        };
        let a = DMatrix::from_element(1, 1, 1.0);
        let expected = (3.0 / (16.0 * PI.powf(1.5))).ln() - 2.5 * 1.0f64.ln();
        assert!((p.log_prior(&a) - expected).abs() < 1e-14);
    }

    #[test]
    fn serde_shape() {
        let d: AmplitudeDensity =
            serde_json::from_str(r#"{"family":"bimodal","mu":1.0,"sigma":0.3}"#).unwrap();
        assert_eq!(d, AmplitudeDensity::Bimodal { mu: 1.0, sigma: 0.3 });
        let p: MatrixPrior = serde_json::from_str(r#"{"kind":"inverse-square","radius":2.0}"#).unwrap();
        assert_eq!(
            p,
            MatrixPrior::InverseSquare {
                radius: 2.0,
                min_radius: 0.0
            }
        );
        assert!(
            serde_json::from_str::<AmplitudeDensity>(r#"{"family":"gaussian","sigma":1,"x":2}"#).is_err()
        );
    }
}
