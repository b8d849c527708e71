//! MAP Infomax source separation.
//!
//! With a noise-free square mixture `X = A S` and independent sources with
//! amplitude densities `q_j`, marginalizing the sources out of the joint
//! posterior leaves
//!
//! ```text
//! log p(A | X) = log p(A) - T log|det A| + Σ_j Σ_t log q_j(u_jt),   U = A⁻¹ X
//! ```
//!
//! (one `1/|det A|` factor per time step). Gradient ascent on this quantity
//! with respect to `W = A⁻¹` is the Infomax learning rule
//!
//! ```text
//! ∂/∂W = T W⁻ᵀ + Ψ(U) Xᵀ - Aᵀ G Aᵀ
//! ```
//!
//! where `Ψ` applies the score `q'/q` elementwise and `G = ∂ log p(A)/∂A`.
//!
//! The posterior density *of `W`* carries the Jacobian of the inversion map,
//! `|∂A/∂W| = |det W|^{-2N}`, so its mode is not the inverse of the mode over
//! `A`. [`Objective::JacobianCorrectedW`] optimizes that density instead; the
//! only change to the gradient is `T → T - 2N` on the determinant term.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::densities::{AmplitudeDensity, MatrixPrior};
use crate::error::{Error, Result};
use crate::metrics::amari_index;
use crate::types::{MixingMatrix, RecordingMatrix, SourceMatrix};

/// Smallest `|det W|` the optimizer will step to.
pub const MIN_ABS_DET: f64 = 1e-12;
/// Backtracking gives up once the step falls below this.
pub const MIN_STEP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    /// Plain gradient `∂f/∂W`.
    Vanilla,
    /// Natural (relative) gradient `∂f/∂W · WᵀW`.
    #[default]
    Natural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// `log p(A | X)` evaluated at `A = W⁻¹` (standard Infomax).
    #[default]
    PosteriorOverA,
    /// `log p(W | X)`, including the inversion Jacobian.
    JacobianCorrectedW,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Init {
    #[default]
    Identity,
    RandomOrthogonal {
        seed: u64,
    },
}

fn default_densities() -> Vec<AmplitudeDensity> {
    vec![AmplitudeDensity::STANDARD_LOGISTIC]
}
fn default_step() -> f64 {
    0.1
}
fn default_max_iterations() -> usize {
    2000
}
fn default_tolerance() -> f64 {
    1e-9
}

/// Search configuration for [`separate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparationConfig {
    /// One density per source, or a single density shared by all.
    #[serde(default = "default_densities")]
    pub densities: Vec<AmplitudeDensity>,
    #[serde(default)]
    pub matrix_prior: MatrixPrior,
    /// Initial step size; multiplies the sample-averaged ascent direction.
    #[serde(default = "default_step")]
    pub step_size: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Stop when an accepted step raises the objective by less than
    /// `tolerance` per sample.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub mode: GradientMode,
    #[serde(default)]
    pub objective: Objective,
    #[serde(default)]
    pub init: Init,
    /// Sphere the data before the search (the objective is still evaluated
    /// in the original coordinates).
    #[serde(default)]
    pub whiten: bool,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        Self {
            densities: default_densities(),
            matrix_prior: MatrixPrior::None,
            step_size: default_step(),
            max_iterations: default_max_iterations(),
            tolerance: default_tolerance(),
            mode: GradientMode::default(),
            objective: Objective::default(),
            init: Init::default(),
            whiten: false,
        }
    }
}

impl SeparationConfig {
    pub fn with_density(density: AmplitudeDensity) -> Self {
        Self {
            densities: vec![density],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::parameter("step size must be positive"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::parameter("tolerance must be positive"));
        }
        if self.densities.is_empty() {
            return Err(Error::parameter("need at least one amplitude density"));
        }
        for d in &self.densities {
            d.validate()?;
        }
        self.matrix_prior.validate()
    }

    /// Density for source `j` out of `n`.
    fn densities_for(&self, n: usize) -> Result<Vec<AmplitudeDensity>> {
        match self.densities.len() {
            1 => Ok(vec![self.densities[0]; n]),
            k if k == n => Ok(self.densities.clone()),
            k => Err(Error::Model(format!("{k} densities configured for {n} sources"))),
        }
    }
}

fn check_square_system(w: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<()> {
    if !w.is_square() {
        return Err(Error::dimension(format!(
            "matrix is {:?}, expected square",
            w.shape()
        )));
    }
    if w.ncols() != x.nrows() {
        return Err(Error::dimension(format!(
            "{}x{} matrix against {} recording rows",
            w.nrows(),
            w.ncols(),
            x.nrows()
        )));
    }
    Ok(())
}

fn invert(m: &DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, f64)> {
    let lu = m.clone().lu();
    let det = lu.determinant();
    if !(det.abs() > MIN_ABS_DET) || !det.is_finite() {
        return Err(Error::Singular(format!("{what}: |det| = {:e}", det.abs())));
    }
    let inv = lu
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("{what} is not invertible")))?;
    Ok((inv, det))
}

fn sum_log_density(u: &DMatrix<f64>, densities: &[AmplitudeDensity]) -> f64 {
    let mut total = 0.0;
    for (j, d) in densities.iter().enumerate() {
        total += u.row(j).iter().map(|&v| d.log_density(v)).sum::<f64>();
    }
    total
}

/// `log p(A | X)` up to an additive constant:
/// `log p(A) - T log|det A| + Σ_jt log q_j((A⁻¹X)_jt)`.
pub fn log_posterior_a(a: &DMatrix<f64>, x: &DMatrix<f64>, cfg: &SeparationConfig) -> Result<f64> {
    check_square_system(a, x)?;
    let densities = cfg.densities_for(a.nrows())?;
    let (w, det) = invert(a, "mixing matrix")?;
    let u = &w * x;
    let t = x.ncols() as f64;
    Ok(cfg.matrix_prior.log_prior(a) - t * det.abs().ln() + sum_log_density(&u, &densities))
}

/// `log p(W | X) = log p(A = W⁻¹ | X) - 2N log|det W|`.
pub fn log_posterior_w(w: &DMatrix<f64>, x: &DMatrix<f64>, cfg: &SeparationConfig) -> Result<f64> {
    check_square_system(w, x)?;
    let (a, det) = invert(w, "separation matrix")?;
    let n = w.nrows() as f64;
    Ok(log_posterior_a(&a, x, cfg)? - 2.0 * n * det.abs().ln())
}

/// Objective and gradient with respect to `W` for a fixed data set.
struct Evaluator<'a> {
    x: &'a DMatrix<f64>,
    densities: Vec<AmplitudeDensity>,
    prior: MatrixPrior,
    /// Multiplier of `log|det W|`: `T`, or `T - 2N` with the Jacobian.
    det_weight: f64,
}

impl<'a> Evaluator<'a> {
    fn new(x: &'a DMatrix<f64>, cfg: &SeparationConfig) -> Result<Self> {
        let n = x.nrows();
        let t = x.ncols() as f64;
        let det_weight = match cfg.objective {
            Objective::PosteriorOverA => t,
            Objective::JacobianCorrectedW => t - 2.0 * n as f64,
        };
        Ok(Self {
            x,
            densities: cfg.densities_for(n)?,
            prior: cfg.matrix_prior,
            det_weight,
        })
    }

    fn value(&self, w: &DMatrix<f64>) -> Result<f64> {
        let (a, det) = invert(w, "separation matrix")?;
        let prior = if self.prior.is_none() {
            0.0
        } else {
            self.prior.log_prior(&a)
        };
        let u = w * self.x;
        Ok(prior + self.det_weight * det.abs().ln() + sum_log_density(&u, &self.densities))
    }

    fn gradient(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (a, _) = invert(w, "separation matrix")?;
        let mut u = w * self.x;
        for (j, d) in self.densities.iter().enumerate() {
            for v in u.row_mut(j).iter_mut() {
                *v = d.score(*v);
            }
        }
        let mut grad = a.transpose() * self.det_weight + u * self.x.transpose();
        if !self.prior.is_none() {
            let g = self.prior.gradient(&a);
            grad -= a.transpose() * g * a.transpose();
        }
        Ok(grad)
    }
}

/// The configured objective at `W` (either [`log_posterior_a`] at `W⁻¹` or
/// [`log_posterior_w`]).
pub fn objective(w: &DMatrix<f64>, x: &DMatrix<f64>, cfg: &SeparationConfig) -> Result<f64> {
    check_square_system(w, x)?;
    Evaluator::new(x, cfg)?.value(w)
}

/// Analytic gradient of [`objective`] with respect to the entries of `W`.
pub fn objective_gradient(
    w: &DMatrix<f64>,
    x: &DMatrix<f64>,
    cfg: &SeparationConfig,
) -> Result<DMatrix<f64>> {
    check_square_system(w, x)?;
    Evaluator::new(x, cfg)?.gradient(w)
}

/// Outcome of one backtracking ascent step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub w: DMatrix<f64>,
    pub value: f64,
    /// Step size that was accepted (or the last one tried).
    pub step: f64,
    pub accepted: bool,
}

/// Ascent direction for the configured mode, scaled by `1/T`.
fn direction(grad: &DMatrix<f64>, w: &DMatrix<f64>, mode: GradientMode, samples: usize) -> DMatrix<f64> {
    let scaled = grad / samples as f64;
    match mode {
        GradientMode::Vanilla => scaled,
        GradientMode::Natural => scaled * (w.transpose() * w),
    }
}

/// One gradient step from `W`, halving `step` until the objective strictly
/// increases. If no step above [`MIN_STEP`] helps, `W` is returned unchanged
/// with `accepted = false`.
pub fn gradient_step(
    w: &DMatrix<f64>,
    x: &DMatrix<f64>,
    cfg: &SeparationConfig,
    step: f64,
) -> Result<StepOutcome> {
    check_square_system(w, x)?;
    let eval = Evaluator::new(x, cfg)?;
    let current = eval.value(w)?;
    let grad = eval.gradient(w)?;
    Ok(backtrack(
        &|m| eval.value(m),
        w,
        current,
        &grad,
        cfg.mode,
        x.ncols(),
        step,
    ))
}

fn backtrack(
    value: &dyn Fn(&DMatrix<f64>) -> Result<f64>,
    w: &DMatrix<f64>,
    current: f64,
    grad: &DMatrix<f64>,
    mode: GradientMode,
    samples: usize,
    step: f64,
) -> StepOutcome {
    let dir = direction(grad, w, mode, samples);
    let mut step = step;
    while step >= MIN_STEP {
        let candidate = w + &dir * step;
        // Singular candidates and support violations count as rejections.
        if let Ok(v) = value(&candidate) {
            if v.is_finite() && v > current {
                return StepOutcome {
                    w: candidate,
                    value: v,
                    step,
                    accepted: true,
                };
            }
        }
        step *= 0.5;
    }
    StepOutcome {
        w: w.clone(),
        value: current,
        step,
        accepted: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// Increase per sample fell below the tolerance.
    Tolerance,
    /// No step above the minimum step size increased the objective.
    NoAscent,
    MaxIterations,
}

/// Result of a separation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationResult {
    /// Separation matrix in the original data coordinates.
    pub w: DMatrix<f64>,
    pub unmixed: SourceMatrix,
    /// Objective after initialization and after every accepted step.
    pub log_posterior_trace: Vec<f64>,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub iterations: usize,
    pub amari_index: Option<f64>,
}

impl SeparationResult {
    /// Fills in the Amari index against the true mixing matrix.
    pub fn evaluate_against(&mut self, a_true: &DMatrix<f64>) -> Result<f64> {
        let ai = amari_index(&self.w, a_true)?;
        self.amari_index = Some(ai);
        Ok(ai)
    }

    pub fn final_log_posterior(&self) -> f64 {
        *self.log_posterior_trace.last().expect("trace is never empty")
    }
}

fn random_orthogonal(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    // Fix column signs so the draw is Haar-distributed and deterministic.
    let mut q = q;
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Symmetric inverse square root of the second-moment matrix `X Xᵀ / T`.
fn whitening_matrix(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cov = x * x.transpose() / x.ncols() as f64;
    let eig = cov.symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l > 1e-300)) {
        return Err(Error::Singular(
            "recordings are rank deficient; cannot whiten".into(),
        ));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Maximizes the configured objective by backtracking gradient ascent.
pub fn separate(x: &RecordingMatrix, cfg: &SeparationConfig) -> Result<SeparationResult> {
    cfg.validate()?;
    let data: &DMatrix<f64> = x;
    let n = data.nrows();
    let samples = data.ncols();
    let eval = Evaluator::new(data, cfg)?;

    // The search runs over W' with W = W' V; V = I unless whitening.
    let v = if cfg.whiten {
        whitening_matrix(data)?
    } else {
        DMatrix::identity(n, n)
    };
    let value = |wp: &DMatrix<f64>| eval.value(&(wp * &v));
    let gradient =
        |wp: &DMatrix<f64>| -> Result<DMatrix<f64>> { Ok(eval.gradient(&(wp * &v))? * v.transpose()) };

    let mut wp = match cfg.init {
        Init::Identity => DMatrix::identity(n, n),
        Init::RandomOrthogonal { seed } => random_orthogonal(n, seed),
    };
    let mut current = value(&wp)?;
    if !current.is_finite() {
        return Err(Error::Model(format!(
            "objective is {current} at the initial separation matrix (outside the prior support?)"
        )));
    }
    let mut trace = vec![current];
    let mut step = cfg.step_size;
    let mut stop_reason = StopReason::MaxIterations;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let grad = gradient(&wp)?;
        let outcome = backtrack(&value, &wp, current, &grad, cfg.mode, samples, step);
        if !outcome.accepted {
            stop_reason = StopReason::NoAscent;
            break;
        }
        let gain = outcome.value - current;
        wp = outcome.w;
        current = outcome.value;
        trace.push(current);
        // Allow the step to recover after backtracking.
        step = (outcome.step * 1.5).min(cfg.step_size * 64.0);
        if gain / samples as f64 <= cfg.tolerance {
            stop_reason = StopReason::Tolerance;
            break;
        }
    }

    let w = wp * v;
    let unmixed = SourceMatrix::new(&w * data)?;
    Ok(SeparationResult {
        w,
        unmixed,
        log_posterior_trace: trace,
        converged: stop_reason != StopReason::MaxIterations,
        stop_reason,
        iterations,
        amari_index: None,
    })
}

/// Convenience wrapper: separates and scores against the known mixing matrix.
pub fn separate_and_score(
    x: &RecordingMatrix,
    cfg: &SeparationConfig,
    a_true: &MixingMatrix,
) -> Result<SeparationResult> {
    let mut result = separate(x, cfg)?;
    result.evaluate_against(a_true)?;
    Ok(result)
}
