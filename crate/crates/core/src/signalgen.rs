//! Synthetic sources, mixtures and trial ensembles with known ground truth.
//!
//! Every generator is a pure function of its parameters and seed; the random
//! stream is ChaCha8, so outputs are bit-identical across runs and platforms.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{MixingMatrix, RecordingMatrix, SourceMatrix};

/// Amplitude family of a synthetic source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SourceFamily {
    Laplacian {
        scale: f64,
    },
    /// Logistic distribution (density `g'(u/s)/s`).
    Logistic {
        scale: f64,
    },
    Gaussian {
        sigma: f64,
    },
    /// `amplitude · sin(2π · frequency · t + phase)`; deterministic.
    Sinusoid {
        /// Cycles per sample, strictly inside (0, 0.5).
        frequency: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default = "unit")]
        amplitude: f64,
    },
    /// Equal-weight mixture of `N(±mu, sigma²)`.
    Bimodal {
        mu: f64,
        sigma: f64,
    },
}

fn unit() -> f64 {
    1.0
}

/// One row of a synthetic source matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub family: SourceFamily,
    #[serde(default)]
    pub seed: u64,
}

impl SourceSpec {
    pub fn new(family: SourceFamily, seed: u64) -> Self {
        Self { family, seed }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::parameter(format!("{name} must be positive, got {v}")))
            }
        };
        match self.family {
            SourceFamily::Laplacian { scale } | SourceFamily::Logistic { scale } => positive("scale", scale),
            SourceFamily::Gaussian { sigma } => positive("sigma", sigma),
            SourceFamily::Sinusoid {
                frequency,
                phase,
                amplitude,
            } => {
                if !(frequency > 0.0 && frequency < 0.5) {
                    return Err(Error::parameter(format!(
                        "sinusoid frequency must be in (0, 0.5) cycles/sample, got {frequency}"
                    )));
                }
                if !phase.is_finite() {
                    return Err(Error::parameter("sinusoid phase must be finite"));
                }
                positive("amplitude", amplitude)
            }
            SourceFamily::Bimodal { mu, sigma } => {
                positive("sigma", sigma)?;
                if mu >= 0.0 && mu.is_finite() {
                    Ok(())
                } else {
                    Err(Error::parameter(format!("bimodal mu must be >= 0, got {mu}")))
                }
            }
        }
    }

    fn fill(&self, row: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        match self.family {
            SourceFamily::Laplacian { scale } => {
                for v in row.iter_mut() {
                    let u = open_unit(&mut rng) - 0.5;
                    *v = -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln();
                }
            }
            SourceFamily::Logistic { scale } => {
                for v in row.iter_mut() {
                    let u = open_unit(&mut rng);
                    *v = scale * (u / (1.0 - u)).ln();
                }
            }
            SourceFamily::Gaussian { sigma } => {
                for v in row.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = sigma * z;
                }
            }
            SourceFamily::Sinusoid {
                frequency,
                phase,
                amplitude,
            } => {
                for (t, v) in row.iter_mut().enumerate() {
                    *v = amplitude * (2.0 * PI * frequency * t as f64 + phase).sin();
                }
            }
            SourceFamily::Bimodal { mu, sigma } => {
                for v in row.iter_mut() {
                    let centre = if rng.random::<bool>() { mu } else { -mu };
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = centre + sigma * z;
                }
            }
        }
    }
}

/// Uniform draw from the open interval (0, 1).
fn open_unit<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Generates an `N × T` source matrix, row `j` from `specs[j]`.
pub fn gen_sources(specs: &[SourceSpec], samples: usize) -> Result<SourceMatrix> {
    if specs.is_empty() {
        return Err(Error::parameter("need at least one source spec"));
    }
    if samples == 0 {
        return Err(Error::parameter("need at least one sample"));
    }
    let mut values = DMatrix::zeros(specs.len(), samples);
    let mut row = vec![0.0; samples];
    for (j, spec) in specs.iter().enumerate() {
        spec.validate()?;
        spec.fill(&mut row);
        for (t, &v) in row.iter().enumerate() {
            values[(j, t)] = v;
        }
    }
    SourceMatrix::new(values)
}

/// `X = A S + noise`, noise i.i.d. `N(0, sigma²)` per sample and detector.
pub fn mix(a: &MixingMatrix, s: &SourceMatrix, sigma: f64, seed: u64) -> Result<RecordingMatrix> {
    if a.ncols() != s.nrows() {
        return Err(Error::dimension(format!(
            "mixing matrix has {} columns but there are {} sources",
            a.ncols(),
            s.nrows()
        )));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::parameter(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let mut x = &**a * &**s;
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Row-major draw order so the stream does not depend on storage layout.
        for i in 0..x.nrows() {
            for t in 0..x.ncols() {
                let z: f64 = StandardNormal.sample(&mut rng);
                x[(i, t)] += sigma * z;
            }
        }
    }
    RecordingMatrix::new(x, sigma)
}

/// Random `n × n` mixing matrix with standard normal entries, redrawn until
/// its 2-norm condition number is at most `max_condition`.
pub fn random_mixing(n: usize, max_condition: f64, seed: u64) -> Result<MixingMatrix> {
    if n == 0 {
        return Err(Error::parameter("mixing dimension must be >= 1"));
    }
    if max_condition < 1.0 {
        return Err(Error::parameter("condition bound must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..10_000 {
        let m: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
        let sv = m.singular_values();
        let cond = sv.max() / sv.min();
        if cond.is_finite() && cond <= max_condition {
            return MixingMatrix::square_nonsingular(m);
        }
    }
    Err(Error::parameter(format!(
        "could not draw a {n}x{n} matrix with condition <= {max_condition}"
    )))
}

/// Adds `scale · src(t - tau)` into `dst(t)` for every `t` where the shifted
/// index is inside the window. Samples shifted past either edge are dropped
/// (zero-padded translation, never circular).
pub fn add_shifted(dst: &mut [f64], src: &[f64], tau: i64, scale: f64) {
    let len = dst.len().min(src.len()) as i64;
    let (start, end) = (tau.max(0), (len + tau).min(len));
    for t in start..end {
        dst[t as usize] += scale * src[(t - tau) as usize];
    }
}

/// Ground truth stored alongside a synthetic trial ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTruth {
    /// `N × T` component waveshapes.
    pub waveshapes: DMatrix<f64>,
    /// `M × N` coupling matrix.
    pub coupling: DMatrix<f64>,
    /// `N × R` amplitude scales.
    pub amplitudes: DMatrix<f64>,
    /// `N × R` latency shifts in samples.
    pub latencies: DMatrix<i64>,
    pub noise_sigma: f64,
    pub max_shift: usize,
}

/// Recordings indexed by (detector, trial, time).
#[derive(Debug, Clone, PartialEq)]
pub struct TrialEnsemble {
    detectors: usize,
    trials: usize,
    samples: usize,
    /// Flat storage, index `(m * trials + r) * samples + t`.
    values: Vec<f64>,
    truth: Option<TrialTruth>,
}

impl TrialEnsemble {
    /// Builds an ensemble from per-detector `R × T` matrices.
    pub fn from_detector_matrices(per_detector: &[DMatrix<f64>]) -> Result<Self> {
        let first = per_detector
            .first()
            .ok_or_else(|| Error::parameter("ensemble needs at least one detector"))?;
        let (trials, samples) = first.shape();
        if trials == 0 || samples == 0 {
            return Err(Error::parameter("ensemble needs at least one trial and sample"));
        }
        let mut values = Vec::with_capacity(per_detector.len() * trials * samples);
        for (m, mat) in per_detector.iter().enumerate() {
            if mat.shape() != (trials, samples) {
                return Err(Error::dimension(format!(
                    "detector {m} has shape {:?}, expected {:?}",
                    mat.shape(),
                    (trials, samples)
                )));
            }
            for r in 0..trials {
                for t in 0..samples {
                    let v = mat[(r, t)];
                    if !v.is_finite() {
                        return Err(Error::parameter("ensemble has a non-finite entry"));
                    }
                    values.push(v);
                }
            }
        }
        Ok(Self {
            detectors: per_detector.len(),
            trials,
            samples,
            values,
            truth: None,
        })
    }

    pub fn with_truth(mut self, truth: TrialTruth) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn detectors(&self) -> usize {
        self.detectors
    }

    pub fn trials(&self) -> usize {
        self.trials
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn truth(&self) -> Option<&TrialTruth> {
        self.truth.as_ref()
    }

    /// The recording of detector `m` on trial `r`.
    pub fn trial(&self, m: usize, r: usize) -> &[f64] {
        let start = (m * self.trials + r) * self.samples;
        &self.values[start..start + self.samples]
    }

    /// `R × T` matrix of detector `m`.
    pub fn detector_matrix(&self, m: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.trials, self.samples, |r, t| self.trial(m, r)[t])
    }
}

/// Evaluates `x_mr(t) = Σ_n C_mn α_nr s_n(t - τ_nr) + η_mr(t)`.
///
/// Shifts are integer samples with zero fill; `max_shift` must be below
/// `T / 4` and bound every `|τ_nr|`.
pub fn gen_trial_ensemble(
    waveshapes: &DMatrix<f64>,
    coupling: &DMatrix<f64>,
    amplitudes: &DMatrix<f64>,
    latencies: &DMatrix<i64>,
    max_shift: usize,
    sigma: f64,
    seed: u64,
) -> Result<TrialEnsemble> {
    let (components, samples) = waveshapes.shape();
    let detectors = coupling.nrows();
    let trials = amplitudes.ncols();
    if components == 0 || samples == 0 || detectors == 0 || trials == 0 {
        return Err(Error::parameter("trial ensemble dimensions must be nonzero"));
    }
    if coupling.ncols() != components
        || amplitudes.nrows() != components
        || latencies.shape() != (components, trials)
    {
        return Err(Error::dimension(format!(
            "waveshapes {:?}, coupling {:?}, amplitudes {:?}, latencies {:?} disagree",
            waveshapes.shape(),
            coupling.shape(),
            amplitudes.shape(),
            latencies.shape()
        )));
    }
    if 4 * max_shift >= samples {
        return Err(Error::parameter(format!(
            "shift bound {max_shift} must be below T/4 = {}",
            samples as f64 / 4.0
        )));
    }
    if let Some(tau) = latencies.iter().find(|t| t.unsigned_abs() as usize > max_shift) {
        return Err(Error::parameter(format!(
            "latency {tau} exceeds the shift bound {max_shift}"
        )));
    }
    if amplitudes.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::parameter("amplitudes must be positive"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::parameter(format!("noise sigma must be >= 0, got {sigma}")));
    }

    let shapes: Vec<Vec<f64>> = (0..components)
        .map(|n| waveshapes.row(n).iter().copied().collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; detectors * trials * samples];
    for m in 0..detectors {
        for r in 0..trials {
            let start = (m * trials + r) * samples;
            let trial = &mut values[start..start + samples];
            for (n, shape) in shapes.iter().enumerate() {
                add_shifted(
                    trial,
                    shape,
                    latencies[(n, r)],
                    coupling[(m, n)] * amplitudes[(n, r)],
                );
            }
            if sigma > 0.0 {
                for v in trial.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += sigma * z;
                }
            }
        }
    }
    Ok(TrialEnsemble {
        detectors,
        trials,
        samples,
        values,
        truth: Some(TrialTruth {
            waveshapes: waveshapes.clone(),
            coupling: coupling.clone(),
            amplitudes: amplitudes.clone(),
            latencies: latencies.clone(),
            noise_sigma: sigma,
            max_shift,
        }),
    })
}

/// Template for a synthetic component waveshape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Waveshape {
    /// `amplitude · exp(-(t - center)² / (2 width²))`.
    GaussianBump { center: f64, width: f64, amplitude: f64 },
    /// Gaussian-windowed cosine.
    Gabor {
        center: f64,
        width: f64,
        frequency: f64,
        amplitude: f64,
    },
}

impl Waveshape {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Waveshape::GaussianBump {
                center,
                width,
                amplitude,
            } => amplitude * (-(t - center).powi(2) / (2.0 * width * width)).exp(),
            Waveshape::Gabor {
                center,
                width,
                frequency,
                amplitude,
            } => {
                amplitude
                    * (-(t - center).powi(2) / (2.0 * width * width)).exp()
                    * (2.0 * PI * frequency * (t - center)).cos()
            }
        }
    }
}

/// Renders templates into an `N × T` waveshape matrix.
pub fn render_waveshapes(shapes: &[Waveshape], samples: usize) -> Result<DMatrix<f64>> {
    if shapes.is_empty() || samples == 0 {
        return Err(Error::parameter("need at least one waveshape and one sample"));
    }
    for s in shapes {
        let (Waveshape::GaussianBump { width, .. } | Waveshape::Gabor { width, .. }) = *s;
        if !(width > 0.0) {
            return Err(Error::parameter("waveshape width must be positive"));
        }
    }
    Ok(DMatrix::from_fn(shapes.len(), samples, |n, t| {
        shapes[n].value(t as f64)
    }))
}

/// Draws per-trial amplitudes uniform in `[alpha_lo, alpha_hi]` and latencies
/// uniform over the integers in `[-max_shift, max_shift]`.
pub fn random_trial_parameters(
    components: usize,
    trials: usize,
    alpha_range: (f64, f64),
    max_shift: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, DMatrix<i64>)> {
    let (lo, hi) = alpha_range;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::parameter(format!(
            "amplitude range must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut alpha = DMatrix::zeros(components, trials);
    let mut tau = DMatrix::zeros(components, trials);
    let bound = max_shift as i64;
    for n in 0..components {
        for r in 0..trials {
            alpha[(n, r)] = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            tau[(n, r)] = rng.random_range(-bound..=bound);
        }
    }
    Ok((alpha, tau))
}
