//! Trial-ensemble estimators.
//!
//! With one detector, one component and no trial variability, the posterior
//! for the waveshape is maximized sample by sample by the trial average
//! ([`average_trials`]). The general model
//!
//! ```text
//! x_mr(t) = Σ_n C_mn α_nr s_n(t - τ_nr) + η_mr(t)
//! ```
//!
//! lets every component vary in amplitude (`α`) and latency (`τ`) from trial
//! to trial. [`dvca_fit`] maximizes its Gaussian likelihood by cyclic block
//! updates, each solved exactly, so the residual power never increases.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{match_components, waveform_correlation};
use crate::signalgen::{add_shifted, TrialEnsemble, TrialTruth};

/// Per-detector trial mean, `M × T`. Accumulated as a running mean, which
/// returns identical trials unchanged.
pub fn average_trials(ensemble: &TrialEnsemble) -> Result<DMatrix<f64>> {
    let (m, r, t) = (ensemble.detectors(), ensemble.trials(), ensemble.samples());
    if m == 0 || r == 0 || t == 0 {
        return Err(Error::parameter("cannot average an empty ensemble"));
    }
    let mut avg = DMatrix::zeros(m, t);
    for d in 0..m {
        for k in 0..r {
            for (i, v) in ensemble.trial(d, k).iter().enumerate() {
                avg[(d, i)] += (v - avg[(d, i)]) / (k + 1) as f64;
            }
        }
    }
    Ok(avg)
}

fn default_max_sweeps() -> usize {
    200
}
fn default_tolerance() -> f64 {
    1e-10
}
fn default_restarts() -> usize {
    4
}

/// Settings for [`dvca_fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DvcaOptions {
    /// Latencies are searched over `[-max_shift, max_shift]`.
    pub max_shift: usize,
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
    /// Stop once a sweep lowers the residual power by less than this
    /// fraction.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Hold every amplitude at 1.
    #[serde(default)]
    pub fix_amplitudes: bool,
    /// Hold every latency at 0.
    #[serde(default)]
    pub fix_latencies: bool,
    /// Extra randomized initializations; the lowest residual wins.
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
}

impl DvcaOptions {
    pub fn new(max_shift: usize) -> Self {
        Self {
            max_shift,
            max_sweeps: default_max_sweeps(),
            tolerance: default_tolerance(),
            fix_amplitudes: false,
            fix_latencies: false,
            restarts: default_restarts(),
            seed: 0,
        }
    }
}

/// Fitted (or planted) trial model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DvcaEstimate {
    /// `N × T`.
    pub waveshapes: DMatrix<f64>,
    /// `M × N`.
    pub coupling: DMatrix<f64>,
    /// `N × R`.
    pub amplitudes: DMatrix<f64>,
    /// `N × R`, in samples.
    pub latencies: DMatrix<i64>,
    pub max_shift: usize,
    pub residual_power: f64,
    /// Accepted sweeps.
    pub iterations: usize,
    /// Residual power at initialization and after every accepted sweep.
    pub residual_trace: Vec<f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl DvcaEstimate {
    /// Wraps planted parameters, e.g. from [`TrialTruth`].
    pub fn from_truth(truth: &TrialTruth) -> Self {
        Self {
            waveshapes: truth.waveshapes.clone(),
            coupling: truth.coupling.clone(),
            amplitudes: truth.amplitudes.clone(),
            latencies: truth.latencies.clone(),
            max_shift: truth.max_shift,
            residual_power: 0.0,
            iterations: 0,
            residual_trace: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn components(&self) -> usize {
        self.waveshapes.nrows()
    }

    fn check_shapes(&self, ensemble: &TrialEnsemble) -> Result<()> {
        let n = self.components();
        let ok = self.waveshapes.ncols() == ensemble.samples()
            && self.coupling.shape() == (ensemble.detectors(), n)
            && self.amplitudes.shape() == (n, ensemble.trials())
            && self.latencies.shape() == (n, ensemble.trials());
        if ok {
            Ok(())
        } else {
            Err(Error::dimension(format!(
                "estimate (N={n}, T={}) does not fit an ensemble with M={}, R={}, T={}",
                self.waveshapes.ncols(),
                ensemble.detectors(),
                ensemble.trials(),
                ensemble.samples()
            )))
        }
    }

    /// Noise-free prediction for detector `m`, trial `r`.
    pub fn predict_trial(&self, m: usize, r: usize) -> Vec<f64> {
        let t = self.waveshapes.ncols();
        let mut out = vec![0.0; t];
        for n in 0..self.components() {
            let s: Vec<f64> = self.waveshapes.row(n).iter().copied().collect();
            add_shifted(
                &mut out,
                &s,
                self.latencies[(n, r)],
                self.coupling[(m, n)] * self.amplitudes[(n, r)],
            );
        }
        out
    }

    /// Applies the identifiability gauge: latencies re-centered to zero mean
    /// when the waveshape can be moved without losing samples, `‖s_n‖ = 1`,
    /// mean amplitude 1 and the largest waveshape sample positive, with the
    /// scale and sign absorbed into the coupling.
    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        let t = out.waveshapes.ncols();
        let r = out.amplitudes.ncols();
        for n in 0..out.components() {
            let k = centering_offset(out.latencies.row(n).iter().copied());
            let bound = out.max_shift as i64;
            if k != 0 && out.latencies.row(n).iter().all(|&tau| (tau - k).abs() <= bound) {
                let s: Vec<f64> = out.waveshapes.row(n).iter().copied().collect();
                let peak = s.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let dropped = if k > 0 {
                    &s[t.saturating_sub(k as usize)..]
                } else {
                    &s[..(k.unsigned_abs() as usize).min(t)]
                };
                if dropped.iter().all(|v| v.abs() <= 1e-12 * peak) {
                    let mut moved = vec![0.0; t];
                    add_shifted(&mut moved, &s, k, 1.0);
                    for (i, v) in moved.into_iter().enumerate() {
                        out.waveshapes[(n, i)] = v;
                    }
                    for tau in out.latencies.row_mut(n).iter_mut() {
                        *tau -= k;
                    }
                }
            }

            let norm = out.waveshapes.row(n).norm();
            if norm > 0.0 {
                let peak =
                    out.waveshapes
                        .row(n)
                        .iter()
                        .copied()
                        .fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
                let scale = norm * peak.signum();
                out.waveshapes.row_mut(n).unscale_mut(scale);
                out.coupling.column_mut(n).scale_mut(scale);
            }
            let mean_alpha = out.amplitudes.row(n).sum() / r as f64;
            if mean_alpha > 0.0 {
                out.amplitudes.row_mut(n).unscale_mut(mean_alpha);
                out.coupling.column_mut(n).scale_mut(mean_alpha);
            }
        }
        out
    }
}

/// `Σ_{m,r,t} (x_mr(t) - x̂_mr(t))²` under the noise-free trial model.
pub fn residual_power(ensemble: &TrialEnsemble, estimate: &DvcaEstimate) -> Result<f64> {
    estimate.check_shapes(ensemble)?;
    let mut total = 0.0;
    for m in 0..ensemble.detectors() {
        for r in 0..ensemble.trials() {
            let predicted = estimate.predict_trial(m, r);
            total += ensemble
                .trial(m, r)
                .iter()
                .zip(&predicted)
                .map(|(x, p)| (x - p) * (x - p))
                .sum::<f64>();
        }
    }
    Ok(total)
}

/// Working copy of the model with cached per-trial components and residuals.
struct Fit<'a> {
    ensemble: &'a TrialEnsemble,
    s: Vec<Vec<f64>>,
    c: DMatrix<f64>,
    alpha: DMatrix<f64>,
    tau: DMatrix<i64>,
    /// `α_nr s_n(t - τ_nr)`, index `n * R + r`.
    comp: Vec<Vec<f64>>,
    /// `x - x̂`, index `(m * R + r) * T + t`.
    resid: Vec<f64>,
    warnings: Vec<String>,
}

impl<'a> Fit<'a> {
    fn new(ensemble: &'a TrialEnsemble, s: Vec<Vec<f64>>) -> Self {
        let n = s.len();
        let r = ensemble.trials();
        let mut fit = Self {
            ensemble,
            s,
            c: DMatrix::zeros(ensemble.detectors(), n),
            alpha: DMatrix::from_element(n, r, 1.0),
            tau: DMatrix::zeros(n, r),
            comp: Vec::new(),
            resid: Vec::new(),
            warnings: Vec::new(),
        };
        fit.refresh();
        fit
    }

    fn dims(&self) -> (usize, usize, usize, usize) {
        (
            self.s.len(),
            self.ensemble.detectors(),
            self.ensemble.trials(),
            self.ensemble.samples(),
        )
    }

    fn refresh(&mut self) {
        let (n_comp, m_det, r_tr, t_len) = self.dims();
        self.comp = (0..n_comp * r_tr)
            .map(|i| {
                let (n, r) = (i / r_tr, i % r_tr);
                let mut v = vec![0.0; t_len];
                add_shifted(&mut v, &self.s[n], self.tau[(n, r)], self.alpha[(n, r)]);
                v
            })
            .collect();
        self.resid = vec![0.0; m_det * r_tr * t_len];
        for m in 0..m_det {
            for r in 0..r_tr {
                let base = (m * r_tr + r) * t_len;
                let x = self.ensemble.trial(m, r);
                for t in 0..t_len {
                    let mut v = x[t];
                    for n in 0..n_comp {
                        v -= self.c[(m, n)] * self.comp[n * r_tr + r][t];
                    }
                    self.resid[base + t] = v;
                }
            }
        }
    }

    fn residual_power(&self) -> f64 {
        self.resid.iter().map(|v| v * v).sum()
    }

    /// `Σ_m C_mn e_mr(t)` where `e` excludes component `n`.
    fn projected_partial(&self, n: usize, r: usize) -> Vec<f64> {
        let (_, m_det, r_tr, t_len) = self.dims();
        let c2: f64 = self.c.column(n).iter().map(|v| v * v).sum();
        let comp = &self.comp[n * r_tr + r];
        let mut z: Vec<f64> = comp.iter().map(|v| c2 * v).collect();
        for m in 0..m_det {
            let cm = self.c[(m, n)];
            let base = (m * r_tr + r) * t_len;
            for t in 0..t_len {
                z[t] += cm * self.resid[base + t];
            }
        }
        z
    }

    fn replace_component(&mut self, n: usize, r: usize, new: Vec<f64>) {
        let (_, m_det, r_tr, t_len) = self.dims();
        let old = std::mem::replace(&mut self.comp[n * r_tr + r], new);
        let new = &self.comp[n * r_tr + r];
        for m in 0..m_det {
            let cm = self.c[(m, n)];
            let base = (m * r_tr + r) * t_len;
            for t in 0..t_len {
                self.resid[base + t] += cm * (old[t] - new[t]);
            }
        }
    }

    /// Amplitude and latency of one (component, trial) pair. The amplitude is
    /// solved jointly for every candidate latency, so the current pair is
    /// always among the candidates.
    fn update_trial(&mut self, n: usize, r: usize, opts: &DvcaOptions) {
        let t_len = self.ensemble.samples() as i64;
        let c2: f64 = self.c.column(n).iter().map(|v| v * v).sum();
        if c2 == 0.0 {
            return;
        }
        let z = self.projected_partial(n, r);
        let s = &self.s[n];
        let mut prefix = vec![0.0; s.len() + 1];
        for (i, v) in s.iter().enumerate() {
            prefix[i + 1] = prefix[i] + v * v;
        }
        let current_alpha = self.alpha[(n, r)];
        let candidates: Vec<i64> = if opts.fix_latencies {
            vec![self.tau[(n, r)]]
        } else {
            let bound = opts.max_shift as i64;
            std::iter::once(0)
                .chain((1..=bound).flat_map(|k| [-k, k]))
                .collect()
        };
        let mut best: Option<(f64, f64, i64)> = None;
        for tau in candidates {
            let (lo, hi) = (tau.max(0), (t_len + tau).min(t_len));
            let mut xc = 0.0;
            for t in lo..hi {
                xc += z[t as usize] * s[(t - tau) as usize];
            }
            let energy = c2 * (prefix[(hi - tau) as usize] - prefix[(lo - tau) as usize]);
            let alpha = if opts.fix_amplitudes || energy == 0.0 {
                current_alpha
            } else {
                (xc / energy).max(0.0)
            };
            let gain = 2.0 * alpha * xc - alpha * alpha * energy;
            if best.is_none_or(|(g, _, _)| gain > g) {
                best = Some((gain, alpha, tau));
            }
        }
        let (_, alpha, tau) = best.expect("at least one candidate latency");
        if alpha == current_alpha && tau == self.tau[(n, r)] {
            return;
        }
        self.alpha[(n, r)] = alpha;
        self.tau[(n, r)] = tau;
        let mut v = vec![0.0; t_len as usize];
        add_shifted(&mut v, s, tau, alpha);
        self.replace_component(n, r, v);
    }

    /// Least-squares waveshape of component `n` from back-shifted residuals.
    fn update_waveshape(&mut self, n: usize) {
        let (_, _, r_tr, t_len) = self.dims();
        let c2: f64 = self.c.column(n).iter().map(|v| v * v).sum();
        if c2 == 0.0 {
            return;
        }
        let mut num = vec![0.0; t_len];
        let mut den = vec![0.0; t_len];
        for r in 0..r_tr {
            let alpha = self.alpha[(n, r)];
            if alpha == 0.0 {
                continue;
            }
            let z = self.projected_partial(n, r);
            let tau = self.tau[(n, r)];
            let back: Vec<f64> = {
                let mut b = vec![0.0; t_len];
                add_shifted(&mut b, &z, -tau, alpha);
                b
            };
            let lo = (-tau).max(0) as usize;
            let hi = (t_len as i64 - tau).min(t_len as i64) as usize;
            for u in 0..t_len {
                num[u] += back[u];
                if u >= lo && u < hi {
                    den[u] += c2 * alpha * alpha;
                }
            }
        }
        self.s[n] = num
            .iter()
            .zip(&den)
            .map(|(a, b)| if *b > 0.0 { a / b } else { 0.0 })
            .collect();
        for r in 0..r_tr {
            let mut v = vec![0.0; t_len];
            add_shifted(&mut v, &self.s[n], self.tau[(n, r)], self.alpha[(n, r)]);
            self.replace_component(n, r, v);
        }
    }

    /// Least-squares coupling, one detector row at a time.
    fn update_coupling(&mut self) {
        let (n_comp, m_det, r_tr, _) = self.dims();
        let mut gram = DMatrix::zeros(n_comp, n_comp);
        for a in 0..n_comp {
            for b in a..n_comp {
                let mut v = 0.0;
                for r in 0..r_tr {
                    v += dot(&self.comp[a * r_tr + r], &self.comp[b * r_tr + r]);
                }
                gram[(a, b)] = v;
                gram[(b, a)] = v;
            }
        }
        let max_diag = gram.diagonal().max();
        if max_diag <= 0.0 {
            return;
        }
        let svd = gram.clone().svd(true, true);
        let tol = 1e-12 * svd.singular_values.max();
        let rank = svd.singular_values.iter().filter(|&&v| v > tol).count();
        if rank < n_comp {
            let msg =
                format!("component model is rank deficient ({rank} of {n_comp}); coupling is not unique");
            if !self.warnings.contains(&msg) {
                log::warn!("{msg}");
                self.warnings.push(msg);
            }
        }
        for m in 0..m_det {
            let b = nalgebra::DVector::from_fn(n_comp, |n, _| {
                (0..r_tr)
                    .map(|r| dot(self.ensemble.trial(m, r), &self.comp[n * r_tr + r]))
                    .sum()
            });
            if let Ok(row) = svd.solve(&b, tol) {
                for n in 0..n_comp {
                    self.c[(m, n)] = row[n];
                }
            }
        }
        self.refresh();
    }

    fn sweep(&mut self, opts: &DvcaOptions) {
        let (n_comp, _, r_tr, _) = self.dims();
        if !(opts.fix_amplitudes && opts.fix_latencies) {
            for n in 0..n_comp {
                for r in 0..r_tr {
                    self.update_trial(n, r, opts);
                }
            }
        }
        for n in 0..n_comp {
            self.update_waveshape(n);
        }
        self.update_coupling();
        if !opts.fix_latencies {
            for n in 0..n_comp {
                self.recenter(n, opts.max_shift);
            }
        }
    }

    /// Moves the mean latency of component `n` into the waveshape, keeping
    /// the move only if the re-solved waveshape fits no worse.
    fn recenter(&mut self, n: usize, max_shift: usize) {
        let (_, _, r_tr, t_len) = self.dims();
        let k = centering_offset(self.tau.row(n).iter().copied());
        let bound = max_shift as i64;
        if k == 0 || self.tau.row(n).iter().any(|&tau| (tau - k).abs() > bound) {
            return;
        }
        let before = self.residual_power();
        let saved = (self.s[n].clone(), self.tau.clone(), self.resid.clone());
        let saved_comp: Vec<Vec<f64>> = (0..r_tr).map(|r| self.comp[n * r_tr + r].clone()).collect();
        let mut moved = vec![0.0; t_len];
        add_shifted(&mut moved, &self.s[n], k, 1.0);
        self.s[n] = moved;
        for r in 0..r_tr {
            self.tau[(n, r)] -= k;
        }
        self.update_waveshape(n);
        if self.residual_power() > before {
            self.s[n] = saved.0;
            self.tau = saved.1;
            self.resid = saved.2;
            for (r, c) in saved_comp.into_iter().enumerate() {
                self.comp[n * r_tr + r] = c;
            }
        }
    }

    fn to_estimate(&self, max_shift: usize) -> DvcaEstimate {
        let t_len = self.ensemble.samples();
        DvcaEstimate {
            waveshapes: DMatrix::from_fn(self.s.len(), t_len, |n, t| self.s[n][t]),
            coupling: self.c.clone(),
            amplitudes: self.alpha.clone(),
            latencies: self.tau.clone(),
            max_shift,
            residual_power: self.residual_power(),
            iterations: 0,
            residual_trace: Vec::new(),
            warnings: self.warnings.clone(),
        }
    }

    fn load(&mut self, est: &DvcaEstimate) {
        self.s = (0..est.components())
            .map(|n| est.waveshapes.row(n).iter().copied().collect())
            .collect();
        self.c = est.coupling.clone();
        self.alpha = est.amplitudes.clone();
        self.tau = est.latencies.clone();
        self.refresh();
    }
}

/// Mean latency rounded half toward zero, so a re-centered row maps to 0.
fn centering_offset(taus: impl Iterator<Item = i64>) -> i64 {
    let (sum, count) = taus.fold((0i64, 0usize), |(s, c), t| (s + t, c + 1));
    if count == 0 {
        return 0;
    }
    let mean = sum as f64 / count as f64;
    (mean.signum() * (mean.abs() - 0.5).ceil()) as i64
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Right singular vectors of the stacked `(M·R) × T` trial matrix.
fn trial_basis(ensemble: &TrialEnsemble, count: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let (m_det, r_tr, t_len) = (ensemble.detectors(), ensemble.trials(), ensemble.samples());
    let stacked = DMatrix::from_fn(m_det * r_tr, t_len, |i, t| ensemble.trial(i / r_tr, i % r_tr)[t]);
    let svd = stacked.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let rows = order
        .iter()
        .take(count)
        .map(|&k| v_t.row(k).iter().copied().collect())
        .collect();
    let values = order.iter().map(|&k| svd.singular_values[k]).collect();
    (rows, values)
}

/// Alternating least-squares fit of the `n_components`-component trial model.
pub fn dvca_fit(ensemble: &TrialEnsemble, n_components: usize, opts: &DvcaOptions) -> Result<DvcaEstimate> {
    let (m_det, r_tr, t_len) = (ensemble.detectors(), ensemble.trials(), ensemble.samples());
    if n_components == 0 {
        return Err(Error::parameter("need at least one component"));
    }
    if m_det == 0 || r_tr == 0 || t_len == 0 {
        return Err(Error::parameter("cannot fit an empty ensemble"));
    }
    if 4 * opts.max_shift >= t_len {
        return Err(Error::parameter(format!(
            "shift bound {} must be below T/4 = {}",
            opts.max_shift,
            t_len as f64 / 4.0
        )));
    }
    if !(opts.tolerance >= 0.0) {
        return Err(Error::parameter("tolerance must be nonnegative"));
    }

    let pool = (n_components + 2).min(t_len).min(m_det * r_tr);
    let (basis, singular) = trial_basis(ensemble, pool);
    let mut warnings = Vec::new();
    let top = singular.first().copied().unwrap_or(0.0);
    let support = singular.iter().filter(|&&v| v > 1e-10 * top).count();
    if support < n_components {
        let msg = format!("data support rank {support} is below the requested {n_components} components");
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let mut best: Option<DvcaEstimate> = None;
    for attempt in 0..=opts.restarts {
        let init = initial_waveshapes(&basis, n_components, t_len, attempt, opts.seed);
        let est = fit_from(ensemble, init, opts);
        if best
            .as_ref()
            .is_none_or(|b| est.residual_power < b.residual_power)
        {
            best = Some(est);
        }
    }
    let mut est = best.expect("at least one attempt");
    for w in warnings.into_iter().rev() {
        est.warnings.insert(0, w);
    }
    Ok(est)
}

fn initial_waveshapes(
    basis: &[Vec<f64>],
    n_components: usize,
    t_len: usize,
    attempt: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let k = basis.len();
    let mut out = Vec::with_capacity(n_components);
    if attempt == 0 {
        for n in 0..n_components {
            out.push(basis.get(n).cloned().unwrap_or_else(|| vec![0.0; t_len]));
        }
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64));
    for _ in 0..n_components {
        let mut v = vec![0.0; t_len];
        for b in basis.iter().take(k) {
            let w: f64 = StandardNormal.sample(&mut rng);
            for (a, x) in v.iter_mut().zip(b) {
                *a += w * x;
            }
        }
        out.push(v);
    }
    out
}

fn fit_from(ensemble: &TrialEnsemble, init: Vec<Vec<f64>>, opts: &DvcaOptions) -> DvcaEstimate {
    let mut fit = Fit::new(ensemble, init);
    fit.update_coupling();
    let mut current = fit.to_estimate(opts.max_shift).normalized();
    fit.load(&current);
    let mut prev = fit.residual_power();
    let mut trace = vec![prev];
    let mut iterations = 0;
    for _ in 0..opts.max_sweeps {
        fit.sweep(opts);
        let candidate = fit.to_estimate(opts.max_shift).normalized();
        fit.load(&candidate);
        let value = fit.residual_power();
        if value > prev {
            fit.load(&current);
            break;
        }
        iterations += 1;
        trace.push(value);
        current = candidate;
        let decrease = prev - value;
        prev = value;
        if decrease <= opts.tolerance * value.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let mut est = fit.to_estimate(opts.max_shift);
    est.waveshapes = current.waveshapes;
    est.coupling = current.coupling;
    est.amplitudes = current.amplitudes;
    est.latencies = current.latencies;
    est.residual_power = prev;
    est.iterations = iterations;
    est.residual_trace = trace;
    est
}

/// Comparison of a fitted model against planted truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DvcaEvaluation {
    /// `permutation[k]` is the estimated component matched to true component `k`.
    pub permutation: Vec<usize>,
    /// Waveshape correlation after undoing the latency offset.
    pub waveshape_correlations: Vec<f64>,
    /// Pearson correlation of per-trial amplitudes.
    pub amplitude_correlations: Vec<f64>,
    /// Integer offset between estimated and true latencies, per component.
    pub latency_offsets: Vec<i64>,
    /// Fraction of trials with latency error of at most one sample.
    pub latency_accuracy: f64,
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return if saa == sbb { 1.0 } else { 0.0 };
    }
    sab / (saa * sbb).sqrt()
}

/// Most frequent difference, ties to the smallest magnitude then negative.
fn modal_offset(diffs: &[i64]) -> i64 {
    let mut counts = std::collections::BTreeMap::new();
    for d in diffs {
        *counts.entry(*d).or_insert(0usize) += 1;
    }
    counts
        .into_iter()
        .max_by(|(da, ca), (db, cb)| ca.cmp(cb).then(db.abs().cmp(&da.abs())).then(db.cmp(da)))
        .map(|(d, _)| d)
        .unwrap_or(0)
}

/// Matches components by waveshape correlation, then scores amplitudes and
/// latencies. Latencies are only identifiable up to a common per-component
/// offset, which is removed before counting.
pub fn evaluate(estimate: &DvcaEstimate, truth: &TrialTruth) -> Result<DvcaEvaluation> {
    if estimate.waveshapes.shape() != truth.waveshapes.shape()
        || estimate.amplitudes.shape() != truth.amplitudes.shape()
    {
        return Err(Error::dimension("estimate and truth shapes differ"));
    }
    let matched = match_components(&estimate.waveshapes, &truth.waveshapes)?;
    let t_len = truth.waveshapes.ncols();
    let r_tr = truth.amplitudes.ncols();
    let mut eval = DvcaEvaluation {
        permutation: matched.permutation.clone(),
        waveshape_correlations: Vec::new(),
        amplitude_correlations: Vec::new(),
        latency_offsets: Vec::new(),
        latency_accuracy: 0.0,
    };
    let mut hits = 0usize;
    for (k, &j) in matched.permutation.iter().enumerate() {
        let diffs: Vec<i64> = (0..r_tr)
            .map(|r| estimate.latencies[(j, r)] - truth.latencies[(k, r)])
            .collect();
        let offset = modal_offset(&diffs);
        hits += diffs.iter().filter(|d| (**d - offset).abs() <= 1).count();
        let est_row: Vec<f64> = estimate.waveshapes.row(j).iter().copied().collect();
        let mut aligned = vec![0.0; t_len];
        add_shifted(&mut aligned, &est_row, offset, 1.0);
        let true_row: Vec<f64> = truth.waveshapes.row(k).iter().copied().collect();
        eval.waveshape_correlations
            .push(waveform_correlation(&aligned, &true_row).abs());
        let ea: Vec<f64> = estimate.amplitudes.row(j).iter().copied().collect();
        let ta: Vec<f64> = truth.amplitudes.row(k).iter().copied().collect();
        eval.amplitude_correlations.push(pearson(&ea, &ta));
        eval.latency_offsets.push(offset);
    }
    eval.latency_accuracy = hits as f64 / (r_tr * matched.permutation.len()) as f64;
    Ok(eval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signalgen::{gen_trial_ensemble, random_trial_parameters, render_waveshapes, Waveshape};

    fn bump(center: f64, width: f64) -> Waveshape {
        Waveshape::GaussianBump {
            center,
            width,
            amplitude: 1.0,
        }
    }

    #[test]
    fn average_of_identical_trials() {
        let row = DMatrix::from_fn(5, 7, |_, t| t as f64 * 0.5 - 1.0);
        let ens = TrialEnsemble::from_detector_matrices(&[row.clone()]).unwrap();
        let avg = average_trials(&ens).unwrap();
        for t in 0..7 {
            assert_eq!(avg[(0, t)], row[(0, t)]);
        }
    }

    #[test]
    fn modal_offset_ties() {
        assert_eq!(modal_offset(&[2, 2, -1, -1, 1, 1]), -1);
        assert_eq!(modal_offset(&[3, 3, 0]), 3);
    }

    #[test]
    fn normalization_is_idempotent() {
        let s = render_waveshapes(&[bump(40.0, 5.0), bump(60.0, 8.0)], 128).unwrap();
        let (alpha, tau) = random_trial_parameters(2, 9, (0.5, 2.0), 6, 3).unwrap();
        let mut tau = tau;
        tau.row_mut(0).add_scalar_mut(3);
        tau = tau.map(|v| v.clamp(-6, 6));
        let truth = TrialTruth {
            waveshapes: s * 3.0,
            coupling: DMatrix::from_row_slice(2, 2, &[1.0, 0.3, -0.4, 2.0]),
            amplitudes: alpha,
            latencies: tau,
            noise_sigma: 0.0,
            max_shift: 6,
        };
        let once = DvcaEstimate::from_truth(&truth).normalized();
        let twice = once.normalized();
        assert_eq!(once.latencies, twice.latencies);
        assert!((&once.waveshapes - &twice.waveshapes).amax() < 1e-12);
        assert!((&once.coupling - &twice.coupling).amax() < 1e-12);
        assert!((&once.amplitudes - &twice.amplitudes).amax() < 1e-12);
        for n in 0..2 {
            assert!((once.waveshapes.row(n).norm() - 1.0).abs() < 1e-12);
            assert!((once.amplitudes.row(n).mean() - 1.0).abs() < 1e-12);
            let mean_tau = once.latencies.row(n).iter().sum::<i64>() as f64 / 9.0;
            let k = mean_tau.round() as i64;
            let blocked = once.latencies.row(n).iter().any(|t| (t - k).abs() > 6);
            assert!(mean_tau.abs() <= 0.5 || blocked);
        }
    }

    #[test]
    fn fixed_single_component_reduces_to_average() {
        let s = render_waveshapes(&[bump(30.0, 6.0)], 64).unwrap();
        let (alpha, tau) = random_trial_parameters(1, 12, (0.5, 1.5), 4, 11).unwrap();
        let c = DMatrix::from_element(1, 1, 1.5);
        let ens = gen_trial_ensemble(&s, &c, &alpha, &tau, 4, 0.2, 5).unwrap();
        let mut opts = DvcaOptions::new(4);
        opts.fix_amplitudes = true;
        opts.fix_latencies = true;
        let est = dvca_fit(&ens, 1, &opts).unwrap();
        let avg = average_trials(&ens).unwrap();
        let model = est.predict_trial(0, 0);
        for t in 0..64 {
            assert!((model[t] - avg[(0, t)]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_wide_shift_window() {
        let s = render_waveshapes(&[bump(10.0, 2.0)], 20).unwrap();
        let ens = gen_trial_ensemble(
            &s,
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 3, 1.0),
            &DMatrix::zeros(1, 3),
            0,
            0.0,
            0,
        )
        .unwrap();
        assert!(dvca_fit(&ens, 1, &DvcaOptions::new(5)).is_err());
        assert!(dvca_fit(&ens, 0, &DvcaOptions::new(1)).is_err());
    }
}
