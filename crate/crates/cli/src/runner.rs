//! Stage execution.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use infosep::dvca::{average_trials, dvca_fit, evaluate};
use infosep::localization::{gain_matrix, localize, GeometryConfig, Point};
use infosep::metrics::{build_report, match_components, RunArtifacts, RunKind};
use infosep::propagation::{
    compare_with_histogram, l1_tolerance, monte_carlo_mixing_samples, BallPrior, HistogramComparison,
    MIN_VALIDATION_SAMPLES,
};
use infosep::separation::{separate, StopReason};
use infosep::signalgen::{
    gen_sources, gen_trial_ensemble, mix, random_mixing, random_trial_parameters, render_waveshapes,
    SourceSpec, TrialEnsemble,
};
use infosep::{MixingMatrix, RecordingMatrix};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::artifacts::{OutputDir, ERROR_NAME};
use crate::config::{
    derive_seed, AverageStage, DvcaStage, ExperimentConfig, Input, LocalizeStage, MixingSpec, SeparateStage,
    SimulateGeometryStage, SimulateStage, SimulateTrialsStage, Stage, ValidatePriorStage,
};
use crate::error::{CliError, Result, EXIT_CHECK_FAILED};
use crate::io::{ensemble_files, matrix_to_csv, read_ensemble, read_matrix, trace_to_csv};

/// Data a stage hands to later stages.
#[derive(Debug, Clone)]
enum Produced {
    Recordings {
        x: DMatrix<f64>,
        sources: DMatrix<f64>,
        mixing: DMatrix<f64>,
        geometry: Option<GeometryConfig>,
        positions: Option<Vec<Point>>,
    },
    Ensemble(TrialEnsemble),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub status: u8,
    pub output_dir: PathBuf,
    /// Stage that failed and the error message, if any.
    pub failure: Option<(String, String)>,
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    stage: &'a str,
    kind: &'a str,
    category: &'a str,
    exit_code: u8,
    message: String,
}

struct Ctx<'a> {
    out: &'a mut OutputDir,
    stage: &'a str,
    seed: u64,
    produced: &'a HashMap<String, Produced>,
}

impl Ctx<'_> {
    fn write(&mut self, file: &str, bytes: &[u8]) -> Result<String> {
        let rel = format!("{}/{file}", self.stage);
        self.out.write(&rel, bytes)?;
        Ok(rel)
    }

    fn upstream(&self, name: &str) -> &Produced {
        self.produced
            .get(name)
            .expect("config validation guarantees earlier stages")
    }

    fn ensemble(&self, input: &Input) -> Result<TrialEnsemble> {
        match input {
            Input::File(path) => read_ensemble(path),
            Input::Stage(name) => match self.upstream(name) {
                Produced::Ensemble(e) => Ok(e.clone()),
                Produced::Recordings { .. } => unreachable!("validated input kind"),
            },
        }
    }
}

struct StageResult {
    artifacts: RunArtifacts,
    produced: Option<Produced>,
    check_failed: bool,
}

impl StageResult {
    fn new(artifacts: RunArtifacts) -> Self {
        Self {
            artifacts,
            produced: None,
            check_failed: false,
        }
    }
}

/// Runs every stage in order inside the configured output directory.
///
/// Errors before the first stage (lock, directory creation) are returned as
/// `Err`; a stage failure leaves its partial artifacts, an error record and
/// the manifest, and is reported through the outcome's status.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let mut out = OutputDir::acquire(&cfg.output_dir)?;
    let mut produced: HashMap<String, Produced> = HashMap::new();
    let mut status = 0;
    for (i, stage) in cfg.stages.iter().enumerate() {
        log::info!("stage {} ({})", stage.name(), stage.kind());
        let mut ctx = Ctx {
            out: &mut out,
            stage: stage.name(),
            seed: cfg.stage_seed(i),
            produced: &produced,
        };
        let result = run_stage(stage, &mut ctx).and_then(|r| {
            let report = build_report(&r.artifacts)?;
            ctx.write("report.json", report.to_json()?.as_bytes())?;
            ctx.write("summary.txt", report.summary().as_bytes())?;
            log::info!("{}", report.summary().trim_end());
            Ok(r)
        });
        match result {
            Ok(r) => {
                if r.check_failed {
                    status = EXIT_CHECK_FAILED;
                }
                if let Some(p) = r.produced {
                    produced.insert(stage.name().to_string(), p);
                }
            }
            Err(e) => {
                let record = ErrorRecord {
                    stage: stage.name(),
                    kind: stage.kind(),
                    category: e.category(),
                    exit_code: e.exit_code(),
                    message: e.to_string(),
                };
                out.write_json(ERROR_NAME, &record)?;
                out.finish()?;
                return Ok(RunOutcome {
                    status: e.exit_code(),
                    output_dir: cfg.output_dir.clone(),
                    failure: Some((stage.name().to_string(), record.message)),
                });
            }
        }
    }
    out.finish()?;
    Ok(RunOutcome {
        status,
        output_dir: cfg.output_dir.clone(),
        failure: None,
    })
}

fn run_stage(stage: &Stage, ctx: &mut Ctx) -> Result<StageResult> {
    let mut result = match stage {
        Stage::Simulate(s) => simulate(s, ctx),
        Stage::SimulateTrials(s) => simulate_trials(s, ctx),
        Stage::SimulateGeometry(s) => simulate_geometry(s, ctx),
        Stage::Separate(s) => run_separate(s, ctx),
        Stage::Localize(s) => run_localize(s, ctx),
        Stage::Dvca(s) => run_dvca(s, ctx),
        Stage::Average(s) => run_average(s, ctx),
        Stage::ValidatePrior(s) => run_validate_prior(s, ctx),
    }?;
    result.artifacts.config = Some(serde_json::to_value(stage).expect("stage serializes"));
    Ok(result)
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::config(format!(
            "{what} must be a nonempty rectangular array"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Source specs with per-source seeds derived from the stage seed.
fn seeded_sources(specs: &[SourceSpec], seed: u64) -> Vec<SourceSpec> {
    specs
        .iter()
        .enumerate()
        .map(|(j, s)| SourceSpec::new(s.family, derive_seed(seed, j as u64).wrapping_add(s.seed)))
        .collect()
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    sv.max() / sv.min()
}

fn simulate(s: &SimulateStage, ctx: &mut Ctx) -> Result<StageResult> {
    let n = s.sources.len();
    let specs = seeded_sources(&s.sources, ctx.seed);
    let sources = gen_sources(&specs, s.samples)?;
    let a = match &s.mixing {
        MixingSpec::Matrix { rows } => MixingMatrix::new(rows_to_matrix(rows, "mixing rows")?)?,
        MixingSpec::Random { max_condition } => {
            random_mixing(n, *max_condition, derive_seed(ctx.seed, n as u64))?
        }
    };
    let x = mix(&a, &sources, s.noise_sigma, derive_seed(ctx.seed, n as u64 + 1))?;
    ctx.write("sources.csv", &matrix_to_csv(&sources))?;
    ctx.write("mixing.csv", &matrix_to_csv(&a))?;
    ctx.write("recordings.csv", &matrix_to_csv(&x))?;

    let mut art = RunArtifacts::new(RunKind::Simulation, ctx.stage);
    art.seed("stage", ctx.seed)
        .metric("sources", n as f64)
        .metric("detectors", a.nrows() as f64)
        .metric("samples", s.samples as f64)
        .metric("noise_sigma", s.noise_sigma)
        .metric("mixing_condition", condition_number(&a));
    for (j, spec) in specs.iter().enumerate() {
        art.seed(&format!("source_{j}"), spec.seed);
    }
    let mut result = StageResult::new(art);
    result.produced = Some(Produced::Recordings {
        x: x.into_inner(),
        sources: sources.into_inner(),
        mixing: a.into_inner(),
        geometry: None,
        positions: None,
    });
    Ok(result)
}

fn simulate_trials(s: &SimulateTrialsStage, ctx: &mut Ctx) -> Result<StageResult> {
    let shapes = render_waveshapes(&s.waveshapes, s.samples)?;
    let c = rows_to_matrix(&s.coupling, "coupling rows")?;
    let n = shapes.nrows();
    if c.ncols() != n {
        return Err(CliError::config(format!(
            "coupling has {} columns for {n} waveshapes",
            c.ncols()
        )));
    }
    let [lo, hi] = s.alpha_range;
    let (alpha, tau) = random_trial_parameters(n, s.trials, (lo, hi), s.max_shift, derive_seed(ctx.seed, 0))?;
    let clean = gen_trial_ensemble(&shapes, &c, &alpha, &tau, s.max_shift, 0.0, 0)?;
    let mut power = 0.0;
    for m in 0..clean.detectors() {
        for r in 0..clean.trials() {
            power += clean.trial(m, r).iter().map(|v| v * v).sum::<f64>();
        }
    }
    let rms = (power / (clean.detectors() * clean.trials() * clean.samples()) as f64).sqrt();
    let sigma = match (s.noise_sigma, s.snr) {
        (Some(sigma), _) => sigma,
        (None, Some(snr)) if snr > 0.0 && snr.is_finite() => rms / snr,
        (None, Some(snr)) => return Err(CliError::config(format!("snr must be positive, got {snr}"))),
        (None, None) => 0.0,
    };
    let noise_seed = derive_seed(ctx.seed, 1);
    let ens = gen_trial_ensemble(&shapes, &c, &alpha, &tau, s.max_shift, sigma, noise_seed)?;
    for (name, bytes) in ensemble_files(&ens, "ensemble.json") {
        ctx.write(&name, &bytes)?;
    }

    let mut art = RunArtifacts::new(RunKind::Simulation, ctx.stage);
    art.seed("stage", ctx.seed)
        .seed("noise", noise_seed)
        .metric("components", n as f64)
        .metric("detectors", ens.detectors() as f64)
        .metric("trials", ens.trials() as f64)
        .metric("samples", ens.samples() as f64)
        .metric("signal_rms", rms)
        .metric("noise_sigma", sigma);
    if sigma > 0.0 {
        art.metric("snr", rms / sigma);
    }
    let mut result = StageResult::new(art);
    result.produced = Some(Produced::Ensemble(ens));
    Ok(result)
}

#[derive(Serialize)]
struct PlantedSources<'a> {
    positions: &'a [Point],
    #[serde(skip_serializing_if = "Option::is_none")]
    orientations: Option<&'a [Point]>,
}

fn simulate_geometry(s: &SimulateGeometryStage, ctx: &mut Ctx) -> Result<StageResult> {
    s.geometry.validate()?;
    let n = s.positions.len();
    if s.sources.len() != n {
        return Err(CliError::config(format!(
            "{} source specs for {n} positions",
            s.sources.len()
        )));
    }
    if s.orientations.as_ref().is_some_and(|o| o.len() != n) {
        return Err(CliError::config("one orientation per position is required"));
    }
    let specs = seeded_sources(&s.sources, ctx.seed);
    let sources = gen_sources(&specs, s.samples)?;
    let gain = gain_matrix(&s.geometry, &s.positions, s.orientations.as_deref())?;
    let x = mix(
        &MixingMatrix::new(gain.clone())?,
        &sources,
        s.noise_sigma,
        derive_seed(ctx.seed, n as u64),
    )?;
    ctx.write("sources.csv", &matrix_to_csv(&sources))?;
    ctx.write("gain.csv", &matrix_to_csv(&gain))?;
    ctx.write("recordings.csv", &matrix_to_csv(&x))?;
    let rel = format!("{}/geometry.json", ctx.stage);
    ctx.out.write_json(&rel, &s.geometry)?;
    let rel = format!("{}/planted.json", ctx.stage);
    ctx.out.write_json(
        &rel,
        &PlantedSources {
            positions: &s.positions,
            orientations: s.orientations.as_deref(),
        },
    )?;

    let mut art = RunArtifacts::new(RunKind::Simulation, ctx.stage);
    art.seed("stage", ctx.seed)
        .metric("sources", n as f64)
        .metric("detectors", s.geometry.detector_count() as f64)
        .metric("samples", s.samples as f64)
        .metric("noise_sigma", s.noise_sigma);
    if s.geometry.detectors_collinear() {
        art.warnings.push("detectors are collinear".into());
    }
    let mut result = StageResult::new(art);
    result.produced = Some(Produced::Recordings {
        x: x.into_inner(),
        sources: sources.into_inner(),
        mixing: gain,
        geometry: Some(s.geometry.clone()),
        positions: Some(s.positions.clone()),
    });
    Ok(result)
}

fn run_separate(s: &SeparateStage, ctx: &mut Ctx) -> Result<StageResult> {
    let (x, truth_sources, truth_mixing) = match &s.input {
        Input::File(path) => (
            read_matrix(path)?,
            None,
            s.mixing.as_deref().map(read_matrix).transpose()?,
        ),
        Input::Stage(name) => match ctx.upstream(name) {
            Produced::Recordings {
                x, sources, mixing, ..
            } => (x.clone(), Some(sources.clone()), Some(mixing.clone())),
            Produced::Ensemble(_) => unreachable!("validated input kind"),
        },
    };
    let mut result = separate(&RecordingMatrix::new(x, 0.0)?, &s.config)?;
    ctx.write("w.csv", &matrix_to_csv(&result.w))?;
    ctx.write("unmixed.csv", &matrix_to_csv(&result.unmixed))?;
    let trace = &result.log_posterior_trace;
    let trace_path = ctx.write("trace.csv", &trace_to_csv("iteration", "log_posterior", trace))?;

    let mut art = RunArtifacts::new(RunKind::Separation, ctx.stage);
    art.metric("final_log_posterior", result.final_log_posterior())
        .metric("iterations", result.iterations as f64)
        .flag("converged", result.converged)
        .trace("log_posterior", &trace_path, trace);
    if result.stop_reason == StopReason::MaxIterations {
        art.warnings
            .push("iteration limit reached before convergence".into());
    }
    if let Some(a) = truth_mixing {
        let ai = result.evaluate_against(&a)?;
        art.metric("amari_index", ai);
        if let Some(src) = truth_sources.filter(|src| src.nrows() == result.unmixed.nrows()) {
            let mut comp = match_components(&result.unmixed, &src)?;
            comp.amari_index = Some(ai);
            art.components = Some(comp);
        }
    }
    Ok(StageResult::new(art))
}

/// Largest source-to-truth distance under the assignment minimizing the
/// summed distance (exhaustive for few sources, greedy otherwise).
fn position_error(est: &[Point], truth: &[Point]) -> f64 {
    let n = truth.len();
    let dist = |i: usize, j: usize| (est[j] - truth[i]).norm();
    fn permute(
        k: usize,
        used: &mut Vec<bool>,
        cur: &mut Vec<usize>,
        best: &mut (f64, Vec<usize>),
        cost: &dyn Fn(&[usize]) -> f64,
    ) {
        if k == used.len() {
            let c = cost(cur);
            if c < best.0 {
                *best = (c, cur.clone());
            }
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                permute(k + 1, used, cur, best, cost);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let assignment = if n <= infosep::metrics::EXHAUSTIVE_MATCH_LIMIT {
        let cost = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| dist(i, j)).sum::<f64>();
        let mut best = (f64::INFINITY, Vec::new());
        permute(0, &mut vec![false; n], &mut Vec::new(), &mut best, &cost);
        best.1
    } else {
        let mut used = vec![false; n];
        (0..n)
            .map(|i| {
                let j = (0..n)
                    .filter(|&j| !used[j])
                    .min_by(|&a, &b| dist(i, a).total_cmp(&dist(i, b)))
                    .expect("free estimate remains");
                used[j] = true;
                j
            })
            .collect()
    };
    assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| dist(i, j))
        .fold(0.0, f64::max)
}

#[derive(Serialize)]
struct EstimateFile<'a> {
    positions: &'a [Point],
    #[serde(skip_serializing_if = "Option::is_none")]
    orientations: Option<&'a [Point]>,
    chi_squared: f64,
    waveshapes: &'a str,
    warnings: &'a [String],
}

fn run_localize(s: &LocalizeStage, ctx: &mut Ctx) -> Result<StageResult> {
    let (x, geometry, truth) = match &s.input {
        Input::File(path) => (read_matrix(path)?, s.geometry.clone(), None),
        Input::Stage(name) => match ctx.upstream(name) {
            Produced::Recordings {
                x,
                sources,
                geometry,
                positions,
                ..
            } => (
                x.clone(),
                s.geometry.clone().or_else(|| geometry.clone()),
                positions.clone().map(|p| (p, sources.clone())),
            ),
            Produced::Ensemble(_) => unreachable!("validated input kind"),
        },
    };
    let geometry = geometry.expect("config validation guarantees a geometry");
    let est = localize(&x, &geometry, s.sources, &s.options)?;
    let residual = &x - est.predict(&geometry)?;
    let shapes = ctx.write("waveshapes.csv", &matrix_to_csv(&est.waveshapes))?;
    ctx.write("residual.csv", &matrix_to_csv(&residual))?;
    let rel = format!("{}/estimate.json", ctx.stage);
    ctx.out.write_json(
        &rel,
        &EstimateFile {
            positions: &est.positions,
            orientations: est.orientations.as_deref(),
            chi_squared: est.chi_squared,
            waveshapes: &shapes,
            warnings: &est.warnings,
        },
    )?;

    let mut art = RunArtifacts::new(RunKind::Localization, ctx.stage);
    art.seed("tie_break", s.options.seed)
        .metric("chi_squared", est.chi_squared)
        .metric("sources", est.sources() as f64);
    art.warnings = est.warnings.clone();
    if let Some((positions, sources)) = truth.filter(|(p, _)| p.len() == est.sources()) {
        let err = position_error(&est.positions, &positions);
        art.metric("position_error", err);
        let mut comp = match_components(&est.waveshapes, &sources)?;
        comp.position_error = Some(err);
        art.components = Some(comp);
    }
    Ok(StageResult::new(art))
}

fn run_dvca(s: &DvcaStage, ctx: &mut Ctx) -> Result<StageResult> {
    let ens = ctx.ensemble(&s.input)?;
    let est = dvca_fit(&ens, s.components, &s.options)?;
    ctx.write("waveshapes.csv", &matrix_to_csv(&est.waveshapes))?;
    ctx.write("coupling.csv", &matrix_to_csv(&est.coupling))?;
    ctx.write("amplitudes.csv", &matrix_to_csv(&est.amplitudes))?;
    ctx.write("latencies.csv", &matrix_to_csv(&est.latencies))?;
    let trace = &est.residual_trace;
    let trace_path = ctx.write(
        "residual_trace.csv",
        &trace_to_csv("sweep", "residual_power", trace),
    )?;

    let mut art = RunArtifacts::new(RunKind::Dvca, ctx.stage);
    art.seed("restarts", s.options.seed)
        .metric("residual_power", est.residual_power)
        .metric("sweeps", est.iterations as f64)
        .flag("monotone_residual", trace.windows(2).all(|w| w[1] <= w[0]))
        .trace("residual_power", &trace_path, trace);
    art.warnings = est.warnings.clone();
    if let Some(truth) = ens.truth().filter(|t| t.waveshapes.nrows() == s.components) {
        let eval = evaluate(&est, truth)?;
        art.metric("latency_accuracy", eval.latency_accuracy);
        for (k, ((w, a), off)) in eval
            .waveshape_correlations
            .iter()
            .zip(&eval.amplitude_correlations)
            .zip(&eval.latency_offsets)
            .enumerate()
        {
            art.metric(&format!("waveshape_correlation_{k}"), *w)
                .metric(&format!("amplitude_correlation_{k}"), *a)
                .metric(&format!("latency_offset_{k}"), *off as f64);
        }
        let mut comp = match_components(&est.waveshapes, &truth.waveshapes)?;
        comp.permutation = eval.permutation.clone();
        comp.correlations = eval.waveshape_correlations.clone();
        comp.residual_power = Some(est.residual_power);
        art.components = Some(comp);
    }
    Ok(StageResult::new(art))
}

fn run_average(s: &AverageStage, ctx: &mut Ctx) -> Result<StageResult> {
    let ens = ctx.ensemble(&s.input)?;
    let avg = average_trials(&ens)?;
    ctx.write("average.csv", &matrix_to_csv(&avg))?;
    let mut residual = 0.0;
    for m in 0..ens.detectors() {
        for r in 0..ens.trials() {
            residual += ens
                .trial(m, r)
                .iter()
                .zip(avg.row(m).iter())
                .map(|(x, a)| (x - a).powi(2))
                .sum::<f64>();
        }
    }
    let mut art = RunArtifacts::new(RunKind::Average, ctx.stage);
    art.metric("detectors", ens.detectors() as f64)
        .metric("trials", ens.trials() as f64)
        .metric("samples", ens.samples() as f64)
        .metric("residual_power", residual);
    Ok(StageResult::new(art))
}

/// Outcome of comparing Monte Carlo mixing coefficients with the analytic
/// prior.
#[derive(Debug, Clone)]
pub struct PriorValidation {
    pub comparison: HistogramComparison,
    pub tolerance: f64,
    pub passed: bool,
}

/// Histograms `samples` Monte Carlo draws into `bins` equal-probability bins
/// and checks the L1 distance against the sample-size dependent tolerance.
pub fn validate_prior(prior: &BallPrior, samples: usize, bins: usize, seed: u64) -> Result<PriorValidation> {
    if samples < MIN_VALIDATION_SAMPLES {
        return Err(CliError::config(format!(
            "prior validation needs at least {MIN_VALIDATION_SAMPLES} samples, got {samples}"
        )));
    }
    let draws = monte_carlo_mixing_samples(prior, samples, seed)?;
    let comparison = compare_with_histogram(prior, &draws, bins)?;
    let tolerance = l1_tolerance(samples);
    Ok(PriorValidation {
        passed: comparison.l1 < tolerance,
        comparison,
        tolerance,
    })
}

fn run_validate_prior(s: &ValidatePriorStage, ctx: &mut Ctx) -> Result<StageResult> {
    let prior = BallPrior::with_min_radius(s.radius, s.min_radius)?;
    let v = validate_prior(&prior, s.samples, s.bins, ctx.seed)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for bin in &v.comparison.bins {
        w.serialize(bin).expect("writing to memory");
    }
    ctx.write("histogram.csv", &w.into_inner().expect("writing to memory"))?;

    let mut art = RunArtifacts::new(RunKind::PriorValidation, ctx.stage);
    art.seed("stage", ctx.seed)
        .metric("l1", v.comparison.l1)
        .metric("l1_tolerance", v.tolerance)
        .metric("samples", s.samples as f64)
        .metric("radius", s.radius)
        .flag("pass", v.passed);
    let mut result = StageResult::new(art);
    result.check_failed = !v.passed;
    Ok(result)
}

/// Reads a config document without interpreting it.
pub fn load_config(path: &Path) -> Result<serde_json::Value> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}
