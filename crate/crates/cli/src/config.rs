//! Experiment configuration: a versioned JSON document listing stages.

use std::collections::HashMap;
use std::path::PathBuf;

use infosep::densities::AmplitudeDensity;
use infosep::dvca::DvcaOptions;
use infosep::localization::{GeometryConfig, LocalizeOptions, Point};
use infosep::separation::SeparationConfig;
use infosep::signalgen::{SourceSpec, Waveshape};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub stages: Vec<Stage>,
}

/// Where a stage reads its data: an earlier stage's output or a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum Input {
    Stage(String),
    File(PathBuf),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Stage {
    Simulate(SimulateStage),
    SimulateTrials(SimulateTrialsStage),
    SimulateGeometry(SimulateGeometryStage),
    Separate(SeparateStage),
    Localize(LocalizeStage),
    Dvca(DvcaStage),
    Average(AverageStage),
    ValidatePrior(ValidatePriorStage),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MixingSpec {
    /// Explicit rows.
    Matrix { rows: Vec<Vec<f64>> },
    /// Random square matrix with bounded condition number.
    Random { max_condition: f64 },
}

/// Instantaneous mixture `X = A S + noise`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateStage {
    pub name: String,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Source seeds are offsets added to a seed derived from the stage seed.
    pub sources: Vec<SourceSpec>,
    pub samples: usize,
    pub mixing: MixingSpec,
    #[serde(default)]
    pub noise_sigma: f64,
}

/// Trial ensemble with per-trial amplitudes and latencies.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateTrialsStage {
    pub name: String,
    #[serde(default)]
    pub seed: Option<u64>,
    pub waveshapes: Vec<Waveshape>,
    pub samples: usize,
    /// `M × N` coupling rows.
    pub coupling: Vec<Vec<f64>>,
    pub trials: usize,
    pub alpha_range: [f64; 2],
    pub max_shift: usize,
    /// Absolute noise level; exclusive with `snr`.
    #[serde(default)]
    pub noise_sigma: Option<f64>,
    /// Ratio of clean-signal RMS to noise sigma.
    #[serde(default)]
    pub snr: Option<f64>,
}

/// Recordings of planted sources through a forward model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateGeometryStage {
    pub name: String,
    #[serde(default)]
    pub seed: Option<u64>,
    pub geometry: GeometryConfig,
    pub positions: Vec<Point>,
    #[serde(default)]
    pub orientations: Option<Vec<Point>>,
    pub sources: Vec<SourceSpec>,
    pub samples: usize,
    #[serde(default)]
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparateStage {
    pub name: String,
    pub input: Input,
    /// True mixing matrix for scoring when the input is a file.
    #[serde(default)]
    pub mixing: Option<PathBuf>,
    #[serde(default)]
    pub config: SeparationConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizeStage {
    pub name: String,
    pub input: Input,
    /// Required unless the input stage carries its own geometry.
    #[serde(default)]
    pub geometry: Option<GeometryConfig>,
    pub sources: usize,
    #[serde(default)]
    pub options: LocalizeOptions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DvcaStage {
    pub name: String,
    pub input: Input,
    pub components: usize,
    pub options: DvcaOptions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AverageStage {
    pub name: String,
    pub input: Input,
}

fn default_bins() -> usize {
    100
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidatePriorStage {
    pub name: String,
    #[serde(default)]
    pub seed: Option<u64>,
    pub radius: f64,
    #[serde(default)]
    pub min_radius: f64,
    pub samples: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

/// What a stage leaves behind for later stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Produces {
    Recordings,
    GeometryRecordings,
    Ensemble,
    Nothing,
}

impl Stage {
    pub fn name(&self) -> &str {
        match self {
            Stage::Simulate(s) => &s.name,
            Stage::SimulateTrials(s) => &s.name,
            Stage::SimulateGeometry(s) => &s.name,
            Stage::Separate(s) => &s.name,
            Stage::Localize(s) => &s.name,
            Stage::Dvca(s) => &s.name,
            Stage::Average(s) => &s.name,
            Stage::ValidatePrior(s) => &s.name,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Stage::Simulate(_) => "simulate",
            Stage::SimulateTrials(_) => "simulate-trials",
            Stage::SimulateGeometry(_) => "simulate-geometry",
            Stage::Separate(_) => "separate",
            Stage::Localize(_) => "localize",
            Stage::Dvca(_) => "dvca",
            Stage::Average(_) => "average",
            Stage::ValidatePrior(_) => "validate-prior",
        }
    }

    fn explicit_seed(&self) -> Option<u64> {
        match self {
            Stage::Simulate(s) => s.seed,
            Stage::SimulateTrials(s) => s.seed,
            Stage::SimulateGeometry(s) => s.seed,
            Stage::ValidatePrior(s) => s.seed,
            _ => None,
        }
    }

    fn input(&self) -> Option<&Input> {
        match self {
            Stage::Separate(s) => Some(&s.input),
            Stage::Localize(s) => Some(&s.input),
            Stage::Dvca(s) => Some(&s.input),
            Stage::Average(s) => Some(&s.input),
            _ => None,
        }
    }

    pub fn produces(&self) -> Produces {
        match self {
            Stage::Simulate(_) => Produces::Recordings,
            Stage::SimulateGeometry(_) => Produces::GeometryRecordings,
            Stage::SimulateTrials(_) => Produces::Ensemble,
            _ => Produces::Nothing,
        }
    }

    fn accepts(&self, p: Produces) -> bool {
        match self {
            Stage::Separate(_) => matches!(p, Produces::Recordings | Produces::GeometryRecordings),
            Stage::Localize(_) => matches!(p, Produces::Recordings | Produces::GeometryRecordings),
            Stage::Dvca(_) | Stage::Average(_) => p == Produces::Ensemble,
            _ => false,
        }
    }
}

/// Independent seed for `index` drawn from the stream of `base`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index);
    rng.next_u64()
}

impl ExperimentConfig {
    /// Parses a config document, rejecting unknown keys.
    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: Self = serde_json::from_value(value).map_err(|e| CliError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::config(format!(
                "unsupported config version {}, expected {CONFIG_VERSION}",
                self.version
            )));
        }
        let mut earlier: HashMap<&str, Produces> = HashMap::new();
        for stage in &self.stages {
            let name = stage.name();
            let valid_name = !name.is_empty()
                && name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
            if !valid_name {
                return Err(CliError::config(format!(
                    "stage name {name:?} must be nonempty and use only letters, digits, '-' and '_'"
                )));
            }
            if earlier.contains_key(name) {
                return Err(CliError::config(format!("duplicate stage name {name:?}")));
            }
            if let Some(Input::Stage(src)) = stage.input() {
                match earlier.get(src.as_str()) {
                    None => {
                        return Err(CliError::config(format!(
                            "stage {name:?} reads {src:?}, which is not an earlier stage"
                        )))
                    }
                    Some(p) if !stage.accepts(*p) => {
                        return Err(CliError::config(format!(
                            "stage {name:?} ({}) cannot read the output of {src:?}",
                            stage.kind()
                        )))
                    }
                    _ => {}
                }
            }
            if let Stage::Localize(l) = stage {
                let has_geometry = matches!(
                    l.input,
                    Input::Stage(ref s) if earlier.get(s.as_str()) == Some(&Produces::GeometryRecordings)
                );
                if l.geometry.is_none() && !has_geometry {
                    return Err(CliError::config(format!("stage {name:?} needs a geometry")));
                }
            }
            if let Stage::SimulateTrials(t) = stage {
                if t.noise_sigma.is_some() && t.snr.is_some() {
                    return Err(CliError::config(format!(
                        "stage {name:?} sets both noise_sigma and snr"
                    )));
                }
            }
            earlier.insert(name, stage.produces());
        }
        Ok(())
    }

    /// Seed for stage `index`: its own `seed` if given, else derived from
    /// the global seed.
    pub fn stage_seed(&self, index: usize) -> u64 {
        self.stages[index]
            .explicit_seed()
            .unwrap_or_else(|| derive_seed(self.seed, index as u64))
    }
}

/// Sets `path` (dot-separated keys, numeric segments index arrays) to
/// `value`, parsed as JSON when possible and as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::config(format!("bad override path {path:?}")));
    }
    let mut node = doc;
    for (depth, key) in keys.iter().enumerate() {
        let last = depth + 1 == keys.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(key.to_string(), value);
                    return Ok(());
                }
                map.entry(key.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = key
                    .parse()
                    .map_err(|_| CliError::config(format!("{path:?}: {key:?} is not an index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| CliError::config(format!("{path:?}: index {idx} out of {len}")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(CliError::config(format!(
                    "{path:?}: cannot descend into a scalar at {key:?}"
                )))
            }
        };
    }
    unreachable!("loop returns on the last key")
}

/// Parses the command-line density syntax into its config form.
pub fn density_value(text: &str) -> Result<Value> {
    let d: AmplitudeDensity = text
        .parse()
        .map_err(|e: infosep::Error| CliError::config(e.to_string()))?;
    Ok(serde_json::to_value(d).expect("density serializes"))
}
