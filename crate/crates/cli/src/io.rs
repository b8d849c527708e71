//! On-disk formats: matrices as CSV with a `rows,cols` first line, trial
//! ensembles as one CSV per detector plus a JSON manifest.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use infosep::signalgen::{TrialEnsemble, TrialTruth};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Encodes a matrix. Values use the shortest representation that parses back
/// to the same `f64`.
pub fn matrix_to_csv<T: Display + nalgebra::Scalar>(m: &DMatrix<T>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    w.write_record([m.nrows().to_string(), m.ncols().to_string()])
        .expect("writing to memory");
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))
            .expect("writing to memory");
    }
    w.into_inner().expect("writing to memory")
}

/// Decodes a matrix, checking the declared shape against the data.
pub fn matrix_from_csv<T>(bytes: &[u8], path: &Path) -> Result<DMatrix<T>>
where
    T: FromStr + nalgebra::Scalar,
{
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut records = r.records();
    let header = records
        .next()
        .ok_or_else(|| CliError::input(path, "empty file"))?
        .map_err(|e| CliError::input(path, e))?;
    let dim = |k: usize| -> Result<usize> {
        header
            .get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CliError::input(path, "first line must be `rows,cols`"))
    };
    if header.len() != 2 {
        return Err(CliError::input(path, "first line must be `rows,cols`"));
    }
    let (rows, cols) = (dim(0)?, dim(1)?);
    let mut values = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for rec in records {
        let rec = rec.map_err(|e| CliError::input(path, e))?;
        seen += 1;
        if rec.len() != cols {
            return Err(CliError::input(
                path,
                format!("row {seen} has {} values, expected {cols}", rec.len()),
            ));
        }
        for v in rec.iter() {
            values.push(
                v.parse::<T>()
                    .map_err(|_| CliError::input(path, format!("row {seen}: cannot parse {v:?}")))?,
            );
        }
    }
    if seen != rows {
        return Err(CliError::input(path, format!("{seen} rows, header says {rows}")));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    matrix_from_csv(&read_bytes(path)?, path)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read_bytes(path)?).map_err(|e| CliError::input(path, e))
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable value");
    out.push(b'\n');
    out
}

/// Two-column plot-ready series.
pub fn trace_to_csv(index_name: &str, value_name: &str, values: &[f64]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([index_name, value_name])
        .expect("writing to memory");
    for (i, v) in values.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])
            .expect("writing to memory");
    }
    w.into_inner().expect("writing to memory")
}

/// Manifest of an ensemble bundle; file names are relative to it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleManifest {
    pub detectors: usize,
    pub trials: usize,
    pub samples: usize,
    /// One `R × T` matrix per detector.
    pub files: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthFiles>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthFiles {
    pub waveshapes: String,
    pub coupling: String,
    pub amplitudes: String,
    pub latencies: String,
    pub noise_sigma: f64,
    pub max_shift: usize,
}

/// Serializes an ensemble as `(relative file name, bytes)` pairs, manifest
/// last.
pub fn ensemble_files(ens: &TrialEnsemble, manifest_name: &str) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut files = Vec::new();
    for m in 0..ens.detectors() {
        let name = format!("detector_{m}.csv");
        out.push((name.clone(), matrix_to_csv(&ens.detector_matrix(m))));
        files.push(name);
    }
    let truth = ens.truth().map(|t| {
        let entries = [
            ("truth_waveshapes.csv", matrix_to_csv(&t.waveshapes)),
            ("truth_coupling.csv", matrix_to_csv(&t.coupling)),
            ("truth_amplitudes.csv", matrix_to_csv(&t.amplitudes)),
            ("truth_latencies.csv", matrix_to_csv(&t.latencies)),
        ];
        for (name, bytes) in entries {
            out.push((name.to_string(), bytes));
        }
        TruthFiles {
            waveshapes: "truth_waveshapes.csv".into(),
            coupling: "truth_coupling.csv".into(),
            amplitudes: "truth_amplitudes.csv".into(),
            latencies: "truth_latencies.csv".into(),
            noise_sigma: t.noise_sigma,
            max_shift: t.max_shift,
        }
    });
    let manifest = EnsembleManifest {
        detectors: ens.detectors(),
        trials: ens.trials(),
        samples: ens.samples(),
        files,
        truth,
    };
    out.push((manifest_name.to_string(), to_json_bytes(&manifest)));
    out
}

/// Loads an ensemble bundle from its manifest.
pub fn read_ensemble(manifest_path: &Path) -> Result<TrialEnsemble> {
    let manifest: EnsembleManifest = read_json(manifest_path)?;
    let dir = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let resolve = |name: &str| -> PathBuf { dir.join(name) };
    if manifest.files.len() != manifest.detectors {
        return Err(CliError::input(
            manifest_path,
            format!(
                "{} files for {} detectors",
                manifest.files.len(),
                manifest.detectors
            ),
        ));
    }
    let mats = manifest
        .files
        .iter()
        .map(|f| read_matrix(&resolve(f)))
        .collect::<Result<Vec<_>>>()?;
    let ens = TrialEnsemble::from_detector_matrices(&mats)?;
    if (ens.trials(), ens.samples()) != (manifest.trials, manifest.samples) {
        return Err(CliError::input(
            manifest_path,
            "matrix shapes disagree with the manifest",
        ));
    }
    Ok(match manifest.truth {
        None => ens,
        Some(t) => {
            let latencies_path = resolve(&t.latencies);
            let truth = TrialTruth {
                waveshapes: read_matrix(&resolve(&t.waveshapes))?,
                coupling: read_matrix(&resolve(&t.coupling))?,
                amplitudes: read_matrix(&resolve(&t.amplitudes))?,
                latencies: matrix_from_csv(&read_bytes(&latencies_path)?, &latencies_path)?,
                noise_sigma: t.noise_sigma,
                max_shift: t.max_shift,
            };
            ens.with_truth(truth)
        }
    })
}
