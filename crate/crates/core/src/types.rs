//! Matrix newtypes shared across the estimators.
//!
//! All three wrap a dense `nalgebra::DMatrix<f64>` and dereference to it, so
//! the full nalgebra API is available for read access. Constructors check the
//! finiteness and shape invariants once.

use std::ops::Deref;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if let Some(idx) = m.iter().position(|v| !v.is_finite()) {
        return Err(Error::parameter(format!(
            "{what} has a non-finite entry at flat index {idx}"
        )));
    }
    Ok(())
}

/// Source amplitudes `s[j, t]`, one row per source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceMatrix(DMatrix<f64>);

impl SourceMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::parameter("source matrix must be at least 1x1"));
        }
        check_finite(&values, "source matrix")?;
        Ok(Self(values))
    }

    pub fn sources(&self) -> usize {
        self.0.nrows()
    }

    pub fn samples(&self) -> usize {
        self.0.ncols()
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl Deref for SourceMatrix {
    type Target = DMatrix<f64>;
    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Coupling coefficients `A[i, j]` from source `j` to detector `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingMatrix(DMatrix<f64>);

impl MixingMatrix {
    /// Smallest `|det A|` accepted for a square mixing matrix used by the
    /// separation engine.
    pub const MIN_ABS_DET: f64 = 1e-12;

    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::parameter("mixing matrix must be at least 1x1"));
        }
        check_finite(&values, "mixing matrix")?;
        Ok(Self(values))
    }

    /// Wraps a square matrix and additionally requires it to be nonsingular.
    pub fn square_nonsingular(values: DMatrix<f64>) -> Result<Self> {
        let m = Self::new(values)?;
        if !m.0.is_square() {
            return Err(Error::dimension(format!(
                "expected a square mixing matrix, got {}x{}",
                m.0.nrows(),
                m.0.ncols()
            )));
        }
        let det = m.0.determinant();
        if det.abs() <= Self::MIN_ABS_DET {
            return Err(Error::Singular(format!("|det A| = {:e}", det.abs())));
        }
        Ok(m)
    }

    pub fn detectors(&self) -> usize {
        self.0.nrows()
    }

    pub fn sources(&self) -> usize {
        self.0.ncols()
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl Deref for MixingMatrix {
    type Target = DMatrix<f64>;
    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Detector recordings `x[i, t]` plus the per-detector noise level used to
/// generate them (zero for noise-free data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingMatrix {
    values: DMatrix<f64>,
    noise_sigma: f64,
}

impl RecordingMatrix {
    pub fn new(values: DMatrix<f64>, noise_sigma: f64) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::parameter("recording matrix must be at least 1x1"));
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::parameter(format!(
                "noise sigma must be finite and nonnegative, got {noise_sigma}"
            )));
        }
        check_finite(&values, "recording matrix")?;
        Ok(Self { values, noise_sigma })
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn detectors(&self) -> usize {
        self.values.nrows()
    }

    pub fn samples(&self) -> usize {
        self.values.ncols()
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }
}

impl Deref for RecordingMatrix {
    type Target = DMatrix<f64>;
    fn deref(&self) -> &DMatrix<f64> {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_entries() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, f64::NAN]);
        assert!(SourceMatrix::new(m).is_err());
    }

    #[test]
    fn rejects_empty() {
        assert!(SourceMatrix::new(DMatrix::zeros(0, 3)).is_err());
        assert!(MixingMatrix::new(DMatrix::zeros(2, 0)).is_err());
    }

    #[test]
    fn singular_mixing_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(
            MixingMatrix::square_nonsingular(m),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn negative_sigma_rejected() {
        assert!(RecordingMatrix::new(DMatrix::zeros(1, 1), -1.0).is_err());
    }
}
