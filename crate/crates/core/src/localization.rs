//! Source localization through a forward model.
//!
//! Fixing the mixing matrix to the forward-model gains `A_ij = F(d_i, p_j, q_j)`
//! and assigning a Gaussian likelihood leaves a chi-squared cost over source
//! positions, orientations and waveshapes:
//!
//! ```text
//! χ² = Σ_i Σ_t (x_it - Σ_l F_il s_lt)² / (2 σ_i²)
//! ```
//!
//! [`localize`] minimizes it by alternating between the waveshapes (an exact
//! weighted least-squares solve) and the source parameters (grid search plus
//! pattern-search refinement). Each position candidate is scored with its
//! least-squares waveshapes, so the position step never competes against
//! stale waveshapes.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Vector3<f64>;

/// Distance below which a source is considered coincident with a detector.
const SINGULAR_DISTANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardModel {
    /// Isotropic source, gain `1 / (4π |d - p|²)`.
    PointInverseSquare,
    /// Current dipole in an infinite homogeneous medium,
    /// gain `q · (d - p) / (4π |d - p|³)`.
    DipoleHomogeneous,
}

/// Where sources may be placed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SearchRegion {
    Ball { center: Point, radius: f64 },
    Box { min: Point, max: Point },
}

impl SearchRegion {
    pub fn contains(&self, p: &Point) -> bool {
        match self {
            SearchRegion::Ball { center, radius } => (p - center).norm() <= *radius,
            SearchRegion::Box { min, max } => (0..3).all(|k| p[k] >= min[k] && p[k] <= max[k]),
        }
    }

    fn bounds(&self) -> (Point, Point) {
        match *self {
            SearchRegion::Ball { center, radius } => {
                let r = Point::repeat(radius);
                (center - r, center + r)
            }
            SearchRegion::Box { min, max } => (min, max),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            SearchRegion::Ball { radius, .. } => *radius > 0.0 && radius.is_finite(),
            SearchRegion::Box { min, max } => (0..3).all(|k| min[k] <= max[k]),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::parameter("search region is empty"))
        }
    }
}

/// Detector layout, noise levels, search region and forward model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub detectors: Vec<Point>,
    pub region: SearchRegion,
    pub model: ForwardModel,
    /// Per-detector noise level; a single value applies to all detectors.
    pub sigmas: Vec<f64>,
}

impl GeometryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.detectors.is_empty() {
            return Err(Error::parameter("geometry needs at least one detector"));
        }
        for (i, a) in self.detectors.iter().enumerate() {
            for b in &self.detectors[i + 1..] {
                if (a - b).norm() == 0.0 {
                    return Err(Error::parameter("detector positions must be distinct"));
                }
            }
        }
        if !(self.sigmas.len() == 1 || self.sigmas.len() == self.detectors.len()) {
            return Err(Error::dimension(format!(
                "{} sigmas for {} detectors",
                self.sigmas.len(),
                self.detectors.len()
            )));
        }
        if self.sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::parameter("detector sigmas must be positive"));
        }
        self.region.validate()
    }

    pub fn detector_count(&self) -> usize {
        self.detectors.len()
    }

    pub fn sigma(&self, i: usize) -> f64 {
        if self.sigmas.len() == 1 {
            self.sigmas[0]
        } else {
            self.sigmas[i]
        }
    }

    /// True when all detectors lie on one line (or coincide).
    pub fn detectors_collinear(&self) -> bool {
        let m = self.detectors.len();
        if m < 3 {
            return true;
        }
        let centroid = self.detectors.iter().sum::<Point>() / m as f64;
        let spread = DMatrix::from_fn(m, 3, |i, k| self.detectors[i][k] - centroid[k]);
        let sv = spread.singular_values();
        let mut sorted: Vec<f64> = sv.iter().copied().collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        sorted[0] == 0.0 || sorted[1] <= 1e-9 * sorted[0]
    }
}

/// Unit vector from polar angle `theta` and azimuth `phi`.
pub fn orientation_from_angles(theta: f64, phi: f64) -> Point {
    Point::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
}

fn angles_from_orientation(q: &Point) -> (f64, f64) {
    let q = q.normalize();
    (q[2].clamp(-1.0, 1.0).acos(), q[1].atan2(q[0]))
}

/// Gains `F(d_i, p, q)` of one source at every detector.
pub fn forward_gain(geometry: &GeometryConfig, p: &Point, q: Option<&Point>) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(geometry.detectors.len());
    for (i, d) in geometry.detectors.iter().enumerate() {
        let diff = d - p;
        let dist = diff.norm();
        if dist < SINGULAR_DISTANCE {
            return Err(Error::Singular(format!(
                "source at {:?} coincides with detector {i}",
                p.as_slice()
            )));
        }
        out[i] = match geometry.model {
            ForwardModel::PointInverseSquare => 1.0 / (4.0 * PI * dist * dist),
            ForwardModel::DipoleHomogeneous => {
                let q =
                    q.ok_or_else(|| Error::parameter("dipole forward model needs a source orientation"))?;
                q.dot(&diff) / (4.0 * PI * dist.powi(3))
            }
        };
    }
    Ok(out)
}

/// `M × N` gain matrix for a set of sources.
pub fn gain_matrix(
    geometry: &GeometryConfig,
    positions: &[Point],
    orientations: Option<&[Point]>,
) -> Result<DMatrix<f64>> {
    let mut f = DMatrix::zeros(geometry.detectors.len(), positions.len());
    for (j, p) in positions.iter().enumerate() {
        let q = orientations.map(|o| &o[j]);
        f.set_column(j, &forward_gain(geometry, p, q)?);
    }
    Ok(f)
}

/// Estimated (or planted) source configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEstimate {
    pub positions: Vec<Point>,
    /// Unit orientations; present for the dipole model only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientations: Option<Vec<Point>>,
    /// `N × T` source waveshapes.
    pub waveshapes: DMatrix<f64>,
    pub chi_squared: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl SourceEstimate {
    pub fn sources(&self) -> usize {
        self.positions.len()
    }

    /// Noise-free recordings `F S` predicted by this estimate.
    pub fn predict(&self, geometry: &GeometryConfig) -> Result<DMatrix<f64>> {
        if self.waveshapes.nrows() != self.positions.len() {
            return Err(Error::dimension(format!(
                "{} waveshapes for {} positions",
                self.waveshapes.nrows(),
                self.positions.len()
            )));
        }
        if self.positions.is_empty() {
            return Ok(DMatrix::zeros(geometry.detector_count(), self.waveshapes.ncols()));
        }
        let f = gain_matrix(geometry, &self.positions, self.orientations.as_deref())?;
        Ok(f * &self.waveshapes)
    }
}

/// `Σ_i Σ_t (x_it - x̂_it)² / (2 σ_i²)` with `x̂` predicted from `estimate`.
pub fn chi_squared(x: &DMatrix<f64>, geometry: &GeometryConfig, estimate: &SourceEstimate) -> Result<f64> {
    if x.nrows() != geometry.detector_count() {
        return Err(Error::dimension(format!(
            "{} recording rows for {} detectors",
            x.nrows(),
            geometry.detector_count()
        )));
    }
    if estimate.waveshapes.ncols() != x.ncols() {
        return Err(Error::dimension(format!(
            "waveshapes have {} samples, recordings have {}",
            estimate.waveshapes.ncols(),
            x.ncols()
        )));
    }
    let predicted = estimate.predict(geometry)?;
    let mut total = 0.0;
    for i in 0..x.nrows() {
        let w = 1.0 / (2.0 * geometry.sigma(i).powi(2));
        let row: f64 = x
            .row(i)
            .iter()
            .zip(predicted.row(i).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        total += w * row;
    }
    Ok(total)
}

fn default_grid_resolution() -> f64 {
    0.1
}
fn default_refine_iterations() -> usize {
    2000
}
fn default_min_step() -> f64 {
    1e-10
}
fn default_sweeps() -> usize {
    5
}
fn default_orientation_samples() -> usize {
    48
}

/// Search settings for [`localize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizeOptions {
    /// Spacing of the coarse position grid.
    #[serde(default = "default_grid_resolution")]
    pub grid_resolution: f64,
    /// Maximum pattern-search iterations per refinement.
    #[serde(default = "default_refine_iterations")]
    pub refine_iterations: usize,
    /// Refinement stops once its step falls below this (length units).
    #[serde(default = "default_min_step")]
    pub min_step: f64,
    /// Maximum coordinate sweeps over sources (N > 1).
    #[serde(default = "default_sweeps")]
    pub sweeps: usize,
    /// Orientations tried per grid point for the dipole model.
    #[serde(default = "default_orientation_samples")]
    pub orientation_samples: usize,
    /// Picks among grid candidates with exactly equal cost.
    #[serde(default)]
    pub seed: u64,
}

impl Default for LocalizeOptions {
    fn default() -> Self {
        Self {
            grid_resolution: default_grid_resolution(),
            refine_iterations: default_refine_iterations(),
            min_step: default_min_step(),
            sweeps: default_sweeps(),
            orientation_samples: default_orientation_samples(),
            seed: 0,
        }
    }
}

/// Orientations spread over the upper hemisphere by the golden-angle spiral.
/// `q` and `-q` are equivalent up to the sign of the waveshape.
pub fn hemisphere_orientations(count: usize) -> Vec<Point> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|k| {
            let z = 1.0 - (k as f64 + 0.5) / count as f64;
            let rho = (1.0 - z * z).sqrt();
            let phi = golden * k as f64;
            Point::new(rho * phi.cos(), rho * phi.sin(), z)
        })
        .collect()
}

/// Weighted data `D X` with `D = diag(1/σ_i)`, and its Gram matrix.
struct WeightedData {
    weights: DVector<f64>,
    y: DMatrix<f64>,
    gram: DMatrix<f64>,
    total: f64,
}

impl WeightedData {
    fn new(x: &DMatrix<f64>, geometry: &GeometryConfig) -> Self {
        let weights = DVector::from_fn(x.nrows(), |i, _| 1.0 / geometry.sigma(i));
        let mut y = x.clone();
        for i in 0..y.nrows() {
            y.row_mut(i).scale_mut(weights[i]);
        }
        let gram = &y * y.transpose();
        let total = gram.trace();
        Self {
            weights,
            y,
            gram,
            total,
        }
    }

    fn weighted_gains(&self, f: &DMatrix<f64>) -> DMatrix<f64> {
        let mut b = f.clone();
        for i in 0..b.nrows() {
            b.row_mut(i).scale_mut(self.weights[i]);
        }
        b
    }

    /// Orthonormal basis for the numerical column space of `b`.
    fn column_basis(b: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
        let svd = b.clone().svd(true, false);
        let u = svd.u.expect("requested U");
        let max = svd.singular_values.max();
        let tol = max * 1e-12 * b.nrows().max(b.ncols()) as f64;
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&k| svd.singular_values[k] > tol)
            .collect();
        let basis = DMatrix::from_fn(b.nrows(), keep.len(), |i, k| u[(i, keep[k])]);
        (basis, keep.len())
    }

    /// χ² after the least-squares waveshape solve, from the Gram matrix alone.
    fn profiled_chi_squared(&self, f: &DMatrix<f64>) -> f64 {
        let b = self.weighted_gains(f);
        let (u, _) = Self::column_basis(&b);
        let explained = (u.transpose() * &self.gram * &u).trace();
        (0.5 * (self.total - explained)).max(0.0)
    }

    /// Weighted least-squares waveshapes for gains `f`.
    fn waveshapes(&self, f: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
        let b = self.weighted_gains(f);
        let n = b.ncols();
        let svd = b.svd(true, true);
        let max = svd.singular_values.max();
        let tol = max * 1e-12 * self.y.nrows().max(n) as f64;
        let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
        let s = svd
            .solve(&self.y, tol)
            .unwrap_or_else(|_| DMatrix::zeros(n, self.y.ncols()));
        (s, rank < n)
    }
}

/// Source parameters being searched.
#[derive(Debug, Clone)]
struct Candidate {
    positions: Vec<Point>,
    angles: Vec<(f64, f64)>,
}

impl Candidate {
    fn orientations(&self) -> Vec<Point> {
        self.angles
            .iter()
            .map(|&(t, p)| orientation_from_angles(t, p))
            .collect()
    }
}

struct Search<'a> {
    geometry: &'a GeometryConfig,
    data: WeightedData,
    dipole: bool,
}

impl Search<'_> {
    fn cost(&self, c: &Candidate) -> f64 {
        if !c.positions.iter().all(|p| self.geometry.region.contains(p)) {
            return f64::INFINITY;
        }
        let orientations = self.dipole.then(|| c.orientations());
        match gain_matrix(self.geometry, &c.positions, orientations.as_deref()) {
            Ok(f) => self.data.profiled_chi_squared(&f),
            Err(_) => f64::INFINITY,
        }
    }

    fn grid(&self, spacing: f64) -> Vec<Point> {
        let (lo, hi) = self.geometry.region.bounds();
        let counts: Vec<usize> = (0..3)
            .map(|k| ((hi[k] - lo[k]) / spacing).floor() as usize + 1)
            .collect();
        let mut points = Vec::new();
        for a in 0..counts[0] {
            for b in 0..counts[1] {
                for c in 0..counts[2] {
                    let p = Point::new(
                        lo[0] + spacing * a as f64,
                        lo[1] + spacing * b as f64,
                        lo[2] + spacing * c as f64,
                    );
                    let clear = self
                        .geometry
                        .detectors
                        .iter()
                        .all(|d| (d - p).norm() >= SINGULAR_DISTANCE);
                    if self.geometry.region.contains(&p) && clear {
                        points.push(p);
                    }
                }
            }
        }
        points
    }

    /// Places source `j` at the best grid point (and sampled orientation),
    /// keeping the other sources fixed.
    fn grid_search(
        &self,
        c: &mut Candidate,
        j: usize,
        grid: &[Point],
        orientations: &[Point],
        rng: &mut ChaCha8Rng,
    ) -> f64 {
        let mut best_cost = self.cost(c);
        let mut ties = vec![(c.positions[j], c.angles[j])];
        let sampled: Vec<(f64, f64)> = if self.dipole {
            orientations.iter().map(angles_from_orientation).collect()
        } else {
            vec![(0.0, 0.0)]
        };
        let mut trial = c.clone();
        for p in grid {
            trial.positions[j] = *p;
            for &angles in &sampled {
                trial.angles[j] = angles;
                let v = self.cost(&trial);
                if v < best_cost {
                    best_cost = v;
                    ties.clear();
                    ties.push((*p, angles));
                } else if v == best_cost && v.is_finite() {
                    ties.push((*p, angles));
                }
            }
        }
        let pick = if ties.len() > 1 {
            rng.random_range(0..ties.len())
        } else {
            0
        };
        c.positions[j] = ties[pick].0;
        c.angles[j] = ties[pick].1;
        best_cost
    }

    /// Pattern search over the coordinates (and angles) of source `j`.
    fn refine(&self, c: &mut Candidate, j: usize, opts: &LocalizeOptions) -> f64 {
        let mut current = self.cost(c);
        let mut step = 0.5 * opts.grid_resolution;
        let mut angle_step = 0.25;
        let dims = if self.dipole { 5 } else { 3 };
        for _ in 0..opts.refine_iterations {
            if step < opts.min_step {
                break;
            }
            let mut improved = false;
            for k in 0..dims {
                for sign in [1.0, -1.0] {
                    let mut trial = c.clone();
                    if k < 3 {
                        trial.positions[j][k] += sign * step;
                    } else if k == 3 {
                        trial.angles[j].0 += sign * angle_step;
                    } else {
                        trial.angles[j].1 += sign * angle_step;
                    }
                    let v = self.cost(&trial);
                    if v < current {
                        current = v;
                        *c = trial;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                step *= 0.5;
                angle_step *= 0.5;
            }
        }
        current
    }
}

/// Fits `sources` sources to recordings `x` (one row per detector).
pub fn localize(
    x: &DMatrix<f64>,
    geometry: &GeometryConfig,
    sources: usize,
    opts: &LocalizeOptions,
) -> Result<SourceEstimate> {
    geometry.validate()?;
    if sources == 0 {
        return Err(Error::parameter("need at least one source to localize"));
    }
    if x.nrows() != geometry.detector_count() {
        return Err(Error::dimension(format!(
            "{} recording rows for {} detectors",
            x.nrows(),
            geometry.detector_count()
        )));
    }
    if !(opts.grid_resolution > 0.0) {
        return Err(Error::parameter("grid resolution must be positive"));
    }
    let dipole = geometry.model == ForwardModel::DipoleHomogeneous;
    let mut warnings = Vec::new();
    if dipole && geometry.detectors_collinear() {
        let msg = "detectors are collinear; dipole orientations are poorly constrained".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let search = Search {
        geometry,
        data: WeightedData::new(x, geometry),
        dipole,
    };
    let grid = search.grid(opts.grid_resolution);
    if grid.is_empty() {
        return Err(Error::parameter(
            "search grid is empty; decrease the grid resolution",
        ));
    }
    let orientations = hemisphere_orientations(opts.orientation_samples.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    // Greedy initialization: add sources one at a time.
    let mut best = Candidate {
        positions: Vec::new(),
        angles: Vec::new(),
    };
    for j in 0..sources {
        best.positions.push(grid[0]);
        best.angles.push((0.0, 0.0));
        search.grid_search(&mut best, j, &grid, &orientations, &mut rng);
        search.refine(&mut best, j, opts);
    }
    let mut cost = search.cost(&best);
    if sources > 1 {
        for _ in 0..opts.sweeps {
            let before = cost;
            for j in 0..sources {
                search.grid_search(&mut best, j, &grid, &orientations, &mut rng);
                cost = search.refine(&mut best, j, opts);
            }
            if cost >= before * (1.0 - 1e-12) {
                break;
            }
        }
    }

    let orientations = dipole.then(|| best.orientations());
    let f = gain_matrix(geometry, &best.positions, orientations.as_deref())?;
    let (waveshapes, deficient) = search.data.waveshapes(&f);
    if deficient {
        let msg = "gain matrix is rank deficient; waveshapes are not unique".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let mut estimate = SourceEstimate {
        positions: best.positions,
        orientations,
        waveshapes,
        chi_squared: 0.0,
        warnings,
    };
    estimate.chi_squared = chi_squared(x, geometry, &estimate)?;
    Ok(estimate)
}

/// Weighted least-squares waveshapes for fixed source parameters.
pub fn fit_waveshapes(
    x: &DMatrix<f64>,
    geometry: &GeometryConfig,
    positions: &[Point],
    orientations: Option<&[Point]>,
) -> Result<DMatrix<f64>> {
    if x.nrows() != geometry.detector_count() {
        return Err(Error::dimension("recording rows must match detectors"));
    }
    let f = gain_matrix(geometry, positions, orientations)?;
    Ok(WeightedData::new(x, geometry).waveshapes(&f).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube() -> Vec<Point> {
        let mut d = Vec::new();
        for &x in &[-1.0, 1.0] {
            for &y in &[-1.0, 1.0] {
                for &z in &[-1.0, 1.0] {
                    d.push(Point::new(x, y, z));
                }
            }
        }
        d
    }

    fn geometry(model: ForwardModel) -> GeometryConfig {
        GeometryConfig {
            detectors: cube(),
            region: SearchRegion::Ball {
                center: Point::zeros(),
                radius: 0.8,
            },
            model,
            sigmas: vec![1.0],
        }
    }

    #[test]
    fn point_gain_values() {
        let g = GeometryConfig {
            detectors: vec![Point::new(1.0, 0.0, 0.0), Point::new(2.0, 0.0, 0.0)],
            ..geometry(ForwardModel::PointInverseSquare)
        };
        let f = forward_gain(&g, &Point::zeros(), None).unwrap();
        assert_eq!(f[0], 1.0 / (4.0 * PI));
        assert_eq!(f[1], f[0] / 4.0);
    }

    #[test]
    fn orthogonal_dipole_has_zero_gain() {
        let g = GeometryConfig {
            detectors: vec![Point::new(0.0, 0.0, 2.0)],
            ..geometry(ForwardModel::DipoleHomogeneous)
        };
        let q = Point::new(1.0, 0.0, 0.0);
        let f = forward_gain(&g, &Point::zeros(), Some(&q)).unwrap();
        assert_eq!(f[0], 0.0);
    }

    #[test]
    fn coincident_source_is_singular() {
        let g = geometry(ForwardModel::PointInverseSquare);
        assert!(matches!(
            forward_gain(&g, &Point::new(1.0, 1.0, 1.0), None),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn empty_model_chi_squared() {
        let g = geometry(ForwardModel::PointInverseSquare);
        let x = DMatrix::from_fn(8, 5, |i, t| (i as f64 - t as f64) * 0.3);
        let est = SourceEstimate {
            positions: vec![],
            orientations: None,
            waveshapes: DMatrix::zeros(0, 5),
            chi_squared: 0.0,
            warnings: vec![],
        };
        let expected = x.iter().map(|v| v * v).sum::<f64>() / 2.0;
        assert!((chi_squared(&x, &g, &est).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn hemisphere_samples_are_unit() {
        for q in hemisphere_orientations(40) {
            assert!((q.norm() - 1.0).abs() < 1e-12);
            assert!(q[2] > 0.0);
        }
    }

    #[test]
    fn collinear_detectors_warn() {
        let g = GeometryConfig {
            detectors: (0..4).map(|k| Point::new(k as f64 + 2.0, 0.0, 0.0)).collect(),
            region: SearchRegion::Ball {
                center: Point::zeros(),
                radius: 0.5,
            },
            model: ForwardModel::DipoleHomogeneous,
            sigmas: vec![1.0],
        };
        assert!(g.detectors_collinear());
        let x = DMatrix::from_fn(4, 3, |i, t| (i + t) as f64 * 0.01);
        let opts = LocalizeOptions {
            grid_resolution: 0.25,
            orientation_samples: 4,
            refine_iterations: 10,
            ..LocalizeOptions::default()
        };
        let est = localize(&x, &g, 1, &opts).unwrap();
        assert!(!est.warnings.is_empty());
    }

    #[test]
    fn invalid_geometry_rejected() {
        let mut g = geometry(ForwardModel::PointInverseSquare);
        g.sigmas = vec![1.0, 2.0];
        assert!(g.validate().is_err());
        let mut g = geometry(ForwardModel::PointInverseSquare);
        g.detectors.push(g.detectors[0]);
        assert!(g.validate().is_err());
        let mut g = geometry(ForwardModel::PointInverseSquare);
        g.sigmas = vec![0.0];
        assert!(g.validate().is_err());
    }
}
