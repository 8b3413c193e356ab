//! Shared domain types and their validation.
//!
//! Everything downstream (affinity construction, the optimizer, the losses,
//! rendering) consumes these types. All of them are immutable after
//! construction except [`EmbeddingState`], which is owned and mutated by a
//! single optimization driver; read-only references are safe to share across
//! parallel workers.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

/// Dense row-major matrix of `f64`.
///
/// Small and deliberately minimal: the engine works on a few hundred points,
/// so everything is stored dense.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    data: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
}

impl Matrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            data: vec![0.0; n_rows * n_cols],
            n_rows,
            n_cols,
        }
    }

    /// Builds a matrix from rows. Panics if the rows are ragged.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for row in rows {
            assert_eq!(row.len(), n_cols, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            data,
            n_rows,
            n_cols,
        }
    }

    pub fn from_flat(data: Vec<f64>, n_rows: usize, n_cols: usize) -> Self {
        assert_eq!(data.len(), n_rows * n_cols, "shape mismatch");
        Self {
            data,
            n_rows,
            n_cols,
        }
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n_cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.n_cols + col] = value;
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.n_cols..(row + 1) * self.n_cols]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.data[row * self.n_cols..(row + 1) * self.n_cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Directed edge between two point indices, source observed before target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
}

impl Edge {
    pub fn new(source: usize, target: usize) -> Self {
        Self { source, target }
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} -> {})", self.source, self.target)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ValidationError {
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("{field} has wrong length: expected {expected}, got {actual}")]
    LengthMismatch {
        field: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("need at least 2 points, got {n_points}")]
    TooFewPoints { n_points: usize },
    #[error("points must have at least one feature")]
    NoFeatures,
    #[error("edge {edge} references a point outside 0..{n_points}")]
    IndexOutOfRange { edge: Edge, n_points: usize },
    #[error("self-loop {edge}")]
    SelfLoop { edge: Edge },
    #[error("duplicate edge {edge}")]
    DuplicateEdge { edge: Edge },
}

/// A validated set of high-dimensional points with optional per-point labels
/// and ordinal timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Matrix,
    labels: Option<Vec<String>>,
    timestamps: Option<Vec<i64>>,
}

impl Dataset {
    /// Validates and constructs a dataset: at least 2 points, at least one
    /// feature, every entry finite, optional metadata of matching length.
    pub fn new(
        points: Matrix,
        labels: Option<Vec<String>>,
        timestamps: Option<Vec<i64>>,
    ) -> Result<Self, ValidationError> {
        if points.n_rows() < 2 {
            return Err(ValidationError::TooFewPoints {
                n_points: points.n_rows(),
            });
        }
        Self::new_allow_single(points, labels, timestamps)
    }

    /// Like [`Dataset::new`] but permits a single point. Sliding-window
    /// vectorization can legitimately produce one window; such a dataset is
    /// rejected later by any operation that needs at least two points.
    pub(crate) fn new_allow_single(
        points: Matrix,
        labels: Option<Vec<String>>,
        timestamps: Option<Vec<i64>>,
    ) -> Result<Self, ValidationError> {
        if points.n_rows() == 0 {
            return Err(ValidationError::TooFewPoints { n_points: 0 });
        }
        if points.n_cols() == 0 {
            return Err(ValidationError::NoFeatures);
        }
        for row in 0..points.n_rows() {
            for col in 0..points.n_cols() {
                if !points.get(row, col).is_finite() {
                    return Err(ValidationError::NonFinite { row, col });
                }
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != points.n_rows() {
                return Err(ValidationError::LengthMismatch {
                    field: "labels",
                    expected: points.n_rows(),
                    actual: labels.len(),
                });
            }
        }
        if let Some(timestamps) = &timestamps {
            if timestamps.len() != points.n_rows() {
                return Err(ValidationError::LengthMismatch {
                    field: "timestamps",
                    expected: points.n_rows(),
                    actual: timestamps.len(),
                });
            }
        }
        Ok(Self {
            points,
            labels,
            timestamps,
        })
    }

    #[inline]
    pub fn n_points(&self) -> usize {
        self.points.n_rows()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.points.n_cols()
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn timestamps(&self) -> Option<&[i64]> {
        self.timestamps.as_deref()
    }
}

/// Directed edge list over point indices, representing time-adjacency.
///
/// Indices are 0-based; edge direction is earlier time to later time. No
/// self-loops, no duplicate `(source, target)` pairs; duplicates would
/// double-count in the loss sums with no meaning, so they are rejected
/// rather than merged. Arbitrary out-degree is allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalGraph {
    edges: Vec<Edge>,
    n_points: usize,
}

impl TemporalGraph {
    /// Validates an edge list against a point count.
    pub fn new(edges: Vec<Edge>, n_points: usize) -> Result<Self, ValidationError> {
        let mut seen = HashSet::with_capacity(edges.len());
        for &edge in &edges {
            if edge.source >= n_points || edge.target >= n_points {
                return Err(ValidationError::IndexOutOfRange { edge, n_points });
            }
            if edge.source == edge.target {
                return Err(ValidationError::SelfLoop { edge });
            }
            if !seen.insert((edge.source, edge.target)) {
                return Err(ValidationError::DuplicateEdge { edge });
            }
        }
        Ok(Self { edges, n_points })
    }

    pub fn from_pairs(
        pairs: &[(usize, usize)],
        n_points: usize,
    ) -> Result<Self, ValidationError> {
        Self::new(
            pairs.iter().map(|&(s, t)| Edge::new(s, t)).collect(),
            n_points,
        )
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    #[inline]
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    #[inline]
    pub fn n_points(&self) -> usize {
        self.n_points
    }
}

/// Embedding coordinates plus optimizer bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingState {
    /// N×2 embedding coordinates.
    pub coords: Vec<[f64; 2]>,
    /// Per-coordinate adaptive gains, floored at the minimum gain.
    pub gains: Vec<[f64; 2]>,
    /// Previous update (velocity) per coordinate.
    pub prev_update: Vec<[f64; 2]>,
    /// Number of optimization steps taken.
    pub iteration: usize,
}

impl EmbeddingState {
    pub fn new(coords: Vec<[f64; 2]>) -> Self {
        let n = coords.len();
        Self {
            coords,
            gains: vec![[1.0; 2]; n],
            prev_update: vec![[0.0; 2]; n],
            iteration: 0,
        }
    }

    #[inline]
    pub fn n_points(&self) -> usize {
        self.coords.len()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid config: {field}: {message}")]
pub struct ConfigError {
    pub field: &'static str,
    pub message: String,
}

impl ConfigError {
    fn new(field: &'static str, message: impl Into<String>) -> Self {
        Self {
            field,
            message: message.into(),
        }
    }
}

/// All hyperparameters of a direction-aware t-SNE run.
#[derive(Debug, Clone, PartialEq)]
pub struct DaTsneConfig {
    /// Target perplexity of each conditional neighbor distribution.
    pub perplexity: f64,
    /// Weight of the directional coherence loss.
    pub lambda_dcl: f64,
    /// Weight of the edge length loss.
    pub lambda_ell: f64,
    /// Length modulation exponent of the edge length loss.
    pub alpha: f64,
    /// Coherence kernel scale as a fraction of the embedding span,
    /// recomputed every iteration.
    pub sigma_fraction: f64,
    pub total_iterations: usize,
    /// Factor by which attractive forces are increased during the early
    /// exaggeration phase.
    pub exaggeration_factor: f64,
    pub exaggeration_iterations: usize,
    pub seed: u64,
    /// Learning rate; defaults to `n_points / exaggeration_factor` when unset.
    pub learning_rate_override: Option<f64>,
}

impl Default for DaTsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            lambda_dcl: 10.0,
            lambda_ell: 0.5,
            alpha: 1.5,
            sigma_fraction: 0.05,
            total_iterations: 10_000,
            exaggeration_factor: 12.0,
            exaggeration_iterations: 250,
            seed: 0,
            learning_rate_override: None,
        }
    }
}

impl DaTsneConfig {
    /// Checks the config against a dataset size. The bandwidth search only
    /// converges when perplexity is below the number of points.
    pub fn validate(&self, n_points: usize) -> Result<(), ConfigError> {
        if !(self.perplexity > 0.0) {
            return Err(ConfigError::new("perplexity", "must be positive"));
        }
        if self.perplexity >= n_points as f64 {
            return Err(ConfigError::new(
                "perplexity",
                format!(
                    "must be below the number of points ({} >= {})",
                    self.perplexity, n_points
                ),
            ));
        }
        if self.lambda_dcl < 0.0 || !self.lambda_dcl.is_finite() {
            return Err(ConfigError::new("lambda_dcl", "must be finite and >= 0"));
        }
        if self.lambda_ell < 0.0 || !self.lambda_ell.is_finite() {
            return Err(ConfigError::new("lambda_ell", "must be finite and >= 0"));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(ConfigError::new("alpha", "must be finite and positive"));
        }
        if !(self.sigma_fraction > 0.0) || !self.sigma_fraction.is_finite() {
            return Err(ConfigError::new(
                "sigma_fraction",
                "must be finite and positive",
            ));
        }
        if self.total_iterations == 0 {
            return Err(ConfigError::new("total_iterations", "must be at least 1"));
        }
        if !(self.exaggeration_factor >= 1.0) {
            return Err(ConfigError::new("exaggeration_factor", "must be >= 1"));
        }
        if self.exaggeration_iterations > self.total_iterations {
            return Err(ConfigError::new(
                "exaggeration_iterations",
                "must not exceed total_iterations",
            ));
        }
        if let Some(lr) = self.learning_rate_override {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(ConfigError::new(
                    "learning_rate",
                    "must be finite and positive",
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn valid_dataset_passes() {
        let d = Dataset::new(mat(&[&[0.0, 1.0], &[2.0, 3.0], &[4.0, 5.0]]), None, None).unwrap();
        assert_eq!(d.n_points(), 3);
        assert_eq!(d.dim(), 2);
    }

    #[test]
    fn nan_is_located() {
        let err = Dataset::new(
            mat(&[&[0.0, 1.0], &[f64::NAN, 3.0]]),
            None,
            None,
        )
        .unwrap_err();
        assert_eq!(err, ValidationError::NonFinite { row: 1, col: 0 });
    }

    #[test]
    fn single_point_rejected() {
        let err = Dataset::new(mat(&[&[1.0, 2.0, 3.0, 4.0, 5.0]]), None, None).unwrap_err();
        assert_eq!(err, ValidationError::TooFewPoints { n_points: 1 });
    }

    #[test]
    fn metadata_lengths_checked() {
        let err = Dataset::new(
            mat(&[&[0.0], &[1.0]]),
            Some(vec!["a".into()]),
            None,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            ValidationError::LengthMismatch { field: "labels", .. }
        ));
    }

    #[test]
    fn validation_is_idempotent_on_valid_input() {
        let d = Dataset::new(
            mat(&[&[0.0, 1.0], &[2.0, 3.0]]),
            Some(vec!["x".into(), "y".into()]),
            Some(vec![0, 1]),
        )
        .unwrap();
        let again = Dataset::new(
            d.points().clone(),
            d.labels().map(<[String]>::to_vec),
            d.timestamps().map(<[i64]>::to_vec),
        )
        .unwrap();
        assert_eq!(d, again);
    }

    #[test]
    fn graph_examples() {
        let g = TemporalGraph::from_pairs(&[(0, 1), (1, 2)], 3).unwrap();
        assert_eq!(g.n_edges(), 2);

        let err = TemporalGraph::from_pairs(&[(0, 0)], 2).unwrap_err();
        assert!(matches!(err, ValidationError::SelfLoop { .. }));

        let err = TemporalGraph::from_pairs(&[(0, 3)], 3).unwrap_err();
        assert!(matches!(err, ValidationError::IndexOutOfRange { .. }));

        let err = TemporalGraph::from_pairs(&[(0, 1), (0, 1)], 2).unwrap_err();
        assert!(matches!(err, ValidationError::DuplicateEdge { .. }));
    }

    #[test]
    fn config_bounds() {
        let mut cfg = DaTsneConfig::default();
        assert!(cfg.validate(100).is_ok());
        assert!(cfg.validate(30).is_err()); // perplexity not below N

        cfg.exaggeration_iterations = cfg.total_iterations + 1;
        assert!(cfg.validate(100).is_err());
    }

    proptest! {
        /// A graph validates exactly when every index is in range, no edge is
        /// a self-loop, and no (source, target) pair repeats.
        #[test]
        fn graph_acceptance_characterization(
            pairs in proptest::collection::vec((0usize..8, 0usize..8), 0..20),
            n_points in 2usize..8,
        ) {
            let ok = pairs.iter().all(|&(s, t)| s < n_points && t < n_points && s != t)
                && {
                    let mut seen = HashSet::new();
                    pairs.iter().all(|&p| seen.insert(p))
                };
            prop_assert_eq!(TemporalGraph::from_pairs(&pairs, n_points).is_ok(), ok);
        }
    }
}
