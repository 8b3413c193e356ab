//! Dataset and graph construction from raw sources.
//!
//! Three entry points: delimited time-series files (header row required, one
//! designated non-numeric time column permitted), pre-computed
//! high-dimensional vectors plus an edge list (no headers), and a synthetic
//! cyclic-cluster generator. The sliding-window vectorizer turns a
//! multivariate series into one point per window with edges between
//! consecutive windows.
//!
//! No feature scaling is applied implicitly; callers opt into per-column
//! z-scoring with [`zscore_table`] / [`zscore_dataset`].

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::model::{Dataset, Edge, Matrix, TemporalGraph, ValidationError};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("parse error at line {line}")]
    ParseError { line: u64 },
    #[error("non-numeric cell at line {line}, column {column}")]
    NonNumericCell { line: u64, column: String },
    #[error("file has no data rows")]
    EmptyFile,
    #[error("no such column: {name}")]
    UnknownColumn { name: String },
    #[error("window {window} exceeds the {len} time steps available")]
    WindowTooLarge { window: usize, len: usize },
    #[error("window and stride must be positive")]
    ZeroWindowOrStride,
    #[error("ambient dimension {ambient_dim} too small for {n_clusters} equidistant clusters (need {needed})")]
    DimensionTooSmall {
        ambient_dim: usize,
        n_clusters: usize,
        needed: usize,
    },
    #[error("invalid toy config: {0}")]
    InvalidToyConfig(&'static str),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A multivariate time series: `T` steps of `v` variables, all finite.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesTable {
    values: Matrix,
    column_names: Vec<String>,
    time_labels: Vec<String>,
}

impl TimeSeriesTable {
    pub fn new(
        values: Matrix,
        column_names: Vec<String>,
        time_labels: Vec<String>,
    ) -> Result<Self, IngestError> {
        if values.n_rows() == 0 {
            return Err(IngestError::EmptyFile);
        }
        assert!(values.n_cols() >= 1, "need at least one variable");
        assert_eq!(column_names.len(), values.n_cols(), "column name count");
        assert_eq!(time_labels.len(), values.n_rows(), "time label count");
        for i in 0..values.n_rows() {
            for j in 0..values.n_cols() {
                if !values.get(i, j).is_finite() {
                    return Err(IngestError::NonNumericCell {
                        line: i as u64 + 2,
                        column: column_names[j].clone(),
                    });
                }
            }
        }
        Ok(Self {
            values,
            column_names,
            time_labels,
        })
    }

    #[inline]
    pub fn n_steps(&self) -> usize {
        self.values.n_rows()
    }

    #[inline]
    pub fn n_variables(&self) -> usize {
        self.values.n_cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn time_labels(&self) -> &[String] {
        &self.time_labels
    }
}

/// Synthetic cyclic-cluster generator settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub n_clusters: usize,
    pub points_per_cluster: usize,
    pub ambient_dim: usize,
    /// Distance between every pair of cluster centers; the per-cluster noise
    /// is a unit Gaussian, so anything well above 1 keeps clusters apart.
    pub cluster_distance: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            n_clusters: 7,
            points_per_cluster: 50,
            ambient_dim: 10,
            cluster_distance: 30.0,
            seed: 0,
        }
    }
}

/// Loads a multivariate time series from a delimited file with a header row.
///
/// Every column must be numeric except the optional designated time column,
/// which becomes the time labels. Without a time column, the row index is
/// used as the label.
pub fn load_timeseries_csv(
    path: impl AsRef<Path>,
    time_column: Option<&str>,
) -> Result<TimeSeriesTable, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(map_csv_error)?;
    let headers = reader.headers().map_err(map_csv_error)?.clone();
    if headers.is_empty() {
        return Err(IngestError::EmptyFile);
    }
    let time_index = match time_column {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| IngestError::UnknownColumn { name: name.into() })?,
        ),
        None => None,
    };
    let value_columns: Vec<usize> =
        (0..headers.len()).filter(|&i| Some(i) != time_index).collect();
    if value_columns.is_empty() {
        return Err(IngestError::EmptyFile);
    }
    let column_names: Vec<String> = value_columns.iter().map(|&i| headers[i].to_string()).collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut time_labels = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(map_csv_error)?;
        let line = record
            .position()
            .map_or(row_idx as u64 + 2, |p| p.line());
        let mut row = Vec::with_capacity(value_columns.len());
        for &col in &value_columns {
            let cell = record.get(col).unwrap_or("");
            let value: f64 = cell.parse().map_err(|_| IngestError::NonNumericCell {
                line,
                column: headers[col].to_string(),
            })?;
            row.push(value);
        }
        time_labels.push(match time_index {
            Some(t) => record.get(t).unwrap_or("").to_string(),
            None => row_idx.to_string(),
        });
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(IngestError::EmptyFile);
    }
    TimeSeriesTable::new(Matrix::from_rows(&rows), column_names, time_labels)
}

fn map_csv_error(err: csv::Error) -> IngestError {
    let line = err.position().map_or(0, csv::Position::line);
    match err.kind() {
        csv::ErrorKind::Io(_) => match err.into_kind() {
            csv::ErrorKind::Io(io) => IngestError::Io(io),
            _ => unreachable!(),
        },
        _ => IngestError::ParseError { line },
    }
}

/// Vectorizes a time series with a sliding window: each window of `window`
/// consecutive rows, advanced by `stride`, becomes one point of dimension
/// `window * v` (rows concatenated in time order). Consecutive windows are
/// connected by an edge; each point's timestamp is the start index of its
/// window and its label the time label there.
pub fn sliding_window(
    table: &TimeSeriesTable,
    window: usize,
    stride: usize,
) -> Result<(Dataset, TemporalGraph), IngestError> {
    if window == 0 || stride == 0 {
        return Err(IngestError::ZeroWindowOrStride);
    }
    let t = table.n_steps();
    let v = table.n_variables();
    if window > t {
        return Err(IngestError::WindowTooLarge { window, len: t });
    }
    let n_points = (t - window) / stride + 1;
    let mut data = Vec::with_capacity(n_points * window * v);
    let mut timestamps = Vec::with_capacity(n_points);
    let mut labels = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let start = i * stride;
        for row in start..start + window {
            data.extend_from_slice(table.values().row(row));
        }
        timestamps.push(start as i64);
        labels.push(table.time_labels()[start].clone());
    }
    let points = Matrix::from_flat(data, n_points, window * v);
    let dataset = Dataset::new_allow_single(points, Some(labels), Some(timestamps))?;
    let edges: Vec<Edge> = (1..n_points).map(|i| Edge::new(i - 1, i)).collect();
    let graph = TemporalGraph::new(edges, n_points)?;
    Ok((dataset, graph))
}

/// Vertices of a regular simplex with the given pairwise distance, embedded
/// in `dim >= k - 1` dimensions.
///
/// The construction takes the standard-basis simplex in `R^k`, centers it,
/// and reflects the all-ones direction onto the last axis with a Householder
/// map; the last coordinate is then identically zero and is dropped.
fn simplex_centers(k: usize, dim: usize, distance: f64) -> Vec<Vec<f64>> {
    debug_assert!(k >= 2 && dim >= k - 1);
    let inv_sqrt_k = 1.0 / (k as f64).sqrt();
    // w = normalize(a - e_k) with a the unit all-ones vector
    let mut w = vec![inv_sqrt_k; k];
    w[k - 1] -= 1.0;
    let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut w {
        *x /= norm;
    }
    let scale = distance / std::f64::consts::SQRT_2;
    (0..k)
        .map(|c| {
            // u = e_c - (1/k) 1, then H u = u - 2 (w . u) w
            let mut u = vec![-1.0 / k as f64; k];
            u[c] += 1.0;
            let dot: f64 = w.iter().zip(&u).map(|(a, b)| a * b).sum();
            let mut center = vec![0.0; dim];
            for i in 0..k - 1 {
                center[i] = (u[i] - 2.0 * dot * w[i]) * scale;
            }
            center
        })
        .collect()
}

/// Generates the cyclic-cluster benchmark: `n_clusters` mutually equidistant
/// centers (vertices of a regular simplex scaled by `cluster_distance`),
/// `points_per_cluster` unit-Gaussian samples around each, and one edge from
/// every point to a uniformly random point of the next cluster, wrapping
/// around. Labels record cluster membership. Bit-reproducible for a seed.
pub fn generate_cyclic_clusters(
    config: &ToyConfig,
) -> Result<(Dataset, TemporalGraph), IngestError> {
    let k = config.n_clusters;
    let ppc = config.points_per_cluster;
    if k < 2 {
        return Err(IngestError::InvalidToyConfig("need at least 2 clusters"));
    }
    if ppc == 0 {
        return Err(IngestError::InvalidToyConfig(
            "need at least 1 point per cluster",
        ));
    }
    if config.ambient_dim < 2 {
        return Err(IngestError::InvalidToyConfig("ambient_dim must be >= 2"));
    }
    if !(config.cluster_distance > 0.0) {
        return Err(IngestError::InvalidToyConfig(
            "cluster_distance must be positive",
        ));
    }
    if config.ambient_dim < k - 1 {
        return Err(IngestError::DimensionTooSmall {
            ambient_dim: config.ambient_dim,
            n_clusters: k,
            needed: k - 1,
        });
    }

    let centers = simplex_centers(k, config.ambient_dim, config.cluster_distance);
    let n = k * ppc;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..ppc {
            let row: Vec<f64> = center
                .iter()
                .map(|&m| m + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect();
            rows.push(row);
            labels.push(c.to_string());
        }
    }
    let mut edges = Vec::with_capacity(n);
    for c in 0..k {
        let next_start = ((c + 1) % k) * ppc;
        for i in 0..ppc {
            let source = c * ppc + i;
            let target = next_start + rng.random_range(0..ppc);
            edges.push(Edge::new(source, target));
        }
    }

    let dataset = Dataset::new(Matrix::from_rows(&rows), Some(labels), None)?;
    let graph = TemporalGraph::new(edges, n)?;
    Ok((dataset, graph))
}

/// Loads pre-computed high-dimensional vectors (one row per point, no
/// header) and a two-column edge list of 0-based indices.
pub fn load_highdim_csv(
    points_path: impl AsRef<Path>,
    edges_path: impl AsRef<Path>,
) -> Result<(Dataset, TemporalGraph), IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(points_path.as_ref())
        .map_err(map_csv_error)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(map_csv_error)?;
        let line = record.position().map_or(row_idx as u64 + 1, |p| p.line());
        let row: Vec<f64> = record
            .iter()
            .enumerate()
            .map(|(col, cell)| {
                cell.parse().map_err(|_| IngestError::NonNumericCell {
                    line,
                    column: col.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(IngestError::EmptyFile);
    }
    let dataset = Dataset::new(Matrix::from_rows(&rows), None, None)?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(edges_path.as_ref())
        .map_err(map_csv_error)?;
    let mut edges = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(map_csv_error)?;
        let line = record.position().map_or(row_idx as u64 + 1, |p| p.line());
        if record.len() != 2 {
            return Err(IngestError::ParseError { line });
        }
        let parse = |cell: &str, col: &str| -> Result<usize, IngestError> {
            cell.parse().map_err(|_| IngestError::NonNumericCell {
                line,
                column: col.to_string(),
            })
        };
        edges.push(Edge::new(
            parse(record.get(0).unwrap(), "source")?,
            parse(record.get(1).unwrap(), "target")?,
        ));
    }
    let graph = TemporalGraph::new(edges, dataset.n_points())?;
    Ok((dataset, graph))
}

/// Per-variable z-score of a time series. Constant columns are centered only.
pub fn zscore_table(table: &TimeSeriesTable) -> TimeSeriesTable {
    let mut values = table.values().clone();
    zscore_columns(&mut values);
    TimeSeriesTable::new(
        values,
        table.column_names().to_vec(),
        table.time_labels().to_vec(),
    )
    .expect("z-scoring preserves validity")
}

/// Per-feature z-score of a dataset. Constant columns are centered only.
pub fn zscore_dataset(data: &Dataset) -> Dataset {
    let mut points = data.points().clone();
    zscore_columns(&mut points);
    Dataset::new_allow_single(
        points,
        data.labels().map(<[String]>::to_vec),
        data.timestamps().map(<[i64]>::to_vec),
    )
    .expect("z-scoring preserves validity")
}

fn zscore_columns(matrix: &mut Matrix) {
    let (n, d) = (matrix.n_rows(), matrix.n_cols());
    for col in 0..d {
        let mean = (0..n).map(|i| matrix.get(i, col)).sum::<f64>() / n as f64;
        let var = (0..n)
            .map(|i| (matrix.get(i, col) - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        let std = var.sqrt();
        for i in 0..n {
            let centered = matrix.get(i, col) - mean;
            matrix.set(i, col, if std > 0.0 { centered / std } else { centered });
        }
    }
}
