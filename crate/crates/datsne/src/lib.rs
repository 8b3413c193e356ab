//! Direction-aware t-SNE.
//!
//! Embeds high-dimensional temporal data into 2-D by minimizing the standard
//! t-SNE objective augmented with two direction-aware penalties:
//!
//! * a **directional coherence loss** that pushes spatially nearby arrows
//!   (directed edges between consecutive observations) to point the same way,
//! * an **edge length loss** that penalizes arrow lengths raised to a
//!   user-chosen exponent.
//!
//! The result is a map where the arrows connecting consecutive time points
//! form legible, locally coherent trajectories instead of a tangle.
//!
//! The crate is organized around a small pipeline:
//!
//! * [`model`] — validated domain types ([`Dataset`], [`TemporalGraph`],
//!   [`EmbeddingState`], [`DaTsneConfig`]),
//! * [`ingest`] — CSV loading, sliding-window vectorization of multivariate
//!   time series, and a synthetic cyclic-cluster generator,
//! * [`affinity`] — high-dimensional joint probabilities with per-point
//!   bandwidth calibration to a target perplexity,
//! * [`tsne`] — low-dimensional affinities, KL gradient, and the two-phase
//!   delta-bar-delta optimization loop,
//! * [`dal`] — the direction-aware losses, their analytic gradients, and the
//!   segment-segment distance geometry underneath them,
//! * [`render`] / [`pipeline`] — SVG output, result persistence, and the
//!   end-to-end run driver used by the CLI.
//!
//! Hot inner loops run on rayon when the `parallel` feature (default) is
//! enabled; reductions happen in a fixed order, so results are identical
//! across thread counts and to the sequential fallback.

pub mod affinity;
pub mod dal;
mod exec;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod render;
pub mod tsne;

pub use model::{DaTsneConfig, Dataset, Edge, EmbeddingState, Matrix, TemporalGraph};
