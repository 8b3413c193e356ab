//! Direction-aware losses.
//!
//! The directional coherence loss pushes spatially nearby arrows to point the
//! same way: every pair of edges pays `(1 - u_a . u_b)^2`, weighted by a
//! Gaussian kernel on the distance between the two line segments, normalized
//! over unordered pairs. The edge length loss penalizes `|p|^alpha` per edge.
//!
//! Gradients flow through the unit vectors only; the pair weights are treated
//! as constants of the current iteration (they are refreshed anyway because
//! the geometry and the adaptive scale are recomputed every step).
//! Differentiating the weights would require pushing derivatives through the
//! clamped segment-distance minimizers, which are piecewise and non-smooth,
//! and would reward moving arrows apart instead of aligning them.

use crate::exec::map_indexed;
use crate::model::{DaTsneConfig, TemporalGraph};

/// Guard below which an edge is considered degenerate: its unit vector is
/// undefined, so it is excluded from the coherence loss.
pub const DEFAULT_EPSILON_LEN: f64 = 1e-12;

/// Direction-aware loss parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DalParams {
    pub lambda_dcl: f64,
    pub lambda_ell: f64,
    pub alpha: f64,
    pub sigma_fraction: f64,
    pub epsilon_len: f64,
}

impl Default for DalParams {
    fn default() -> Self {
        Self {
            lambda_dcl: 10.0,
            lambda_ell: 0.5,
            alpha: 1.5,
            sigma_fraction: 0.05,
            epsilon_len: DEFAULT_EPSILON_LEN,
        }
    }
}

impl DalParams {
    pub fn from_config(config: &DaTsneConfig) -> Self {
        Self {
            lambda_dcl: config.lambda_dcl,
            lambda_ell: config.lambda_ell,
            alpha: config.alpha,
            sigma_fraction: config.sigma_fraction,
            epsilon_len: DEFAULT_EPSILON_LEN,
        }
    }
}

/// One embedded arrow: endpoints, displacement, length, unit direction.
///
/// Recomputed from the coordinates at every evaluation, never cached across
/// iterations. `unit` is the zero vector when the edge is degenerate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeGeometry {
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub vector: [f64; 2],
    pub length: f64,
    pub unit: [f64; 2],
}

impl EdgeGeometry {
    pub fn new(start: [f64; 2], end: [f64; 2]) -> Self {
        let vector = [end[0] - start[0], end[1] - start[1]];
        let length = (vector[0] * vector[0] + vector[1] * vector[1]).sqrt();
        let unit = if length > 0.0 {
            [vector[0] / length, vector[1] / length]
        } else {
            [0.0, 0.0]
        };
        Self {
            start,
            end,
            vector,
            length,
            unit,
        }
    }
}

/// Closest approach between two segments: the minimum distance and the
/// parameters achieving it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentClosest {
    pub distance: f64,
    /// Position on the first segment: `s*a0 + (1-s)*a1`.
    pub s: f64,
    /// Position on the second segment: `t*b0 + (1-t)*b1`.
    pub t: f64,
}

/// Minimum distance between the closed segments `[a0, a1]` and `[b0, b1]`,
/// i.e. the minimum over `s, t` in `[0,1]` of
/// `|| (s*a0 + (1-s)*a1) - (t*b0 + (1-t)*b1) ||`. Zero exactly when the
/// segments intersect; degenerate point-segments are allowed.
///
/// The squared distance is a convex quadratic over the unit box, so the
/// minimizer is either the interior stationary point or the clamped
/// stationary point of one of the four box edges; all candidates are
/// evaluated directly and the best is kept.
pub fn segment_distance(
    a0: [f64; 2],
    a1: [f64; 2],
    b0: [f64; 2],
    b1: [f64; 2],
) -> SegmentClosest {
    let da = [a0[0] - a1[0], a0[1] - a1[1]];
    let db = [b0[0] - b1[0], b0[1] - b1[1]];
    let r = [a1[0] - b1[0], a1[1] - b1[1]];

    let aa = da[0] * da[0] + da[1] * da[1];
    let bb = da[0] * db[0] + da[1] * db[1];
    let cc = db[0] * db[0] + db[1] * db[1];
    let dd = da[0] * r[0] + da[1] * r[1];
    let ee = db[0] * r[0] + db[1] * r[1];

    let sq_dist = |s: f64, t: f64| {
        let vx = r[0] + s * da[0] - t * db[0];
        let vy = r[1] + s * da[1] - t * db[1];
        vx * vx + vy * vy
    };
    let s_at = |t: f64| {
        if aa > 0.0 {
            ((bb * t - dd) / aa).clamp(0.0, 1.0)
        } else {
            0.0
        }
    };
    let t_at = |s: f64| {
        if cc > 0.0 {
            ((bb * s + ee) / cc).clamp(0.0, 1.0)
        } else {
            0.0
        }
    };

    let mut candidates = [(0.0, t_at(0.0)), (1.0, t_at(1.0)), (s_at(0.0), 0.0), (s_at(1.0), 1.0), (0.0, 0.0)];
    let mut n_candidates = 4;
    let det = aa * cc - bb * bb;
    if det > 0.0 {
        let s = (bb * ee - cc * dd) / det;
        let t = (aa * ee - bb * dd) / det;
        if (0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&t) {
            candidates[4] = (s, t);
            n_candidates = 5;
        }
    }

    let mut best = (f64::INFINITY, 0.0, 0.0);
    for &(s, t) in &candidates[..n_candidates] {
        let f = sq_dist(s, t);
        if f < best.0 {
            best = (f, s, t);
        }
    }
    SegmentClosest {
        distance: best.0.max(0.0).sqrt(),
        s: best.1,
        t: best.2,
    }
}

/// Coherence kernel scale for the current embedding: `sigma_fraction` times
/// the embedding span (the larger of the two per-dimension coordinate
/// ranges). Returns the scale and whether the span was degenerate (zero), in
/// which case the fraction itself is used as an arbitrary positive fallback.
pub fn adaptive_sigma(coords: &[[f64; 2]], sigma_fraction: f64) -> (f64, bool) {
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for p in coords {
        for k in 0..2 {
            min[k] = min[k].min(p[k]);
            max[k] = max[k].max(p[k]);
        }
    }
    let span = (max[0] - min[0]).max(max[1] - min[1]);
    if span > 0.0 {
        (sigma_fraction * span, false)
    } else {
        (sigma_fraction, true)
    }
}

#[inline]
fn pair_weight(distance: f64, sigma: f64) -> f64 {
    (2.0 * std::f64::consts::PI * sigma * sigma).sqrt().recip()
        * (-distance / (2.0 * sigma * sigma)).exp()
}

/// Kernel weight and direction penalty for one pair of non-degenerate edges:
/// the weight is a Gaussian kernel on the segment-segment distance (the
/// distance enters the exponent unsquared, and the `1/sqrt(2 pi sigma^2)`
/// prefactor is kept, so the effective coherence strength scales like
/// `1/sigma`); the penalty is `(1 - u_a . u_b)^2`, ranging from 0 for
/// aligned to 4 for opposed directions.
pub fn dcl_pair_terms(
    edge_a: &EdgeGeometry,
    edge_b: &EdgeGeometry,
    sigma: f64,
) -> (f64, f64) {
    let closest = segment_distance(edge_a.start, edge_a.end, edge_b.start, edge_b.end);
    let weight = pair_weight(closest.distance, sigma);
    let dot = edge_a.unit[0] * edge_b.unit[0] + edge_a.unit[1] * edge_b.unit[1];
    let penalty = (1.0 - dot) * (1.0 - dot);
    (weight, penalty)
}

/// Directional coherence loss and its gradient with respect to every
/// embedding coordinate.
///
/// The loss sums `weight * penalty` over unordered edge pairs and divides by
/// `C(|E|, 2)`. The gradient flows through the unit vectors only (weights are
/// per-iteration constants, see the module docs). Edges no longer than
/// `epsilon_len` contribute nothing. Fewer than two edges give zero loss and
/// gradient.
pub fn dcl_loss_grad(
    coords: &[[f64; 2]],
    graph: &TemporalGraph,
    sigma: f64,
    epsilon_len: f64,
) -> (f64, Vec<[f64; 2]>) {
    dcl_impl(coords, graph, sigma, epsilon_len, true)
}

/// Sequential variant of [`dcl_loss_grad`]; the code path used when the
/// `parallel` feature is disabled.
pub fn dcl_loss_grad_seq(
    coords: &[[f64; 2]],
    graph: &TemporalGraph,
    sigma: f64,
    epsilon_len: f64,
) -> (f64, Vec<[f64; 2]>) {
    dcl_impl(coords, graph, sigma, epsilon_len, false)
}

#[derive(Clone, Copy)]
struct EdgePart {
    loss: f64,
    grad_start: [f64; 2],
    grad_end: [f64; 2],
}

fn dcl_impl(
    coords: &[[f64; 2]],
    graph: &TemporalGraph,
    sigma: f64,
    epsilon_len: f64,
    parallel: bool,
) -> (f64, Vec<[f64; 2]>) {
    let n = coords.len();
    let edges = graph.edges();
    let m = edges.len();
    let mut grad = vec![[0.0; 2]; n];
    if m < 2 {
        return (0.0, grad);
    }

    let geometry: Vec<EdgeGeometry> = edges
        .iter()
        .map(|e| EdgeGeometry::new(coords[e.source], coords[e.target]))
        .collect();

    // Each outer edge accumulates the loss share of pairs (a, b) with b > a
    // and the gradient of *its own* endpoints over all pairs it belongs to.
    // Parts are folded in edge order, so the reduction is schedule-free.
    let parts = map_indexed(m, parallel, |ai| {
        let mut part = EdgePart {
            loss: 0.0,
            grad_start: [0.0; 2],
            grad_end: [0.0; 2],
        };
        let ea = &geometry[ai];
        if ea.length <= epsilon_len {
            return part;
        }
        for (bi, eb) in geometry.iter().enumerate() {
            if bi == ai || eb.length <= epsilon_len {
                continue;
            }
            let closest = segment_distance(ea.start, ea.end, eb.start, eb.end);
            let weight = pair_weight(closest.distance, sigma);
            let dot = ea.unit[0] * eb.unit[0] + ea.unit[1] * eb.unit[1];
            if bi > ai {
                part.loss += weight * (1.0 - dot) * (1.0 - dot);
            }
            // d(u_a . u_b)/d(p_a) = (u_b - (u_a . u_b) u_a) / |p_a|
            let coef = 2.0 * weight * (dot - 1.0) / ea.length;
            let gx = coef * (eb.unit[0] - dot * ea.unit[0]);
            let gy = coef * (eb.unit[1] - dot * ea.unit[1]);
            part.grad_end[0] += gx;
            part.grad_end[1] += gy;
            part.grad_start[0] -= gx;
            part.grad_start[1] -= gy;
        }
        part
    });

    let norm = 2.0 / (m * (m - 1)) as f64;
    let mut loss = 0.0;
    for (part, edge) in parts.iter().zip(edges) {
        loss += part.loss;
        grad[edge.source][0] += norm * part.grad_start[0];
        grad[edge.source][1] += norm * part.grad_start[1];
        grad[edge.target][0] += norm * part.grad_end[0];
        grad[edge.target][1] += norm * part.grad_end[1];
    }
    (loss * norm, grad)
}

/// Edge length loss `(1/|E|) * sum |p|^alpha` and its gradient.
///
/// Edges no longer than `epsilon_len` contribute `epsilon_len^alpha` to the
/// sum and no gradient, guarding the `alpha < 1` singularity at zero length.
pub fn ell_loss_grad(
    coords: &[[f64; 2]],
    graph: &TemporalGraph,
    alpha: f64,
    epsilon_len: f64,
) -> (f64, Vec<[f64; 2]>) {
    let n = coords.len();
    let edges = graph.edges();
    let m = edges.len();
    let mut grad = vec![[0.0; 2]; n];
    if m == 0 {
        return (0.0, grad);
    }
    let inv_m = 1.0 / m as f64;
    let mut loss = 0.0;
    for edge in edges {
        let g = EdgeGeometry::new(coords[edge.source], coords[edge.target]);
        if g.length <= epsilon_len {
            loss += epsilon_len.powf(alpha);
            continue;
        }
        loss += g.length.powf(alpha);
        let coef = alpha * inv_m * g.length.powf(alpha - 1.0);
        grad[edge.target][0] += coef * g.unit[0];
        grad[edge.target][1] += coef * g.unit[1];
        grad[edge.source][0] -= coef * g.unit[0];
        grad[edge.source][1] -= coef * g.unit[1];
    }
    (loss * inv_m, grad)
}

/// Directional coherence value of a fixed embedding, used as a metric to
/// compare embeddings: lower means more directionally coherent. Identical to
/// the loss reported by [`dcl_loss_grad`] on the same inputs.
pub fn coherence_score(coords: &[[f64; 2]], graph: &TemporalGraph, sigma: f64) -> f64 {
    dcl_loss_grad(coords, graph, sigma, DEFAULT_EPSILON_LEN).0
}
