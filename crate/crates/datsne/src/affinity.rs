//! High-dimensional joint probabilities.
//!
//! Each point gets a Gaussian bandwidth calibrated by bisection so that the
//! Shannon entropy of its conditional neighbor distribution matches the
//! target perplexity; the conditionals are then symmetrized into a joint
//! matrix that sums to one. Dense N×N storage throughout — the intended
//! datasets are a few hundred points.

use thiserror::Error;

use crate::exec::map_indexed;
use crate::model::{Dataset, Matrix};

/// Entropy tolerance (nats) for the bandwidth bisection.
const ENTROPY_TOL: f64 = 1e-5;
/// Bisection bracket for beta = 1 / (2 sigma^2).
const BETA_BRACKET: (f64, f64) = (1e-20, 1e20);
const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AffinityError {
    #[error("bandwidth search did not converge for point {point}")]
    NoConvergence { point: usize },
    #[error("invalid affinity matrix: {0}")]
    InvalidMatrix(&'static str),
}

/// Symmetric joint probabilities over point pairs: zero diagonal,
/// `p[i][j] = p[j][i]`, entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    p: Matrix,
}

impl AffinityMatrix {
    /// Wraps a precomputed matrix, checking the structural invariants.
    pub fn new(p: Matrix) -> Result<Self, AffinityError> {
        if p.n_rows() != p.n_cols() {
            return Err(AffinityError::InvalidMatrix("not square"));
        }
        let n = p.n_rows();
        let mut sum = 0.0;
        for i in 0..n {
            if p.get(i, i) != 0.0 {
                return Err(AffinityError::InvalidMatrix("nonzero diagonal"));
            }
            for j in 0..n {
                let v = p.get(i, j);
                if !(v >= 0.0) {
                    return Err(AffinityError::InvalidMatrix("negative or NaN entry"));
                }
                if v != p.get(j, i) {
                    return Err(AffinityError::InvalidMatrix("not symmetric"));
                }
                sum += v;
            }
        }
        if (sum - 1.0).abs() > 1e-10 {
            return Err(AffinityError::InvalidMatrix("does not sum to 1"));
        }
        Ok(Self { p })
    }

    #[inline]
    pub fn n_points(&self) -> usize {
        self.p.n_rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p.get(i, j)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.p
    }
}

/// Symmetric matrix of squared Euclidean distances with zero diagonal.
///
/// Each unordered pair is computed once and mirrored, so the result is
/// symmetric to the bit.
pub fn pairwise_sq_distances(data: &Dataset) -> Matrix {
    let n = data.n_points();
    let points = data.points();
    let upper = map_indexed(n, true, |i| {
        let xi = points.row(i);
        (i + 1..n)
            .map(|j| {
                let xj = points.row(j);
                xi.iter()
                    .zip(xj)
                    .map(|(a, b)| {
                        let d = a - b;
                        d * d
                    })
                    .sum::<f64>()
            })
            .collect::<Vec<f64>>()
    });
    let mut out = Matrix::zeros(n, n);
    for (i, row) in upper.iter().enumerate() {
        for (offset, &d) in row.iter().enumerate() {
            let j = i + 1 + offset;
            out.set(i, j, d);
            out.set(j, i, d);
        }
    }
    out
}

/// Entropy (nats) of the conditional distribution induced by `beta` on one
/// row of squared distances, along with the shifted partition sums.
///
/// Distances are shifted by the row's off-diagonal minimum before
/// exponentiation so the largest term is exactly one; the shift cancels in
/// the normalization.
fn row_entropy(sq_dist_row: &[f64], self_index: usize, shift: f64, beta: f64) -> f64 {
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for (j, &d) in sq_dist_row.iter().enumerate() {
        if j == self_index {
            continue;
        }
        let delta = d - shift;
        let w = (-beta * delta).exp();
        sum += w;
        weighted += delta * w;
    }
    sum.ln() + beta * weighted / sum
}

/// Calibrates the Gaussian bandwidth of one point by bisection on
/// `beta = 1 / (2 sigma^2)` until the conditional entropy matches
/// `ln(perplexity)` within 1e-5 nats.
///
/// Returns `beta` and the conditional probabilities (self entry zero,
/// summing to one). Rows whose off-diagonal distances are all equal have
/// beta-independent entropy; they fall back to the uniform distribution.
pub fn calibrate_bandwidth(
    sq_dist_row: &[f64],
    self_index: usize,
    perplexity: f64,
) -> Result<(f64, Vec<f64>), AffinityError> {
    let n = sq_dist_row.len();
    debug_assert!(self_index < n && n >= 2);
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for (j, &d) in sq_dist_row.iter().enumerate() {
        if j != self_index {
            min = min.min(d);
            max = max.max(d);
        }
    }
    if max == min {
        // Duplicate-point row (or a single neighbor): every beta yields the
        // uniform distribution, so return it directly.
        let p = 1.0 / (n - 1) as f64;
        let mut cond = vec![p; n];
        cond[self_index] = 0.0;
        return Ok((1.0, cond));
    }

    let target = perplexity.ln();
    let (mut lo, mut hi) = BETA_BRACKET;
    let mut beta = 1.0;
    let mut converged = false;
    for _ in 0..MAX_BISECTIONS {
        beta = 0.5 * (lo + hi);
        let entropy = row_entropy(sq_dist_row, self_index, min, beta);
        if (entropy - target).abs() <= ENTROPY_TOL {
            converged = true;
            break;
        }
        // Entropy decreases monotonically in beta.
        if entropy > target {
            lo = beta;
        } else {
            hi = beta;
        }
    }
    if !converged {
        return Err(AffinityError::NoConvergence { point: self_index });
    }

    let mut cond = vec![0.0; n];
    let mut sum = 0.0;
    for (j, &d) in sq_dist_row.iter().enumerate() {
        if j != self_index {
            let w = (-beta * (d - min)).exp();
            cond[j] = w;
            sum += w;
        }
    }
    for v in &mut cond {
        *v /= sum;
    }
    Ok((beta, cond))
}

/// Builds the joint affinity matrix: per-point bandwidth calibration, then
/// symmetrization `p_ij = (p_{j|i} + p_{i|j}) / 2N`.
pub fn build_affinities(
    data: &Dataset,
    perplexity: f64,
) -> Result<AffinityMatrix, AffinityError> {
    build_affinities_impl(data, perplexity, true)
}

/// Sequential variant of [`build_affinities`]; this is the code path the
/// crate uses when the `parallel` feature is disabled.
pub fn build_affinities_seq(
    data: &Dataset,
    perplexity: f64,
) -> Result<AffinityMatrix, AffinityError> {
    build_affinities_impl(data, perplexity, false)
}

fn build_affinities_impl(
    data: &Dataset,
    perplexity: f64,
    parallel: bool,
) -> Result<AffinityMatrix, AffinityError> {
    let n = data.n_points();
    let sq_dists = pairwise_sq_distances(data);
    let rows = map_indexed(n, parallel, |i| {
        calibrate_bandwidth(sq_dists.row(i), i, perplexity).map(|(_, cond)| cond)
    });
    let mut cond = Vec::with_capacity(n);
    for row in rows {
        cond.push(row?);
    }

    let mut p = Matrix::zeros(n, n);
    let norm = 2.0 * n as f64;
    for i in 0..n {
        for j in i + 1..n {
            let v = (cond[i][j] + cond[j][i]) / norm;
            p.set(i, j, v);
            p.set(j, i, v);
        }
    }
    Ok(AffinityMatrix { p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Dataset;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn dataset(rows: &[Vec<f64>]) -> Dataset {
        Dataset::new(Matrix::from_rows(rows), None, None).unwrap()
    }

    fn random_dataset(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = StdRng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        dataset(&rows)
    }

    fn entropy_of(probs: &[f64]) -> f64 {
        probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    }

    #[test]
    fn three_four_five_triangle() {
        let d = dataset(&[vec![0.0, 0.0], vec![3.0, 4.0]]);
        let m = pairwise_sq_distances(&d);
        assert_eq!(m.get(0, 1), 25.0);
        assert_eq!(m.get(1, 0), 25.0);
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn distances_match_naive_oracle() {
        let data = random_dataset(5, 4, 7);
        let m = pairwise_sq_distances(&data);
        for i in 0..5 {
            for j in 0..5 {
                let mut acc = 0.0;
                for k in 0..4 {
                    let diff = data.points().get(i, k) - data.points().get(j, k);
                    acc += diff * diff;
                }
                assert_abs_diff_eq!(m.get(i, j), acc, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn equidistant_neighbors_are_uniform() {
        // Two neighbors of point 0 at the same distance: the conditional is
        // forced to (0, 0.5, 0.5) with entropy ln 2 for any beta.
        let row = [0.0, 4.0, 4.0];
        let (_, cond) = calibrate_bandwidth(&row, 0, 2.0).unwrap();
        assert_eq!(cond, vec![0.0, 0.5, 0.5]);
        assert_abs_diff_eq!(entropy_of(&cond), 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn near_maximum_perplexity_is_near_uniform() {
        let data = random_dataset(12, 3, 3);
        let sq = pairwise_sq_distances(&data);
        let n = data.n_points();
        let (_, cond) = calibrate_bandwidth(sq.row(0), 0, (n - 1) as f64).unwrap();
        let uniform = 1.0 / (n - 1) as f64;
        for (j, &p) in cond.iter().enumerate() {
            if j != 0 {
                assert_abs_diff_eq!(p, uniform, epsilon = 1e-3);
            }
        }
    }

    #[test]
    fn achieved_perplexity_matches_target() {
        let data = random_dataset(10, 4, 11);
        let sq = pairwise_sq_distances(&data);
        for i in 0..10 {
            let (_, cond) = calibrate_bandwidth(sq.row(i), i, 5.0).unwrap();
            assert_abs_diff_eq!(cond.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            let achieved = entropy_of(&cond).exp();
            assert!(
                (achieved / 5.0 - 1.0).abs() <= 1e-4,
                "row {i}: achieved perplexity {achieved}"
            );
        }
    }

    #[test]
    fn entropy_is_monotone_in_beta() {
        let data = random_dataset(8, 3, 5);
        let sq = pairwise_sq_distances(&data);
        for i in 0..8 {
            let row = sq.row(i);
            let min = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &d)| d)
                .fold(f64::INFINITY, f64::min);
            for beta in [0.01, 0.1, 1.0, 10.0] {
                let h1 = row_entropy(row, i, min, beta);
                let h2 = row_entropy(row, i, min, 2.0 * beta);
                assert!(h2 < h1, "entropy not decreasing at beta {beta}");
            }
        }
    }

    #[test]
    fn two_point_joint_matrix() {
        let data = dataset(&[vec![0.0], vec![5.0]]);
        let p = build_affinities(&data, 1.5).unwrap();
        assert_eq!(p.get(0, 1), 0.5);
        assert_eq!(p.get(1, 0), 0.5);
        assert_eq!(p.get(0, 0), 0.0);
        assert_eq!(p.get(1, 1), 0.0);
    }

    #[test]
    fn joint_matrix_invariants() {
        let data = random_dataset(30, 6, 42);
        let p = build_affinities(&data, 10.0).unwrap();
        let n = p.n_points();
        let mut sum = 0.0;
        for i in 0..n {
            assert_eq!(p.get(i, i), 0.0);
            for j in 0..n {
                assert_eq!(p.get(i, j), p.get(j, i), "exact symmetry at ({i},{j})");
                assert!(p.get(i, j) >= 0.0);
                sum += p.get(i, j);
            }
        }
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-10);
        AffinityMatrix::new(p.matrix().clone()).unwrap();
    }

    #[test]
    fn conditionals_sum_to_one_before_symmetrization() {
        let data = random_dataset(15, 4, 9);
        let sq = pairwise_sq_distances(&data);
        for i in 0..15 {
            let (_, cond) = calibrate_bandwidth(sq.row(i), i, 6.0).unwrap();
            assert_abs_diff_eq!(cond.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn duplicate_points_fall_back_to_uniform() {
        let data = dataset(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]);
        let p = build_affinities(&data, 1.5).unwrap();
        let mut sum = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                sum += p.get(i, j);
            }
        }
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.get(0, 1), p.get(0, 2), epsilon = 1e-15);
    }

    #[test]
    fn permutation_equivariance() {
        let data = random_dataset(12, 5, 17);
        let p = build_affinities(&data, 4.0).unwrap();

        // Reverse the point order and compare P under the same relabeling.
        let n = data.n_points();
        let perm: Vec<usize> = (0..n).rev().collect();
        let rows: Vec<Vec<f64>> = perm.iter().map(|&i| data.points().row(i).to_vec()).collect();
        let permuted = dataset(&rows);
        let p2 = build_affinities(&permuted, 4.0).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert_abs_diff_eq!(p2.get(i, j), p.get(perm[i], perm[j]), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn parallel_matches_sequential_bitwise() {
        let data = random_dataset(20, 5, 23);
        let a = build_affinities(&data, 7.0).unwrap();
        let b = build_affinities_seq(&data, 7.0).unwrap();
        assert_eq!(a.matrix().as_slice(), b.matrix().as_slice());
    }
}
