//! Pairwise consistent measurement set maximization for loop closures.

use super::graph::{Factor, PoseGraph};
use crate::Pose2;
use nalgebra::{Matrix3, Vector3};

/// Mahalanobis norm of the cycle closing loop closures `a` and `b` through
/// the current estimates:
/// `log(Z_a^-1 * (X_ia^-1 X_ib) * Z_b * (X_cb^-1 X_ca))`.
///
/// The covariance sums both closures' covariances and one odometry
/// covariance per keyframe step along the two connecting chains.
pub fn pairwise_distance(a: &Factor, b: &Factor, xs: &[Pose2], odometry_cov: &Matrix3<f64>) -> f64 {
    let d_start = xs[a.from].between(&xs[b.from]);
    let d_end = xs[b.to].between(&xs[a.to]);
    let cycle = a
        .relative
        .inverse()
        .compose(&d_start)
        .compose(&b.relative)
        .compose(&d_end);
    let e = Vector3::from(cycle.log());
    let steps = a.from.abs_diff(b.from) + a.to.abs_diff(b.to);
    let cov_of = |f: &Factor| f.information_matrix().try_inverse().unwrap_or_else(Matrix3::zeros);
    let cov = cov_of(a) + cov_of(b) + odometry_cov * steps as f64;
    match cov.try_inverse() {
        Some(inv) => (e.transpose() * inv * e)[(0, 0)].max(0.0).sqrt(),
        None => f64::INFINITY,
    }
}

/// Boolean adjacency of the pairwise-consistency graph.
pub fn consistency_matrix(
    candidates: &[Factor],
    xs: &[Pose2],
    odometry_cov: &Matrix3<f64>,
    threshold: f64,
) -> Vec<Vec<bool>> {
    let n = candidates.len();
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        adj[i][i] = true;
        for j in i + 1..n {
            let ok = pairwise_distance(&candidates[i], &candidates[j], xs, odometry_cov) < threshold;
            adj[i][j] = ok;
            adj[j][i] = ok;
        }
    }
    adj
}

/// Exact maximum clique by branch and bound. Among maximum cliques the
/// lexicographically smallest index set is returned.
pub fn max_clique(adj: &[Vec<bool>]) -> Vec<usize> {
    fn grow(adj: &[Vec<bool>], current: &mut Vec<usize>, candidates: &[usize], best: &mut Vec<usize>) {
        if current.len() > best.len() {
            *best = current.clone();
        }
        for (k, &v) in candidates.iter().enumerate() {
            // Bound: even taking every remaining candidate cannot win.
            if current.len() + candidates.len() - k <= best.len() {
                return;
            }
            let rest: Vec<usize> = candidates[k + 1..].iter().copied().filter(|&u| adj[v][u]).collect();
            current.push(v);
            grow(adj, current, &rest, best);
            current.pop();
        }
    }
    let all: Vec<usize> = (0..adj.len()).collect();
    let mut best = Vec::new();
    grow(adj, &mut Vec::new(), &all, &mut best);
    best
}

/// Indices of the largest mutually consistent subset of `candidates`.
pub fn pcm_select(candidates: &[Factor], xs: &[Pose2], odometry_cov: &Matrix3<f64>, threshold: f64) -> Vec<usize> {
    if candidates.is_empty() {
        return Vec::new();
    }
    max_clique(&consistency_matrix(candidates, xs, odometry_cov, threshold))
}

/// Accepted candidates, judged against the graph's current estimates.
pub fn pcm_filter(candidates: &[Factor], graph: &PoseGraph, odometry_sigmas: [f64; 3], threshold: f64) -> Vec<Factor> {
    let cov = Matrix3::from_diagonal(&Vector3::from(odometry_sigmas.map(|s| s * s)));
    pcm_select(candidates, &graph.estimates(), &cov, threshold)
        .into_iter()
        .map(|i| candidates[i].clone())
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::slam::graph::FactorKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute force over all subsets, smallest index set among the largest.
    fn clique_oracle(adj: &[Vec<bool>]) -> Vec<usize> {
        let n = adj.len();
        let mut best: Vec<usize> = Vec::new();
        for mask in 0u32..(1 << n) {
            let set: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
            let ok = set.iter().all(|&i| set.iter().all(|&j| adj[i][j]));
            if ok && (set.len() > best.len() || (set.len() == best.len() && set < best)) {
                best = set;
            }
        }
        best
    }

    #[test]
    fn clique_matches_subset_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let n = rng.random_range(1..12);
            let mut adj = vec![vec![false; n]; n];
            for i in 0..n {
                adj[i][i] = true;
                for j in i + 1..n {
                    let e = rng.random_bool(0.5);
                    adj[i][j] = e;
                    adj[j][i] = e;
                }
            }
            assert_eq!(max_clique(&adj), clique_oracle(&adj));
        }
    }

    /// Truth poses on a circle, plus closures between late and early nodes.
    pub(crate) fn toy(outlier_offset: f64, seed: u64) -> (Vec<Pose2>, Vec<Factor>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Pose2> = (0..20)
            .map(|i| {
                let a = i as f64 * 0.3;
                Pose2::new(5.0 * a.cos(), 5.0 * a.sin(), a + std::f64::consts::FRAC_PI_2)
            })
            .collect();
        let mut noisy = |p: Pose2| {
            Pose2::new(
                p.x + rng.random_range(-0.05..0.05),
                p.y + rng.random_range(-0.05..0.05),
                p.yaw + rng.random_range(-0.01..0.01),
            )
        };
        let mut c = Vec::new();
        for (i, j) in [(0, 19), (1, 18), (2, 17)] {
            let z = noisy(xs[i].between(&xs[j]));
            c.push(Factor::between(FactorKind::Nssm, i, j, z, [0.1, 0.1, 0.02]));
        }
        let bad = xs[3].between(&xs[16]).compose(&Pose2::new(outlier_offset, 0.0, 0.0));
        c.push(Factor::between(FactorKind::Nssm, 3, 16, bad, [0.1, 0.1, 0.02]));
        (xs, c)
    }

    #[test]
    fn gross_outlier_is_rejected() {
        let cov = Matrix3::from_diagonal(&Vector3::new(0.01, 0.01, 0.0004));
        let (xs, c) = toy(5.0, 1);
        assert_eq!(pcm_select(&c, &xs, &cov, 3.5), vec![0, 1, 2]);
    }

    #[test]
    fn trivial_sets() {
        let cov = Matrix3::identity();
        let (xs, c) = toy(5.0, 2);
        assert!(pcm_select(&[], &xs, &cov, 3.5).is_empty());
        assert_eq!(pcm_select(&c[..1], &xs, &cov, 3.5), vec![0]);
    }
}
