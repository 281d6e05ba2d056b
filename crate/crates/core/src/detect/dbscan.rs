//! Density-based clustering of detections in the image plane.

use crate::scalar::Scalar;
use std::collections::{HashMap, VecDeque};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Clustering {
    /// Cluster id per input point, `None` for noise.
    pub labels: Vec<Option<usize>>,
    /// Member indices per cluster, ascending.
    pub clusters: Vec<Vec<usize>>,
}

impl Clustering {
    pub fn noise(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.is_none().then_some(i))
            .collect()
    }
}

/// Uniform grid with cell size `eps`; a radius query visits 3x3 cells.
struct GridIndex {
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl GridIndex {
    fn key<T: Scalar>(p: &[T; 2], eps: T) -> (i64, i64) {
        let kx = (p[0] / eps).floor().to_i64().unwrap_or(i64::MAX);
        let ky = (p[1] / eps).floor().to_i64().unwrap_or(i64::MAX);
        (kx, ky)
    }

    fn new<T: Scalar>(points: &[[T; 2]], eps: T) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, eps)).or_default().push(i);
        }
        Self { cells }
    }

    /// Indices within `eps` of point `i`, itself included, ascending.
    fn neighbors<T: Scalar>(&self, points: &[[T; 2]], i: usize, eps: T) -> Vec<usize> {
        let p = &points[i];
        let (kx, ky) = Self::key(p, eps);
        let eps2 = eps * eps;
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(bucket) = self.cells.get(&(kx.saturating_add(dx), ky.saturating_add(dy))) {
                    for &j in bucket {
                        let q = &points[j];
                        let (ex, ey) = (p[0] - q[0], p[1] - q[1]);
                        if ex * ex + ey * ey <= eps2 {
                            out.push(j);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// DBSCAN with the point itself counted in its own neighborhood.
///
/// Points are scanned in ascending index order and clusters grow
/// breadth-first, so a border point reachable from several clusters joins
/// the one discovered first (the lowest cluster id).
pub fn dbscan<T: Scalar>(points: &[[T; 2]], eps: T, min_pts: usize) -> Clustering {
    assert!(eps > T::zero(), "eps must be positive");
    assert!(min_pts >= 1, "min_pts must be at least 1");
    let index = GridIndex::new(points, eps);
    let n = points.len();
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let seeds = index.neighbors(points, i, eps);
        if seeds.len() < min_pts {
            continue;
        }
        let id = clusters.len();
        let mut members = vec![i];
        labels[i] = Some(id);
        let mut queue: VecDeque<usize> = seeds.into_iter().filter(|&j| j != i).collect();
        while let Some(j) = queue.pop_front() {
            if labels[j].is_none() {
                labels[j] = Some(id);
                members.push(j);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let nb = index.neighbors(points, j, eps);
            if nb.len() >= min_pts {
                queue.extend(nb.into_iter().filter(|&k| !visited[k] || labels[k].is_none()));
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }
    Clustering { labels, clusters }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    /// Independent reference: brute-force core detection, union-find over
    /// core points, border points to the lowest-numbered adjacent cluster.
    fn reference(points: &[[f64; 2]], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
        let n = points.len();
        let near = |i: usize, j: usize| {
            let (dx, dy) = (points[i][0] - points[j][0], points[i][1] - points[j][1]);
            dx * dx + dy * dy <= eps * eps
        };
        let core: Vec<bool> = (0..n)
            .map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts)
            .collect();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut Vec<usize>, x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            let mut y = x;
            while p[y] != r {
                let nx = p[y];
                p[y] = r;
                y = nx;
            }
            r
        }
        for i in 0..n {
            for j in 0..n {
                if core[i] && core[j] && near(i, j) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
        // Clusters are numbered by their smallest core index.
        let mut id_of_root = std::collections::HashMap::new();
        for i in 0..n {
            if core[i] {
                let r = find(&mut parent, i);
                let next = id_of_root.len();
                id_of_root.entry(r).or_insert(next);
            }
        }
        (0..n)
            .map(|i| {
                if core[i] {
                    Some(id_of_root[&find(&mut parent, i)])
                } else {
                    (0..n)
                        .filter(|&j| core[j] && near(i, j))
                        .map(|j| id_of_root[&find(&mut parent, j)])
                        .min()
                }
            })
            .collect()
    }

    #[test]
    fn two_separated_groups() {
        let eps = 0.5;
        let mut pts = Vec::new();
        for k in 0..10 {
            pts.push([k as f64 * 0.1, 0.0]);
            pts.push([100.0 * eps + k as f64 * 0.1, 0.0]);
        }
        let c = dbscan(&pts, eps, 3);
        assert_eq!(c.clusters.len(), 2);
        assert!(c.noise().is_empty());
    }

    #[test]
    fn sparse_points_are_noise() {
        let pts: Vec<[f64; 2]> = (0..8).map(|k| [k as f64 * 2.0, 0.0]).collect();
        let c = dbscan(&pts, 1.0, 2);
        assert!(c.clusters.is_empty());
        assert_eq!(c.noise().len(), 8);
        // With min_pts = 1 every point is its own cluster.
        assert_eq!(dbscan(&pts, 1.0, 1).clusters.len(), 8);
    }

    #[test]
    fn border_tie_goes_to_first_cluster() {
        // Index 4 reaches one core of each group but is not core itself.
        let a = [[0.0, 0.0], [-0.05, 0.0], [-0.1, 0.0], [-0.15, 0.0]];
        let b = [[2.0, 0.0], [2.05, 0.0], [2.1, 0.0], [2.15, 0.0]];
        for (first, second) in [(a, b), (b, a)] {
            let mut pts = first.to_vec();
            pts.push([1.0, 0.0]);
            pts.extend_from_slice(&second);
            let c = dbscan(&pts, 1.0, 4);
            assert_eq!(c.clusters.len(), 2);
            assert_eq!(c.labels[4], Some(0));
            assert_eq!(c.clusters[0].len(), 5);
        }
    }

    #[test]
    fn matches_brute_force_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..20 {
            let pts: Vec<[f64; 2]> = (0..200)
                .map(|_| [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)])
                .collect();
            let eps = 0.3 + 0.05 * (trial % 5) as f64;
            let min_pts = 2 + trial % 4;
            let got = dbscan(&pts, eps, min_pts);
            assert_eq!(got.labels, reference(&pts, eps, min_pts), "trial {trial}");
        }
    }

    #[test]
    fn f32_points() {
        let pts: Vec<[f32; 2]> = vec![[0.0, 0.0], [0.1, 0.0], [0.2, 0.0], [5.0, 5.0]];
        let c = dbscan(&pts, 0.15f32, 2);
        assert_eq!(c.clusters, vec![vec![0, 1, 2]]);
    }

    fn core_partition(points: &[[f64; 2]], c: &Clustering, eps: f64, min_pts: usize) -> BTreeSet<Vec<[u64; 2]>> {
        // Cluster partition restricted to core points, which is order-free.
        let core = |i: usize| {
            points
                .iter()
                .filter(|q| (points[i][0] - q[0]).powi(2) + (points[i][1] - q[1]).powi(2) <= eps * eps)
                .count()
                >= min_pts
        };
        c.clusters
            .iter()
            .map(|m| {
                let mut v: Vec<[u64; 2]> = m
                    .iter()
                    .filter(|&&i| core(i))
                    .map(|&i| [points[i][0].to_bits(), points[i][1].to_bits()])
                    .collect();
                v.sort_unstable();
                v
            })
            .collect()
    }

    proptest! {
        #[test]
        fn partition_is_order_invariant(
            pts in prop::collection::vec((0.0..5.0f64, 0.0..5.0f64), 1..80),
            seed in any::<u64>(),
        ) {
            let pts: Vec<[f64; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
            let mut shuffled = pts.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.random_range(0..=i));
            }
            let a = dbscan(&pts, 0.4, 3);
            let b = dbscan(&shuffled, 0.4, 3);
            prop_assert_eq!(a.clusters.len(), b.clusters.len());
            prop_assert_eq!(a.noise().len(), b.noise().len());
            prop_assert_eq!(core_partition(&pts, &a, 0.4, 3), core_partition(&shuffled, &b, 0.4, 3));
        }
    }
}
