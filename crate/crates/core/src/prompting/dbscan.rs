//! Grid-accelerated DBSCAN over 3D points.
//!
//! Neighbor lists are visited in ascending index order, so border points go
//! to the first cluster that reaches them in index order, the same result as
//! a plain quadratic scan.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::scalar::{floor_i32, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbscanParams {
    /// Neighborhood radius (m), inclusive.
    pub eps: f64,
    /// Minimum neighborhood size, the point itself included.
    pub min_pts: usize,
}

/// Cluster label per point; `None` is noise. Labels are `0..n_clusters` in
/// order of each cluster's smallest core point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Clustering {
    pub labels: Vec<Option<usize>>,
    pub n_clusters: usize,
}

impl Clustering {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| (*l == Some(cluster)).then_some(i))
            .collect()
    }
}

struct CellIndex {
    inv: f64,
    cells: HashMap<[i32; 3], Vec<usize>>,
}

impl CellIndex {
    fn new<T: Real>(points: &[Vec3<T>], eps: f64) -> Self {
        let inv = 1.0 / eps;
        let mut cells: HashMap<[i32; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, inv)).or_default().push(i);
        }
        Self { inv, cells }
    }

    fn key<T: Real>(p: &Vec3<T>, inv: f64) -> [i32; 3] {
        let inv = T::c(inv);
        [floor_i32(p.x * inv), floor_i32(p.y * inv), floor_i32(p.z * inv)]
    }

    fn neighbors<T: Real>(&self, points: &[Vec3<T>], i: usize, eps2: T) -> Vec<usize> {
        let k = Self::key(&points[i], self.inv);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let key = [k[0].saturating_add(dx), k[1].saturating_add(dy), k[2].saturating_add(dz)];
                    if let Some(cell) = self.cells.get(&key) {
                        out.extend(cell.iter().copied().filter(|&j| (points[j] - points[i]).norm_squared() <= eps2));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

pub fn dbscan<T: Real>(points: &[Vec3<T>], params: &DbscanParams) -> Clustering {
    let n = points.len();
    let mut labels: Vec<Option<usize>> = vec![None; n];
    if n == 0 || !(params.eps > 0.0) {
        return Clustering { labels, n_clusters: 0 };
    }
    let index = CellIndex::new(points, params.eps);
    let eps2 = T::c(params.eps * params.eps);
    let mut visited = vec![false; n];
    let mut n_clusters = 0;
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let nb = index.neighbors(points, i, eps2);
        if nb.len() < params.min_pts {
            continue;
        }
        let c = n_clusters;
        n_clusters += 1;
        labels[i] = Some(c);
        let mut queue: VecDeque<usize> = nb.into_iter().collect();
        while let Some(j) = queue.pop_front() {
            if labels[j].is_none() {
                labels[j] = Some(c);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let nb = index.neighbors(points, j, eps2);
            if nb.len() >= params.min_pts {
                queue.extend(nb);
            }
        }
    }
    Clustering { labels, n_clusters }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Textbook O(n²) DBSCAN.
    fn reference(points: &[Vec3<f64>], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
        let n = points.len();
        let nb = |i: usize| -> Vec<usize> { (0..n).filter(|&j| (points[i] - points[j]).norm_squared() <= eps * eps).collect() };
        let mut labels = vec![None; n];
        let mut visited = vec![false; n];
        let mut c = 0;
        for i in 0..n {
            if visited[i] {
                continue;
            }
            visited[i] = true;
            let seeds = nb(i);
            if seeds.len() < min_pts {
                continue;
            }
            labels[i] = Some(c);
            let mut queue: VecDeque<usize> = seeds.into();
            while let Some(j) = queue.pop_front() {
                if labels[j].is_none() {
                    labels[j] = Some(c);
                }
                if !visited[j] {
                    visited[j] = true;
                    let more = nb(j);
                    if more.len() >= min_pts {
                        queue.extend(more);
                    }
                }
            }
            c += 1;
        }
        labels
    }

    /// Same partition up to a relabeling of clusters.
    fn equivalent(a: &[Option<usize>], b: &[Option<usize>]) -> bool {
        let mut fwd = HashMap::new();
        let mut bwd = HashMap::new();
        for (x, y) in a.iter().zip(b) {
            match (x, y) {
                (None, None) => {}
                (Some(x), Some(y)) => {
                    if *fwd.entry(*x).or_insert(*y) != *y || *bwd.entry(*y).or_insert(*x) != *x {
                        return false;
                    }
                }
                _ => return false,
            }
        }
        true
    }

    #[test]
    fn two_blobs_and_noise() {
        let mut pts = Vec::new();
        for i in 0..20 {
            let t = i as f64 * 0.05;
            pts.push(Vec3::new(t, 0.0, 0.0));
            pts.push(Vec3::new(10.0 + t, 0.0, 0.0));
        }
        pts.push(Vec3::new(5.0, 5.0, 5.0));
        let c = dbscan(&pts, &DbscanParams { eps: 0.2, min_pts: 3 });
        assert_eq!(c.n_clusters, 2);
        assert_eq!(c.labels[40], None);
        assert_ne!(c.labels[0], c.labels[1]);
        assert_eq!(c.members(c.labels[0].unwrap()).len(), 20);
    }

    #[test]
    fn empty_input() {
        let c = dbscan::<f64>(&[], &DbscanParams { eps: 1.0, min_pts: 1 });
        assert_eq!(c.n_clusters, 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn matches_quadratic_reference(
            raw in prop::collection::vec((0.0f64..6.0, 0.0f64..6.0, 0.0f64..2.0), 0..500),
            eps in 0.2f64..1.2,
            min_pts in 1usize..8,
        ) {
            let pts: Vec<Vec3<f64>> = raw.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect();
            let fast = dbscan(&pts, &DbscanParams { eps, min_pts });
            let slow = reference(&pts, eps, min_pts);
            prop_assert!(equivalent(&fast.labels, &slow));
            prop_assert_eq!(fast.labels, slow);
        }
    }
}
