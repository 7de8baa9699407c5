//! Lloyd's k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Real;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct KMeans<T> {
    pub centers: Vec<Vec<T>>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances after each assignment step.
    pub objective: Vec<T>,
    pub iterations: usize,
}

pub(crate) fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| (*x - *y) * (*x - *y)).sum()
}

/// Index and squared distance of the nearest center.
pub(crate) fn nearest<T: Real>(x: &[T], centers: &[Vec<T>]) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means++ seeding: first center uniform, later ones proportional to the
/// squared distance to the closest chosen center.
pub(crate) fn plus_plus_init<T: Real>(data: &[Vec<T>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
    let mut centers = vec![data[rng.random_range(0..data.len())].clone()];
    let mut d2: Vec<T> = data.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: T = d2.iter().copied().sum();
        let pick = if total > T::zero() {
            let target = T::c(rng.random::<f64>()) * total;
            let mut acc = T::zero();
            let mut chosen = data.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += *d;
                if acc >= target && *d > T::zero() {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..data.len())
        };
        centers.push(data[pick].clone());
        let c = centers.last().expect("just pushed");
        for (d, x) in d2.iter_mut().zip(data) {
            *d = d.min(sq_dist(x, c));
        }
    }
    centers
}

/// Deterministic under `seed`. Empty clusters keep their previous center,
/// which keeps the objective non-increasing.
pub fn kmeans<T: Real>(data: &[Vec<T>], k: usize, max_iter: usize, seed: u64) -> Result<KMeans<T>> {
    if k == 0 {
        return Err(Error::param("k-means needs k ≥ 1"));
    }
    if data.len() < k {
        return Err(Error::Fit(format!(
            "{} samples cannot support {k} clusters",
            data.len()
        )));
    }
    let dim = data[0].len();
    if data.iter().any(|x| x.len() != dim) {
        return Err(Error::DimensionMismatch("ragged k-means input".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_init(data, k, &mut rng);
    let mut assignments = vec![usize::MAX; data.len()];
    let mut objective = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter.max(1) {
        iterations += 1;
        let mut changed = false;
        let mut obj = T::zero();
        for (a, x) in assignments.iter_mut().zip(data) {
            let (j, d) = nearest(x, &centers);
            obj += d;
            if *a != j {
                *a = j;
                changed = true;
            }
        }
        objective.push(obj);
        if !changed {
            break;
        }
        let mut sums = vec![vec![T::zero(); dim]; k];
        let mut counts = vec![0usize; k];
        for (x, &a) in data.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(x) {
                *s += *v;
            }
        }
        for ((c, s), &n) in centers.iter_mut().zip(sums).zip(&counts) {
            if n > 0 {
                let n = T::from_usize_lossy(n);
                *c = s.into_iter().map(|v| v / n).collect();
            }
        }
    }
    Ok(KMeans {
        centers,
        assignments,
        objective,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cluster_center_is_mean() {
        let data = vec![vec![0.0f64, 1.0], vec![2.0, 3.0], vec![4.0, 8.0]];
        let km = kmeans(&data, 1, 50, 3).unwrap();
        assert!((km.centers[0][0] - 2.0).abs() < 1e-12);
        assert!((km.centers[0][1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_samples() {
        let data = vec![vec![0.0f64]];
        assert!(matches!(kmeans(&data, 2, 10, 0), Err(Error::Fit(_))));
    }

    #[test]
    fn objective_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<Vec<f64>> = (0..300)
            .map(|_| (0..4).map(|_| rng.random::<f64>()).collect())
            .collect();
        let km = kmeans(&data, 7, 100, 5).unwrap();
        for w in km.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", km.objective);
        }
        // At convergence the assignment is a fixed point.
        for (x, &a) in data.iter().zip(&km.assignments) {
            assert_eq!(nearest(x, &km.centers).0, a);
        }
    }

    #[test]
    fn same_seed_same_centers() {
        let data: Vec<Vec<f32>> = (0..50).map(|i| vec![(i % 7) as f32, (i % 3) as f32]).collect();
        let a = kmeans(&data, 3, 50, 42).unwrap();
        let b = kmeans(&data, 3, 50, 42).unwrap();
        assert_eq!(a.centers, b.centers);
    }
}
