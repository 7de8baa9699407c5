//! Ground labeling: a 2D grid of intensity samples, neighborhood histograms
//! per cell, and fuzzy c-means over those histograms.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::kmeans::{plus_plus_init, sq_dist};
use crate::geometry::Vec3;
use crate::scalar::{floor_i32, Real};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundLabelParams {
    /// Cell edge (m).
    pub cell: f64,
    /// Window half-size in cells.
    pub window: usize,
    pub bins: usize,
    pub clusters: usize,
    pub fuzzifier: f64,
    pub tol: f64,
    pub max_iter: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for GroundLabelParams {
    fn default() -> Self {
        Self {
            cell: 0.2,
            window: 2,
            bins: 16,
            clusters: 8,
            fuzzifier: 2.0,
            tol: 1e-4,
            max_iter: 300,
            seed: 7,
        }
    }
}

impl GroundLabelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell > 0.0) || self.bins == 0 || self.clusters == 0 || !(self.fuzzifier > 1.0) || !(self.tol > 0.0) {
            return Err(Error::Parameter(format!("invalid ground labeling parameters {self:?}")));
        }
        Ok(())
    }
}

/// A ground point in world coordinates with its origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundSample<T> {
    pub position: Vec3<T>,
    pub intensity: T,
    pub frame: usize,
    pub index: u32,
}

#[derive(Clone, Debug)]
pub struct GroundGrid<T> {
    pub cell: T,
    /// Sample indices per non-empty cell.
    pub cells: BTreeMap<[i32; 2], Vec<usize>>,
    /// Min-max normalized intensity per sample.
    pub intensity: Vec<T>,
}

impl<T: Real> GroundGrid<T> {
    pub fn cell_of(cell: T, p: Vec3<T>) -> [i32; 2] {
        [floor_i32(p.x / cell), floor_i32(p.y / cell)]
    }
}

pub fn rasterize_ground<T: Real>(samples: &[GroundSample<T>], cell: T) -> Result<GroundGrid<T>> {
    if samples.is_empty() {
        return Err(Error::Parameter("ground set is empty".into()));
    }
    if !(cell > T::zero()) {
        return Err(Error::Parameter(format!("cell size {cell} must be positive")));
    }
    let (lo, hi) = samples
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), s| (lo.min(s.intensity), hi.max(s.intensity)));
    let span = hi - lo;
    let intensity = samples
        .iter()
        .map(|s| if span > T::zero() { (s.intensity - lo) / span } else { T::zero() })
        .collect();
    let mut cells: BTreeMap<[i32; 2], Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        cells.entry(GroundGrid::cell_of(cell, s.position)).or_default().push(i);
    }
    Ok(GroundGrid { cell, cells, intensity })
}

fn bin_of<T: Real>(v: T, bins: usize) -> usize {
    let b = (v.to_f64_lossy() * bins as f64).floor();
    (b.max(0.0) as usize).min(bins - 1)
}

/// Normalized `bins`-bin histogram over the `(2w+1)²` window of every
/// non-empty cell, in cell order.
pub fn cell_features<T: Real>(grid: &GroundGrid<T>, window: usize, bins: usize) -> Vec<([i32; 2], Vec<T>)> {
    let w = window as i32;
    let keys: Vec<[i32; 2]> = grid.cells.keys().copied().collect();
    keys.into_par_iter()
        .map(|[cx, cy]| {
            let mut h = vec![0usize; bins];
            let mut n = 0usize;
            for dx in -w..=w {
                for dy in -w..=w {
                    if let Some(members) = grid.cells.get(&[cx + dx, cy + dy]) {
                        for &i in members {
                            h[bin_of(grid.intensity[i], bins)] += 1;
                            n += 1;
                        }
                    }
                }
            }
            let inv = T::one() / T::from_usize_lossy(n);
            ([cx, cy], h.into_iter().map(|c| T::from_usize_lossy(c) * inv).collect())
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct FuzzyPartition<T> {
    pub centers: Vec<Vec<T>>,
    /// Membership, one row per sample.
    pub u: Vec<Vec<T>>,
    pub fuzzifier: f64,
    /// `J_m` after each iteration.
    pub objective: Vec<T>,
    pub iterations: usize,
    pub labels: Vec<usize>,
}

fn memberships<T: Real>(x: &[T], centers: &[Vec<T>], m: f64) -> Vec<T> {
    let d: Vec<T> = centers.iter().map(|c| sq_dist(x, c).sqrt()).collect();
    let zeros = d.iter().filter(|v| **v == T::zero()).count();
    if zeros > 0 {
        let share = T::one() / T::from_usize_lossy(zeros);
        return d.iter().map(|v| if *v == T::zero() { share } else { T::zero() }).collect();
    }
    let e = T::c(2.0 / (m - 1.0));
    d.iter()
        .map(|&dj| {
            let s: T = d.iter().map(|&dk| (dj / dk).powf(e)).sum();
            T::one() / s
        })
        .collect()
}

fn objective<T: Real>(data: &[Vec<T>], u: &[Vec<T>], centers: &[Vec<T>], m: T) -> T {
    data.iter()
        .zip(u)
        .map(|(x, row)| row.iter().zip(centers).map(|(&uij, c)| uij.powf(m) * sq_dist(x, c)).sum::<T>())
        .sum()
}

pub fn fuzzy_cmeans<T: Real>(data: &[Vec<T>], params: &GroundLabelParams) -> Result<FuzzyPartition<T>> {
    params.validate()?;
    let c = params.clusters;
    if c > data.len() {
        return Err(Error::Parameter(format!("{c} clusters for {} samples", data.len())));
    }
    let m = params.fuzzifier;
    let mt = T::c(m);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centers = plus_plus_init(data, c, &mut rng);
    let mut u: Vec<Vec<T>> = data.par_iter().map(|x| memberships(x, &centers, m)).collect();
    let mut objective_trace = Vec::new();
    let mut iterations = 0;
    let dim = data[0].len();
    while iterations < params.max_iter {
        iterations += 1;
        for (j, center) in centers.iter_mut().enumerate() {
            let mut num = vec![T::zero(); dim];
            let mut den = T::zero();
            for (x, row) in data.iter().zip(&u) {
                let w = row[j].powf(mt);
                den += w;
                for (a, &v) in num.iter_mut().zip(x) {
                    *a += w * v;
                }
            }
            if den > T::zero() {
                *center = num.into_iter().map(|v| v / den).collect();
            }
        }
        let next: Vec<Vec<T>> = data.par_iter().map(|x| memberships(x, &centers, m)).collect();
        let delta = u
            .iter()
            .zip(&next)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (*x - *y).abs()))
            .fold(T::zero(), |acc, v| acc.max(v));
        u = next;
        objective_trace.push(objective(data, &u, &centers, mt));
        if delta.to_f64_lossy() < params.tol {
            break;
        }
    }
    let labels = u
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0
        })
        .collect();
    Ok(FuzzyPartition {
        centers,
        u,
        fuzzifier: m,
        objective: objective_trace,
        iterations,
        labels,
    })
}

/// Cluster label (`0..clusters`) for every sample.
pub fn label_ground<T: Real>(samples: &[GroundSample<T>], params: &GroundLabelParams) -> Result<Vec<usize>> {
    params.validate()?;
    let grid = rasterize_ground(samples, T::c(params.cell))?;
    let feats = cell_features(&grid, params.window, params.bins);
    let data: Vec<Vec<T>> = feats.iter().map(|(_, f)| f.clone()).collect();
    let params = GroundLabelParams {
        clusters: params.clusters.min(data.len()),
        ..*params
    };
    let part = fuzzy_cmeans(&data, &params)?;
    let mut out = vec![0; samples.len()];
    for ((key, _), &label) in feats.iter().zip(&part.labels) {
        for &i in &grid.cells[key] {
            out[i] = label;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn sample(x: f64, y: f64, i: f64) -> GroundSample<f64> {
        GroundSample {
            position: Vec3::new(x, y, 0.0),
            intensity: i,
            frame: 0,
            index: 0,
        }
    }

    #[test]
    fn floor_rule_and_single_cell() {
        let g = rasterize_ground(&[sample(-0.01, 0.0, 1.0)], 0.2).unwrap();
        assert_eq!(g.cells.keys().copied().collect::<Vec<_>>(), vec![[-1, 0]]);
        let g = rasterize_ground(&[sample(0.01, 0.02, 1.0), sample(0.1, 0.15, 2.0)], 0.2).unwrap();
        assert_eq!(g.cells.len(), 1);
        assert!(rasterize_ground::<f64>(&[], 0.2).is_err());
    }

    #[test]
    fn populations_add_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s: Vec<_> = (0..10_000)
            .map(|_| sample(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random()))
            .collect();
        let g = rasterize_ground(&s, 0.2).unwrap();
        assert_eq!(g.cells.values().map(Vec::len).sum::<usize>(), 10_000);
    }

    #[test]
    fn uniform_field_single_bin() {
        let mut g = rasterize_ground(&[sample(0.0, 0.0, 1.0), sample(1.0, 0.0, 1.0)], 0.2).unwrap();
        g.intensity = vec![0.5, 0.5];
        for (_, f) in cell_features(&g, 2, 4) {
            assert_eq!(f, vec![0.0, 0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn isolated_cell_sees_only_itself() {
        let s = [sample(0.0, 0.0, 0.0), sample(0.05, 0.0, 1.0), sample(3.0, 3.0, 0.5)];
        let g = rasterize_ground(&s, 0.2).unwrap();
        let f = cell_features(&g, 1, 2);
        assert_eq!(f[0], ([0, 0], vec![0.5, 0.5]));
        assert_eq!(f[1], ([15, 15], vec![0.0, 1.0]));
    }

    fn two_groups(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let mut truth = Vec::new();
        for i in 0..n {
            let g = i % 2;
            let base = if g == 0 { [0.9, 0.1, 0.0] } else { [0.0, 0.1, 0.9] };
            data.push(base.iter().map(|v| v + rng.random_range(-0.05..0.05)).collect());
            truth.push(g);
        }
        (data, truth)
    }

    fn params(c: usize) -> GroundLabelParams {
        GroundLabelParams { clusters: c, ..Default::default() }
    }

    #[test]
    fn recovers_separated_groups() {
        let (data, truth) = two_groups(60, 3);
        let p = fuzzy_cmeans(&data, &params(2)).unwrap();
        let same = |i: usize, j: usize| p.labels[i] == p.labels[j];
        for i in 0..data.len() {
            for j in 0..data.len() {
                assert_eq!(same(i, j), truth[i] == truth[j]);
            }
        }
    }

    #[test]
    fn coincident_center_takes_full_membership() {
        let u = memberships(&[1.0, 2.0], &[vec![0.0, 0.0], vec![1.0, 2.0]], 2.0);
        assert_eq!(u, vec![0.0, 1.0]);
    }

    #[test]
    fn deterministic_and_parameter_errors() {
        let (data, _) = two_groups(30, 4);
        let a = fuzzy_cmeans(&data, &params(3)).unwrap();
        let b = fuzzy_cmeans(&data, &params(3)).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.u, b.u);
        assert!(fuzzy_cmeans(&data[..2], &params(3)).is_err());
    }

    proptest! {
        #[test]
        fn rows_sum_to_one_and_objective_falls(seed in 0u64..500, c in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<Vec<f64>> = (0..25).map(|_| (0..4).map(|_| rng.random()).collect()).collect();
            let p = fuzzy_cmeans(&data, &params(c)).unwrap();
            for row in &p.u {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            }
            for w in p.objective.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
            }
        }

        #[test]
        fn features_are_distributions(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s: Vec<_> = (0..200).map(|_| sample(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random())).collect();
            let g = rasterize_ground(&s, 0.2).unwrap();
            for (_, f) in cell_features(&g, 2, 16) {
                prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
