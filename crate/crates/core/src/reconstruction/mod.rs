//! Lifting 2D masks back onto voxels and enforcing 4D consistency.

pub mod nms;
pub mod smoothing;

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::aggregation::{VoxelGrid, VoxelId};
use crate::alignment::render::PixelVoxelMap;
use crate::scalar::{total_cmp, Real};
use crate::segmenter::Rle;
use crate::{Error, Result};

pub use nms::{eq_condition, nms3d, nms4d, temporal_equivalence, EqParams, MergeDecision, ObjectTrack};
pub use smoothing::{interframe_smoothing, SmoothingParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BleedingParams {
    /// Allowed deviation from the cluster's median depth (m).
    pub depth_dev: f64,
    /// Distance to the mask boundary that counts as "at the silhouette" (px).
    pub border: usize,
}

impl Default for BleedingParams {
    fn default() -> Self {
        Self { depth_dev: 1.0, border: 2 }
    }
}

/// Decoded mask with its raster size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitmask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Bitmask {
    pub fn from_rle(rle: &Rle) -> Result<Self> {
        Ok(Self {
            width: rle.width as usize,
            height: rle.height as usize,
            bits: rle.decode()?,
        })
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> bool {
        self.bits[row * self.width + col]
    }

    /// True if a pixel outside the mask (or the raster edge) lies within
    /// `border` pixels, Chebyshev distance.
    pub fn near_boundary(&self, col: usize, row: usize, border: usize) -> bool {
        let b = border as isize;
        for dr in -b..=b {
            for dc in -b..=b {
                let (r, c) = (row as isize + dr, col as isize + dc);
                if r < 0 || c < 0 || r >= self.height as isize || c >= self.width as isize {
                    return true;
                }
                if !self.get(c as usize, r as usize) {
                    return true;
                }
            }
        }
        false
    }
}

fn check_dims<T>(mask: &Bitmask, map: &PixelVoxelMap<T>) -> Result<()> {
    if mask.width != map.width || mask.height != map.height {
        return Err(Error::DimensionMismatch(format!(
            "mask {}×{} vs map {}×{}",
            mask.width, mask.height, map.width, map.height
        )));
    }
    Ok(())
}

/// Voxels behind the mask's mapped pixels, ascending.
pub fn unproject_mask<T: Real>(mask: &Bitmask, map: &PixelVoxelMap<T>) -> Result<Vec<VoxelId>> {
    check_dims(mask, map)?;
    let mut out: Vec<VoxelId> = map
        .iter_mapped()
        .filter(|&(c, r, _)| mask.get(c, r))
        .map(|(_, _, v)| v)
        .collect();
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// 26-connected components of `set`, each ascending, ordered by smallest id.
pub fn region_growth<T: Real>(set: &[VoxelId], grid: &VoxelGrid<T>) -> Vec<Vec<VoxelId>> {
    let mut in_set = vec![false; grid.len()];
    for &v in set {
        in_set[v] = true;
    }
    let mut seen = vec![false; grid.len()];
    let mut sorted = set.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut out = Vec::new();
    for &start in &sorted {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for n in grid.neighbors(v) {
                if in_set[n] && !seen[n] {
                    seen[n] = true;
                    comp.push(n);
                    queue.push_back(n);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

fn median<T: Real>(mut v: Vec<T>) -> T {
    v.sort_by(total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / T::c(2.0)
    }
}

/// Drops silhouette voxels whose depth strays from the cluster median, unless
/// that would remove more than half the cluster.
pub fn reduce_bleeding<T: Real>(cluster: &[VoxelId], mask: &Bitmask, map: &PixelVoxelMap<T>, params: &BleedingParams) -> Result<Vec<VoxelId>> {
    check_dims(mask, map)?;
    if cluster.is_empty() {
        return Ok(Vec::new());
    }
    let mut depth: BTreeMap<VoxelId, T> = BTreeMap::new();
    let mut at_edge: BTreeMap<VoxelId, bool> = BTreeMap::new();
    let members: std::collections::HashSet<VoxelId> = cluster.iter().copied().collect();
    for (c, r, v) in map.iter_mapped() {
        if !members.contains(&v) || !mask.get(c, r) {
            continue;
        }
        depth.entry(v).or_insert_with(|| map.depth_at(c, r).expect("mapped"));
        let edge = at_edge.entry(v).or_insert(false);
        if !*edge && mask.near_boundary(c, r, params.border) {
            *edge = true;
        }
    }
    if depth.is_empty() {
        return Ok(cluster.to_vec());
    }
    let med = median(depth.values().copied().collect());
    let dev = T::c(params.depth_dev);
    let keep: Vec<VoxelId> = cluster
        .iter()
        .copied()
        .filter(|v| {
            let drop = at_edge.get(v).copied().unwrap_or(false) && depth.get(v).is_some_and(|&d| (d - med).abs() > dev);
            !drop
        })
        .collect();
    if 2 * (cluster.len() - keep.len()) > cluster.len() {
        return Ok(cluster.to_vec());
    }
    Ok(keep)
}

/// Masks from every camera for one object in one Superframe → voxel set:
/// unproject, split into connected clusters, trim bleeding per cluster, and
/// take the union.
pub fn lift_object<T: Real>(views: &[(&Bitmask, &PixelVoxelMap<T>)], grid: &VoxelGrid<T>, params: &BleedingParams) -> Result<Vec<VoxelId>> {
    let mut out = Vec::new();
    for (mask, map) in views {
        let set = unproject_mask(mask, map)?;
        for cluster in region_growth(&set, grid) {
            out.extend(reduce_bleeding(&cluster, mask, map, params)?);
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Synchronous frontier expansion: each round, every unlabeled voxel with a
/// labeled neighbor takes the most frequent neighbor label (ties to the
/// smallest id). Stops when no unlabeled voxel touches a labeled one.
pub fn label_growth<T: Real>(labels: &mut [Option<u32>], grid: &VoxelGrid<T>) {
    loop {
        let mut updates = Vec::new();
        for v in 0..grid.len() {
            if labels[v].is_some() {
                continue;
            }
            let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
            for n in grid.neighbors(v) {
                if let Some(l) = labels[n] {
                    *counts.entry(l).or_default() += 1;
                }
            }
            let mut best: Option<(u32, usize)> = None;
            for (l, c) in counts {
                if best.is_none_or(|(_, bc)| c > bc) {
                    best = Some((l, c));
                }
            }
            if let Some((l, _)) = best {
                updates.push((v, l));
            }
        }
        if updates.is_empty() {
            return;
        }
        for (v, l) in updates {
            labels[v] = Some(l);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::Voxel;
    use crate::geometry::Vec3;
    use proptest::prelude::*;

    pub(crate) fn grid_from_coords(coords: &[[i32; 3]]) -> VoxelGrid<f64> {
        VoxelGrid::from_voxels(
            0.1,
            coords
                .iter()
                .map(|&coord| Voxel {
                    coord,
                    members: vec![0],
                    mean_intensity: 0.5,
                    centroid: Vec3::zero(),
                })
                .collect(),
        )
    }

    fn map_from(ids: &[Option<(usize, f64)>], w: usize, h: usize) -> PixelVoxelMap<f64> {
        let mut m = PixelVoxelMap::empty(w, h);
        for (i, e) in ids.iter().enumerate() {
            if let Some((v, d)) = e {
                m.set(i % w, i / w, *v, *d);
            }
        }
        m
    }

    #[test]
    fn unproject_empty_and_full() {
        let map = map_from(&[Some((0, 1.0)), None, Some((2, 1.0)), Some((2, 1.0))], 2, 2);
        let empty = Bitmask {
            width: 2,
            height: 2,
            bits: vec![false; 4],
        };
        assert!(unproject_mask(&empty, &map).unwrap().is_empty());
        let full = Bitmask {
            width: 2,
            height: 2,
            bits: vec![true; 4],
        };
        assert_eq!(unproject_mask(&full, &map).unwrap(), vec![0, 2]);
        let wrong = Bitmask {
            width: 1,
            height: 4,
            bits: vec![true; 4],
        };
        assert!(unproject_mask(&wrong, &map).is_err());
    }

    #[test]
    fn unproject_matches_pixel_loop() {
        let w = 17;
        let h = 11;
        let ids: Vec<Option<(usize, f64)>> = (0..w * h).map(|i| (i % 3 != 0).then_some(((i * 7) % 23, 2.0))).collect();
        let map = map_from(&ids, w, h);
        let bits: Vec<bool> = (0..w * h).map(|i| (i * 13) % 5 < 2).collect();
        let mask = Bitmask { width: w, height: h, bits };
        let mut oracle = std::collections::BTreeSet::new();
        for r in 0..h {
            for c in 0..w {
                if mask.get(c, r) {
                    if let Some(v) = map.voxel_at(c, r) {
                        oracle.insert(v);
                    }
                }
            }
        }
        assert_eq!(unproject_mask(&mask, &map).unwrap(), oracle.into_iter().collect::<Vec<_>>());
    }

    #[test]
    fn region_growth_examples() {
        let grid = grid_from_coords(&[[0, 0, 0], [5, 0, 0]]);
        assert_eq!(region_growth(&[0, 1], &grid).len(), 2);
        let mut block = Vec::new();
        for x in 0..3 {
            for y in 0..3 {
                for z in 0..3 {
                    block.push([x, y, z]);
                }
            }
        }
        let grid = grid_from_coords(&block);
        let all: Vec<usize> = (0..27).collect();
        let comps = region_growth(&all, &grid);
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].len(), 27);
    }

    fn uf_find(p: &mut Vec<usize>, x: usize) -> usize {
        if p[x] != x {
            let r = uf_find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }

    proptest! {
        #[test]
        fn region_growth_matches_union_find(raw in prop::collection::btree_set((0i32..6, 0i32..6, 0i32..3), 1..60)) {
            let coords: Vec<[i32; 3]> = raw.into_iter().map(|(x, y, z)| [x, y, z]).collect();
            let grid = grid_from_coords(&coords);
            let n = grid.len();
            let mut parent: Vec<usize> = (0..n).collect();
            for a in 0..n {
                for b in 0..n {
                    let (ca, cb) = (grid.voxels[a].coord, grid.voxels[b].coord);
                    if (0..3).all(|k| (ca[k] - cb[k]).abs() <= 1) {
                        let (ra, rb) = (uf_find(&mut parent, a), uf_find(&mut parent, b));
                        parent[ra] = rb;
                    }
                }
            }
            let all: Vec<usize> = (0..n).collect();
            let comps = region_growth(&all, &grid);
            for comp in &comps {
                let root = uf_find(&mut parent, comp[0]);
                for &v in comp {
                    prop_assert_eq!(uf_find(&mut parent, v), root);
                }
            }
            let mut roots: Vec<usize> = (0..n).map(|v| uf_find(&mut parent, v)).collect();
            roots.sort_unstable();
            roots.dedup();
            prop_assert_eq!(roots.len(), comps.len());
        }
    }

    fn bleeding_fixture(extra_depth: f64) -> (Bitmask, PixelVoxelMap<f64>, Vec<usize>) {
        // 6×6 object of voxels 0..36 at 5 m; voxel 36 on the silhouette at 5 m + extra.
        let (w, h) = (10, 10);
        let mut ids = vec![None; w * h];
        let mut bits = vec![false; w * h];
        for r in 2..8 {
            for c in 2..8 {
                ids[r * w + c] = Some(((r - 2) * 6 + (c - 2), 5.0));
                bits[r * w + c] = true;
            }
        }
        ids[2 * w + 8] = Some((36, 5.0 + extra_depth));
        bits[2 * w + 8] = true;
        (Bitmask { width: w, height: h, bits }, map_from(&ids, w, h), (0..37).collect())
    }

    #[test]
    fn uniform_depth_is_unchanged() {
        let (mask, map, cluster) = bleeding_fixture(0.0);
        assert_eq!(reduce_bleeding(&cluster, &mask, &map, &BleedingParams::default()).unwrap(), cluster);
    }

    #[test]
    fn deep_silhouette_voxel_removed() {
        let (mask, map, cluster) = bleeding_fixture(8.0);
        let out = reduce_bleeding(&cluster, &mask, &map, &BleedingParams::default()).unwrap();
        assert_eq!(out, (0..36).collect::<Vec<_>>());
    }

    #[test]
    fn single_voxel_cluster_is_kept() {
        let (mask, map, _) = bleeding_fixture(8.0);
        let out = reduce_bleeding(&[36], &mask, &map, &BleedingParams::default()).unwrap();
        assert_eq!(out, vec![36]);
    }

    #[test]
    fn label_growth_examples() {
        let grid = grid_from_coords(&[[0, 0, 0], [1, 0, 0]]);
        let mut labels = vec![Some(4), None];
        label_growth(&mut labels, &grid);
        assert_eq!(labels, vec![Some(4), Some(4)]);

        // Center voxel with neighbors A, A, B.
        let grid = grid_from_coords(&[[0, 0, 0], [1, 0, 0], [2, 0, 0], [1, 1, 0]]);
        let center = grid.get([1, 0, 0]).unwrap();
        let mut labels = vec![None; 4];
        labels[grid.get([0, 0, 0]).unwrap()] = Some(7);
        labels[grid.get([2, 0, 0]).unwrap()] = Some(7);
        labels[grid.get([1, 1, 0]).unwrap()] = Some(3);
        label_growth(&mut labels, &grid);
        assert_eq!(labels[center], Some(7));

        let grid = grid_from_coords(&[[0, 0, 0], [1, 0, 0], [2, 0, 0]]);
        let mut labels = vec![Some(9), None, Some(2)];
        label_growth(&mut labels, &grid);
        assert_eq!(labels[1], Some(2));
    }

    #[test]
    fn label_growth_conserves_voxels_and_labels() {
        let coords: Vec<[i32; 3]> = (0..30).map(|i| [i % 6, i / 6, 0]).chain([[20, 20, 20]]).collect();
        let grid = grid_from_coords(&coords);
        let mut labels = vec![None; grid.len()];
        labels[0] = Some(1);
        labels[29] = Some(2);
        let before: Vec<Option<u32>> = labels.clone();
        label_growth(&mut labels, &grid);
        assert_eq!(labels.len(), grid.len());
        for (b, a) in before.iter().zip(&labels) {
            if b.is_some() {
                assert_eq!(b, a);
            }
        }
        let isolated = grid.get([20, 20, 20]).unwrap();
        assert_eq!(labels[isolated], None);
        assert_eq!(labels.iter().filter(|l| l.is_some()).count(), 30);
    }
}
