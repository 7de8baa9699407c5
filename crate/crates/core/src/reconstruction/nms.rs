//! Box-overlap suppression within a frame and temporal-equivalence merging
//! across frames.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::aggregation::{VoxelGrid, VoxelId};
use crate::geometry::{Aabb, Vec3};
use crate::scalar::Real;

/// The per-frame merge condition shared by 3D NMS and the `EQ` term of Ψ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EqParams {
    pub iou: f64,
    /// Intersection volume over the smaller box's volume.
    pub containment: f64,
}

impl Default for EqParams {
    fn default() -> Self {
        Self {
            iou: 0.5,
            containment: 0.8,
        }
    }
}

pub fn eq_condition<T: Real>(a: &Aabb<T>, b: &Aabb<T>, p: &EqParams) -> bool {
    a.iou(b).to_f64_lossy() >= p.iou || a.containment(b).to_f64_lossy() >= p.containment
}

fn union_sorted(a: &[VoxelId], b: &[VoxelId]) -> Vec<VoxelId> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) if x == y => {
                i += 1;
                j += 1;
                x
            }
            (Some(&x), Some(&y)) if x < y => {
                i += 1;
                x
            }
            (Some(_), Some(&y)) => {
                j += 1;
                y
            }
            (Some(&x), None) => {
                i += 1;
                x
            }
            (None, Some(&y)) => {
                j += 1;
                y
            }
            (None, None) => unreachable!(),
        };
        out.push(next);
    }
    out
}

/// A group of clusters merged by [`nms3d`].
#[derive(Clone, Debug, PartialEq)]
pub struct Merged<T> {
    /// Indices of the input clusters, largest first.
    pub sources: Vec<usize>,
    pub voxels: Vec<VoxelId>,
    pub bounds: Aabb<T>,
}

/// Largest-first greedy merge of voxel clusters by box overlap, repeated
/// until no two groups satisfy the merge condition.
pub fn nms3d<T: Real>(clusters: &[Vec<VoxelId>], grid: &VoxelGrid<T>, p: &EqParams) -> Vec<Merged<T>> {
    let mut order: Vec<usize> = (0..clusters.len()).filter(|&i| !clusters[i].is_empty()).collect();
    order.sort_by(|&a, &b| clusters[b].len().cmp(&clusters[a].len()).then(a.cmp(&b)));
    let mut groups: Vec<Merged<T>> = Vec::new();
    for i in order {
        let mut voxels = clusters[i].clone();
        voxels.sort_unstable();
        voxels.dedup();
        let bounds = grid.bounds(voxels.iter().copied()).expect("non-empty cluster");
        match groups.iter_mut().find(|g| eq_condition(&g.bounds, &bounds, p)) {
            Some(g) => {
                g.sources.push(i);
                g.voxels = union_sorted(&g.voxels, &voxels);
                g.bounds = g.bounds.union(bounds);
            }
            None => groups.push(Merged {
                sources: vec![i],
                voxels,
                bounds,
            }),
        }
    }
    // Grown boxes may now overlap groups they skipped earlier.
    'again: loop {
        for a in 0..groups.len() {
            for b in a + 1..groups.len() {
                if eq_condition(&groups[a].bounds, &groups[b].bounds, p) {
                    let g = groups.remove(b);
                    groups[a].sources.extend(g.sources);
                    groups[a].voxels = union_sorted(&groups[a].voxels, &g.voxels);
                    groups[a].bounds = groups[a].bounds.union(g.bounds);
                    continue 'again;
                }
            }
        }
        break;
    }
    groups
}

/// One object's voxel sets over the frames it was seen in.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectTrack<T> {
    pub id: u32,
    pub frames: BTreeMap<usize, Vec<VoxelId>>,
    pub boxes: BTreeMap<usize, Aabb<T>>,
}

impl<T: Real> ObjectTrack<T> {
    pub fn new(id: u32) -> Self {
        Self {
            id,
            frames: BTreeMap::new(),
            boxes: BTreeMap::new(),
        }
    }

    /// Adds (or unions into) the voxel set at `frame`; empty sets are ignored.
    pub fn insert(&mut self, frame: usize, voxels: &[VoxelId], grid: &VoxelGrid<T>) {
        let mut v = voxels.to_vec();
        v.sort_unstable();
        v.dedup();
        let Some(b) = grid.bounds(v.iter().copied()) else { return };
        self.insert_with_box(frame, v, b);
    }

    /// As [`insert`](Self::insert) with a precomputed box; `voxels` must be
    /// sorted and non-empty.
    pub fn insert_with_box(&mut self, frame: usize, voxels: Vec<VoxelId>, b: Aabb<T>) {
        match self.frames.get_mut(&frame) {
            Some(cur) => {
                *cur = union_sorted(cur, &voxels);
                let nb = self.boxes[&frame].union(b);
                self.boxes.insert(frame, nb);
            }
            None => {
                self.frames.insert(frame, voxels);
                self.boxes.insert(frame, b);
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn size(&self) -> usize {
        self.frames.values().map(Vec::len).sum()
    }

    pub fn first_frame(&self) -> Option<usize> {
        self.frames.keys().next().copied()
    }

    pub fn last_frame(&self) -> Option<usize> {
        self.frames.keys().next_back().copied()
    }

    pub fn centroid(&self, frame: usize, grid: &VoxelGrid<T>) -> Option<Vec3<T>> {
        let v = self.frames.get(&frame)?;
        let mut s = Vec3::zero();
        for &id in v {
            s += grid.cube_center(id);
        }
        Some(s / T::from_usize_lossy(v.len()))
    }

    /// Unions `other`'s per-frame sets into this track.
    pub fn absorb(&mut self, other: ObjectTrack<T>) {
        for (f, v) in other.frames {
            let b = other.boxes[&f];
            self.insert_with_box(f, v, b);
        }
    }
}

/// Ψ over frame sets with a per-frame equivalence predicate: frames in
/// `F1 ∪ F2` where `eq` holds, over `min(max F) − max(min F)`; `None` when
/// that span is not positive.
pub fn psi(f1: &BTreeSet<usize>, f2: &BTreeSet<usize>, mut eq: impl FnMut(usize) -> bool) -> Option<f64> {
    let (a0, a1) = (*f1.first()?, *f1.last()?);
    let (b0, b1) = (*f2.first()?, *f2.last()?);
    let den = a1.min(b1) as i64 - a0.max(b0) as i64;
    if den <= 0 {
        return None;
    }
    let num = f1.union(f2).filter(|&&f| eq(f)).count();
    Some(num as f64 / den as f64)
}

pub fn temporal_equivalence<T: Real>(a: &ObjectTrack<T>, b: &ObjectTrack<T>, p: &EqParams) -> Option<f64> {
    let f1: BTreeSet<usize> = a.frames.keys().copied().collect();
    let f2: BTreeSet<usize> = b.frames.keys().copied().collect();
    psi(&f1, &f2, |f| match (a.boxes.get(&f), b.boxes.get(&f)) {
        (Some(x), Some(y)) => eq_condition(x, y, p),
        _ => false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeDecision {
    pub ids: (u32, u32),
    pub psi: Option<f64>,
    pub merged: bool,
}

fn sort_tracks<T: Real>(tracks: &mut [ObjectTrack<T>]) {
    tracks.sort_by(|a, b| b.size().cmp(&a.size()).then(a.id.cmp(&b.id)));
}

/// Largest-first merging of tracks whose Ψ reaches `threshold`. Each track
/// is re-scored after every merge, and whole passes repeat until none
/// merges, so a second run changes nothing.
pub fn nms4d<T: Real>(tracks: Vec<ObjectTrack<T>>, threshold: f64, p: &EqParams) -> (Vec<ObjectTrack<T>>, Vec<MergeDecision>) {
    let mut tracks: Vec<ObjectTrack<T>> = tracks.into_iter().filter(|t| !t.is_empty()).collect();
    let mut decisions = Vec::new();
    loop {
        sort_tracks(&mut tracks);
        let mut alive = vec![true; tracks.len()];
        let mut any = false;
        for i in 0..tracks.len() {
            if !alive[i] {
                continue;
            }
            loop {
                let mut hit = false;
                for j in i + 1..tracks.len() {
                    if !alive[j] {
                        continue;
                    }
                    let psi = temporal_equivalence(&tracks[i], &tracks[j], p);
                    let merged = psi.is_some_and(|v| v >= threshold);
                    if merged {
                        decisions.push(MergeDecision {
                            ids: (tracks[i].id, tracks[j].id),
                            psi,
                            merged,
                        });
                        let other = std::mem::replace(&mut tracks[j], ObjectTrack::new(0));
                        tracks[i].absorb(other);
                        alive[j] = false;
                        hit = true;
                        any = true;
                    }
                }
                if !hit {
                    break;
                }
            }
        }
        tracks = tracks.into_iter().zip(alive).filter_map(|(t, a)| a.then_some(t)).collect();
        if !any {
            break;
        }
    }
    sort_tracks(&mut tracks);
    (tracks, decisions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconstruction::tests::grid_from_coords;
    use proptest::prelude::*;

    fn bx(min: [f64; 3], max: [f64; 3]) -> Aabb<f64> {
        Aabb::new(Vec3::from_array(min), Vec3::from_array(max))
    }

    #[test]
    fn eq_examples() {
        let p = EqParams::default();
        let a = bx([0.0; 3], [1.0; 3]);
        assert!(eq_condition(&a, &a, &p));
        assert!(!eq_condition(&a, &bx([2.0; 3], [3.0; 3]), &p));
        // Unit box inside a box with twice the volume: IoU 0.5, containment 1.
        let big = bx([0.0; 3], [2.0, 1.0, 1.0]);
        assert!((a.iou(&big) - 0.5).abs() < 1e-12);
        assert!((a.containment(&big) - 1.0).abs() < 1e-12);
        let inner = bx([0.2; 3], [0.8; 3]);
        assert!(a.iou(&inner) < 0.5);
        assert!(eq_condition(&a, &inner, &p));
    }

    #[test]
    fn nms3d_merges_nested_and_keeps_disjoint() {
        let mut coords = Vec::new();
        for x in 0..4 {
            for y in 0..4 {
                coords.push([x, y, 0]);
            }
        }
        coords.push([20, 20, 0]);
        let grid = grid_from_coords(&coords);
        let all: Vec<usize> = (0..16).collect();
        let inner = vec![grid.get([1, 1, 0]).unwrap(), grid.get([2, 2, 0]).unwrap()];
        let far = vec![grid.get([20, 20, 0]).unwrap()];
        let groups = nms3d(&[inner, all.clone(), far], &grid, &EqParams::default());
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].sources, vec![1, 0]);
        assert_eq!(groups[0].voxels, all);
        assert_eq!(groups[1].sources, vec![2]);
    }

    fn track(id: u32, frames: std::ops::RangeInclusive<usize>, b: Aabb<f64>) -> ObjectTrack<f64> {
        let mut t = ObjectTrack::new(id);
        for f in frames {
            t.insert_with_box(f, vec![id as usize], b);
        }
        t
    }

    #[test]
    fn psi_examples() {
        let p = EqParams::default();
        let b = bx([0.0; 3], [1.0; 3]);
        let a = track(1, 0..=10, b);
        assert_eq!(temporal_equivalence(&a, &a.clone(), &p), Some(1.1));
        let t1 = track(1, 0..=9, b);
        let t2 = track(2, 5..=14, b);
        assert_eq!(temporal_equivalence(&t1, &t2, &p), Some(1.25));
        let t3 = track(3, 0..=4, b);
        let t4 = track(4, 10..=14, b);
        assert_eq!(temporal_equivalence(&t3, &t4, &p), None);
    }

    #[test]
    fn duplicates_merge_and_disjoint_never() {
        let p = EqParams::default();
        let b = bx([0.0; 3], [1.0; 3]);
        let (out, _) = nms4d(vec![track(1, 0..=5, b), track(2, 0..=5, b)], 0.3, &p);
        assert_eq!(out.len(), 1);
        let (out, _) = nms4d(vec![track(1, 0..=4, b), track(2, 6..=9, b)], 0.0, &p);
        assert_eq!(out.len(), 2);
    }

    /// Repeatedly merge the first qualifying pair (in size-then-id order)
    /// until none remains.
    fn exhaustive(mut tracks: Vec<ObjectTrack<f64>>, th: f64, p: &EqParams) -> Vec<BTreeSet<u32>> {
        let mut members: BTreeMap<u32, BTreeSet<u32>> = tracks.iter().map(|t| (t.id, BTreeSet::from([t.id]))).collect();
        'outer: loop {
            sort_tracks(&mut tracks);
            for i in 0..tracks.len() {
                for j in i + 1..tracks.len() {
                    if temporal_equivalence(&tracks[i], &tracks[j], p).is_some_and(|v| v >= th) {
                        let other = tracks.remove(j);
                        let m = members.remove(&other.id).unwrap();
                        members.get_mut(&tracks[i].id).unwrap().extend(m);
                        tracks[i].absorb(other);
                        continue 'outer;
                    }
                }
            }
            break;
        }
        members.into_values().collect()
    }

    fn partition(tracks: &[ObjectTrack<f64>], originals: &[ObjectTrack<f64>]) -> Vec<BTreeSet<u32>> {
        // A merged track's voxel ids are the original track ids.
        let mut out: Vec<BTreeSet<u32>> = tracks
            .iter()
            .map(|t| {
                let ids: BTreeSet<u32> = t.frames.values().flatten().map(|&v| v as u32).collect();
                originals.iter().filter(|o| ids.contains(&o.id)).map(|o| o.id).collect()
            })
            .collect();
        out.sort();
        out
    }

    #[test]
    fn three_fragments_become_one() {
        let p = EqParams::default();
        let b = bx([0.0; 3], [1.0; 3]);
        let ts = vec![track(1, 0..=6, b), track(2, 2..=8, b), track(3, 4..=10, b)];
        let (out, _) = nms4d(ts.clone(), 0.3, &p);
        assert_eq!(out.len(), 1);
        let mut ex = exhaustive(ts.clone(), 0.3, &p);
        ex.sort();
        assert_eq!(partition(&out, &ts), ex);
    }

    fn arb_tracks(max: usize) -> impl Strategy<Value = Vec<ObjectTrack<f64>>> {
        prop::collection::vec((0usize..15, 1usize..8, 0u8..3, prop::collection::vec(any::<bool>(), 8)), 1..max).prop_map(|specs| {
            specs
                .into_iter()
                .enumerate()
                .map(|(i, (start, len, pos, holes))| {
                    let mut t = ObjectTrack::new(i as u32 + 1);
                    let o = pos as f64 * 0.6;
                    for (k, f) in (start..start + len).enumerate() {
                        if k == 0 || k + 1 == len || !holes[k % 8] {
                            t.insert_with_box(f, vec![i + 1], bx([o, 0.0, 0.0], [o + 1.0, 1.0, 1.0]));
                        }
                    }
                    t
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn matches_exhaustive_and_is_idempotent(ts in arb_tracks(7), th in 0.0f64..1.5) {
            let p = EqParams::default();
            let (out, _) = nms4d(ts.clone(), th, &p);
            let mut ex = exhaustive(ts.clone(), th, &p);
            ex.sort();
            prop_assert_eq!(partition(&out, &ts), ex);
            let (again, _) = nms4d(out.clone(), th, &p);
            prop_assert_eq!(partition(&again, &ts), partition(&out, &ts));
            let before: usize = ts.iter().map(|t| t.size()).sum();
            let after: usize = out.iter().map(|t| t.size()).sum();
            prop_assert!(after <= before);
        }

        #[test]
        fn raising_threshold_never_adds_merges(ts in arb_tracks(7), lo in 0.0f64..1.0, bump in 0.0f64..1.0) {
            let p = EqParams::default();
            let n_lo = nms4d(ts.clone(), lo, &p).0.len();
            let n_hi = nms4d(ts.clone(), lo + bump, &p).0.len();
            prop_assert!(n_hi >= n_lo);
        }
    }
}
