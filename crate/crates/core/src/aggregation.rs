//! Pose-driven accumulation of scans into Superframes, ground/object
//! decomposition and voxelization of the object part.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::PointFrame;
use crate::geometry::{Aabb, Pose, Vec3};
use crate::scalar::{floor_i32, total_cmp, Real};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct KeyframeStamp<T> {
    pub frame_index: usize,
    pub pose: Pose<T>,
}

/// Marks frame 0 and every frame whose pose moved more than
/// `trans_threshold` metres or rotated more than `rot_threshold` radians
/// away from the most recent keyframe.
pub fn designate_keyframes<T: Real>(
    poses: &[Pose<T>],
    trans_threshold: T,
    rot_threshold: T,
) -> Vec<KeyframeStamp<T>> {
    let mut out: Vec<KeyframeStamp<T>> = Vec::new();
    for (i, pose) in poses.iter().enumerate() {
        let is_key = match out.last() {
            None => true,
            Some(last) => {
                let rel = last.pose.relative_from(pose);
                rel.translation.norm() > trans_threshold
                    || rel.rotation.rotation_angle() > rot_threshold
            }
        };
        if is_key {
            out.push(KeyframeStamp {
                frame_index: i,
                pose: *pose,
            });
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuperPoint<T> {
    /// Coordinates in the center frame.
    pub position: Vec3<T>,
    pub intensity: T,
    pub source_frame: usize,
    pub source_index: u32,
}

/// Points of a window of frames expressed in the center frame's coordinates,
/// each traceable to the scan it came from.
#[derive(Clone, Debug)]
pub struct Superframe<T> {
    pub center: usize,
    pub half_width: usize,
    pub points: Vec<SuperPoint<T>>,
}

impl<T: Real> Superframe<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices of points that originate from the center scan.
    pub fn center_points(&self) -> impl Iterator<Item = usize> + '_ {
        self.points
            .iter()
            .enumerate()
            .filter(move |(_, p)| p.source_frame == self.center)
            .map(|(i, _)| i)
    }

    /// Min-max normalized intensity of every point; all zeros when flat.
    pub fn normalized_intensities(&self) -> Vec<T> {
        let (lo, hi) = self
            .points
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), p| {
                (lo.min(p.intensity), hi.max(p.intensity))
            });
        let span = hi - lo;
        self.points
            .iter()
            .map(|p| {
                if span > T::zero() {
                    (p.intensity - lo) / span
                } else {
                    T::zero()
                }
            })
            .collect()
    }
}

pub fn build_superframe<T: Real>(
    frames: &[PointFrame<T>],
    poses: &[Pose<T>],
    center: usize,
    half_width: usize,
) -> Result<Superframe<T>> {
    if frames.len() != poses.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} frames but {} poses",
            frames.len(),
            poses.len()
        )));
    }
    if center >= frames.len() {
        return Err(Error::Range(format!(
            "superframe center {center} outside sequence of {} frames",
            frames.len()
        )));
    }
    let lo = center.saturating_sub(half_width);
    let hi = (center + half_width).min(frames.len() - 1);
    let total: usize = frames[lo..=hi].iter().map(|f| f.points.len()).sum();
    let mut points = Vec::with_capacity(total);
    for src in lo..=hi {
        let rel = poses[center].relative_from(&poses[src]);
        for (i, p) in frames[src].points.iter().enumerate() {
            let position = if src == center {
                p.position
            } else {
                rel.transform_point(p.position)
            };
            points.push(SuperPoint {
                position,
                intensity: p.intensity,
                source_frame: src,
                source_index: i as u32,
            });
        }
    }
    Ok(Superframe {
        center,
        half_width,
        points,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundParams {
    /// Horizontal cell edge (m).
    pub cell: f64,
    /// Inlier distance to an accepted plane (m).
    pub plane_tol: f64,
    /// Largest allowed angle between the plane normal and vertical (rad).
    pub normal_max_tilt: f64,
    /// Seeds are the points within this height of a cell's lowest point (m).
    pub seed_height: f64,
    /// Planes whose height departs from the median plane height by more than
    /// this are rejected (m).
    pub max_step: f64,
    /// Also extract a ceiling surface into the ground set.
    pub ceiling: bool,
}

impl Default for GroundParams {
    fn default() -> Self {
        Self {
            cell: 2.0,
            plane_tol: 0.1,
            normal_max_tilt: 15f64.to_radians(),
            seed_height: 0.25,
            max_step: 1.0,
            ceiling: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellPlane<T> {
    pub cell: [i32; 2],
    /// `z = a·x + b·y + c`.
    pub coeffs: [T; 3],
    pub is_ceiling: bool,
}

impl<T: Real> CellPlane<T> {
    pub fn distance(&self, p: Vec3<T>) -> T {
        let [a, b, c] = self.coeffs;
        (p.z - (a * p.x + b * p.y + c)).abs() / (a * a + b * b + T::one()).sqrt()
    }

    pub fn tilt(&self) -> T {
        let [a, b, _] = self.coeffs;
        (T::one() / (a * a + b * b + T::one()).sqrt()).acos()
    }

    fn height_at(&self, x: T, y: T) -> T {
        let [a, b, c] = self.coeffs;
        a * x + b * y + c
    }
}

/// Partition of a Superframe's point indices into object and ground sets.
#[derive(Clone, Debug)]
pub struct GroundSplit<T> {
    pub object: Vec<usize>,
    pub ground: Vec<usize>,
    pub planes: Vec<CellPlane<T>>,
}

/// Least-squares `z = a x + b y + c` on centered coordinates.
fn fit_plane<T: Real>(pts: &[Vec3<T>]) -> Option<[T; 3]> {
    if pts.len() < 3 {
        return None;
    }
    let n = T::from_usize_lossy(pts.len());
    let mean = pts.iter().fold(Vec3::zero(), |a, p| a + *p) / n;
    let (mut sxx, mut sxy, mut syy, mut sxz, mut syz) =
        (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
    for p in pts {
        let d = *p - mean;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
        sxz += d.x * d.z;
        syz += d.y * d.z;
    }
    let det = sxx * syy - sxy * sxy;
    // Collinear or single-point footprints leave the tilt undetermined.
    let scale = (sxx + syy) * (sxx + syy);
    if !(det > T::c(1e-6) * scale) || scale <= T::zero() {
        return None;
    }
    let a = (sxz * syy - syz * sxy) / det;
    let b = (syz * sxx - sxz * sxy) / det;
    let c = mean.z - a * mean.x - b * mean.y;
    Some([a, b, c])
}

fn fit_cell<T: Real>(
    cell_pts: &[Vec3<T>],
    params: &GroundParams,
    ceiling: bool,
) -> Option<[T; 3]> {
    let seed_h = T::c(params.seed_height);
    let tol = T::c(params.plane_tol);
    let seeds: Vec<Vec3<T>> = if ceiling {
        let top = cell_pts.iter().map(|p| p.z).fold(T::neg_infinity(), T::max);
        cell_pts.iter().copied().filter(|p| p.z >= top - seed_h).collect()
    } else {
        let bottom = cell_pts.iter().map(|p| p.z).fold(T::infinity(), T::min);
        cell_pts.iter().copied().filter(|p| p.z <= bottom + seed_h).collect()
    };
    let first = fit_plane(&seeds)?;
    let probe = CellPlane {
        cell: [0, 0],
        coeffs: first,
        is_ceiling: ceiling,
    };
    let inliers: Vec<Vec3<T>> = cell_pts
        .iter()
        .copied()
        .filter(|p| probe.distance(*p) <= tol)
        .collect();
    let refined = fit_plane(&inliers).unwrap_or(first);
    let plane = CellPlane {
        cell: [0, 0],
        coeffs: refined,
        is_ceiling: ceiling,
    };
    (plane.tilt() <= T::c(params.normal_max_tilt)).then_some(refined)
}

/// Cell-wise plane extraction. Cells with fewer than three points, without a
/// well-conditioned seed plane, with a plane tilted beyond the limit, or with
/// a plane far from the median plane height contribute only object points.
pub fn split_ground<T: Real>(sf: &Superframe<T>, params: &GroundParams) -> Result<GroundSplit<T>> {
    if !(params.cell > 0.0) || !(params.plane_tol > 0.0) {
        return Err(Error::param("ground cell and plane_tol must be positive"));
    }
    let cell = T::c(params.cell);
    let mut cells: HashMap<[i32; 2], Vec<usize>> = HashMap::new();
    for (i, p) in sf.points.iter().enumerate() {
        let key = [
            floor_i32(p.position.x / cell),
            floor_i32(p.position.y / cell),
        ];
        cells.entry(key).or_default().push(i);
    }
    let mut keys: Vec<[i32; 2]> = cells.keys().copied().collect();
    keys.sort_unstable();

    let mut planes = Vec::new();
    let surfaces: &[bool] = if params.ceiling {
        &[false, true]
    } else {
        &[false]
    };
    for &ceiling in surfaces {
        let mut fitted: Vec<CellPlane<T>> = Vec::new();
        for key in &keys {
            let idx = &cells[key];
            if idx.len() < 3 {
                continue;
            }
            let pts: Vec<Vec3<T>> = idx.iter().map(|&i| sf.points[i].position).collect();
            if let Some(coeffs) = fit_cell(&pts, params, ceiling) {
                fitted.push(CellPlane {
                    cell: *key,
                    coeffs,
                    is_ceiling: ceiling,
                });
            }
        }
        let center_height = |pl: &CellPlane<T>| {
            let cx = (T::c(pl.cell[0] as f64) + T::c(0.5)) * cell;
            let cy = (T::c(pl.cell[1] as f64) + T::c(0.5)) * cell;
            pl.height_at(cx, cy)
        };
        if !fitted.is_empty() {
            let mut heights: Vec<T> = fitted.iter().map(center_height).collect();
            heights.sort_by(total_cmp);
            let median = heights[heights.len() / 2];
            let step = T::c(params.max_step);
            fitted.retain(|pl| (center_height(pl) - median).abs() <= step);
        }
        planes.extend(fitted);
    }

    let mut by_cell: HashMap<[i32; 2], Vec<CellPlane<T>>> = HashMap::new();
    for pl in &planes {
        by_cell.entry(pl.cell).or_default().push(*pl);
    }
    let tol = T::c(params.plane_tol);
    let mut ground = Vec::new();
    let mut object = Vec::new();
    for key in &keys {
        let surf = by_cell.get(key);
        for &i in &cells[key] {
            let p = sf.points[i].position;
            let on_surface = surf.is_some_and(|s| s.iter().any(|pl| pl.distance(p) <= tol));
            if on_surface {
                ground.push(i);
            } else {
                object.push(i);
            }
        }
    }
    ground.sort_unstable();
    object.sort_unstable();
    Ok(GroundSplit {
        object,
        ground,
        planes,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Voxel<T> {
    pub coord: [i32; 3],
    /// Indices into the Superframe's points.
    pub members: Vec<usize>,
    /// Mean min-max normalized intensity of the members.
    pub mean_intensity: T,
    /// Mean position of the members.
    pub centroid: Vec3<T>,
}

/// Sparse voxel grid over the object points of one Superframe. Voxels are
/// stored sorted by integer coordinate, so ids are independent of point
/// order.
#[derive(Clone, Debug)]
pub struct VoxelGrid<T> {
    pub edge: T,
    pub voxels: Vec<Voxel<T>>,
    index: HashMap<[i32; 3], usize>,
}

pub type VoxelId = usize;

/// The 26 offsets of a voxel's 3×3×3 neighborhood.
pub fn neighbor_offsets() -> impl Iterator<Item = [i32; 3]> {
    (-1..=1).flat_map(|dx| {
        (-1..=1).flat_map(move |dy| {
            (-1..=1)
                .filter(move |&dz| (dx, dy, dz) != (0, 0, 0))
                .map(move |dz| [dx, dy, dz])
        })
    })
}

impl<T: Real> VoxelGrid<T> {
    pub fn coord_of(edge: T, p: Vec3<T>) -> [i32; 3] {
        [
            floor_i32(p.x / edge),
            floor_i32(p.y / edge),
            floor_i32(p.z / edge),
        ]
    }

    /// Builds a grid from pre-computed voxels (used by fixtures and tests).
    pub fn from_voxels(edge: T, mut voxels: Vec<Voxel<T>>) -> Self {
        voxels.sort_by_key(|v| v.coord);
        let index = voxels
            .iter()
            .enumerate()
            .map(|(i, v)| (v.coord, i))
            .collect();
        Self {
            edge,
            voxels,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn get(&self, coord: [i32; 3]) -> Option<VoxelId> {
        self.index.get(&coord).copied()
    }

    /// Geometric center of the voxel cube.
    pub fn cube_center(&self, id: VoxelId) -> Vec3<T> {
        let c = self.voxels[id].coord;
        let h = T::c(0.5);
        Vec3::new(
            (T::c(c[0] as f64) + h) * self.edge,
            (T::c(c[1] as f64) + h) * self.edge,
            (T::c(c[2] as f64) + h) * self.edge,
        )
    }

    /// The eight cube corners.
    pub fn corners(&self, id: VoxelId) -> [Vec3<T>; 8] {
        let c = self.voxels[id].coord;
        let e = self.edge;
        let base = Vec3::new(
            T::c(c[0] as f64) * e,
            T::c(c[1] as f64) * e,
            T::c(c[2] as f64) * e,
        );
        let mut out = [base; 8];
        for (k, corner) in out.iter_mut().enumerate() {
            let d = Vec3::new(
                if k & 1 != 0 { e } else { T::zero() },
                if k & 2 != 0 { e } else { T::zero() },
                if k & 4 != 0 { e } else { T::zero() },
            );
            *corner = base + d;
        }
        out
    }

    pub fn cube_aabb(&self, id: VoxelId) -> Aabb<T> {
        let c = self.corners(id);
        Aabb::new(c[0], c[7])
    }

    pub fn neighbors(&self, id: VoxelId) -> impl Iterator<Item = VoxelId> + '_ {
        let c = self.voxels[id].coord;
        neighbor_offsets().filter_map(move |o| self.get([c[0] + o[0], c[1] + o[1], c[2] + o[2]]))
    }

    /// Box around the cubes of a voxel set.
    pub fn bounds<I: IntoIterator<Item = VoxelId>>(&self, ids: I) -> Option<Aabb<T>> {
        ids.into_iter()
            .map(|id| self.cube_aabb(id))
            .reduce(|a, b| a.union(b))
    }
}

/// Voxelizes the points `object` of `sf` with cubes of edge `edge`.
pub fn voxelize<T: Real>(sf: &Superframe<T>, object: &[usize], edge: T) -> Result<VoxelGrid<T>> {
    if !(edge > T::zero()) || !edge.is_finite() {
        return Err(Error::param(format!("voxel edge must be positive, got {edge}")));
    }
    let norm = sf.normalized_intensities();
    let mut map: HashMap<[i32; 3], Vec<usize>> = HashMap::new();
    for &i in object {
        let p = sf
            .points
            .get(i)
            .ok_or_else(|| Error::Range(format!("object index {i} outside superframe")))?;
        map.entry(VoxelGrid::coord_of(edge, p.position))
            .or_default()
            .push(i);
    }
    let voxels = map
        .into_iter()
        .map(|(coord, mut members)| {
            members.sort_unstable();
            let n = T::from_usize_lossy(members.len());
            let mean_intensity = members.iter().map(|&i| norm[i]).sum::<T>() / n;
            let centroid = members
                .iter()
                .fold(Vec3::zero(), |a, &i| a + sf.points[i].position)
                / n;
            Voxel {
                coord,
                members,
                mean_intensity,
                centroid,
            }
        })
        .collect();
    Ok(VoxelGrid::from_voxels(edge, voxels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Point;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame(idx: usize, pts: &[[f64; 3]]) -> PointFrame<f64> {
        PointFrame {
            frame_index: idx,
            sensor_id: 0,
            points: pts.iter().map(|p| Point::new(p[0], p[1], p[2], 0.5)).collect(),
        }
    }

    fn sf_of(points: Vec<Vec3<f64>>) -> Superframe<f64> {
        Superframe {
            center: 0,
            half_width: 0,
            points: points
                .into_iter()
                .enumerate()
                .map(|(i, p)| SuperPoint {
                    position: p,
                    intensity: 0.5,
                    source_frame: 0,
                    source_index: i as u32,
                })
                .collect(),
        }
    }

    #[test]
    fn identity_poses_give_single_keyframe() {
        let poses = vec![Pose::<f64>::identity(); 12];
        let k = designate_keyframes(&poses, 2.0, 10f64.to_radians());
        assert_eq!(k.len(), 1);
        assert_eq!(k[0].frame_index, 0);
    }

    #[test]
    fn empty_poses_give_no_keyframes() {
        assert!(designate_keyframes::<f64>(&[], 1.0, 1.0).is_empty());
    }

    #[test]
    fn translation_keyframes_follow_cumulative_distance() {
        let poses: Vec<Pose<f64>> = (0..23)
            .map(|i| Pose::from_translation(Vec3::new(0.5 * i as f64, 0.0, 0.0)))
            .collect();
        // Oracle: a frame is a keyframe once the distance travelled since the
        // last keyframe strictly exceeds the threshold.
        let mut expected = vec![0usize];
        let mut last = 0.0;
        for i in 1..23 {
            let d = 0.5 * i as f64;
            if d - last > 2.0 {
                expected.push(i);
                last = d;
            }
        }
        let got: Vec<usize> = designate_keyframes(&poses, 2.0, 10f64.to_radians())
            .iter()
            .map(|k| k.frame_index)
            .collect();
        assert_eq!(got, expected);
        assert_eq!(got, vec![0, 5, 10, 15, 20]);
    }

    #[test]
    fn rotation_keyframes_follow_cumulative_angle() {
        let poses: Vec<Pose<f64>> = (0..13)
            .map(|i| Pose::from_yaw_translation((3.0 * i as f64).to_radians(), Vec3::zero()))
            .collect();
        let got: Vec<usize> = designate_keyframes(&poses, 2.0, 10f64.to_radians())
            .iter()
            .map(|k| k.frame_index)
            .collect();
        assert_eq!(got, vec![0, 4, 8, 12]);
    }

    #[test]
    fn zero_half_width_is_center_frame() {
        let frames = vec![frame(0, &[[1.0, 2.0, 3.0]]), frame(1, &[[4.0, 5.0, 6.0]])];
        let poses = vec![
            Pose::identity(),
            Pose::from_translation(Vec3::new(1.0, 0.0, 0.0)),
        ];
        let sf = build_superframe(&frames, &poses, 1, 0).unwrap();
        assert_eq!(sf.points.len(), 1);
        assert_eq!(sf.points[0].position, Vec3::new(4.0, 5.0, 6.0));
        assert_eq!(sf.points[0].source_frame, 1);
    }

    #[test]
    fn neighbor_frame_is_shifted_by_relative_pose() {
        let f0 = frame(0, &[[0.0, 0.0, 0.0]]);
        let f1 = frame(1, &[[0.0, 0.0, 0.0], [1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]]);
        let poses = vec![
            Pose::identity(),
            Pose::from_translation(Vec3::new(1.0, 0.0, 0.0)),
        ];
        let sf = build_superframe(&[f0, f1], &poses, 0, 1).unwrap();
        let shifted: Vec<Vec3<f64>> = sf
            .points
            .iter()
            .filter(|p| p.source_frame == 1)
            .map(|p| p.position)
            .collect();
        // Frame 1 sits one metre ahead of frame 0, so each of its points moves
        // by +1 in x when expressed in frame 0.
        assert_eq!(
            shifted,
            vec![
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(2.0, 2.0, 3.0),
                Vec3::new(0.0, 0.5, 0.0)
            ]
        );
    }

    #[test]
    fn window_clipped_at_sequence_start() {
        let frames: Vec<_> = (0..4).map(|i| frame(i, &[[i as f64, 0.0, 0.0]])).collect();
        let poses = vec![Pose::identity(); 4];
        let sf = build_superframe(&frames, &poses, 0, 2).unwrap();
        let mut srcs: Vec<usize> = sf.points.iter().map(|p| p.source_frame).collect();
        srcs.sort_unstable();
        assert_eq!(srcs, vec![0, 1, 2]);
    }

    #[test]
    fn center_out_of_range() {
        let frames = vec![frame(0, &[])];
        let poses = vec![Pose::identity()];
        assert!(matches!(
            build_superframe(&frames, &poses, 3, 1),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn plane_plus_outlier() {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push(Vec3::new(i as f64 * 0.15, j as f64 * 0.15, 0.0));
            }
        }
        pts.push(Vec3::new(0.7, 0.7, 2.0));
        let sf = sf_of(pts);
        let split = split_ground(&sf, &GroundParams::default()).unwrap();
        assert_eq!(split.object, vec![100]);
        assert_eq!(split.ground.len(), 100);
    }

    #[test]
    fn empty_superframe_split() {
        let sf = sf_of(vec![]);
        let split = split_ground(&sf, &GroundParams::default()).unwrap();
        assert!(split.ground.is_empty() && split.object.is_empty());
    }

    #[test]
    fn degenerate_cell_is_object() {
        let sf = sf_of(vec![Vec3::new(0.1, 0.1, 0.0), Vec3::new(0.2, 0.1, 0.0)]);
        let split = split_ground(&sf, &GroundParams::default()).unwrap();
        assert_eq!(split.object, vec![0, 1]);
    }

    #[test]
    fn noisy_plane_is_mostly_ground() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = rand_distr_normal(&mut rng, 4000);
        let pts: Vec<Vec3<f64>> = normal
            .into_iter()
            .map(|n| {
                Vec3::new(
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    0.02 * n,
                )
            })
            .collect();
        let sf = sf_of(pts);
        let split = split_ground(&sf, &GroundParams::default()).unwrap();
        let frac = split.ground.len() as f64 / sf.len() as f64;
        assert!(frac >= 0.99, "ground fraction {frac}");
    }

    /// Box–Muller standard normals.
    fn rand_distr_normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let u1: f64 = rng.random_range(f64::EPSILON..1.0);
                let u2: f64 = rng.random();
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect()
    }

    #[test]
    fn ceiling_is_extracted_when_enabled() {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push(Vec3::new(i as f64 * 0.15, j as f64 * 0.15, 0.0));
                pts.push(Vec3::new(i as f64 * 0.15, j as f64 * 0.15, 3.0));
            }
        }
        pts.push(Vec3::new(0.7, 0.7, 1.5));
        let sf = sf_of(pts);
        let params = GroundParams {
            ceiling: true,
            ..Default::default()
        };
        let split = split_ground(&sf, &params).unwrap();
        assert_eq!(split.object, vec![200]);
        let plain = split_ground(&sf, &GroundParams::default()).unwrap();
        assert_eq!(plain.object.len(), 101);
    }

    #[test]
    fn two_points_share_a_voxel() {
        let sf = sf_of(vec![Vec3::new(0.05, 0.05, 0.05), Vec3::new(0.07, 0.02, 0.01)]);
        let g = voxelize(&sf, &[0, 1], 0.1).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.voxels[0].members, vec![0, 1]);
    }

    #[test]
    fn negative_coordinates_floor() {
        let sf = sf_of(vec![Vec3::new(-0.01, 0.0, 0.0)]);
        let g = voxelize(&sf, &[0], 0.1).unwrap();
        assert_eq!(g.voxels[0].coord, [-1, 0, 0]);
    }

    #[test]
    fn non_positive_edge_rejected() {
        let sf = sf_of(vec![Vec3::zero()]);
        assert!(matches!(voxelize(&sf, &[0], 0.0), Err(Error::Parameter(_))));
        assert!(matches!(voxelize(&sf, &[0], -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn random_points_are_all_counted() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec3<f64>> = (0..1000)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                )
            })
            .collect();
        let sf = sf_of(pts);
        let all: Vec<usize> = (0..1000).collect();
        let g = voxelize(&sf, &all, 0.3).unwrap();
        let total: usize = g.voxels.iter().map(|v| v.members.len()).sum();
        assert_eq!(total, 1000);
    }

    #[test]
    fn voxel_intensity_is_normalized_over_superframe() {
        let mut sf = sf_of(vec![
            Vec3::new(0.01, 0.0, 0.0),
            Vec3::new(0.02, 0.0, 0.0),
            Vec3::new(5.0, 0.0, 0.0),
        ]);
        sf.points[0].intensity = 10.0;
        sf.points[1].intensity = 20.0;
        sf.points[2].intensity = 30.0;
        let g = voxelize(&sf, &[0, 1], 0.1).unwrap();
        assert!((g.voxels[0].mean_intensity - 0.25).abs() < 1e-12);
    }
}
