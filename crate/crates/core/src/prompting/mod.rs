//! Bi-level density prompts at keyframes and their propagation to
//! neighboring Superframes as pixel prompts.

pub mod dbscan;

use serde::{Deserialize, Serialize};

use crate::aggregation::{VoxelGrid, VoxelId};
use crate::alignment::camera::PseudoCameraRig;
use crate::alignment::render::PixelVoxelMap;
use crate::geometry::{Pose, Vec3};
use crate::scalar::Real;

pub use dbscan::{dbscan, Clustering, DbscanParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptParams {
    pub high: DbscanParams,
    pub low: DbscanParams,
    /// Maximum negatives per prompt set.
    pub k_neg: usize,
    /// Occlusion tolerance against the rendered depth (m).
    pub depth_tol: f64,
}

impl Default for PromptParams {
    fn default() -> Self {
        Self {
            high: DbscanParams { eps: 0.5, min_pts: 10 },
            low: DbscanParams { eps: 1.5, min_pts: 5 },
            k_neg: 2,
            depth_tol: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelPrompt {
    pub x: u32,
    pub y: u32,
    pub positive: bool,
}

/// Pixel prompts for one camera in one Superframe.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FramePrompts {
    pub frame: usize,
    pub camera: usize,
    pub points: Vec<PixelPrompt>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromptSet<T> {
    pub object_id: u32,
    pub keyframe: usize,
    /// Keyframe-frame positions.
    pub positive: Vec<Vec3<T>>,
    pub negative: Vec<Vec3<T>>,
    /// Voxel each positive was taken from.
    pub positive_voxels: Vec<VoxelId>,
    /// Voxels of the positive's high-density cluster.
    pub cluster: Vec<VoxelId>,
    pub pixel_prompts: Vec<FramePrompts>,
}

fn mean<T: Real>(pts: impl Iterator<Item = Vec3<T>>) -> Option<Vec3<T>> {
    let mut s = Vec3::zero();
    let mut n = 0usize;
    for p in pts {
        s += p;
        n += 1;
    }
    (n > 0).then(|| s / T::from_usize_lossy(n))
}

/// Member nearest to `target`; ties go to the smaller index.
fn nearest_member<T: Real>(points: &[Vec3<T>], members: &[usize], target: Vec3<T>) -> usize {
    let mut best = (members[0], T::infinity());
    for &m in members {
        let d = (points[m] - target).norm_squared();
        if d < best.1 {
            best = (m, d);
        }
    }
    best.0
}

/// Greedy farthest-first selection from `candidates`, seeded with `anchor`.
fn farthest_first<T: Real>(points: &[Vec3<T>], candidates: &[usize], anchor: Vec3<T>, k: usize) -> Vec<usize> {
    let mut chosen = Vec::new();
    let mut dmin: Vec<T> = candidates.iter().map(|&c| (points[c] - anchor).norm_squared()).collect();
    while chosen.len() < k.min(candidates.len()) {
        let mut best: Option<(usize, T)> = None;
        for (i, &d) in dmin.iter().enumerate() {
            if d > T::zero() && best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let Some((i, _)) = best else { break };
        let pick = candidates[i];
        chosen.push(pick);
        for (d, &c) in dmin.iter_mut().zip(candidates) {
            *d = d.min((points[c] - points[pick]).norm_squared());
        }
    }
    chosen
}

/// One prompt set per high-density cluster of the keyframe's object voxels.
/// `first_id` numbers the sets consecutively.
pub fn bilevel_prompts<T: Real>(grid: &VoxelGrid<T>, keyframe: usize, params: &PromptParams, first_id: u32) -> Vec<PromptSet<T>> {
    let points: Vec<Vec3<T>> = grid.voxels.iter().map(|v| v.centroid).collect();
    if points.is_empty() {
        return Vec::new();
    }
    let high = dbscan(&points, &params.high);
    let low = dbscan(&points, &params.low);
    let low_members: Vec<Vec<usize>> = (0..low.n_clusters).map(|c| low.members(c)).collect();
    let low_centers: Vec<Vec3<T>> = low_members
        .iter()
        .map(|m| mean(m.iter().map(|&i| points[i])).expect("clusters are non-empty"))
        .collect();
    let mut out = Vec::new();
    for c in 0..high.n_clusters {
        let members = high.members(c);
        let center = mean(members.iter().map(|&i| points[i])).expect("clusters are non-empty");
        let pos = nearest_member(&points, &members, center);
        let matched = low.labels[pos].or_else(|| {
            low_centers
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    (*a.1 - points[pos])
                        .norm_squared()
                        .partial_cmp(&(*b.1 - points[pos]).norm_squared())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .map(|(i, _)| i)
        });
        let negatives = match matched {
            Some(l) => {
                let outside: Vec<usize> = low_members[l]
                    .iter()
                    .copied()
                    .filter(|&i| high.labels[i] != Some(c))
                    .collect();
                farthest_first(&points, &outside, points[pos], params.k_neg)
            }
            None => Vec::new(),
        };
        out.push(PromptSet {
            object_id: first_id + out.len() as u32,
            keyframe,
            positive: vec![points[pos]],
            negative: negatives.iter().map(|&i| points[i]).collect(),
            positive_voxels: vec![pos],
            cluster: members,
            pixel_prompts: Vec::new(),
        });
    }
    out
}

/// A Superframe to propagate into: its center pose and one rendered map per
/// rig camera.
pub struct PropagationTarget<'a, T> {
    pub frame: usize,
    pub pose: Pose<T>,
    pub maps: &'a [PixelVoxelMap<T>],
}

/// Pixel of a 3D prompt in one camera, if it is in front, on the raster, on
/// a mapped pixel, and not occluded beyond `depth_tol`.
pub fn project_prompt<T: Real>(p: Vec3<T>, rig: &PseudoCameraRig<T>, camera: usize, map: &PixelVoxelMap<T>, depth_tol: T) -> Option<(u32, u32)> {
    let cam = rig.camera(camera);
    let (u, v, depth) = cam.project_point(p)?;
    let (col, row) = cam.intrinsics.pixel_of(u, v)?;
    if col >= map.width || row >= map.height {
        return None;
    }
    let rendered = map.depth_at(col, row)?;
    if (rendered - depth).abs() > depth_tol {
        return None;
    }
    Some((col as u32, row as u32))
}

/// Transforms the set's 3D prompts from the keyframe into each target
/// Superframe (`inv(P_f) · P_k`) and projects them through every camera.
/// Cameras where no positive survives get no prompts.
pub fn propagate_prompts<T: Real>(
    set: &PromptSet<T>,
    keyframe_pose: &Pose<T>,
    rig: &PseudoCameraRig<T>,
    targets: &[PropagationTarget<'_, T>],
    depth_tol: T,
) -> PromptSet<T> {
    let mut out = set.clone();
    out.pixel_prompts.clear();
    for target in targets {
        let rel = target.pose.relative_from(keyframe_pose);
        for (camera, map) in target.maps.iter().enumerate().take(rig.len()) {
            let mut points: Vec<PixelPrompt> = Vec::new();
            for (list, positive) in [(&set.positive, true), (&set.negative, false)] {
                for p in list {
                    if let Some((x, y)) = project_prompt(rel.transform_point(*p), rig, camera, map, depth_tol) {
                        let clash = points.iter().any(|q| q.x == x && q.y == y);
                        if !clash {
                            points.push(PixelPrompt { x, y, positive });
                        }
                    }
                }
            }
            if points.iter().any(|p| p.positive) {
                out.pixel_prompts.push(FramePrompts {
                    frame: target.frame,
                    camera,
                    points,
                });
            }
        }
    }
    out
}
