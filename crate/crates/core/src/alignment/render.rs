//! Voxel splatting by projected convex hulls.
//!
//! Each voxel costs exactly eight corner projections. The hull of the
//! projected corners is rasterized conservatively: a pixel is covered when
//! its unit square overlaps the hull with positive area. Depth testing uses
//! the voxel center's camera depth.

use crate::aggregation::{VoxelGrid, VoxelId};
use crate::alignment::camera::PinholeCamera;
use crate::scalar::Real;

/// Voxels with a corner closer than this to the camera plane are skipped (m).
pub const NEAR_PLANE: f64 = 1e-3;

const EMPTY: u32 = u32::MAX;

/// Per-pixel front-most voxel and its depth.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelVoxelMap<T> {
    pub width: usize,
    pub height: usize,
    voxel: Vec<u32>,
    depth: Vec<T>,
}

impl<T: Real> PixelVoxelMap<T> {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            voxel: vec![EMPTY; width * height],
            depth: vec![T::infinity(); width * height],
        }
    }

    #[inline]
    fn idx(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    pub fn voxel_at(&self, col: usize, row: usize) -> Option<VoxelId> {
        let v = self.voxel[self.idx(col, row)];
        (v != EMPTY).then_some(v as VoxelId)
    }

    pub fn depth_at(&self, col: usize, row: usize) -> Option<T> {
        let i = self.idx(col, row);
        (self.voxel[i] != EMPTY).then_some(self.depth[i])
    }

    pub fn mapped_count(&self) -> usize {
        self.voxel.iter().filter(|&&v| v != EMPTY).count()
    }

    /// Number of distinct voxels that won at least one pixel.
    pub fn visible_voxel_count(&self) -> usize {
        let mut ids: Vec<u32> = self.voxel.iter().copied().filter(|&v| v != EMPTY).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    /// `(col, row, voxel)` for every mapped pixel, row-major.
    pub fn iter_mapped(&self) -> impl Iterator<Item = (usize, usize, VoxelId)> + '_ {
        self.voxel.iter().enumerate().filter_map(move |(i, &v)| {
            (v != EMPTY).then_some((i % self.width, i / self.width, v as VoxelId))
        })
    }

    /// Overwrites a pixel unconditionally.
    pub fn set(&mut self, col: usize, row: usize, id: VoxelId, depth: T) {
        let i = self.idx(col, row);
        self.voxel[i] = id as u32;
        self.depth[i] = depth;
    }

    /// Writes if `depth` is strictly nearer than the stored depth.
    #[inline]
    fn splat(&mut self, col: usize, row: usize, id: VoxelId, depth: T) {
        let i = self.idx(col, row);
        if depth < self.depth[i] {
            self.depth[i] = depth;
            self.voxel[i] = id as u32;
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RenderStats {
    pub corner_projections: usize,
    pub voxels_drawn: usize,
    /// Entirely behind the camera.
    pub voxels_culled: usize,
    /// Straddling the camera plane (camera inside or touching the voxel).
    pub voxels_skipped: usize,
}

/// Andrew's monotone chain; counter-clockwise, collinear points dropped.
pub fn convex_hull<T: Real>(pts: &[(T, T)]) -> Vec<(T, T)> {
    let mut p: Vec<(T, T)> = pts.to_vec();
    p.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
    });
    p.dedup();
    if p.len() <= 2 {
        return p;
    }
    let cross = |o: (T, T), a: (T, T), b: (T, T)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(T, T)> = Vec::with_capacity(p.len() * 2);
    for &pt in &p {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], pt) <= T::zero() {
            hull.pop();
        }
        hull.push(pt);
    }
    let lower = hull.len() + 1;
    for &pt in p.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], pt) <= T::zero() {
            hull.pop();
        }
        hull.push(pt);
    }
    hull.pop();
    hull
}

/// Clips a convex polygon to `lo ≤ y ≤ hi` and returns its x-extent.
fn strip_x_range<T: Real>(poly: &[(T, T)], lo: T, hi: T) -> Option<(T, T)> {
    let clip = |input: &[(T, T)], keep: &dyn Fn((T, T)) -> bool, bound: T| -> Vec<(T, T)> {
        let mut out = Vec::with_capacity(input.len() + 2);
        for i in 0..input.len() {
            let a = input[i];
            let b = input[(i + 1) % input.len()];
            let (ka, kb) = (keep(a), keep(b));
            if ka {
                out.push(a);
            }
            if ka != kb {
                let t = (bound - a.1) / (b.1 - a.1);
                out.push((a.0 + (b.0 - a.0) * t, bound));
            }
        }
        out
    };
    let upper = clip(poly, &|p: (T, T)| p.1 >= lo, lo);
    if upper.is_empty() {
        return None;
    }
    let both = clip(&upper, &|p: (T, T)| p.1 <= hi, hi);
    if both.is_empty() {
        return None;
    }
    let (mut xmin, mut xmax) = (T::infinity(), T::neg_infinity());
    for (x, _) in both {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
    }
    Some((xmin, xmax))
}

/// Pixels `(col, row)` whose unit squares overlap the convex polygon with
/// positive area, clipped to the raster.
pub fn conservative_pixels<T: Real>(hull: &[(T, T)], width: usize, height: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if hull.len() < 3 {
        return out;
    }
    let (mut ymin, mut ymax) = (T::infinity(), T::neg_infinity());
    for &(_, y) in hull {
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    let h = height as f64;
    let w = width as f64;
    let r0 = ymin.floor().to_f64_lossy().max(0.0);
    let r1 = (ymax.ceil().to_f64_lossy() - 1.0).min(h - 1.0);
    if !(r0 <= r1) {
        return out;
    }
    for row in (r0 as usize)..=(r1 as usize) {
        let lo = T::from_usize_lossy(row);
        let hi = lo + T::one();
        if !(lo < ymax && hi > ymin) {
            continue;
        }
        let Some((xmin, xmax)) = strip_x_range(hull, lo, hi) else {
            continue;
        };
        let c0 = xmin.floor().to_f64_lossy().max(0.0);
        let c1 = (xmax.ceil().to_f64_lossy() - 1.0).min(w - 1.0);
        if !(c0 <= c1) || !(xmax > xmin) {
            continue;
        }
        for col in (c0 as usize)..=(c1 as usize) {
            out.push((col, row));
        }
    }
    out
}

/// Projected hull and center depth of one voxel.
pub enum VoxelFootprint<T> {
    Visible { hull: Vec<(T, T)>, depth: T },
    Behind,
    Straddling,
}

pub fn voxel_footprint<T: Real>(grid: &VoxelGrid<T>, id: VoxelId, camera: &PinholeCamera<T>, stats: &mut RenderStats) -> VoxelFootprint<T> {
    let to_cam = camera.to_camera();
    let near = T::c(NEAR_PLANE);
    let mut projected = [(T::zero(), T::zero()); 8];
    let mut behind = 0;
    let mut straddle = false;
    for (k, corner) in grid.corners(id).iter().enumerate() {
        stats.corner_projections += 1;
        let pc = to_cam.transform_point(*corner);
        if pc.z <= near {
            if pc.z <= T::zero() {
                behind += 1;
            }
            straddle = true;
            continue;
        }
        projected[k] = camera.intrinsics.project(pc);
    }
    if behind == 8 {
        return VoxelFootprint::Behind;
    }
    if straddle {
        return VoxelFootprint::Straddling;
    }
    let depth = to_cam.transform_point(grid.cube_center(id)).z;
    VoxelFootprint::Visible {
        hull: convex_hull(&projected),
        depth,
    }
}

/// Renders the depth/voxel skeleton of a pseudo-image.
pub fn project_voxels<T: Real>(grid: &VoxelGrid<T>, camera: &PinholeCamera<T>) -> (PixelVoxelMap<T>, RenderStats) {
    let (w, h) = (camera.intrinsics.width, camera.intrinsics.height);
    let mut map = PixelVoxelMap::empty(w, h);
    let mut stats = RenderStats::default();
    for id in 0..grid.len() {
        match voxel_footprint(grid, id, camera, &mut stats) {
            VoxelFootprint::Behind => stats.voxels_culled += 1,
            VoxelFootprint::Straddling => stats.voxels_skipped += 1,
            VoxelFootprint::Visible { hull, depth } => {
                stats.voxels_drawn += 1;
                for (c, r) in conservative_pixels(&hull, w, h) {
                    map.splat(c, r, id, depth);
                }
            }
        }
    }
    (map, stats)
}
