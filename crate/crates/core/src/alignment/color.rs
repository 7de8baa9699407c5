//! HSI pseudo-coloring of rendered voxel maps.
//!
//! Hue comes from equalized voxel intensity, saturation is fixed, and the
//! intensity channel encodes equalized depth discontinuities.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::aggregation::VoxelGrid;
use crate::alignment::frequency::Matrix;
use crate::alignment::render::PixelVoxelMap;
use crate::scalar::Real;
use crate::{Error, Result};

pub const LEVELS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PseudoColorParams {
    pub saturation: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Neighborhood radius of the depth-edge filter (px).
    pub radius: usize,
}

impl Default for PseudoColorParams {
    fn default() -> Self {
        Self {
            saturation: 0.8,
            beta1: 0.4,
            beta2: 0.5,
            radius: 1,
        }
    }
}

impl PseudoColorParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.saturation) {
            return Err(Error::param("saturation must lie in [0, 1]"));
        }
        if !(self.beta1 >= 0.0 && self.beta2 >= 0.0 && self.beta1 + self.beta2 <= 1.0) {
            return Err(Error::param("need β1 ≥ 0, β2 ≥ 0, β1 + β2 ≤ 1"));
        }
        if self.radius == 0 {
            return Err(Error::param("edge filter radius must be ≥ 1"));
        }
        Ok(())
    }
}

/// 256-level quantization of a value in `[0, 1]`.
#[inline]
pub fn quantize<T: Real>(v: T) -> usize {
    let q = (v.to_f64_lossy() * LEVELS as f64).floor();
    if q.is_nan() || q < 0.0 {
        0
    } else {
        (q as usize).min(LEVELS - 1)
    }
}

/// Histogram-equalization lookup `level → level` using
/// `round((cdf − cdf_min) / (n − cdf_min) · 255)`. A single occupied level
/// maps to 0.
pub fn equalization_table(levels: &[usize]) -> [u8; LEVELS] {
    let mut hist = [0usize; LEVELS];
    for &l in levels {
        hist[l.min(LEVELS - 1)] += 1;
    }
    let n = levels.len();
    let mut table = [0u8; LEVELS];
    let cdf_min = hist.iter().copied().find(|&h| h > 0).unwrap_or(0);
    if n == cdf_min {
        return table;
    }
    let mut cdf = 0;
    for (l, &h) in hist.iter().enumerate() {
        cdf += h;
        if h > 0 {
            let v = (cdf - cdf_min) as f64 / (n - cdf_min) as f64 * 255.0;
            table[l] = v.round() as u8;
        }
    }
    table
}

/// Per-voxel hue in degrees, `[0, 360)`, from equalized normalized intensity
/// over the whole grid.
pub fn hue_table<T: Real>(intensities: &[T]) -> Vec<T> {
    let levels: Vec<usize> = intensities.iter().map(|&v| quantize(v)).collect();
    let table = equalization_table(&levels);
    levels
        .iter()
        .map(|&l| T::c(table[l] as f64 / LEVELS as f64 * 360.0))
        .collect()
}

pub fn grid_hues<T: Real>(grid: &VoxelGrid<T>) -> Vec<T> {
    let intensities: Vec<T> = grid.voxels.iter().map(|v| v.mean_intensity).collect();
    hue_table(&intensities)
}

/// Max absolute depth difference to mapped neighbors within `radius`;
/// `None` for unmapped pixels.
pub fn edge_response<T: Real>(map: &PixelVoxelMap<T>, radius: usize) -> Vec<Option<T>> {
    let (w, h) = (map.width, map.height);
    let r = radius as isize;
    let mut out = vec![None; w * h];
    for row in 0..h {
        for col in 0..w {
            let Some(d) = map.depth_at(col, row) else { continue };
            let mut e = T::zero();
            for dr in -r..=r {
                for dc in -r..=r {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (rr, cc) = (row as isize + dr, col as isize + dc);
                    if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                        continue;
                    }
                    if let Some(dn) = map.depth_at(cc as usize, rr as usize) {
                        e = e.max((d - dn).abs());
                    }
                }
            }
            out[row * w + col] = Some(e);
        }
    }
    out
}

/// Three-sector HSI → RGB, hue in degrees, channels clamped to `[0, 1]`.
pub fn hsi_to_rgb<T: Real>(h: T, s: T, i: T) -> [T; 3] {
    let full = T::c(360.0);
    let mut h = h % full;
    if h < T::zero() {
        h += full;
    }
    let sector = T::c(120.0);
    let rad = |deg: T| deg.to_radians();
    let lift = |hh: T| i * (T::one() + s * rad(hh).cos() / rad(T::c(60.0) - hh).cos());
    let low = i * (T::one() - s);
    let three = T::c(3.0) * i;
    let (r, g, b) = if h < sector {
        let r = lift(h);
        (r, three - (r + low), low)
    } else if h < sector + sector {
        let g = lift(h - sector);
        (low, g, three - (low + g))
    } else {
        let b = lift(h - sector - sector);
        (three - (low + b), low, b)
    };
    let c = |v: T| v.max(T::zero()).min(T::one());
    [c(r), c(g), c(b)]
}

/// RGB → HSI `(hue°, saturation, intensity)`; hue 0 for achromatic input.
pub fn rgb_to_hsi<T: Real>(rgb: [T; 3]) -> (T, T, T) {
    let [r, g, b] = rgb;
    let i = (r + g + b) / T::c(3.0);
    if i <= T::zero() {
        return (T::zero(), T::zero(), T::zero());
    }
    let s = T::one() - r.min(g).min(b) / i;
    let num = T::c(0.5) * ((r - g) + (r - b));
    let den = ((r - g) * (r - g) + (r - b) * (g - b)).sqrt();
    if den <= T::epsilon() {
        return (T::zero(), s, i);
    }
    let theta = (num / den).max(-T::one()).min(T::one()).acos().to_degrees();
    let h = if b <= g { theta } else { T::c(360.0) - theta };
    (h, s, i)
}

/// A pseudo-colored raster and the voxel map it was drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoImage<T> {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[T; 3]>,
    pub map: PixelVoxelMap<T>,
}

impl<T: Real> PseudoImage<T> {
    pub fn pixel(&self, col: usize, row: usize) -> [T; 3] {
        self.rgb[row * self.width + col]
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let mut img = RgbImage::new(self.width as u32, self.height as u32);
        for (p, c) in img.pixels_mut().zip(&self.rgb) {
            p.0 = c.map(|v| (v.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        img
    }

    /// Luma (Rec. 601 weights).
    pub fn gray(&self) -> Matrix<T> {
        Matrix {
            rows: self.height,
            cols: self.width,
            data: self.rgb.iter().map(|&c| luma(c)).collect(),
        }
    }
}

#[inline]
pub fn luma<T: Real>([r, g, b]: [T; 3]) -> T {
    T::c(0.299) * r + T::c(0.587) * g + T::c(0.114) * b
}

/// Colors a rendered map. `hues` is indexed by voxel id, in degrees.
pub fn pseudo_color<T: Real>(map: PixelVoxelMap<T>, hues: &[T], params: &PseudoColorParams) -> PseudoImage<T> {
    let (w, h) = (map.width, map.height);
    let edges = edge_response(&map, params.radius.max(1));
    let emax = edges.iter().flatten().copied().fold(T::zero(), T::max);
    let levels: Vec<usize> = edges
        .iter()
        .flatten()
        .map(|&e| if emax > T::zero() { quantize(e / emax) } else { 0 })
        .collect();
    let table = equalization_table(&levels);
    let (s, b1, b2) = (T::c(params.saturation), T::c(params.beta1), T::c(params.beta2));
    let mut rgb = vec![[T::zero(); 3]; w * h];
    let mut k = 0;
    for (idx, e) in edges.iter().enumerate() {
        if e.is_none() {
            continue;
        }
        let lvl = levels[k];
        k += 1;
        let voxel = map.voxel_at(idx % w, idx / w).expect("mapped pixel");
        let i = b1 + b2 * T::c(table[lvl] as f64 / 255.0);
        rgb[idx] = hsi_to_rgb(hues[voxel], s, i);
    }
    PseudoImage {
        width: w,
        height: h,
        rgb,
        map,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::Voxel;
    use crate::alignment::camera::{Intrinsics, PseudoCameraRig};
    use crate::alignment::render::project_voxels;
    use crate::geometry::Vec3;
    use proptest::prelude::*;

    fn wall(x: i32, ys: std::ops::Range<i32>, intensity: f64) -> Vec<Voxel<f64>> {
        let mut v = Vec::new();
        for y in ys {
            for z in -5..5 {
                v.push(Voxel {
                    coord: [x, y, z],
                    members: vec![0],
                    mean_intensity: intensity,
                    centroid: Vec3::zero(),
                });
            }
        }
        v
    }

    /// Dim enough that no RGB channel clips, so HSI round-trips exactly.
    fn dim() -> PseudoColorParams {
        PseudoColorParams {
            beta1: 0.1,
            beta2: 0.2,
            ..PseudoColorParams::default()
        }
    }

    fn render(voxels: Vec<Voxel<f64>>) -> (VoxelGrid<f64>, PseudoImage<f64>) {
        let grid = VoxelGrid::from_voxels(0.1, voxels);
        let rig = PseudoCameraRig::surround(1, Intrinsics::centered(100.0, 120, 120), 0.0, 0.0, (-1.0, 1.0)).unwrap();
        let (map, _) = project_voxels(&grid, &rig.camera(0));
        let hues = grid_hues(&grid);
        let img = pseudo_color(map, &hues, &dim());
        (grid, img)
    }

    #[test]
    fn equalization_of_single_level_is_zero() {
        assert!(equalization_table(&[7, 7, 7]).iter().all(|&v| v == 0));
        let t = equalization_table(&[0, 0, 255, 255]);
        assert_eq!((t[0], t[255]), (0, 255));
    }

    #[test]
    fn flat_scene_has_constant_hue_and_base_intensity() {
        let (_, img) = render(wall(50, -5..5, 0.5));
        let p = dim();
        let mut seen = 0;
        for (c, r, _) in img.map.iter_mapped() {
            let (h, _, i) = rgb_to_hsi(img.pixel(c, r));
            assert!(h.abs() < 1e-6 || (h - 360.0).abs() < 1e-6);
            assert!((i - p.beta1).abs() < 1e-9);
            seen += 1;
        }
        assert!(seen > 0);
    }

    #[test]
    fn step_edge_gets_max_intensity() {
        // Near wall on the left half, far wall on the right half.
        let mut v = wall(50, 0..6, 0.5);
        v.extend(wall(100, -12..0, 0.5));
        let (_, img) = render(v);
        let p = dim();
        let edges = edge_response(&img.map, 1);
        let emax = edges.iter().flatten().copied().fold(0.0, f64::max);
        assert!(emax > 4.0);
        for (idx, e) in edges.iter().enumerate() {
            if e.is_some_and(|e| e == emax) {
                let (_, _, i) = rgb_to_hsi(img.rgb[idx]);
                assert!((i - (p.beta1 + p.beta2)).abs() < 1e-9, "{i}");
            }
        }
    }

    #[test]
    fn unmapped_pixels_are_black() {
        let (_, img) = render(wall(50, -2..2, 0.3));
        for r in 0..img.height {
            for c in 0..img.width {
                if img.map.voxel_at(c, r).is_none() {
                    assert_eq!(img.pixel(c, r), [0.0; 3]);
                }
            }
        }
    }

    #[test]
    fn same_population_same_hues() {
        let a = hue_table(&[0.1f64, 0.5, 0.9, 0.5]);
        let b = hue_table(&[0.5f64, 0.9, 0.1, 0.5]);
        assert_eq!(a[0], b[2]);
        assert_eq!(a[2], b[1]);
        assert!(a.iter().all(|&h| (0.0..360.0).contains(&h)));
    }

    proptest! {
        #[test]
        fn hsi_round_trip(h in 0.0f64..359.9, s in 0.06f64..1.0, i in 0.05f64..0.33) {
            let (h2, s2, i2) = rgb_to_hsi(hsi_to_rgb(h, s, i));
            let dh = (h - h2).abs();
            prop_assert!(dh.min(360.0 - dh) < 1.0);
            prop_assert!((s - s2).abs() < 1e-6);
            prop_assert!((i - i2).abs() < 1e-9);
        }
    }
}
