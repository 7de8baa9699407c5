//! Per-camera pseudo-videos over a run of Superframes.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::aggregation::VoxelGrid;
use crate::alignment::camera::PseudoCameraRig;
use crate::alignment::color::{grid_hues, pseudo_color, PseudoColorParams, PseudoImage};
use crate::alignment::render::project_voxels;
use crate::data::write_atomic;
use crate::scalar::Real;
use crate::{Error, Result};

/// `cameras[c][f]` is camera `c`'s view of the `f`-th grid.
#[derive(Clone, Debug)]
pub struct PseudoVideo<T> {
    pub cameras: Vec<Vec<PseudoImage<T>>>,
}

impl<T: Real> PseudoVideo<T> {
    pub fn frame_count(&self) -> usize {
        self.cameras.first().map_or(0, Vec::len)
    }

    /// Writes `cam{c}/{f:06}.png` under `dir` and returns the paths.
    pub fn export_png(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for (c, frames) in self.cameras.iter().enumerate() {
            let sub = dir.join(format!("cam{c}"));
            std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            for (f, img) in frames.iter().enumerate() {
                let path = sub.join(format!("{f:06}.png"));
                write_atomic(&path, &encode_png(&img.to_rgb8())?)?;
                out.push(path);
            }
        }
        Ok(out)
    }
}

pub fn encode_png(img: &image::RgbImage) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| Error::MalformedFile(format!("png encode: {e}")))?;
    Ok(buf.into_inner())
}

pub fn render_frame<T: Real>(grid: &VoxelGrid<T>, rig: &PseudoCameraRig<T>, color: &PseudoColorParams) -> Vec<PseudoImage<T>> {
    let hues = grid_hues(grid);
    rig.cameras()
        .iter()
        .map(|cam| pseudo_color(project_voxels(grid, cam).0, &hues, color))
        .collect()
}

/// Renders every grid through every camera; frames are independent, so they
/// are drawn in parallel and collected in input order.
pub fn render_sequence<T: Real>(rig: &PseudoCameraRig<T>, grids: &[VoxelGrid<T>], color: &PseudoColorParams) -> PseudoVideo<T> {
    let per_frame: Vec<Vec<PseudoImage<T>>> = grids.par_iter().map(|g| render_frame(g, rig, color)).collect();
    let mut cameras: Vec<Vec<PseudoImage<T>>> = (0..rig.len()).map(|_| Vec::with_capacity(grids.len())).collect();
    for frame in per_frame {
        for (c, img) in frame.into_iter().enumerate() {
            cameras[c].push(img);
        }
    }
    PseudoVideo { cameras }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::Voxel;
    use crate::alignment::camera::Intrinsics;
    use crate::geometry::Vec3;
    use std::collections::BTreeSet;

    fn scene() -> VoxelGrid<f64> {
        let mut v = Vec::new();
        for (x0, intensity) in [(30, 0.2), (50, 0.8)] {
            for y in -3..3 {
                for z in -3..3 {
                    v.push(Voxel {
                        coord: [x0, y + x0 / 10, z],
                        members: vec![0],
                        mean_intensity: intensity,
                        centroid: Vec3::zero(),
                    });
                }
            }
        }
        VoxelGrid::from_voxels(0.1, v)
    }

    fn rig() -> PseudoCameraRig<f64> {
        PseudoCameraRig::surround(4, Intrinsics::centered(60.0, 80, 60), 0.0, 0.0, (-0.5, 0.5)).unwrap()
    }

    #[test]
    fn one_video_per_camera() {
        let v = render_sequence(&rig(), &[scene()], &PseudoColorParams::default());
        assert_eq!(v.cameras.len(), 4);
        assert!(v.cameras.iter().all(|c| c.len() == 1));
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = render_sequence(&rig(), &[scene(), scene()], &PseudoColorParams::default());
        let b = render_sequence(&rig(), &[scene(), scene()], &PseudoColorParams::default());
        for (ca, cb) in a.cameras.iter().zip(&b.cameras) {
            for (x, y) in ca.iter().zip(cb) {
                assert_eq!(x.to_rgb8().as_raw(), y.to_rgb8().as_raw());
            }
        }
    }

    #[test]
    fn static_scene_keeps_object_hues() {
        let v = render_sequence(&rig(), &[scene(), scene()], &PseudoColorParams::default());
        let hues = |img: &PseudoImage<f64>, near: bool| -> BTreeSet<u64> {
            img.map
                .iter_mapped()
                .filter(|&(_, _, vox)| (img.map.depth_at(0, 0).is_none()) && ((vox < 36) == near))
                .map(|(c, r, _)| crate::alignment::color::rgb_to_hsi(img.pixel(c, r)).0.to_bits())
                .collect()
        };
        let (f0, f1) = (&v.cameras[0][0], &v.cameras[0][1]);
        assert!(!hues(f0, true).is_empty());
        assert_eq!(hues(f0, true), hues(f1, true));
        assert_eq!(hues(f0, false), hues(f1, false));
    }

    #[test]
    fn export_writes_numbered_frames() {
        let dir = tempfile::tempdir().unwrap();
        let v = render_sequence(&rig(), &[scene(), scene()], &PseudoColorParams::default());
        let paths = v.export_png(dir.path()).unwrap();
        assert_eq!(paths.len(), 8);
        assert!(dir.path().join("cam3/000001.png").exists());
        let back = image::open(&paths[0]).unwrap().to_rgb8();
        assert_eq!(back.dimensions(), (80, 60));
    }
}
