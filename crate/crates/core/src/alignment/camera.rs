//! Pinhole pseudo-cameras and the surround rig that shares one convergence
//! point.
//!
//! Sensor frame: x forward, y left, z up. Camera frame: x right, y down,
//! z along the optical axis.

use serde::{Deserialize, Serialize};

use crate::geometry::{Mat3, Pose, Vec3};
use crate::scalar::Real;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> Intrinsics<T> {
    /// Principal point at the raster center.
    pub fn centered(f: T, width: usize, height: usize) -> Self {
        Self {
            fx: f,
            fy: f,
            cx: T::from_usize_lossy(width) / T::c(2.0),
            cy: T::from_usize_lossy(height) / T::c(2.0),
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::param("raster dimensions must be non-zero"));
        }
        if !(self.fx > T::zero()) || !(self.fy > T::zero()) {
            return Err(Error::param("focal lengths must be positive"));
        }
        if !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::param("principal point must be finite"));
        }
        Ok(())
    }

    /// Continuous image coordinates of a camera-frame point (z > 0 assumed).
    #[inline]
    pub fn project(&self, p: Vec3<T>) -> (T, T) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Pixel `(col, row)` containing the image point, if on the raster.
    pub fn pixel_of(&self, u: T, v: T) -> Option<(usize, usize)> {
        if !(u >= T::zero() && v >= T::zero()) {
            return None;
        }
        let (c, r) = (u.floor().to_f64_lossy(), v.floor().to_f64_lossy());
        if c < self.width as f64 && r < self.height as f64 {
            Some((c as usize, r as usize))
        } else {
            None
        }
    }
}

impl Default for Intrinsics<f64> {
    fn default() -> Self {
        Self::centered(540.0, 1080, 720)
    }
}

/// A posed pinhole camera. `pose` maps camera coordinates into the sensor
/// frame of the Superframe being rendered.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PinholeCamera<T> {
    pub intrinsics: Intrinsics<T>,
    pub pose: Pose<T>,
}

impl<T: Real> PinholeCamera<T> {
    pub fn optical_center(&self) -> Vec3<T> {
        self.pose.translation
    }

    pub fn optical_axis(&self) -> Vec3<T> {
        self.pose.rotation.column(2)
    }

    pub fn to_camera(&self) -> Pose<T> {
        self.pose.inverse()
    }

    /// `(u, v, depth)` of a sensor-frame point; `None` behind the camera.
    pub fn project_point(&self, p: Vec3<T>) -> Option<(T, T, T)> {
        let pc = self.to_camera().transform_point(p);
        if pc.z <= T::zero() {
            return None;
        }
        let (u, v) = self.intrinsics.project(pc);
        Some((u, v, pc.z))
    }
}

/// Camera orientation for a viewing direction given by yaw `psi` about the
/// vertical and pitch `alpha` (positive looks up).
pub fn look_rotation<T: Real>(psi: T, alpha: T) -> Mat3<T> {
    let (sp, cp) = psi.sin_cos();
    let (sa, ca) = alpha.sin_cos();
    let forward = Vec3::new(ca * cp, ca * sp, sa);
    let right = Vec3::new(sp, -cp, T::zero());
    let down = forward.cross(right);
    Mat3::from_columns(right, down, forward)
}

/// Surround rig: cameras at fixed yaw offsets whose optical axes all pass
/// through one convergence point at height `height` above `base`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseudoCameraRig<T> {
    pub intrinsics: Intrinsics<T>,
    /// Yaw of each camera's optical axis about the vertical (rad).
    pub yaws: Vec<T>,
    pub primary: usize,
    /// Convergence point at zero height offset, sensor frame (m).
    pub base: Vec3<T>,
    /// Height offset `t` of the convergence point (m).
    pub height: T,
    /// Shared pitch `α` (rad).
    pub pitch: T,
    /// Allowed pitch range `[a, b]` (rad).
    pub pitch_bounds: (T, T),
    /// Distance each camera sits behind the convergence point along its own
    /// axis (m); zero puts every optical center on the convergence point.
    pub standoff: T,
}

impl<T: Real> PseudoCameraRig<T> {
    /// `n` cameras evenly spaced in yaw, camera 0 looking forward.
    pub fn surround(n: usize, intrinsics: Intrinsics<T>, height: T, pitch: T, bounds: (T, T)) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("rig needs at least one camera"));
        }
        let yaws = (0..n)
            .map(|i| T::c(2.0 * std::f64::consts::PI * i as f64 / n as f64))
            .collect();
        let rig = Self {
            intrinsics,
            yaws,
            primary: 0,
            base: Vec3::zero(),
            height,
            pitch,
            pitch_bounds: bounds,
            standoff: T::zero(),
        };
        rig.validate()?;
        Ok(rig)
    }

    /// Single downward-looking camera at `height`.
    pub fn birds_eye(intrinsics: Intrinsics<T>, height: T) -> Self {
        let down = -T::FRAC_PI_2();
        Self {
            intrinsics,
            yaws: vec![T::zero()],
            primary: 0,
            base: Vec3::zero(),
            height,
            pitch: down,
            pitch_bounds: (down, down),
            standoff: T::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.yaws.is_empty() || self.primary >= self.yaws.len() {
            return Err(Error::param("primary camera index out of range"));
        }
        let (a, b) = self.pitch_bounds;
        if !(a <= b) {
            return Err(Error::param("pitch bounds are empty"));
        }
        if self.pitch < a || self.pitch > b {
            return Err(Error::param("pitch outside its bounds"));
        }
        if !(self.standoff >= T::zero()) {
            return Err(Error::param("standoff must be non-negative"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.yaws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.yaws.is_empty()
    }

    pub fn convergence_point(&self) -> Vec3<T> {
        self.base + Vec3::new(T::zero(), T::zero(), self.height)
    }

    pub fn camera(&self, i: usize) -> PinholeCamera<T> {
        self.camera_with(i, self.height, self.pitch)
    }

    /// Camera `i` as if the rig had height `height` and pitch `pitch`.
    pub fn camera_with(&self, i: usize, height: T, pitch: T) -> PinholeCamera<T> {
        let rot = look_rotation(self.yaws[i], pitch);
        let forward = rot.column(2);
        let c = self.base + Vec3::new(T::zero(), T::zero(), height);
        PinholeCamera {
            intrinsics: self.intrinsics,
            pose: Pose::new_unchecked(rot, c - forward * self.standoff),
        }
    }

    pub fn cameras(&self) -> Vec<PinholeCamera<T>> {
        (0..self.len()).map(|i| self.camera(i)).collect()
    }

    pub fn primary_camera(&self) -> PinholeCamera<T> {
        self.camera(self.primary)
    }

    /// Picks the camera whose horizontal optical axis best agrees with the
    /// motion direction; keeps the current primary if no axis points along it.
    pub fn select_primary(&mut self, motion: Vec3<T>) {
        let m = Vec3::new(motion.x, motion.y, T::zero());
        let Some(m) = m.normalized() else { return };
        let mut best: Option<(usize, T)> = None;
        for (i, &yaw) in self.yaws.iter().enumerate() {
            let dot = Vec3::new(yaw.cos(), yaw.sin(), T::zero()).dot(m);
            if dot > T::zero() && best.is_none_or(|(_, d)| dot > d) {
                best = Some((i, dot));
            }
        }
        if let Some((i, _)) = best {
            self.primary = i;
        }
    }
}

impl Default for PseudoCameraRig<f64> {
    fn default() -> Self {
        Self::surround(
            4,
            Intrinsics::default(),
            0.0,
            0.0,
            ((-30f64).to_radians(), 10f64.to_radians()),
        )
        .expect("default rig is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist_point_to_line(p: Vec3<f64>, origin: Vec3<f64>, dir: Vec3<f64>) -> f64 {
        let d = p - origin;
        (d - dir * d.dot(dir)).norm()
    }

    #[test]
    fn axes_meet_at_convergence_point() {
        let mut rig = PseudoCameraRig::default();
        rig.standoff = 3.0;
        rig.height = 1.5;
        rig.pitch = -0.3;
        for cam in rig.cameras() {
            let d = dist_point_to_line(rig.convergence_point(), cam.optical_center(), cam.optical_axis());
            assert!(d < 1e-6);
        }
    }

    #[test]
    fn forward_camera_projects_axis_point_to_principal_point() {
        let rig = PseudoCameraRig::default();
        let cam = rig.camera(0);
        let (u, v, d) = cam.project_point(Vec3::new(5.0, 0.0, 0.0)).unwrap();
        assert!((u - 540.0).abs() < 1e-9 && (v - 360.0).abs() < 1e-9);
        assert!((d - 5.0).abs() < 1e-12);
        // Left of the camera lands left in the image, up lands up.
        let (ul, _, _) = cam.project_point(Vec3::new(5.0, 1.0, 0.0)).unwrap();
        let (_, vu, _) = cam.project_point(Vec3::new(5.0, 0.0, 1.0)).unwrap();
        assert!(ul < 540.0 && vu < 360.0);
        assert!(cam.project_point(Vec3::new(-5.0, 0.0, 0.0)).is_none());
    }

    #[test]
    fn cameras_share_pitch() {
        let mut rig = PseudoCameraRig::default();
        rig.pitch = -0.4;
        for cam in rig.cameras() {
            let a = cam.optical_axis();
            assert!((a.z - (-0.4f64).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn birds_eye_looks_down() {
        let rig = PseudoCameraRig::birds_eye(Intrinsics::centered(100.0f64, 200, 200), 20.0);
        let cam = rig.camera(0);
        assert!((cam.optical_axis().z + 1.0).abs() < 1e-12);
        let (u, v, d) = cam.project_point(Vec3::new(0.0, 0.0, 0.0)).unwrap();
        assert!((u - 100.0).abs() < 1e-9 && (v - 100.0).abs() < 1e-9 && (d - 20.0).abs() < 1e-9);
        // Forward is up in the image.
        let (_, vf, _) = cam.project_point(Vec3::new(5.0, 0.0, 0.0)).unwrap();
        assert!(vf < 100.0);
    }

    #[test]
    fn primary_follows_motion() {
        let mut rig = PseudoCameraRig::default();
        rig.select_primary(Vec3::new(0.0, 2.0, 0.1));
        assert_eq!(rig.primary, 1);
        rig.select_primary(Vec3::new(-1.0, -0.1, 0.0));
        assert_eq!(rig.primary, 2);
        rig.select_primary(Vec3::zero());
        assert_eq!(rig.primary, 2);
    }

    #[test]
    fn validation() {
        let mut rig = PseudoCameraRig::default();
        rig.pitch = 1.0;
        assert!(rig.validate().is_err());
        rig.pitch = 0.0;
        rig.pitch_bounds = (0.2, 0.1);
        assert!(rig.validate().is_err());
    }
}
