//! Small fixed-size linear algebra: 3-vectors, 3×3 rotations, rigid poses and
//! axis-aligned boxes.

use std::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::scalar::Real;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    #[inline]
    pub fn splat(v: T) -> Self {
        Self::new(v, v, v)
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_squared(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> T {
        self.norm_squared().sqrt()
    }

    /// Unit vector, or `None` for a (near) zero vector.
    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n > T::epsilon() {
            Some(self / n)
        } else {
            None
        }
    }

    #[inline]
    pub fn distance(self, o: Self) -> T {
        (self - o).norm()
    }

    #[inline]
    pub fn min_components(self, o: Self) -> Self {
        Self::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    #[inline]
    pub fn max_components(self, o: Self) -> Self {
        Self::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn cast<U: Real>(self) -> Vec3<U> {
        Vec3::new(
            U::c(self.x.to_f64_lossy()),
            U::c(self.y.to_f64_lossy()),
            U::c(self.z.to_f64_lossy()),
        )
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Real> Div<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn div(self, s: T) -> Self {
        Self::new(self.x / s, self.y / s, self.z / s)
    }
}

impl<T> Index<usize> for Vec3<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

/// Row-major 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat3<T> {
    pub m: [[T; 3]; 3],
}

impl<T: Real> Mat3<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self {
            m: [[o, z, z], [z, o, z], [z, z, o]],
        }
    }

    pub fn from_rows(r0: [T; 3], r1: [T; 3], r2: [T; 3]) -> Self {
        Self { m: [r0, r1, r2] }
    }

    pub fn from_columns(c0: Vec3<T>, c1: Vec3<T>, c2: Vec3<T>) -> Self {
        Self::from_rows([c0.x, c1.x, c2.x], [c0.y, c1.y, c2.y], [c0.z, c1.z, c2.z])
    }

    pub fn column(&self, j: usize) -> Vec3<T> {
        Vec3::new(self.m[0][j], self.m[1][j], self.m[2][j])
    }

    pub fn row(&self, i: usize) -> Vec3<T> {
        Vec3::from_array(self.m[i])
    }

    /// Rotation about +z by `angle` radians.
    pub fn rot_z(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Self::from_rows([c, -s, z], [s, c, z], [z, z, o])
    }

    /// Rotation about +y by `angle` radians.
    pub fn rot_y(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Self::from_rows([c, z, s], [z, o, z], [-s, z, c])
    }

    /// Rotation about +x by `angle` radians.
    pub fn rot_x(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Self::from_rows([o, z, z], [z, c, -s], [z, s, c])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.m;
        Self::from_rows(
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        )
    }

    pub fn determinant(&self) -> T {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        Vec3::new(self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v))
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut out = [[T::zero(); 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = self.row(i).dot(o.column(j));
            }
        }
        Self { m: out }
    }

    /// Largest absolute entry of `RᵀR − I`.
    pub fn orthonormality_error(&self) -> T {
        let rtr = self.transpose().mul_mat(self);
        let mut err = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { T::one() } else { T::zero() };
                err = err.max((rtr.m[i][j] - target).abs());
            }
        }
        err
    }

    /// Gram–Schmidt on the columns, keeping the first column's direction.
    pub fn orthonormalized(&self) -> Option<Self> {
        let c0 = self.column(0).normalized()?;
        let c1 = self.column(1);
        let c1 = (c1 - c0 * c0.dot(c1)).normalized()?;
        let c2 = c0.cross(c1);
        Some(Self::from_columns(c0, c1, c2))
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> T {
        let tr = self.m[0][0] + self.m[1][1] + self.m[2][2];
        let c = ((tr - T::one()) / T::c(2.0)).max(-T::one()).min(T::one());
        c.acos()
    }

    pub fn cast<U: Real>(&self) -> Mat3<U> {
        let mut out = [[U::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = U::c(self.m[i][j].to_f64_lossy());
            }
        }
        Mat3 { m: out }
    }
}

/// Rigid transform `p ↦ R p + t`, i.e. a 4×4 homogeneous matrix with bottom
/// row `(0, 0, 0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose<T> {
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> Pose<T> {
    pub const ORTHONORMAL_TOL: f64 = 1e-6;

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zero(),
        }
    }

    /// Builds a pose, rejecting rotations that are not proper within 1e-6.
    pub fn new(rotation: Mat3<T>, translation: Vec3<T>) -> Result<Self> {
        let tol = T::c(Self::ORTHONORMAL_TOL);
        let err = rotation.orthonormality_error();
        let det = rotation.determinant();
        if !(err <= tol) || !((det - T::one()).abs() <= tol) || !translation.is_finite() {
            return Err(Error::InvalidPose(format!(
                "rotation not orthonormal (error {err}, det {det})"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub(crate) fn new_unchecked(rotation: Mat3<T>, translation: Vec3<T>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vec3<T>) -> Self {
        Self::new_unchecked(Mat3::identity(), t)
    }

    /// Yaw about +z followed by translation.
    pub fn from_yaw_translation(yaw: T, t: Vec3<T>) -> Self {
        Self::new_unchecked(Mat3::rot_z(yaw), t)
    }

    #[inline]
    pub fn transform_point(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(p) + self.translation
    }

    #[inline]
    pub fn transform_vector(&self, v: Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(v)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new_unchecked(rt, -rt.mul_vec(self.translation))
    }

    /// `self ∘ other`: first `other`, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        Self::new_unchecked(
            self.rotation.mul_mat(&other.rotation),
            self.transform_point(other.translation),
        )
    }

    /// Transform taking coordinates of the frame posed at `source` into the
    /// frame posed at `self` (both poses map frame → world).
    pub fn relative_from(&self, source: &Self) -> Self {
        self.inverse().compose(source)
    }

    /// Row-major 3×4 `[R | t]`.
    pub fn to_rows(&self) -> [T; 12] {
        let r = &self.rotation.m;
        let t = self.translation;
        [
            r[0][0], r[0][1], r[0][2], t.x, r[1][0], r[1][1], r[1][2], t.y, r[2][0], r[2][1],
            r[2][2], t.z,
        ]
    }

    pub fn to_homogeneous(&self) -> [[T; 4]; 4] {
        let r = self.to_rows();
        let (o, z) = (T::one(), T::zero());
        [
            [r[0], r[1], r[2], r[3]],
            [r[4], r[5], r[6], r[7]],
            [r[8], r[9], r[10], r[11]],
            [z, z, z, o],
        ]
    }

    pub fn cast<U: Real>(&self) -> Pose<U> {
        Pose::new_unchecked(self.rotation.cast(), self.translation.cast())
    }
}

/// Axis-aligned bounding box with inclusive bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb<T> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

impl<T: Real> Aabb<T> {
    pub fn new(min: Vec3<T>, max: Vec3<T>) -> Self {
        Self { min, max }
    }

    pub fn from_points<I: IntoIterator<Item = Vec3<T>>>(points: I) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        Some(it.fold(Self::new(first, first), |b, p| b.expanded(p)))
    }

    pub fn expanded(self, p: Vec3<T>) -> Self {
        Self::new(self.min.min_components(p), self.max.max_components(p))
    }

    pub fn union(self, o: Self) -> Self {
        Self::new(self.min.min_components(o.min), self.max.max_components(o.max))
    }

    pub fn extent(&self) -> Vec3<T> {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3<T> {
        (self.min + self.max) * T::c(0.5)
    }

    pub fn volume(&self) -> T {
        let e = self.extent();
        e.x.max(T::zero()) * e.y.max(T::zero()) * e.z.max(T::zero())
    }

    pub fn intersection(&self, o: &Self) -> Option<Self> {
        let min = self.min.max_components(o.min);
        let max = self.max.min_components(o.max);
        if min.x <= max.x && min.y <= max.y && min.z <= max.z {
            Some(Self::new(min, max))
        } else {
            None
        }
    }

    pub fn intersection_volume(&self, o: &Self) -> T {
        self.intersection(o).map_or(T::zero(), |b| b.volume())
    }

    pub fn iou(&self, o: &Self) -> T {
        let inter = self.intersection_volume(o);
        let union = self.volume() + o.volume() - inter;
        if union > T::zero() {
            inter / union
        } else if self == o {
            T::one()
        } else {
            T::zero()
        }
    }

    /// Intersection volume over the smaller box's volume.
    pub fn containment(&self, o: &Self) -> T {
        let inter = self.intersection_volume(o);
        let smaller = self.volume().min(o.volume());
        if smaller > T::zero() {
            inter / smaller
        } else if self.intersection(o).is_some() {
            T::one()
        } else {
            T::zero()
        }
    }

    pub fn contains(&self, p: Vec3<T>) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    /// Slab test for the ray `origin + s·dir`, returning the entry parameter
    /// `s ≥ 0` when the ray hits the box.
    pub fn ray_entry(&self, origin: Vec3<T>, dir: Vec3<T>) -> Option<T> {
        let mut t0 = T::zero();
        let mut t1 = T::infinity();
        for a in 0..3 {
            let (o, d, lo, hi) = (origin[a], dir[a], self.min[a], self.max[a]);
            if d.abs() < T::epsilon() {
                if o < lo || o > hi {
                    return None;
                }
            } else {
                let inv = T::one() / d;
                let (mut ta, mut tb) = ((lo - o) * inv, (hi - o) * inv);
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                t0 = t0.max(ta);
                t1 = t1.min(tb);
                if t0 > t1 {
                    return None;
                }
            }
        }
        Some(t0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_inverse_round_trip() {
        let p = Pose::from_yaw_translation(0.3f64, Vec3::new(1.0, -2.0, 0.5));
        let q = Vec3::new(0.2, 0.4, -1.0);
        let back = p.inverse().transform_point(p.transform_point(q));
        assert!((back - q).norm() < 1e-12);
    }

    #[test]
    fn relative_pose_maps_between_frames() {
        let a = Pose::from_translation(Vec3::new(0.0f64, 0.0, 0.0));
        let b = Pose::from_translation(Vec3::new(1.0, 0.0, 0.0));
        // A point at the origin of frame b sits at x = 1 in frame a.
        let rel = a.relative_from(&b);
        let p = rel.transform_point(Vec3::zero());
        assert_eq!(p, Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn rotation_angle_of_yaw() {
        let r = Mat3::rot_z(0.25f64);
        assert!((r.rotation_angle() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn reject_improper_rotation() {
        let r = Mat3::from_rows([1.0f64, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]);
        assert!(Pose::new(r, Vec3::zero()).is_err());
    }

    #[test]
    fn box_iou_and_containment() {
        let a = Aabb::new(Vec3::zero(), Vec3::splat(1.0f64));
        let b = Aabb::new(Vec3::zero(), Vec3::splat(2.0f64));
        assert!((a.iou(&b) - 1.0 / 8.0).abs() < 1e-12);
        assert!((a.containment(&b) - 1.0).abs() < 1e-12);
        let c = Aabb::new(Vec3::splat(5.0), Vec3::splat(6.0));
        assert_eq!(a.iou(&c), 0.0);
    }

    #[test]
    fn ray_hits_box() {
        let b = Aabb::new(Vec3::new(2.0f64, -1.0, -1.0), Vec3::new(3.0, 1.0, 1.0));
        let s = b.ray_entry(Vec3::zero(), Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert!((s - 2.0).abs() < 1e-12);
        assert!(b.ray_entry(Vec3::zero(), Vec3::new(-1.0, 0.0, 0.0)).is_none());
    }
}
