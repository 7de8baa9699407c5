//! A generated driving scene with exact labels: flat ground and rigid boxes,
//! some of them moving, seen from a sensor that drives along +x.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Label, LabelMap, Point, PointFrame};
use crate::geometry::{Pose, Vec3};
use crate::scalar::Real;
use crate::Result;

pub const GROUND_CLASS: u16 = 40;
pub const BOX_CLASS: u16 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    /// Footprint center at frame 0, world frame (m).
    pub center: [f64; 2],
    /// Length, width, height (m).
    pub size: [f64; 3],
    /// Displacement per frame along x (m).
    pub speed: f64,
    pub intensity: f64,
}

impl BoxSpec {
    pub fn center_at(&self, frame: usize) -> [f64; 2] {
        [self.center[0] + self.speed * frame as f64, self.center[1]]
    }

    fn contains_xy(&self, frame: usize, x: f64, y: f64, margin: f64) -> bool {
        let [cx, cy] = self.center_at(frame);
        (x - cx).abs() <= self.size[0] / 2.0 + margin && (y - cy).abs() <= self.size[1] / 2.0 + margin
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneParams {
    pub frames: usize,
    /// Sensor displacement per frame along x (m).
    pub step: f64,
    pub sensor_height: f64,
    pub range: f64,
    pub ground_spacing: f64,
    pub surface_spacing: f64,
    /// Gap between the ground and the lowest box surface point (m).
    pub clearance: f64,
    pub ground_intensity: (f64, f64),
    pub boxes: Vec<BoxSpec>,
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        let b = |center: [f64; 2], size: [f64; 3], speed: f64, intensity: f64| BoxSpec {
            center,
            size,
            speed,
            intensity,
        };
        Self {
            frames: 40,
            step: 0.5,
            sensor_height: 1.73,
            range: 20.0,
            ground_spacing: 0.25,
            surface_spacing: 0.1,
            clearance: 0.3,
            ground_intensity: (0.05, 0.15),
            boxes: vec![
                b([8.0, 4.5], [4.0, 1.8, 1.5], 0.0, 0.35),
                b([14.0, -4.5], [2.0, 2.0, 2.0], 0.0, 0.5),
                b([2.0, -8.0], [4.5, 2.0, 1.6], 0.1, 0.65),
                b([20.0, 5.0], [1.2, 1.2, 2.5], 0.0, 0.8),
                b([12.0, 9.0], [4.0, 1.8, 1.5], 0.1, 0.95),
            ],
            seed: 11,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScene<T> {
    pub params: SceneParams,
    pub frames: Vec<PointFrame<T>>,
    pub poses: Vec<Pose<T>>,
    /// Ground is `GROUND_CLASS`; box `k` is `BOX_CLASS` with instance `k + 1`.
    pub labels: LabelMap,
}

impl<T: Real> SyntheticScene<T> {
    /// Frames in which box `k` has at least `min_points` points.
    pub fn visible_frames(&self, k: usize, min_points: usize) -> Vec<usize> {
        let want = Label::new(BOX_CLASS, k as u16 + 1);
        self.labels
            .frames
            .iter()
            .enumerate()
            .filter(|(_, f)| f.iter().filter(|l| **l == want).count() >= min_points)
            .map(|(i, _)| i)
            .collect()
    }
}

fn jitter(rng: &mut ChaCha8Rng, spacing: f64) -> f64 {
    rng.random_range(-0.25..0.25) * spacing
}

pub fn generate<T: Real>(params: &SceneParams) -> Result<SyntheticScene<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut frames = Vec::with_capacity(params.frames);
    let mut poses = Vec::with_capacity(params.frames);
    let mut labels = Vec::with_capacity(params.frames);
    let r2 = params.range * params.range;
    for f in 0..params.frames {
        let origin = [params.step * f as f64, 0.0, params.sensor_height];
        let pose = Pose::from_translation(Vec3::new(T::c(origin[0]), T::c(origin[1]), T::c(origin[2])));
        let mut points = Vec::new();
        let mut frame_labels = Vec::new();
        let mut push = |w: [f64; 3], intensity: f64, label: Label| {
            let (dx, dy) = (w[0] - origin[0], w[1] - origin[1]);
            if dx * dx + dy * dy > r2 || dx * dx + dy * dy < 4.0 {
                return;
            }
            points.push(Point::new(T::c(dx), T::c(dy), T::c(w[2] - origin[2]), T::c(intensity)));
            frame_labels.push(label);
        };

        let s = params.ground_spacing;
        let n = (params.range / s).ceil() as i64;
        let (gx0, gy0) = ((origin[0] / s).floor() as i64, 0i64);
        for i in -n..=n {
            for j in -n..=n {
                let x = (gx0 + i) as f64 * s + jitter(&mut rng, s);
                let y = (gy0 + j) as f64 * s + jitter(&mut rng, s);
                let v = rng.random_range(params.ground_intensity.0..params.ground_intensity.1);
                if params.boxes.iter().any(|b| b.contains_xy(f, x, y, 0.0)) {
                    continue;
                }
                push([x, y, 0.0], v, Label::new(GROUND_CLASS, 0));
            }
        }

        let s = params.surface_spacing;
        for (k, b) in params.boxes.iter().enumerate() {
            let [cx, cy] = b.center_at(f);
            let [l, w, h] = b.size;
            let z0 = params.clearance.min(h / 2.0);
            let label = Label::new(BOX_CLASS, k as u16 + 1);
            let (nl, nw, nh) = ((l / s).round() as usize, (w / s).round() as usize, ((h - z0) / s).round() as usize);
            let (sl, sw, sh) = (l / nl as f64, w / nw as f64, (h - z0) / nh as f64);
            let mut emit = |p: [f64; 3]| push(p, b.intensity, label);
            let x_at = |a: usize, rng: &mut ChaCha8Rng| (cx - l / 2.0 + a as f64 * sl + jitter(rng, sl)).clamp(cx - l / 2.0, cx + l / 2.0);
            let y_at = |a: usize, rng: &mut ChaCha8Rng| (cy - w / 2.0 + a as f64 * sw + jitter(rng, sw)).clamp(cy - w / 2.0, cy + w / 2.0);
            let z_at = |c: usize, rng: &mut ChaCha8Rng| (z0 + c as f64 * sh + jitter(rng, sh)).clamp(z0, h);
            for a in 0..=nl {
                for c in 0..=nh {
                    for side in [-1.0, 1.0] {
                        let (x, z) = (x_at(a, &mut rng), z_at(c, &mut rng));
                        emit([x, cy + side * w / 2.0, z]);
                    }
                }
            }
            for a in 1..nw {
                for c in 0..=nh {
                    for side in [-1.0, 1.0] {
                        let (y, z) = (y_at(a, &mut rng), z_at(c, &mut rng));
                        emit([cx + side * l / 2.0, y, z]);
                    }
                }
            }
            for a in 1..nl {
                for c in 1..nw {
                    let (x, y) = (x_at(a, &mut rng), y_at(c, &mut rng));
                    emit([x, y, h]);
                }
            }
        }
        frames.push(PointFrame::new(f, 0, points)?);
        poses.push(pose);
        labels.push(frame_labels);
    }
    Ok(SyntheticScene {
        params: params.clone(),
        frames,
        poses,
        labels: LabelMap { frames: labels },
    })
}
