//! Domain records and their on-disk formats: KITTI-style `.bin` point
//! frames, 3×4 pose text files and SemanticKITTI-style `.label` files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geometry::{Mat3, Pose, Vec3};
use crate::scalar::Real;
use crate::{Error, Result};

/// Bytes per point in the KITTI binary layout: four little-endian `f32`.
pub const KITTI_POINT_BYTES: usize = 16;

/// Poses within this orthonormality error are repaired instead of rejected.
pub const POSE_REPAIR_TOL: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point<T> {
    pub position: Vec3<T>,
    pub intensity: T,
}

impl<T: Real> Point<T> {
    pub fn new(x: T, y: T, z: T, intensity: T) -> Self {
        Self {
            position: Vec3::new(x, y, z),
            intensity,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointFrame<T> {
    pub frame_index: usize,
    pub sensor_id: u32,
    pub points: Vec<Point<T>>,
}

impl<T: Real> PointFrame<T> {
    pub fn new(frame_index: usize, sensor_id: u32, points: Vec<Point<T>>) -> Result<Self> {
        if let Some(i) = points
            .iter()
            .position(|p| !p.position.is_finite() || !p.intensity.is_finite())
        {
            return Err(Error::CorruptRecord {
                index: i,
                reason: "non-finite coordinate or intensity".into(),
            });
        }
        Ok(Self {
            frame_index,
            sensor_id,
            points,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointFormat {
    KittiBin,
}

/// Decodes the KITTI binary layout. Never panics on arbitrary input.
pub fn parse_kitti_bin<T: Real>(bytes: &[u8], frame_index: usize) -> Result<PointFrame<T>> {
    if bytes.len() % KITTI_POINT_BYTES != 0 {
        return Err(Error::MalformedFile(format!(
            "point file length {} is not a multiple of {KITTI_POINT_BYTES}",
            bytes.len()
        )));
    }
    let mut points = Vec::with_capacity(bytes.len() / KITTI_POINT_BYTES);
    for (i, rec) in bytes.chunks_exact(KITTI_POINT_BYTES).enumerate() {
        let mut v = [0f32; 4];
        for (k, word) in rec.chunks_exact(4).enumerate() {
            v[k] = f32::from_le_bytes([word[0], word[1], word[2], word[3]]);
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::CorruptRecord {
                index: i,
                reason: format!("non-finite value in {v:?}"),
            });
        }
        points.push(Point::new(
            T::c(v[0] as f64),
            T::c(v[1] as f64),
            T::c(v[2] as f64),
            T::c(v[3] as f64),
        ));
    }
    Ok(PointFrame {
        frame_index,
        sensor_id: 0,
        points,
    })
}

pub fn encode_kitti_bin<T: Real>(frame: &PointFrame<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(frame.len() * KITTI_POINT_BYTES);
    for p in &frame.points {
        for v in [p.position.x, p.position.y, p.position.z, p.intensity] {
            out.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
        }
    }
    out
}

pub fn read_point_frame<T: Real>(
    path: &Path,
    format: PointFormat,
    frame_index: usize,
) -> Result<PointFrame<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        PointFormat::KittiBin => parse_kitti_bin(&bytes, frame_index),
    }
}

pub fn write_point_frame<T: Real>(frame: &PointFrame<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_kitti_bin(frame))
}

/// Parses one pose per non-empty line: 12 numbers, row-major `[R | t]`.
pub fn parse_poses<T: Real>(text: &str) -> Result<Vec<Pose<T>>> {
    let mut poses = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let nums = line
            .split_whitespace()
            .map(|tok| tok.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: line_no,
                reason: e.to_string(),
            })?;
        if nums.len() != 12 {
            return Err(Error::Parse {
                line: line_no,
                reason: format!("expected 12 numbers, found {}", nums.len()),
            });
        }
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: line_no,
                reason: "non-finite number".into(),
            });
        }
        let rot = Mat3::from_rows(
            [nums[0], nums[1], nums[2]],
            [nums[4], nums[5], nums[6]],
            [nums[8], nums[9], nums[10]],
        );
        let trans = Vec3::new(nums[3], nums[7], nums[11]);
        let pose = repair_pose(rot, trans).map_err(|e| match e {
            Error::InvalidPose(r) => Error::InvalidPose(format!("line {line_no}: {r}")),
            other => other,
        })?;
        poses.push(pose.cast());
    }
    Ok(poses)
}

/// Re-orthonormalizes a rotation that is within [`POSE_REPAIR_TOL`] of a
/// proper rotation.
fn repair_pose(rot: Mat3<f64>, trans: Vec3<f64>) -> Result<Pose<f64>> {
    let err = rot.orthonormality_error();
    let det = rot.determinant();
    if !(err <= POSE_REPAIR_TOL) || !((det - 1.0).abs() <= 3.0 * POSE_REPAIR_TOL) {
        return Err(Error::InvalidPose(format!(
            "rotation off by {err:.3e} (det {det:.6}), limit {POSE_REPAIR_TOL:e}"
        )));
    }
    let fixed = rot
        .orthonormalized()
        .ok_or_else(|| Error::InvalidPose("degenerate rotation".into()))?;
    Pose::new(fixed, trans)
}

pub fn read_pose_file<T: Real>(path: &Path) -> Result<Vec<Pose<T>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_poses(&text)
}

pub fn format_poses<T: Real>(poses: &[Pose<T>]) -> String {
    let mut out = String::new();
    for p in poses {
        let row: Vec<String> = p
            .to_rows()
            .iter()
            .map(|v| format!("{:e}", v.to_f64_lossy()))
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_pose_file<T: Real>(poses: &[Pose<T>], path: &Path) -> Result<()> {
    write_atomic(path, format_poses(poses).as_bytes())
}

/// Per-point label: 16-bit semantic class and 16-bit instance id.
/// `(0, 0)` is the unlabeled state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Label {
    pub semantic: u16,
    pub instance: u16,
}

impl Label {
    pub const UNLABELED: Label = Label {
        semantic: 0,
        instance: 0,
    };

    pub fn new(semantic: u16, instance: u16) -> Self {
        Self { semantic, instance }
    }

    /// Low 16 bits semantic, high 16 bits instance.
    #[inline]
    pub fn to_word(self) -> u32 {
        (self.semantic as u32) | ((self.instance as u32) << 16)
    }

    #[inline]
    pub fn from_word(w: u32) -> Self {
        Self {
            semantic: (w & 0xFFFF) as u16,
            instance: (w >> 16) as u16,
        }
    }

    pub fn is_unlabeled(self) -> bool {
        self == Self::UNLABELED
    }
}

/// Labels for a whole sequence, one vector per frame.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelMap {
    pub frames: Vec<Vec<Label>>,
}

impl LabelMap {
    pub fn unlabeled<T>(frames: &[PointFrame<T>]) -> Self {
        Self {
            frames: frames
                .iter()
                .map(|f| vec![Label::UNLABELED; f.points.len()])
                .collect(),
        }
    }

    pub fn check_against<T>(&self, frames: &[PointFrame<T>]) -> Result<()> {
        if self.frames.len() != frames.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} label frames for {} point frames",
                self.frames.len(),
                frames.len()
            )));
        }
        for (i, (l, f)) in self.frames.iter().zip(frames).enumerate() {
            if l.len() != f.points.len() {
                return Err(Error::DimensionMismatch(format!(
                    "frame {i}: {} labels for {} points",
                    l.len(),
                    f.points.len()
                )));
            }
        }
        Ok(())
    }
}

pub fn encode_labels(labels: &[Label]) -> Vec<u8> {
    labels
        .iter()
        .flat_map(|l| l.to_word().to_le_bytes())
        .collect()
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<Label>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::MalformedFile(format!(
            "label file length {} is not a multiple of 4",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|w| Label::from_word(u32::from_le_bytes([w[0], w[1], w[2], w[3]])))
        .collect())
}

pub fn write_label_file(labels: &[Label], path: &Path) -> Result<()> {
    write_atomic(path, &encode_labels(labels))
}

pub fn read_label_file(path: &Path) -> Result<Vec<Label>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&bytes)
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// Sequence description: frame files, a pose file and optional timestamps.
/// Relative paths resolve against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceManifest {
    pub frames: Vec<PathBuf>,
    pub poses: PathBuf,
    #[serde(default = "one")]
    pub sensor_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamps: Option<Vec<f64>>,
    /// Optional ground-truth `.label` files, one per frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Vec<PathBuf>>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn one() -> u32 {
    1
}

/// Frames and poses of one sequence, loaded and validated.
#[derive(Clone, Debug)]
pub struct Sequence<T> {
    pub frames: Vec<PointFrame<T>>,
    pub poses: Vec<Pose<T>>,
}

impl SequenceManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: SequenceManifest = serde_json::from_str(&text)
            .map_err(|e| Error::MalformedFile(format!("{}: {e}", path.display())))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if let Some(ts) = &m.timestamps {
            if ts.len() != m.frames.len() {
                return Err(Error::MalformedFile(format!(
                    "{} timestamps for {} frames",
                    ts.len(),
                    m.frames.len()
                )));
            }
        }
        if m.sensor_count == 0 {
            return Err(Error::MalformedFile("sensor_count must be ≥ 1".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(path, text.as_bytes())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Reads every frame and the pose file; pose count must equal frame count.
    pub fn read_sequence<T: Real>(&self) -> Result<Sequence<T>> {
        let poses = read_pose_file(&self.resolve(&self.poses))?;
        if poses.len() != self.frames.len() {
            return Err(Error::MalformedFile(format!(
                "{} poses for {} frames",
                poses.len(),
                self.frames.len()
            )));
        }
        let sensors = self.sensor_count.max(1) as usize;
        let frames = self
            .frames
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut f = read_point_frame(&self.resolve(p), PointFormat::KittiBin, i)?;
                f.sensor_id = (i % sensors) as u32;
                Ok(f)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Sequence { frames, poses })
    }

    pub fn read_ground_truth(&self) -> Result<Option<LabelMap>> {
        let Some(gt) = &self.ground_truth else {
            return Ok(None);
        };
        let frames = gt
            .iter()
            .map(|p| read_label_file(&self.resolve(p)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(LabelMap { frames }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bytes_of(vals: &[f32]) -> Vec<u8> {
        vals.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    #[test]
    fn two_points_decode_in_order() {
        let b = bytes_of(&[1.0, 2.0, 3.0, 0.5, 4.0, 5.0, 6.0, 0.25]);
        assert_eq!(b.len(), 32);
        let f: PointFrame<f64> = parse_kitti_bin(&b, 0).unwrap();
        assert_eq!(f.points.len(), 2);
        assert_eq!(f.points[0], Point::new(1.0, 2.0, 3.0, 0.5));
        assert_eq!(f.points[1], Point::new(4.0, 5.0, 6.0, 0.25));
    }

    #[test]
    fn empty_point_file() {
        let f: PointFrame<f32> = parse_kitti_bin(&[], 3).unwrap();
        assert!(f.is_empty());
        assert_eq!(f.frame_index, 3);
    }

    #[test]
    fn truncated_point_file_is_malformed() {
        let err = parse_kitti_bin::<f64>(&[0u8; 33], 0).unwrap_err();
        assert!(matches!(err, Error::MalformedFile(_)));
    }

    #[test]
    fn nan_point_reports_index() {
        let b = bytes_of(&[0.0, 0.0, 0.0, 0.0, 1.0, f32::NAN, 0.0, 0.0]);
        match parse_kitti_bin::<f64>(&b, 0).unwrap_err() {
            Error::CorruptRecord { index, .. } => assert_eq!(index, 1),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn identity_pose_line() {
        let p: Vec<Pose<f64>> = parse_poses("1 0 0 0 0 1 0 0 0 0 1 0").unwrap();
        assert_eq!(p, vec![Pose::identity()]);
    }

    #[test]
    fn two_identity_lines() {
        let p: Vec<Pose<f64>> =
            parse_poses("1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1 0\n").unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0], p[1]);
    }

    #[test]
    fn short_pose_line_is_parse_error() {
        match parse_poses::<f64>("1 0 0 0 0 1 0 0 0 0 1").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn slightly_skewed_rotation_is_repaired() {
        let p: Vec<Pose<f64>> = parse_poses("1 0.0004 0 0 0 1 0 0 0 0 1 0").unwrap();
        assert!(p[0].rotation.orthonormality_error() < 1e-12);
    }

    #[test]
    fn badly_skewed_rotation_is_rejected() {
        let err = parse_poses::<f64>("1 0.2 0 0 0 1 0 0 0 0 1 0").unwrap_err();
        assert!(matches!(err, Error::InvalidPose(_)));
    }

    #[test]
    fn label_word_packing() {
        assert_eq!(Label::new(10, 3).to_word(), 0x0003_000A);
        assert_eq!(Label::new(10, 3).to_word(), 196618);
        assert_eq!(Label::UNLABELED.to_word(), 0);
    }

    #[test]
    fn label_file_length_checked() {
        assert!(matches!(
            parse_labels(&[0u8; 5]).unwrap_err(),
            Error::MalformedFile(_)
        ));
    }

    #[test]
    fn label_file_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("000000.label");
        let labels = vec![Label::new(40, 0), Label::new(10, 7), Label::UNLABELED];
        write_label_file(&labels, &path).unwrap();
        assert_eq!(read_label_file(&path).unwrap(), labels);
    }

    #[test]
    fn pose_file_round_trip() {
        let poses = vec![
            Pose::from_yaw_translation(0.1f64, Vec3::new(1.0, 2.0, 3.0)),
            Pose::identity(),
        ];
        let back: Vec<Pose<f64>> = parse_poses(&format_poses(&poses)).unwrap();
        for (a, b) in poses.iter().zip(&back) {
            for (x, y) in a.to_rows().iter().zip(b.to_rows().iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn label_round_trip(words in proptest::collection::vec(any::<(u16, u16)>(), 0..1000)) {
            let labels: Vec<Label> = words.iter().map(|&(s, i)| Label::new(s, i)).collect();
            prop_assert_eq!(parse_labels(&encode_labels(&labels)).unwrap(), labels);
        }

        #[test]
        fn point_parser_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = parse_kitti_bin::<f64>(&bytes, 0);
        }

        #[test]
        fn label_parser_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = parse_labels(&bytes);
        }

        #[test]
        fn pose_parser_never_panics(text in ".{0,200}") {
            let _ = parse_poses::<f64>(&text);
        }
    }
}
