//! Editable label state for one presegmented sequence. Every edit is a
//! journal entry, and replaying the journal over the presegmentation
//! reproduces the state.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{Label, LabelMap, Sequence};
use crate::geometry::{Pose, Vec3};
use crate::pipeline::{TrackEntry, TrackKind, TrackManifest, TRACK_FORMAT};
use crate::scalar::Real;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mutation {
    /// Every point of the segment, in every frame, takes the class.
    /// Class 0 clears the assignment.
    Assign { segment_id: u32, semantic_id: u16 },
    /// Union under the smallest id.
    Merge { ids: Vec<u32> },
    /// The selected points of `frame` move to a new segment, and so do the
    /// segment's points in later frames whose nearest neighbor in the
    /// previous occupied frame moved.
    Split {
        segment_id: u32,
        frame: usize,
        point_indices: Vec<u32>,
    },
    /// Instance ids 1..n within each class, by first frame, then size
    /// descending, then segment id.
    AutoInstance,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub revision: u64,
    #[serde(flatten)]
    pub mutation: Mutation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Assigned { segment_id: u32 },
    Merged { into: u32 },
    Split { new_id: u32, moved: usize },
    Renumbered { instances: BTreeMap<u32, u16> },
}

#[derive(Clone, Debug)]
pub struct AnnotationState<T> {
    world: Arc<Vec<Vec<Vec3<T>>>>,
    segments: Vec<Vec<u32>>,
    ground: BTreeSet<u32>,
    semantic: BTreeMap<u32, u16>,
    instance: BTreeMap<u32, u16>,
    sizes: BTreeMap<u32, usize>,
    journal: Vec<JournalEntry>,
}

fn world_points<T: Real>(seq: &Sequence<T>) -> Vec<Vec<Vec3<T>>> {
    seq.frames
        .iter()
        .zip(&seq.poses)
        .map(|(f, pose)| f.points.iter().map(|p| pose.transform_point(p.position)).collect())
        .collect()
}

impl<T: Real> AnnotationState<T> {
    /// State over a presegmentation: each nonzero instance id of `base` is a
    /// segment. Semantic ids in `base` are ignored.
    pub fn new(seq: &Sequence<T>, base: &LabelMap, ground: &BTreeSet<u32>) -> Result<Self> {
        base.check_against(&seq.frames)?;
        let segments: Vec<Vec<u32>> = base
            .frames
            .iter()
            .map(|f| f.iter().map(|l| l.instance as u32).collect())
            .collect();
        let mut s = Self {
            world: Arc::new(world_points(seq)),
            segments,
            ground: ground.clone(),
            semantic: BTreeMap::new(),
            instance: BTreeMap::new(),
            sizes: BTreeMap::new(),
            journal: Vec::new(),
        };
        s.recount();
        s.ground.retain(|g| s.sizes.contains_key(g));
        Ok(s)
    }

    pub fn replay(seq: &Sequence<T>, base: &LabelMap, ground: &BTreeSet<u32>, journal: &[JournalEntry]) -> Result<Self> {
        let mut s = Self::new(seq, base, ground)?;
        for e in journal {
            s.apply(e.mutation.clone(), Some(e.revision))?;
        }
        Ok(s)
    }

    fn recount(&mut self) {
        self.sizes.clear();
        for &id in self.segments.iter().flatten() {
            if id != 0 {
                *self.sizes.entry(id).or_default() += 1;
            }
        }
    }

    /// Number of applied mutations.
    pub fn revision(&self) -> u64 {
        self.journal.len() as u64
    }

    pub fn journal(&self) -> &[JournalEntry] {
        &self.journal
    }

    pub fn frame_count(&self) -> usize {
        self.segments.len()
    }

    pub fn segment_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.sizes.keys().copied()
    }

    pub fn semantic_of(&self, id: u32) -> Option<u16> {
        self.semantic.get(&id).copied()
    }

    pub fn segments_of(&self, frame: usize) -> Result<&[u32]> {
        self.segments
            .get(frame)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::NotFound(format!("frame {frame}")))
    }

    fn label_of(&self, id: u32) -> Label {
        if id == 0 {
            return Label::UNLABELED;
        }
        let semantic = self.semantic.get(&id).copied().unwrap_or(0);
        let instance = self.instance.get(&id).copied().unwrap_or(id as u16);
        Label::new(semantic, instance)
    }

    pub fn frame_labels(&self, frame: usize) -> Result<Vec<Label>> {
        Ok(self.segments_of(frame)?.iter().map(|&id| self.label_of(id)).collect())
    }

    pub fn labels(&self) -> LabelMap {
        LabelMap {
            frames: self
                .segments
                .iter()
                .map(|f| f.iter().map(|&id| self.label_of(id)).collect())
                .collect(),
        }
    }

    pub fn manifest(&self) -> TrackManifest {
        let mut per: BTreeMap<u32, BTreeMap<usize, usize>> = BTreeMap::new();
        for (f, frame) in self.segments.iter().enumerate() {
            for &id in frame {
                if id != 0 {
                    *per.entry(id).or_default().entry(f).or_default() += 1;
                }
            }
        }
        let tracks = per
            .into_iter()
            .map(|(id, frames)| TrackEntry {
                id,
                kind: if self.ground.contains(&id) { TrackKind::Ground } else { TrackKind::Object },
                frames: frames.keys().copied().collect(),
                points: frames.values().copied().collect(),
                semantic: self.semantic.get(&id).copied(),
                instance: self.instance.get(&id).copied(),
            })
            .collect();
        TrackManifest {
            format: TRACK_FORMAT.into(),
            version: 1,
            tracks,
        }
    }

    fn require(&self, id: u32) -> Result<()> {
        if self.sizes.contains_key(&id) {
            Ok(())
        } else {
            Err(Error::NotFound(format!("segment {id}")))
        }
    }

    /// Applies `m` if `expected` (when given) equals the current revision.
    /// Nothing changes on error.
    pub fn apply(&mut self, m: Mutation, expected: Option<u64>) -> Result<(u64, Outcome)> {
        let actual = self.revision();
        if let Some(expected) = expected {
            if expected != actual {
                return Err(Error::Conflict { expected, actual });
            }
        }
        let outcome = match &m {
            Mutation::Assign { segment_id, semantic_id } => self.assign(*segment_id, *semantic_id)?,
            Mutation::Merge { ids } => self.merge(ids)?,
            Mutation::Split {
                segment_id,
                frame,
                point_indices,
            } => self.split(*segment_id, *frame, point_indices)?,
            Mutation::AutoInstance => self.auto_instance(),
        };
        self.journal.push(JournalEntry {
            revision: actual,
            mutation: m,
        });
        Ok((self.revision(), outcome))
    }

    fn assign(&mut self, id: u32, class: u16) -> Result<Outcome> {
        self.require(id)?;
        if class == 0 {
            self.semantic.remove(&id);
        } else {
            self.semantic.insert(id, class);
        }
        self.instance.clear();
        Ok(Outcome::Assigned { segment_id: id })
    }

    fn merge(&mut self, ids: &[u32]) -> Result<Outcome> {
        let set: BTreeSet<u32> = ids.iter().copied().collect();
        if set.len() < 2 {
            return Err(Error::param("merge needs at least two distinct ids"));
        }
        for &id in &set {
            self.require(id)?;
        }
        let into = *set.first().expect("non-empty");
        let class = set.iter().find_map(|id| self.semantic.get(id).copied());
        for frame in &mut self.segments {
            for id in frame.iter_mut() {
                if set.contains(id) {
                    *id = into;
                }
            }
        }
        for id in &set {
            self.semantic.remove(id);
            if *id != into {
                self.ground.remove(id);
            }
        }
        if let Some(c) = class {
            self.semantic.insert(into, c);
        }
        self.instance.clear();
        self.recount();
        Ok(Outcome::Merged { into })
    }

    fn split(&mut self, id: u32, frame: usize, picked: &[u32]) -> Result<Outcome> {
        self.require(id)?;
        let n = self.segments.get(frame).ok_or_else(|| Error::NotFound(format!("frame {frame}")))?.len();
        let picked: BTreeSet<usize> = picked.iter().map(|&i| i as usize).collect();
        if picked.is_empty() {
            return Err(Error::param("split needs at least one point"));
        }
        for &i in &picked {
            if i >= n {
                return Err(Error::Range(format!("point {i} outside frame {frame} with {n} points")));
            }
            if self.segments[frame][i] != id {
                return Err(Error::param(format!("point {i} of frame {frame} is not in segment {id}")));
            }
        }
        let new_id = self.sizes.keys().next_back().copied().unwrap_or(0) + 1;
        if new_id > u16::MAX as u32 {
            return Err(Error::Range(format!("segment id {new_id} exceeds 16 bits")));
        }
        let mut moved = 0;
        for &i in &picked {
            self.segments[frame][i] = new_id;
            moved += 1;
        }
        // Reference points of the last occupied frame, tagged by side.
        let mut reference: Vec<(Vec3<T>, bool)> = self.members(frame, id, new_id);
        for f in frame + 1..self.segments.len() {
            let here: Vec<usize> = (0..self.segments[f].len()).filter(|&i| self.segments[f][i] == id).collect();
            if here.is_empty() {
                continue;
            }
            for &i in &here {
                let p = self.world[f][i];
                let mut best: Option<(T, bool)> = None;
                for &(q, side) in &reference {
                    let d = (p - q).norm_squared();
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, side));
                    }
                }
                if best.is_some_and(|(_, side)| side) {
                    self.segments[f][i] = new_id;
                    moved += 1;
                }
            }
            reference = self.members(f, id, new_id);
        }
        if let Some(&c) = self.semantic.get(&id) {
            self.semantic.insert(new_id, c);
        }
        if self.ground.contains(&id) {
            self.ground.insert(new_id);
        }
        self.instance.clear();
        self.recount();
        Ok(Outcome::Split { new_id, moved })
    }

    fn members(&self, f: usize, old: u32, new: u32) -> Vec<(Vec3<T>, bool)> {
        self.segments[f]
            .iter()
            .zip(&self.world[f])
            .filter(|(&s, _)| s == old || s == new)
            .map(|(&s, &p)| (p, s == new))
            .collect()
    }

    fn auto_instance(&mut self) -> Outcome {
        let mut first: BTreeMap<u32, usize> = BTreeMap::new();
        for (f, frame) in self.segments.iter().enumerate() {
            for &id in frame {
                if id != 0 {
                    first.entry(id).or_insert(f);
                }
            }
        }
        let mut by_class: BTreeMap<u16, Vec<u32>> = BTreeMap::new();
        for (&id, &c) in &self.semantic {
            by_class.entry(c).or_default().push(id);
        }
        self.instance.clear();
        for ids in by_class.values_mut() {
            ids.sort_by(|a, b| {
                first[a]
                    .cmp(&first[b])
                    .then(self.sizes[b].cmp(&self.sizes[a]))
                    .then(a.cmp(b))
            });
            for (k, &id) in ids.iter().enumerate() {
                self.instance.insert(id, (k + 1).min(u16::MAX as usize) as u16);
            }
        }
        Outcome::Renumbered {
            instances: self.instance.clone(),
        }
    }
}

/// Reads a JSON-lines journal; a missing file is an empty journal.
pub fn read_journal(path: &Path) -> Result<Vec<JournalEntry>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn append_journal(path: &Path, entry: &JournalEntry) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut line = serde_json::to_string(entry).expect("journal entry serializes");
    line.push('\n');
    f.write_all(line.as_bytes()).and_then(|_| f.sync_data()).map_err(|e| Error::io(path, e))
}

pub const FRAME_MAGIC: &[u8; 4] = b"PSF1";

/// One frame as served to annotation clients.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePayload {
    pub frame: u32,
    /// Sensor-to-world pose, row-major 3×4.
    pub pose: [f64; 12],
    /// x, y, z, intensity in the sensor frame.
    pub points: Vec<[f32; 4]>,
    pub labels: Vec<Label>,
    pub segments: Vec<u32>,
}

impl FramePayload {
    pub fn new<T: Real>(seq: &Sequence<T>, state: &AnnotationState<T>, frame: usize) -> Result<Self> {
        let pf = seq.frames.get(frame).ok_or_else(|| Error::NotFound(format!("frame {frame}")))?;
        let pose: &Pose<T> = &seq.poses[frame];
        let flat = pose.to_rows().map(|v| v.to_f64_lossy());
        Ok(Self {
            frame: frame as u32,
            pose: flat,
            points: pf
                .points
                .iter()
                .map(|p| {
                    let v = p.position;
                    [v.x, v.y, v.z, p.intensity].map(|x| x.to_f64_lossy() as f32)
                })
                .collect(),
            labels: state.frame_labels(frame)?,
            segments: state.segments_of(frame)?.to_vec(),
        })
    }

    /// Little-endian layout: magic `PSF1`; u32 frame; u32 point count N;
    /// 12 f64 pose; N × 4 f32 points; N u32 label words; N u32 segment ids.
    pub fn encode(&self) -> Vec<u8> {
        let n = self.points.len();
        let mut out = Vec::with_capacity(12 + 96 + n * 24);
        out.extend_from_slice(FRAME_MAGIC);
        out.extend_from_slice(&self.frame.to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        for v in self.pose {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for p in &self.points {
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for l in &self.labels {
            out.extend_from_slice(&l.to_word().to_le_bytes());
        }
        for s in &self.segments {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::MalformedFile(format!("frame payload: {m}"));
        if bytes.len() < 108 || &bytes[..4] != FRAME_MAGIC {
            return Err(bad("missing header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let frame = u32_at(4);
        let n = u32_at(8) as usize;
        if bytes.len() != 108 + n * 24 {
            return Err(bad("length does not match the point count"));
        }
        let mut pose = [0.0; 12];
        for (k, v) in pose.iter_mut().enumerate() {
            *v = f64::from_le_bytes(bytes[12 + 8 * k..20 + 8 * k].try_into().expect("8 bytes"));
        }
        let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let points = (0..n)
            .map(|i| {
                let o = 108 + 16 * i;
                [f32_at(o), f32_at(o + 4), f32_at(o + 8), f32_at(o + 12)]
            })
            .collect();
        let lo = 108 + 16 * n;
        let labels = (0..n).map(|i| Label::from_word(u32_at(lo + 4 * i))).collect();
        let so = lo + 4 * n;
        let segments = (0..n).map(|i| u32_at(so + 4 * i)).collect();
        Ok(Self {
            frame,
            pose,
            points,
            labels,
            segments,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Point, PointFrame};
    use proptest::prelude::*;

    /// Frames of points on the x axis at the given positions, identity poses.
    fn seq(xs: &[&[f64]]) -> Sequence<f64> {
        Sequence {
            frames: xs
                .iter()
                .enumerate()
                .map(|(f, row)| PointFrame::new(f, 0, row.iter().map(|&x| Point::new(x, 0.0, 0.0, 0.5)).collect()).unwrap())
                .collect(),
            poses: vec![Pose::identity(); xs.len()],
        }
    }

    fn base(ids: &[&[u16]]) -> LabelMap {
        LabelMap {
            frames: ids.iter().map(|f| f.iter().map(|&i| Label::new(0, i)).collect()).collect(),
        }
    }

    fn three_tracks() -> (Sequence<f64>, LabelMap) {
        // Track 7 first appears at frame 2, track 3 at frame 0, track 9 at frame 3.
        let s = seq(&[&[0.0, 1.0], &[0.0, 1.0], &[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0, 3.0]]);
        let b = base(&[&[3, 0], &[3, 0], &[3, 7, 0], &[3, 7, 0, 9]]);
        (s, b)
    }

    #[test]
    fn assign_covers_the_whole_sequence() {
        let (s, b) = three_tracks();
        let mut st = AnnotationState::new(&s, &b, &BTreeSet::new()).unwrap();
        st.apply(Mutation::Assign { segment_id: 3, semantic_id: 10 }, None).unwrap();
        for f in 0..4 {
            assert_eq!(st.frame_labels(f).unwrap()[0], Label::new(10, 3));
        }
        assert_eq!(st.frame_labels(2).unwrap()[1], Label::new(0, 7));
    }

    #[test]
    fn merge_then_assign_reaches_absorbed_points() {
        let (s, b) = three_tracks();
        let mut st = AnnotationState::new(&s, &b, &BTreeSet::new()).unwrap();
        let (_, o) = st.apply(Mutation::Merge { ids: vec![9, 7] }, None).unwrap();
        assert_eq!(o, Outcome::Merged { into: 7 });
        st.apply(Mutation::Assign { segment_id: 7, semantic_id: 20 }, None).unwrap();
        assert_eq!(st.frame_labels(3).unwrap()[3], Label::new(20, 7));
        assert!(matches!(
            st.apply(Mutation::Assign { segment_id: 9, semantic_id: 1 }, None),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn auto_instance_orders_by_first_frame() {
        let row: &[f64] = &[0.0; 3];
        let s = seq(&[row; 10]);
        let mut ids = vec![vec![0u16; 3]; 10];
        for (slot, (track, start)) in [(40u16, 5usize), (41, 2), (42, 9)].into_iter().enumerate() {
            for f in ids.iter_mut().skip(start) {
                f[slot] = track;
            }
        }
        let b = LabelMap {
            frames: ids.iter().map(|f| f.iter().map(|&i| Label::new(0, i)).collect()).collect(),
        };
        let mut st = AnnotationState::new(&s, &b, &BTreeSet::new()).unwrap();
        for t in [40, 41, 42] {
            st.apply(Mutation::Assign { segment_id: t, semantic_id: 10 }, None).unwrap();
        }
        let (_, o) = st.apply(Mutation::AutoInstance, None).unwrap();
        assert_eq!(o, Outcome::Renumbered { instances: BTreeMap::from([(40, 2), (41, 1), (42, 3)]) });
        let before = st.labels();
        st.apply(Mutation::AutoInstance, None).unwrap();
        assert_eq!(st.labels(), before);
    }

    #[test]
    fn auto_instance_ties_go_to_the_larger_segment() {
        let s = seq(&[&[0.0, 1.0, 2.0]]);
        let b = base(&[&[5, 6, 6]]);
        let mut st = AnnotationState::new(&s, &b, &BTreeSet::new()).unwrap();
        st.apply(Mutation::Assign { segment_id: 5, semantic_id: 10 }, None).unwrap();
        st.apply(Mutation::Assign { segment_id: 6, semantic_id: 10 }, None).unwrap();
        st.apply(Mutation::AutoInstance, None).unwrap();
        assert_eq!(st.frame_labels(0).unwrap(), vec![Label::new(10, 2), Label::new(10, 1), Label::new(10, 1)]);
    }

    #[test]
    fn single_track_gets_instance_one() {
        let s = seq(&[&[0.0]]);
        let mut st = AnnotationState::new(&s, &base(&[&[12]]), &BTreeSet::new()).unwrap();
        st.apply(Mutation::Assign { segment_id: 12, semantic_id: 30 }, None).unwrap();
        st.apply(Mutation::AutoInstance, None).unwrap();
        assert_eq!(st.frame_labels(0).unwrap()[0], Label::new(30, 1));
    }

    #[test]
    fn split_follows_nearest_points_forward() {
        // Two clumps of segment 1 that drift right by 0.1 each frame.
        let s = seq(&[&[0.0, 0.1, 5.0, 5.1], &[0.1, 0.2, 5.1, 5.2], &[5.2, 0.2, 5.3, 0.3]]);
        let b = base(&[&[1, 1, 1, 1], &[1, 1, 1, 1], &[1, 1, 1, 1]]);
        let mut st = AnnotationState::new(&s, &b, &BTreeSet::new()).unwrap();
        let (_, o) = st
            .apply(
                Mutation::Split {
                    segment_id: 1,
                    frame: 1,
                    point_indices: vec![2, 3],
                },
                None,
            )
            .unwrap();
        assert_eq!(o, Outcome::Split { new_id: 2, moved: 4 });
        assert_eq!(st.segments_of(0).unwrap(), &[1, 1, 1, 1]);
        assert_eq!(st.segments_of(1).unwrap(), &[1, 1, 2, 2]);
        assert_eq!(st.segments_of(2).unwrap(), &[2, 1, 2, 1]);
    }

    #[test]
    fn split_rejects_foreign_points() {
        let (s, b) = three_tracks();
        let mut st = AnnotationState::new(&s, &b, &BTreeSet::new()).unwrap();
        let r = st.apply(
            Mutation::Split {
                segment_id: 3,
                frame: 2,
                point_indices: vec![1],
            },
            None,
        );
        assert!(matches!(r, Err(Error::Parameter(_))));
        let r = st.apply(
            Mutation::Split {
                segment_id: 3,
                frame: 2,
                point_indices: vec![50],
            },
            None,
        );
        assert!(matches!(r, Err(Error::Range(_))));
        assert_eq!(st.revision(), 0);
    }

    #[test]
    fn stale_revision_conflicts() {
        let (s, b) = three_tracks();
        let mut st = AnnotationState::new(&s, &b, &BTreeSet::new()).unwrap();
        st.apply(Mutation::Assign { segment_id: 3, semantic_id: 10 }, Some(0)).unwrap();
        let r = st.apply(Mutation::Assign { segment_id: 7, semantic_id: 10 }, Some(0));
        assert!(matches!(r, Err(Error::Conflict { expected: 0, actual: 1 })));
    }

    #[test]
    fn journal_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        assert!(read_journal(&path).unwrap().is_empty());
        let entries = vec![
            JournalEntry {
                revision: 0,
                mutation: Mutation::Merge { ids: vec![3, 7] },
            },
            JournalEntry {
                revision: 1,
                mutation: Mutation::AutoInstance,
            },
        ];
        for e in &entries {
            append_journal(&path, e).unwrap();
        }
        assert_eq!(read_journal(&path).unwrap(), entries);
        let line = fs::read_to_string(&path).unwrap();
        assert!(line.starts_with(r#"{"revision":0,"op":"merge","ids":[3,7]}"#));
    }

    #[test]
    fn frame_payload_round_trip() {
        let (s, b) = three_tracks();
        let st = AnnotationState::new(&s, &b, &BTreeSet::from([9])).unwrap();
        let p = FramePayload::new(&s, &st, 3).unwrap();
        let bytes = p.encode();
        assert_eq!(bytes.len(), 108 + 4 * 24);
        assert_eq!(&bytes[..4], b"PSF1");
        assert_eq!(FramePayload::decode(&bytes).unwrap(), p);
        assert!(FramePayload::decode(&bytes[..bytes.len() - 1]).is_err());
        assert_eq!(st.manifest().tracks.iter().find(|t| t.id == 9).unwrap().kind, TrackKind::Ground);
    }

    fn op() -> impl Strategy<Value = Mutation> {
        prop_oneof![
            (1u32..6, 0u16..4).prop_map(|(segment_id, semantic_id)| Mutation::Assign { segment_id, semantic_id }),
            prop::collection::vec(1u32..6, 2..4).prop_map(|ids| Mutation::Merge { ids }),
            (1u32..6, 0usize..4, prop::collection::vec(0u32..6, 1..3)).prop_map(|(segment_id, frame, point_indices)| Mutation::Split {
                segment_id,
                frame,
                point_indices
            }),
            Just(Mutation::AutoInstance),
        ]
    }

    proptest! {
        #[test]
        fn replay_reproduces_state(ids in prop::collection::vec(prop::collection::vec(0u16..6, 6), 4), ops in prop::collection::vec(op(), 0..12)) {
            let row: &[f64] = &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
            let s = seq(&[row; 4]);
            let b = LabelMap { frames: ids.iter().map(|f| f.iter().map(|&i| Label::new(0, i)).collect()).collect() };
            let mut st = AnnotationState::new(&s, &b, &BTreeSet::new()).unwrap();
            for m in ops {
                let before = st.labels();
                if st.apply(m, None).is_err() {
                    prop_assert_eq!(st.labels(), before);
                }
            }
            let again = AnnotationState::replay(&s, &b, &BTreeSet::new(), st.journal()).unwrap();
            prop_assert_eq!(again.labels(), st.labels());
            prop_assert_eq!(again.manifest(), st.manifest());
            // Labels only: point counts per frame never change.
            for (f, frame) in st.labels().frames.iter().enumerate() {
                prop_assert_eq!(frame.len(), b.frames[f].len());
            }
        }
    }
}
