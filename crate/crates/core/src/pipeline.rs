//! The whole presegmentation run: aggregation, view rendering, prompting,
//! segmentation, lifting back to 3D, 4D consistency and ground labeling.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{build_superframe, designate_keyframes, split_ground, voxelize, GroundParams, VoxelGrid, VoxelId};
use crate::alignment::camera::{Intrinsics, PseudoCameraRig};
use crate::alignment::color::{grid_hues, pseudo_color, PseudoColorParams};
use crate::alignment::metric::{fit_metric_model, load_corpus_dir, synthetic_corpus, DomainScorer, MetricModel, MetricParams};
use crate::alignment::optimize::{optimize_rig, RigSearch, SearchRound};
use crate::alignment::render::{project_voxels, PixelVoxelMap};
use crate::data::{write_label_file, write_atomic, Label, LabelMap, Sequence};
use crate::geometry::{Pose, Vec3};
use crate::ground::{label_ground, GroundLabelParams, GroundSample};
use crate::prompting::{bilevel_prompts, propagate_prompts, PromptParams, PromptSet, PropagationTarget};
use crate::reconstruction::smoothing::{apply_relabel, frame_segments, interframe_smoothing, SmoothingParams};
use crate::reconstruction::{label_growth, lift_object, nms3d, nms4d, BleedingParams, Bitmask, EqParams, MergeDecision, ObjectTrack};
use crate::scalar::Real;
use crate::segmenter::{SegMask, Segmenter};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregationConfig {
    /// Keyframe translation threshold (m).
    pub keyframe_translation: f64,
    /// Keyframe rotation threshold (degrees).
    pub keyframe_rotation_deg: f64,
    /// Frames on each side of the center scan in a Superframe.
    pub half_width: usize,
    /// Voxel edge (m).
    pub voxel: f64,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            keyframe_translation: 2.0,
            keyframe_rotation_deg: 10.0,
            half_width: 10,
            voxel: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigConfig {
    pub cameras: usize,
    pub width: usize,
    pub height: usize,
    /// Focal length (px).
    pub focal: f64,
    /// Initial convergence height `t` (m).
    pub t: f64,
    pub pitch_deg: f64,
    pub pitch_min_deg: f64,
    pub pitch_max_deg: f64,
    pub standoff: f64,
    /// Search `t` and `α` before rendering; otherwise use the values above.
    pub optimize: bool,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            cameras: 4,
            width: 1080,
            height: 720,
            focal: 540.0,
            t: 0.0,
            pitch_deg: 0.0,
            pitch_min_deg: -30.0,
            pitch_max_deg: 10.0,
            standoff: 0.0,
            optimize: true,
        }
    }
}

impl RigConfig {
    pub fn build<T: Real>(&self) -> Result<PseudoCameraRig<T>> {
        let intr = Intrinsics::centered(T::c(self.focal), self.width, self.height);
        let mut rig = PseudoCameraRig::surround(
            self.cameras,
            intr,
            T::c(self.t),
            T::c(self.pitch_deg.to_radians()),
            (T::c(self.pitch_min_deg.to_radians()), T::c(self.pitch_max_deg.to_radians())),
        )?;
        rig.standoff = T::c(self.standoff);
        rig.validate()?;
        Ok(rig)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    /// A fitted model file; takes precedence over the corpus options.
    pub model: Option<PathBuf>,
    /// Directory of PNG images to fit a model from.
    pub corpus: Option<PathBuf>,
    /// Dead-leaves images generated when neither of the above is set.
    pub synthetic_count: usize,
    pub fit: MetricParams,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            model: None,
            corpus: None,
            synthetic_count: 96,
            fit: MetricParams::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Mock,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterConfig {
    pub backend: Backend,
    /// Base URL of a remote segmenter. The environment variable
    /// `PRESEG_SEGMENTER_URL` takes precedence.
    pub url: Option<String>,
    /// Color tolerance of the mock backend.
    pub tau: f64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Mock,
            url: None,
            tau: crate::segmenter::mock::DEFAULT_TAU,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Nms4dConfig {
    pub enabled: bool,
    /// Merge when Ψ reaches this value.
    pub threshold: f64,
}

impl Default for Nms4dConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            threshold: 0.3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionConfig {
    pub bleeding: BleedingParams,
    pub eq: EqParams,
    pub nms4d: Nms4dConfig,
    pub smoothing: SmoothingParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub manifest: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub aggregation: AggregationConfig,
    pub ground: GroundParams,
    pub rig: RigConfig,
    pub search: RigSearch,
    pub color: PseudoColorParams,
    pub metric: MetricConfig,
    pub prompting: PromptParams,
    pub segmenter: SegmenterConfig,
    pub reconstruction: ReconstructionConfig,
    pub ground_labels: GroundLabelParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            output: None,
            seed: 7,
            aggregation: AggregationConfig::default(),
            ground: GroundParams::default(),
            rig: RigConfig::default(),
            search: RigSearch::default(),
            color: PseudoColorParams::default(),
            metric: MetricConfig::default(),
            prompting: PromptParams::default(),
            segmenter: SegmenterConfig::default(),
            reconstruction: ReconstructionConfig::default(),
            ground_labels: GroundLabelParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let a = &self.aggregation;
        if !(a.voxel > 0.0) || !(a.keyframe_translation > 0.0) || !(a.keyframe_rotation_deg > 0.0) {
            return bad("aggregation thresholds and voxel edge must be positive");
        }
        if !(self.ground.cell > 0.0 && self.ground.plane_tol > 0.0) {
            return bad("ground cell and plane tolerance must be positive");
        }
        self.rig.build::<f64>().map_err(|e| Error::Config(e.to_string()))?;
        self.search.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.color.validate().map_err(|e| Error::Config(e.to_string()))?;
        let p = &self.prompting;
        if !(p.high.eps > 0.0 && p.low.eps > 0.0 && p.high.min_pts > 0 && p.low.min_pts > 0 && p.depth_tol > 0.0) {
            return bad("prompting radii, densities and depth tolerance must be positive");
        }
        if !(self.segmenter.tau > 0.0 && self.segmenter.tau <= 3f64.sqrt()) {
            return bad("segmenter tau must lie in (0, √3]");
        }
        let r = &self.reconstruction;
        if !(r.nms4d.threshold >= 0.0) || !(r.smoothing.d_c >= 0.0) || !(r.smoothing.r >= 0.0) {
            return bad("reconstruction thresholds must be non-negative");
        }
        if !(r.eq.iou > 0.0 && r.eq.iou <= 1.0 && r.eq.containment > 0.0 && r.eq.containment <= 1.0) {
            return bad("merge overlaps must lie in (0, 1]");
        }
        self.ground_labels.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Aggregation,
    Alignment,
    Prompting,
    Segmentation,
    Reconstruction,
    Ground,
    Output,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Aggregation,
        Stage::Alignment,
        Stage::Prompting,
        Stage::Segmentation,
        Stage::Reconstruction,
        Stage::Ground,
        Stage::Output,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Aggregation => "aggregation",
            Stage::Alignment => "alignment",
            Stage::Prompting => "prompting",
            Stage::Segmentation => "segmentation",
            Stage::Reconstruction => "reconstruction",
            Stage::Ground => "ground",
            Stage::Output => "output",
        }
    }

    /// Share of overall progress reached when the stage starts.
    fn start(self) -> f64 {
        match self {
            Stage::Aggregation => 0.0,
            Stage::Alignment => 0.15,
            Stage::Prompting => 0.4,
            Stage::Segmentation => 0.45,
            Stage::Reconstruction => 0.7,
            Stage::Ground => 0.85,
            Stage::Output => 0.95,
        }
    }

    fn end(self) -> f64 {
        match self {
            Stage::Aggregation => Stage::Alignment.start(),
            Stage::Alignment => Stage::Prompting.start(),
            Stage::Prompting => Stage::Segmentation.start(),
            Stage::Segmentation => Stage::Reconstruction.start(),
            Stage::Reconstruction => Stage::Ground.start(),
            Stage::Ground => Stage::Output.start(),
            Stage::Output => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub stage: Stage,
    /// Overall completion in `[0, 1]`, never decreasing within a run.
    pub fraction: f64,
}

struct Reporter<'a> {
    sink: &'a mut dyn FnMut(Progress),
    last: f64,
}

impl Reporter<'_> {
    fn report(&mut self, stage: Stage, within: f64) {
        let f = stage.start() + (stage.end() - stage.start()) * within.clamp(0.0, 1.0);
        self.last = self.last.max(f);
        (self.sink)(Progress { stage, fraction: self.last });
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackKind {
    Object,
    Ground,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackEntry {
    pub id: u32,
    pub kind: TrackKind,
    pub frames: Vec<usize>,
    /// Point count in each of `frames`.
    pub points: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<u16>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackManifest {
    pub format: String,
    pub version: u32,
    pub tracks: Vec<TrackEntry>,
}

pub const TRACK_FORMAT: &str = "preseg-tracks";

impl TrackManifest {
    pub fn from_labels(labels: &LabelMap, ground: &BTreeSet<u32>) -> Self {
        let mut acc: BTreeMap<u32, BTreeMap<usize, usize>> = BTreeMap::new();
        for (f, frame) in labels.frames.iter().enumerate() {
            for l in frame {
                if l.instance != 0 {
                    *acc.entry(l.instance as u32).or_default().entry(f).or_default() += 1;
                }
            }
        }
        let tracks = acc
            .into_iter()
            .map(|(id, per)| TrackEntry {
                id,
                kind: if ground.contains(&id) { TrackKind::Ground } else { TrackKind::Object },
                frames: per.keys().copied().collect(),
                points: per.values().copied().collect(),
                semantic: None,
                instance: None,
            })
            .collect();
        Self {
            format: TRACK_FORMAT.into(),
            version: 1,
            tracks,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::MalformedFile(format!("{}: {e}", path.display())))?;
        if m.format != TRACK_FORMAT || m.version != 1 {
            return Err(Error::MalformedFile(format!("unsupported track manifest {} v{}", m.format, m.version)));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self).expect("manifest serializes").as_bytes())
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunStats {
    pub keyframes: Vec<usize>,
    pub prompt_sets: usize,
    pub prompts_sent: usize,
    /// Prompts retried with positives only after the backend reported them
    /// infeasible.
    pub prompts_relaxed: usize,
    pub masks: usize,
    pub tracks_before_nms4d: usize,
    pub tracks_after_nms4d: usize,
    pub smoothing_merges: usize,
    pub rig_trace: Vec<SearchRound>,
    /// Mean domain distance of the primary camera over the keyframes, if a
    /// metric was available.
    pub domain_distance: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct PresegmentOutput<T> {
    pub labels: LabelMap,
    pub manifest: TrackManifest,
    pub rig: PseudoCameraRig<T>,
    pub decisions: Vec<MergeDecision>,
    pub stats: RunStats,
}

/// Per-frame products of aggregation, kept after the Superframe is dropped.
struct FrameData<T> {
    grid: VoxelGrid<T>,
    /// Voxel of each center-scan point, if it was an object point.
    point_voxel: Vec<Option<VoxelId>>,
    ground: Vec<GroundSample<T>>,
}

fn aggregate<T: Real>(seq: &Sequence<T>, cfg: &PipelineConfig, f: usize) -> Result<FrameData<T>> {
    let a = &cfg.aggregation;
    let sf = build_superframe(&seq.frames, &seq.poses, f, a.half_width)?;
    let split = split_ground(&sf, &cfg.ground)?;
    let grid = voxelize(&sf, &split.object, T::c(a.voxel))?;
    let mut point_voxel = vec![None; seq.frames[f].points.len()];
    for (v, vox) in grid.voxels.iter().enumerate() {
        for &m in &vox.members {
            let p = &sf.points[m];
            if p.source_frame == f {
                point_voxel[p.source_index as usize] = Some(v);
            }
        }
    }
    let pose = &seq.poses[f];
    let ground = split
        .ground
        .iter()
        .map(|&i| &sf.points[i])
        .filter(|p| p.source_frame == f)
        .map(|p| GroundSample {
            position: pose.transform_point(p.position),
            intensity: p.intensity,
            frame: f,
            index: p.source_index,
        })
        .collect();
    Ok(FrameData { grid, point_voxel, ground })
}

/// The configured metric: a saved model, one fitted on a corpus directory,
/// or one fitted on generated dead-leaves images.
pub fn metric_model<T: Real>(cfg: &PipelineConfig) -> Result<MetricModel<T>> {
    let m = &cfg.metric;
    if let Some(path) = &m.model {
        return MetricModel::load(path);
    }
    let crop = (cfg.rig.width, cfg.rig.height);
    let corpus = match &m.corpus {
        Some(dir) => load_corpus_dir(dir)?,
        None => synthetic_corpus(m.synthetic_count, crop.0, crop.1, cfg.seed),
    };
    fit_metric_model(&corpus, crop, &m.fit)
}

/// Sensor-frame direction of travel at the first pose.
fn motion_direction<T: Real>(poses: &[Pose<T>]) -> Option<Vec3<T>> {
    let (first, last) = (poses.first()?, poses.last()?);
    Some(first.inverse().transform_vector(last.translation - first.translation))
}

pub fn mean_domain_distance<T: Real, S: DomainScorer<T>>(grids: &[&VoxelGrid<T>], rig: &PseudoCameraRig<T>, scorer: &S, color: &PseudoColorParams) -> f64 {
    if grids.is_empty() {
        return 0.0;
    }
    let cam = rig.primary_camera();
    let total: f64 = grids
        .par_iter()
        .map(|g| {
            let hues = grid_hues(g);
            let (map, _) = project_voxels(g, &cam);
            scorer.score(&pseudo_color(map, &hues, color).gray()).to_f64_lossy()
        })
        .sum();
    total / grids.len() as f64
}

struct Views<T> {
    /// `[frame][camera]`
    maps: Vec<Vec<PixelVoxelMap<T>>>,
    images: Vec<Vec<image::RgbImage>>,
}

fn render_views<T: Real>(data: &[FrameData<T>], rig: &PseudoCameraRig<T>, color: &PseudoColorParams) -> Views<T> {
    let cams = rig.cameras();
    let per: Vec<(Vec<PixelVoxelMap<T>>, Vec<image::RgbImage>)> = data
        .par_iter()
        .map(|d| {
            let hues = grid_hues(&d.grid);
            cams.iter()
                .map(|cam| {
                    let (map, _) = project_voxels(&d.grid, cam);
                    let img = pseudo_color(map.clone(), &hues, color).to_rgb8();
                    (map, img)
                })
                .unzip()
        })
        .collect();
    let (maps, images) = per.into_iter().unzip();
    Views { maps, images }
}

/// One session per camera; returns every propagated mask tagged with its
/// camera.
fn segment<T: Real>(sets: &[PromptSet<T>], views: &Views<T>, seg: &dyn Segmenter, stats: &Mutex<RunStats>) -> Result<Vec<(usize, SegMask)>> {
    let cameras = views.images.first().map_or(0, Vec::len);
    let per_camera: Vec<Result<Vec<(usize, SegMask)>>> = (0..cameras)
        .into_par_iter()
        .map(|c| {
            let prompts: Vec<_> = sets
                .iter()
                .flat_map(|s| s.pixel_prompts.iter().filter(|p| p.camera == c).map(move |p| (s.object_id, p)))
                .collect();
            if prompts.is_empty() {
                return Ok(Vec::new());
            }
            let frames: Vec<image::RgbImage> = views.images.iter().map(|f| f[c].clone()).collect();
            let handle = seg.open_session(&frames)?;
            let run = || -> Result<Vec<SegMask>> {
                for (object, fp) in &prompts {
                    stats.lock().expect("stats lock").prompts_sent += 1;
                    match seg.add_prompt(&handle.id, fp.frame, *object, &fp.points) {
                        Ok(_) => {}
                        Err(Error::PromptInfeasible(_)) => {
                            let pos: Vec<_> = fp.points.iter().copied().filter(|p| p.positive).collect();
                            stats.lock().expect("stats lock").prompts_relaxed += 1;
                            seg.add_prompt(&handle.id, fp.frame, *object, &pos)?;
                        }
                        Err(e) => return Err(e),
                    }
                }
                seg.propagate(&handle.id)
            };
            let result = run();
            let closed = seg.close_session(&handle.id);
            let masks = result?;
            closed?;
            Ok(masks.into_iter().map(|m| (c, m)).collect())
        })
        .collect();
    let mut out = Vec::new();
    for r in per_camera {
        out.extend(r?);
    }
    Ok(out)
}

/// Runs the whole pipeline over `seq` and returns per-point labels with the
/// instance id of each point (semantic 0). Progress is reported through
/// `progress` as a non-decreasing fraction.
pub fn presegment<T: Real>(
    seq: &Sequence<T>,
    cfg: &PipelineConfig,
    seg: &dyn Segmenter,
    progress: &mut dyn FnMut(Progress),
) -> Result<PresegmentOutput<T>> {
    cfg.validate()?;
    if seq.frames.is_empty() || seq.frames.len() != seq.poses.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} frames and {} poses",
            seq.frames.len(),
            seq.poses.len()
        )));
    }
    let mut rep = Reporter { sink: progress, last: 0.0 };
    let n = seq.frames.len();
    let stats = Mutex::new(RunStats::default());

    rep.report(Stage::Aggregation, 0.0);
    let a = &cfg.aggregation;
    let keyframes: Vec<usize> = designate_keyframes(
        &seq.poses,
        T::c(a.keyframe_translation),
        T::c(a.keyframe_rotation_deg.to_radians()),
    )
    .into_iter()
    .map(|k| k.frame_index)
    .collect();
    let data: Vec<FrameData<T>> = (0..n)
        .into_par_iter()
        .map(|f| aggregate(seq, cfg, f))
        .collect::<Result<_>>()
        .map_err(|e| e.at_stage(Stage::Aggregation.name()))?;
    rep.report(Stage::Aggregation, 1.0);

    let stage = Stage::Alignment.name();
    let mut rig: PseudoCameraRig<T> = cfg.rig.build().map_err(|e| e.at_stage(stage))?;
    let key_grids: Vec<&VoxelGrid<T>> = keyframes.iter().map(|&k| &data[k].grid).collect();
    let mut domain_distance = None;
    if cfg.rig.optimize {
        let model: MetricModel<T> = metric_model(cfg).map_err(|e| e.at_stage(stage))?;
        rep.report(Stage::Alignment, 0.2);
        let owned: Vec<VoxelGrid<T>> = key_grids.iter().map(|g| (*g).clone()).collect();
        let opt = optimize_rig(&owned, &model, &rig, &cfg.search, &cfg.color, motion_direction(&seq.poses)).map_err(|e| e.at_stage(stage))?;
        rig = opt.rig;
        stats.lock().expect("stats lock").rig_trace = opt.trace;
        domain_distance = Some(mean_domain_distance(&key_grids, &rig, &model, &cfg.color));
    }
    rep.report(Stage::Alignment, 0.7);
    let views = render_views(&data, &rig, &cfg.color);
    rep.report(Stage::Alignment, 1.0);

    let mut next_id = 1u32;
    let mut sets = Vec::new();
    for &k in &keyframes {
        let found = bilevel_prompts(&data[k].grid, k, &cfg.prompting, next_id);
        next_id += found.len() as u32;
        sets.extend(found);
    }
    let targets: Vec<PropagationTarget<'_, T>> = (0..n)
        .map(|f| PropagationTarget {
            frame: f,
            pose: seq.poses[f],
            maps: &views.maps[f],
        })
        .collect();
    let depth_tol = T::c(cfg.prompting.depth_tol);
    let sets: Vec<PromptSet<T>> = sets
        .par_iter()
        .map(|s| propagate_prompts(s, &seq.poses[s.keyframe], &rig, &targets, depth_tol))
        .collect();
    rep.report(Stage::Prompting, 1.0);

    let masks = segment(&sets, &views, seg, &stats).map_err(|e| e.at_stage(Stage::Segmentation.name()))?;
    rep.report(Stage::Segmentation, 1.0);

    let stage = Stage::Reconstruction.name();
    let mut by_object: BTreeMap<u32, BTreeMap<usize, Vec<(usize, Bitmask)>>> = BTreeMap::new();
    for (c, m) in &masks {
        let bm = Bitmask::from_rle(&m.rle).map_err(|e| e.at_stage(stage))?;
        by_object.entry(m.object_id).or_default().entry(m.frame).or_default().push((*c, bm));
    }
    let tracks: Vec<ObjectTrack<T>> = by_object
        .par_iter()
        .map(|(&id, frames)| {
            let mut t = ObjectTrack::new(id);
            for (&f, views_f) in frames {
                if f >= n {
                    return Err(Error::Protocol(format!("mask for frame {f} outside the sequence")));
                }
                let pairs: Vec<(&Bitmask, &PixelVoxelMap<T>)> = views_f
                    .iter()
                    .filter_map(|(c, bm)| views.maps[f].get(*c).map(|m| (bm, m)))
                    .collect();
                let voxels = lift_object(&pairs, &data[f].grid, &cfg.reconstruction.bleeding)?;
                t.insert(f, &voxels, &data[f].grid);
            }
            Ok(t)
        })
        .collect::<Result<_>>()
        .map_err(|e| e.at_stage(stage))?;
    rep.report(Stage::Reconstruction, 0.4);
    let rc = &cfg.reconstruction;
    let before = tracks.iter().filter(|t| !t.is_empty()).count();
    let (tracks, decisions) = if rc.nms4d.enabled {
        nms4d(tracks, rc.nms4d.threshold, &rc.eq)
    } else {
        (tracks.into_iter().filter(|t| !t.is_empty()).collect(), Vec::new())
    };

    let mut point_ids: Vec<Vec<u32>> = data
        .par_iter()
        .enumerate()
        .map(|(f, d)| {
            let present: Vec<&ObjectTrack<T>> = tracks.iter().filter(|t| t.frames.contains_key(&f)).collect();
            let clusters: Vec<Vec<VoxelId>> = present.iter().map(|t| t.frames[&f].clone()).collect();
            let mut labels: Vec<Option<u32>> = vec![None; d.grid.len()];
            for g in nms3d(&clusters, &d.grid, &rc.eq) {
                let id = present[g.sources[0]].id;
                for v in g.voxels {
                    labels[v].get_or_insert(id);
                }
            }
            label_growth(&mut labels, &d.grid);
            d.point_voxel.iter().map(|v| v.and_then(|v| labels[v]).unwrap_or(0)).collect()
        })
        .collect();
    rep.report(Stage::Reconstruction, 0.8);

    let mut smoothing_merges = 0;
    if rc.smoothing.enabled {
        let segments: Vec<_> = (0..n)
            .into_par_iter()
            .map(|f| {
                let pose = &seq.poses[f];
                let world: Vec<Vec3<T>> = seq.frames[f].points.iter().map(|p| pose.transform_point(p.position)).collect();
                frame_segments(&world, &point_ids[f])
            })
            .collect();
        let relabel = interframe_smoothing(&segments, &rc.smoothing);
        smoothing_merges = relabel.len();
        point_ids.par_iter_mut().for_each(|ids| apply_relabel(ids, &relabel));
    }
    rep.report(Stage::Reconstruction, 1.0);

    let stage = Stage::Ground.name();
    let samples: Vec<GroundSample<T>> = data.iter().flat_map(|d| d.ground.iter().copied()).collect();
    let mut ground_ids = BTreeSet::new();
    if !samples.is_empty() {
        let params = GroundLabelParams {
            seed: cfg.seed,
            ..cfg.ground_labels
        };
        let clusters = label_ground(&samples, &params).map_err(|e| e.at_stage(stage))?;
        let base = point_ids.iter().flatten().copied().max().unwrap_or(0) + 1;
        for (s, c) in samples.iter().zip(clusters) {
            let id = base + c as u32;
            point_ids[s.frame][s.index as usize] = id;
            ground_ids.insert(id);
        }
    }
    rep.report(Stage::Ground, 1.0);

    let frames = point_ids
        .into_iter()
        .map(|ids| {
            ids.into_iter()
                .map(|id| {
                    u16::try_from(id)
                        .map(|i| Label::new(0, i))
                        .map_err(|_| Error::Range(format!("instance id {id} exceeds 16 bits").into()))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.at_stage(Stage::Output.name()))?;
    let labels = LabelMap { frames };
    let manifest = TrackManifest::from_labels(&labels, &ground_ids);
    let mut stats = stats.into_inner().expect("stats lock");
    stats.keyframes = keyframes;
    stats.prompt_sets = sets.len();
    stats.masks = masks.len();
    stats.tracks_before_nms4d = before;
    stats.tracks_after_nms4d = tracks.len();
    stats.smoothing_merges = smoothing_merges;
    stats.domain_distance = domain_distance;
    Ok(PresegmentOutput {
        labels,
        manifest,
        rig,
        decisions,
        stats,
    })
}

pub fn label_path(dir: &Path, frame: usize) -> PathBuf {
    dir.join("labels").join(format!("{frame:06}.label"))
}

pub const MANIFEST_FILE: &str = "tracks.json";

/// Writes `labels/NNNNNN.label` and `tracks.json` under `dir`. Everything is
/// staged in a sibling directory first, so a failure leaves no partial
/// output behind.
pub fn write_outputs(dir: &Path, labels: &LabelMap, manifest: &TrackManifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let staging = dir.join(".staging");
    let _ = fs::remove_dir_all(&staging);
    let write = || -> Result<()> {
        fs::create_dir_all(staging.join("labels")).map_err(|e| Error::io(&staging, e))?;
        for (f, l) in labels.frames.iter().enumerate() {
            write_label_file(l, &label_path(&staging, f))?;
        }
        manifest.save(&staging.join(MANIFEST_FILE))?;
        let final_labels = dir.join("labels");
        if final_labels.exists() {
            fs::remove_dir_all(&final_labels).map_err(|e| Error::io(&final_labels, e))?;
        }
        fs::rename(staging.join("labels"), &final_labels).map_err(|e| Error::io(&final_labels, e))?;
        fs::rename(staging.join(MANIFEST_FILE), dir.join(MANIFEST_FILE)).map_err(|e| Error::io(dir, e))?;
        Ok(())
    };
    let result = write();
    let _ = fs::remove_dir_all(&staging);
    result.map_err(|e| e.at_stage(Stage::Output.name()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{apply_alignment, panoptic_quality, semantic_oracle_align, ClassSet};
    use crate::segmenter::MockSegmenter;
    use crate::synthetic::{generate, SceneParams};

    pub(crate) fn small_config() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.aggregation.half_width = 2;
        cfg.aggregation.keyframe_translation = 4.0;
        cfg.rig.width = 160;
        cfg.rig.height = 120;
        cfg.rig.focal = 80.0;
        cfg.rig.optimize = false;
        cfg.rig.t = 2.0;
        cfg.rig.pitch_deg = -15.0;
        cfg
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(PipelineConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::from_toml("[rig]\nzoom = 2"), Err(Error::Config(_))));
        let cfg = PipelineConfig::from_toml("[reconstruction.nms4d]\nenabled = false").unwrap();
        assert!(!cfg.reconstruction.nms4d.enabled);
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(PipelineConfig::from_toml("[aggregation]\nvoxel = -1.0").is_err());
        assert!(PipelineConfig::from_toml("[segmenter]\nbackend = \"quantum\"").is_err());
        assert!(PipelineConfig::from_toml("[segmenter]\nbackend = \"remote\"").is_ok());
    }

    #[test]
    fn small_scene_end_to_end() {
        let scene = generate::<f64>(&SceneParams {
            frames: 12,
            ..Default::default()
        })
        .unwrap();
        let seq = Sequence {
            frames: scene.frames.clone(),
            poses: scene.poses.clone(),
        };
        let mut seen = Vec::new();
        let out = presegment(&seq, &small_config(), &MockSegmenter::default(), &mut |p| seen.push(p.fraction)).unwrap();
        assert!(seen.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(out.labels.frames.len(), 12);
        out.labels.check_against(&seq.frames).unwrap();
        let ids: BTreeSet<u32> = out.labels.frames.iter().flatten().map(|l| l.instance as u32).filter(|&i| i != 0).collect();
        let listed: BTreeSet<u32> = out.manifest.tracks.iter().map(|t| t.id).collect();
        assert_eq!(ids, listed);

        let pred: Vec<Vec<u32>> = out.labels.frames.iter().map(|f| f.iter().map(|l| l.instance as u32).collect()).collect();
        let cs = ClassSet::default();
        let aligned = apply_alignment(&pred, &semantic_oracle_align(&pred, &scene.labels.frames, &cs).unwrap()).unwrap();
        let pq = panoptic_quality(&aligned, &scene.labels.frames, &cs).unwrap();
        assert!(pq.pq > 0.5, "{}", pq.to_text());
    }

    #[test]
    fn outputs_written_and_staging_removed() {
        let dir = tempfile::tempdir().unwrap();
        let labels = LabelMap {
            frames: vec![vec![Label::new(0, 3), Label::new(0, 0)], vec![Label::new(0, 3)]],
        };
        let manifest = TrackManifest::from_labels(&labels, &BTreeSet::new());
        write_outputs(dir.path(), &labels, &manifest).unwrap();
        assert!(!dir.path().join(".staging").exists());
        assert_eq!(crate::data::read_label_file(&label_path(dir.path(), 1)).unwrap(), labels.frames[1]);
        let m = TrackManifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(m.tracks, vec![TrackEntry { id: 3, kind: TrackKind::Object, frames: vec![0, 1], points: vec![1, 1], semantic: None, instance: None }]);
    }
}
