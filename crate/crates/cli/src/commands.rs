//! The work behind each subcommand, kept out of `main` so tests can drive it.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use preseg::annotation::{read_journal, AnnotationState};
use preseg::data::{
    encode_kitti_bin, read_label_file, write_atomic, write_label_file, write_pose_file, LabelMap, Point, PointFrame, Sequence,
    SequenceManifest,
};
use preseg::evaluation::{apply_alignment, lstq, panoptic_quality, semantic_oracle_align, ClassSet, PanopticReport, TrackingReport};
use preseg::pipeline::{label_path, presegment, write_outputs, Backend, PipelineConfig, PresegmentOutput, Progress, TrackKind, TrackManifest, MANIFEST_FILE};
use preseg::segmenter::{MockSegmenter, Segmenter};
use preseg::synthetic::{generate, SceneParams};
use preseg::{Error, Result};
use serde::Serialize;

use crate::remote::RemoteSegmenter;

pub const SEQUENCE_FILE: &str = "sequence.json";
pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const ANNOTATED_DIR: &str = "annotated";
pub const STATS_FILE: &str = "run_stats.json";

/// Loads a config, applies `key=value` overrides (TOML values, dotted
/// keys), and resolves relative paths against the config's directory.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<PipelineConfig> {
    let (text, base) = match path {
        Some(p) => (
            fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (String::new(), PathBuf::new()),
    };
    let mut doc: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    for o in overrides {
        let (key, value) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
        let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(value.to_string()),
        };
        set_dotted(&mut doc, key.trim(), value)?;
    }
    let mut cfg = PipelineConfig::from_toml(&toml::to_string(&doc).expect("table serializes"))?;
    for p in [&mut cfg.manifest, &mut cfg.output].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

fn set_dotted(doc: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("empty key in {key:?}")))?;
    let mut table = doc;
    for p in parts {
        table = table
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{p} in {key:?} is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

pub fn build_segmenter(cfg: &PipelineConfig) -> Result<Box<dyn Segmenter>> {
    Ok(match cfg.segmenter.backend {
        Backend::Mock => Box::new(MockSegmenter::new(cfg.segmenter.tau)),
        Backend::Remote => Box::new(RemoteSegmenter::from_env_or(cfg.segmenter.url.as_deref())?),
    })
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("{what} is not set")))
}

pub fn load_sequence(cfg: &PipelineConfig) -> Result<(SequenceManifest, Sequence<f64>)> {
    let m = SequenceManifest::load(required(&cfg.manifest, "manifest")?)?;
    let seq = m.read_sequence()?;
    Ok((m, seq))
}

/// Runs the pipeline and writes labels, the track manifest and run stats
/// to the configured output directory.
pub fn run_presegment(cfg: &PipelineConfig, progress: &mut dyn FnMut(Progress)) -> Result<PresegmentOutput<f64>> {
    cfg.validate()?;
    let out_dir = required(&cfg.output, "output")?.to_path_buf();
    let seg = build_segmenter(cfg)?;
    let (_, seq) = load_sequence(cfg)?;
    let out = presegment(&seq, cfg, seg.as_ref(), progress)?;
    write_outputs(&out_dir, &out.labels, &out.manifest)?;
    let stats = serde_json::to_string_pretty(&out.stats).expect("stats serialize");
    write_atomic(&out_dir.join(STATS_FILE), stats.as_bytes())?;
    // Edits were made against the previous labels.
    let journal = out_dir.join(JOURNAL_FILE);
    if journal.exists() {
        fs::rename(&journal, out_dir.join(format!("{JOURNAL_FILE}.prev"))).map_err(|e| Error::Io { path: journal, source: e })?;
    }
    Ok(out)
}

/// Reads `NNNNNN.label` for frames `0..frames` from `dir`.
pub fn read_label_dir(dir: &Path, frames: usize) -> Result<LabelMap> {
    let frames = (0..frames)
        .map(|f| read_label_file(&dir.join(format!("{f:06}.label"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(LabelMap { frames })
}

/// Annotation state of a presegmented sequence with its journal replayed.
pub fn open_annotation(cfg: &PipelineConfig, seq: &Sequence<f64>) -> Result<AnnotationState<f64>> {
    let out = required(&cfg.output, "output")?;
    let base = read_label_dir(label_path(out, 0).parent().expect("labels dir"), seq.frames.len())?;
    let manifest = TrackManifest::load(&out.join(MANIFEST_FILE))?;
    let ground: BTreeSet<u32> = manifest
        .tracks
        .iter()
        .filter(|t| t.kind == TrackKind::Ground)
        .map(|t| t.id)
        .collect();
    let journal = read_journal(&out.join(JOURNAL_FILE))?;
    AnnotationState::replay(seq, &base, &ground, &journal)
}

/// Writes `NNNNNN.label` for every frame into `dir`.
pub fn write_label_dir(dir: &Path, labels: &LabelMap) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    for (f, frame) in labels.frames.iter().enumerate() {
        write_label_file(frame, &dir.join(format!("{f:06}.label")))?;
    }
    Ok(())
}

/// Point files accepted by `ingest`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum InputFormat {
    KittiBin,
    /// One point per line: x y z intensity, separated by spaces or commas.
    Text,
}

fn parse_text_points(text: &str, frame: usize) -> Result<PointFrame<f64>> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
        if vals.len() != 4 {
            return Err(Error::Parse {
                line: i + 1,
                reason: format!("expected 4 values, found {}", vals.len()),
            });
        }
        points.push(Point::new(vals[0], vals[1], vals[2], vals[3]));
    }
    PointFrame::new(frame, 0, points)
}

/// Copies or converts point files (sorted by name) into `out/velodyne`,
/// copies the pose file, and writes `out/sequence.json`.
pub fn ingest(points: &Path, poses: &Path, format: InputFormat, out: &Path) -> Result<SequenceManifest> {
    let io = |p: &Path, e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    };
    let mut files: Vec<PathBuf> = fs::read_dir(points)
        .map_err(|e| io(points, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let velo = out.join("velodyne");
    fs::create_dir_all(&velo).map_err(|e| io(&velo, e))?;
    let mut frames = Vec::with_capacity(files.len());
    for (i, f) in files.iter().enumerate() {
        let bytes = match format {
            InputFormat::KittiBin => {
                let b = fs::read(f).map_err(|e| io(f, e))?;
                preseg::data::parse_kitti_bin::<f64>(&b, i)?;
                b
            }
            InputFormat::Text => {
                let t = fs::read_to_string(f).map_err(|e| io(f, e))?;
                encode_kitti_bin(&parse_text_points(&t, i)?)
            }
        };
        let rel = PathBuf::from("velodyne").join(format!("{i:06}.bin"));
        write_atomic(&out.join(&rel), &bytes)?;
        frames.push(rel);
    }
    let pose_list = preseg::data::read_pose_file::<f64>(poses)?;
    if pose_list.len() != frames.len() {
        return Err(Error::MalformedFile(format!("{} poses for {} frames", pose_list.len(), frames.len())));
    }
    write_pose_file(&pose_list, &out.join("poses.txt"))?;
    let m = SequenceManifest {
        frames,
        poses: "poses.txt".into(),
        sensor_count: 1,
        timestamps: None,
        ground_truth: None,
        base_dir: out.to_path_buf(),
    };
    m.save(&out.join(SEQUENCE_FILE))?;
    Ok(m)
}

/// Writes the generated scene, with ground truth, as an ingested sequence.
pub fn ingest_synthetic(params: &SceneParams, out: &Path) -> Result<SequenceManifest> {
    let scene = generate::<f64>(params)?;
    let mut frames = Vec::new();
    let mut gt = Vec::new();
    for (i, f) in scene.frames.iter().enumerate() {
        let rel = PathBuf::from("velodyne").join(format!("{i:06}.bin"));
        write_atomic(&out.join(&rel), &encode_kitti_bin(f))?;
        frames.push(rel);
        let lrel = PathBuf::from("labels").join(format!("{i:06}.label"));
        write_label_file(&scene.labels.frames[i], &out.join(&lrel))?;
        gt.push(lrel);
    }
    write_pose_file(&scene.poses, &out.join("poses.txt"))?;
    let m = SequenceManifest {
        frames,
        poses: "poses.txt".into(),
        sensor_count: 1,
        timestamps: None,
        ground_truth: Some(gt),
        base_dir: out.to_path_buf(),
    };
    m.save(&out.join(SEQUENCE_FILE))?;
    Ok(m)
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub panoptic: PanopticReport,
    pub tracking: TrackingReport,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        format!("{}{}", self.panoptic.to_text(), self.tracking.to_text())
    }
}

/// Scores predicted labels against ground truth. With `oracle`, every
/// predicted segment (distinct label word) takes the majority ground-truth
/// class first; otherwise predicted classes are used as they are.
pub fn evaluate(pred: &LabelMap, gt: &LabelMap, classes: &ClassSet, oracle: bool) -> Result<EvalReport> {
    let pred = if oracle {
        let ids: Vec<Vec<u32>> = pred
            .frames
            .iter()
            .map(|f| f.iter().map(|l| l.to_word()).collect())
            .collect();
        apply_alignment(&ids, &semantic_oracle_align(&ids, &gt.frames, classes)?)?
    } else {
        pred.frames.clone()
    };
    Ok(EvalReport {
        panoptic: panoptic_quality(&pred, &gt.frames, classes)?,
        tracking: lstq(&pred, &gt.frames, classes)?,
    })
}
