use preseg::evaluation::{apply_alignment, panoptic_quality, semantic_oracle_align, ClassSet};
use preseg::f32::Sequence;
use preseg::pipeline::{presegment, PipelineConfig};
use preseg::segmenter::MockSegmenter;
use preseg::synthetic::{generate, SceneParams};

#[test]
fn f32_pipeline_runs_end_to_end() {
    let scene = generate::<f32>(&SceneParams {
        frames: 12,
        ..SceneParams::default()
    })
    .unwrap();
    let seq = Sequence {
        frames: scene.frames.clone(),
        poses: scene.poses.clone(),
    };
    let mut cfg = PipelineConfig::default();
    cfg.aggregation.half_width = 2;
    cfg.aggregation.keyframe_translation = 4.0;
    cfg.rig.width = 320;
    cfg.rig.height = 240;
    cfg.rig.focal = 160.0;
    cfg.rig.t = 2.0;
    cfg.rig.pitch_deg = -15.0;
    cfg.rig.optimize = false;
    let out = presegment(&seq, &cfg, &MockSegmenter::default(), &mut |_| {}).unwrap();
    assert_eq!(out.labels.frames.len(), 12);
    for (l, f) in out.labels.frames.iter().zip(&seq.frames) {
        assert_eq!(l.len(), f.points.len());
    }
    let ids: Vec<Vec<u32>> = out.labels.frames.iter().map(|f| f.iter().map(|l| l.instance as u32).collect()).collect();
    let cs = ClassSet::default();
    let aligned = apply_alignment(&ids, &semantic_oracle_align(&ids, &scene.labels.frames, &cs).unwrap()).unwrap();
    let pq = panoptic_quality(&aligned, &scene.labels.frames, &cs).unwrap().pq;
    assert!(pq >= 0.7, "pq {pq}");
}
