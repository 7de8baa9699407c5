//! Behavior every [`Segmenter`] must show, runnable against any
//! implementation (the in-process mock, a remote client, a sidecar).

use image::{Rgb, RgbImage};

use crate::prompting::PixelPrompt;
use crate::segmenter::Segmenter;
use crate::Error;

pub type Outcome = std::result::Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T>(r: crate::Result<T>, what: &str) -> std::result::Result<T, String> {
    r.map_err(|e| format!("{what}: {e}"))
}

/// Left half red, right half blue.
pub fn two_tone(w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, _| if x < w / 2 { Rgb([220, 40, 40]) } else { Rgb([40, 40, 220]) })
}

fn p(x: u32, y: u32, positive: bool) -> PixelPrompt {
    PixelPrompt { x, y, positive }
}

pub fn opens_with_frame_count(seg: &dyn Segmenter) -> Outcome {
    let h = ok(seg.open_session(&vec![two_tone(16, 8); 3]), "open")?;
    ensure!(h.frame_count == 3, "frame count {}", h.frame_count);
    ensure!((h.width, h.height) == (16, 8), "dims {}×{}", h.width, h.height);
    ok(seg.close_session(&h.id), "close")
}

pub fn rejects_empty_session(seg: &dyn Segmenter) -> Outcome {
    match seg.open_session(&[]) {
        Err(Error::Protocol(_)) => Ok(()),
        other => Err(format!("expected protocol error, got {other:?}")),
    }
}

pub fn rejects_mixed_dimensions(seg: &dyn Segmenter) -> Outcome {
    match seg.open_session(&[two_tone(16, 8), two_tone(8, 8)]) {
        Err(Error::Protocol(_)) => Ok(()),
        other => Err(format!("expected protocol error, got {other:?}")),
    }
}

pub fn concurrent_sessions_are_distinct(seg: &dyn Segmenter) -> Outcome {
    let a = ok(seg.open_session(&[two_tone(16, 8)]), "open a")?;
    let b = ok(seg.open_session(&[two_tone(16, 8)]), "open b")?;
    ensure!(a.id != b.id, "duplicate session id {}", a.id);
    // Interleave calls across the two sessions.
    let ma = ok(seg.add_prompt(&a.id, 0, 1, &[p(1, 1, true)]), "prompt a")?;
    let mb = ok(seg.add_prompt(&b.id, 0, 2, &[p(14, 6, true)]), "prompt b")?;
    ensure!(ma.object_id == 1 && mb.object_id == 2, "object ids mixed up");
    let pa = ok(seg.propagate(&a.id), "propagate a")?;
    ensure!(pa.iter().all(|m| m.object_id == 1), "session a saw session b's object");
    ok(seg.close_session(&a.id), "close a")?;
    ok(seg.close_session(&b.id), "close b")
}

pub fn mask_honors_polarity(seg: &dyn Segmenter) -> Outcome {
    let (w, h) = (20, 10);
    let s = ok(seg.open_session(&[two_tone(w, h)]), "open")?;
    let points = [p(3, 4, true), p(6, 7, true), p(15, 2, false), p(18, 9, false)];
    let m = ok(seg.add_prompt(&s.id, 0, 4, &points), "prompt")?;
    ensure!((m.rle.width, m.rle.height) == (w, h), "mask dims");
    let bits = m.rle.decode().map_err(|e| e.to_string())?;
    for q in &points {
        let inside = bits[(q.y * w + q.x) as usize];
        ensure!(inside == q.positive, "point ({}, {}) polarity violated", q.x, q.y);
    }
    ok(seg.close_session(&s.id), "close")
}

pub fn rejects_out_of_raster_points(seg: &dyn Segmenter) -> Outcome {
    let s = ok(seg.open_session(&[two_tone(16, 8)]), "open")?;
    let r = seg.add_prompt(&s.id, 0, 1, &[p(16, 0, true)]);
    ensure!(matches!(r, Err(Error::Protocol(_))), "expected protocol error, got {r:?}");
    let r = seg.add_prompt(&s.id, 5, 1, &[p(0, 0, true)]);
    ensure!(matches!(r, Err(Error::Protocol(_))), "frame out of range accepted: {r:?}");
    ok(seg.close_session(&s.id), "close")
}

pub fn propagate_covers_prompted_frames(seg: &dyn Segmenter) -> Outcome {
    let s = ok(seg.open_session(&vec![two_tone(16, 8); 4]), "open")?;
    for f in [0, 1, 3] {
        ok(seg.add_prompt(&s.id, f, 9, &[p(2, 2, true), p(12, 2, false)]), "prompt")?;
    }
    let masks = ok(seg.propagate(&s.id), "propagate")?;
    for f in [0, 1, 3] {
        ensure!(masks.iter().any(|m| m.frame == f && m.object_id == 9), "no mask for frame {f}");
    }
    for m in &masks {
        ensure!(m.rle.validate().is_ok(), "invalid RLE in frame {}", m.frame);
        let bits = m.rle.decode().map_err(|e| e.to_string())?;
        ensure!(bits[2 * 16 + 2] && !bits[2 * 16 + 12], "propagated mask violates prompts");
    }
    ok(seg.close_session(&s.id), "close")
}

pub fn closed_session_is_gone(seg: &dyn Segmenter) -> Outcome {
    let s = ok(seg.open_session(&[two_tone(16, 8)]), "open")?;
    ok(seg.close_session(&s.id), "close")?;
    let r = seg.add_prompt(&s.id, 0, 1, &[p(1, 1, true)]);
    ensure!(matches!(r, Err(Error::Protocol(_))), "prompt on closed session: {r:?}");
    Ok(())
}

type Case = (&'static str, fn(&dyn Segmenter) -> Outcome);

pub const CASES: &[Case] = &[
    ("opens_with_frame_count", opens_with_frame_count),
    ("rejects_empty_session", rejects_empty_session),
    ("rejects_mixed_dimensions", rejects_mixed_dimensions),
    ("concurrent_sessions_are_distinct", concurrent_sessions_are_distinct),
    ("mask_honors_polarity", mask_honors_polarity),
    ("rejects_out_of_raster_points", rejects_out_of_raster_points),
    ("propagate_covers_prompted_frames", propagate_covers_prompted_frames),
    ("closed_session_is_gone", closed_session_is_gone),
];

pub fn run_all(seg: &dyn Segmenter) -> Vec<(&'static str, Outcome)> {
    CASES.iter().map(|(name, case)| (*name, case(seg))).collect()
}
