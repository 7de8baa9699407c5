//! Deterministic flood-fill stand-in for a promptable video segmenter.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use image::RgbImage;

use crate::prompting::PixelPrompt;
use crate::segmenter::{check_frames, check_prompt, Rle, SegMask, Segmenter, SessionHandle};
use crate::{Error, Result};

pub const DEFAULT_TAU: f64 = 0.10;
pub const MAX_HALVINGS: usize = 4;

struct Session {
    frames: Vec<RgbImage>,
    masks: BTreeMap<(usize, u32), Rle>,
}

/// Flood fill over 4-connected pixels whose RGB (scaled to `[0, 1]`) lies
/// within `tau` of the seed pixel's color. If a negative is absorbed the
/// tolerance halves, at most [`MAX_HALVINGS`] times.
pub struct MockSegmenter {
    tau: f64,
    next: AtomicU64,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
}

impl Default for MockSegmenter {
    fn default() -> Self {
        Self::new(DEFAULT_TAU)
    }
}

fn color(img: &RgbImage, x: u32, y: u32) -> [f64; 3] {
    img.get_pixel(x, y).0.map(|c| c as f64 / 255.0)
}

fn within(a: [f64; 3], b: [f64; 3], tau: f64) -> bool {
    let d2: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    d2 <= tau * tau
}

/// Pixels 4-connected to `(x, y)` within `tau` of its color.
pub fn flood_fill(img: &RgbImage, x: u32, y: u32, tau: f64, mask: &mut [bool]) {
    let (w, h) = img.dimensions();
    let seed = color(img, x, y);
    let mut queue = VecDeque::from([(x, y)]);
    mask[(y * w + x) as usize] = true;
    while let Some((cx, cy)) = queue.pop_front() {
        let mut visit = |nx: u32, ny: u32| {
            let i = (ny * w + nx) as usize;
            if !mask[i] && within(color(img, nx, ny), seed, tau) {
                mask[i] = true;
                queue.push_back((nx, ny));
            }
        };
        if cx > 0 {
            visit(cx - 1, cy);
        }
        if cx + 1 < w {
            visit(cx + 1, cy);
        }
        if cy > 0 {
            visit(cx, cy - 1);
        }
        if cy + 1 < h {
            visit(cx, cy + 1);
        }
    }
}

/// Union of the fills from every positive, shrinking `tau` until no negative
/// is covered.
pub fn prompt_mask(img: &RgbImage, points: &[PixelPrompt], tau: f64) -> Result<Vec<bool>> {
    let (w, h) = img.dimensions();
    let mut tau = tau;
    for attempt in 0..=MAX_HALVINGS {
        let mut mask = vec![false; (w * h) as usize];
        for p in points.iter().filter(|p| p.positive) {
            flood_fill(img, p.x, p.y, tau, &mut mask);
        }
        if !points.iter().any(|p| !p.positive && mask[(p.y * w + p.x) as usize]) {
            return Ok(mask);
        }
        if attempt < MAX_HALVINGS {
            tau /= 2.0;
        }
    }
    Err(Error::PromptInfeasible(format!(
        "negative prompt still covered at tolerance {tau}"
    )))
}

impl MockSegmenter {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            next: AtomicU64::new(1),
            sessions: RwLock::new(HashMap::new()),
        }
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| Error::Protocol(format!("unknown session {id}")))
    }

    pub fn open_count(&self) -> usize {
        self.sessions.read().expect("session table poisoned").len()
    }
}

impl Segmenter for MockSegmenter {
    fn open_session(&self, frames: &[RgbImage]) -> Result<SessionHandle> {
        let (width, height) = check_frames(frames)?;
        let id = format!("mock-{}", self.next.fetch_add(1, Ordering::Relaxed));
        let session = Session {
            frames: frames.to_vec(),
            masks: BTreeMap::new(),
        };
        self.sessions
            .write()
            .expect("session table poisoned")
            .insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(SessionHandle {
            id,
            frame_count: frames.len(),
            width,
            height,
        })
    }

    fn add_prompt(&self, session: &str, frame: usize, object_id: u32, points: &[PixelPrompt]) -> Result<SegMask> {
        let s = self.session(session)?;
        let mut s = s.lock().expect("session poisoned");
        let img = s
            .frames
            .get(frame)
            .ok_or_else(|| Error::Protocol(format!("frame {frame} out of range")))?;
        let (w, h) = img.dimensions();
        check_prompt(points, w, h)?;
        let bits = prompt_mask(img, points, self.tau)?;
        let rle = Rle::encode(&bits, w, h)?;
        s.masks.insert((frame, object_id), rle.clone());
        Ok(SegMask { frame, object_id, rle })
    }

    fn propagate(&self, session: &str) -> Result<Vec<SegMask>> {
        let s = self.session(session)?;
        let s = s.lock().expect("session poisoned");
        if s.masks.is_empty() {
            return Err(Error::Protocol("propagate before any prompt".into()));
        }
        Ok(s
            .masks
            .iter()
            .map(|(&(frame, object_id), rle)| SegMask {
                frame,
                object_id,
                rle: rle.clone(),
            })
            .collect())
    }

    fn close_session(&self, session: &str) -> Result<()> {
        self.sessions
            .write()
            .expect("session table poisoned")
            .remove(session)
            .map(|_| ())
            .ok_or_else(|| Error::Protocol(format!("unknown session {session}")))
    }
}
