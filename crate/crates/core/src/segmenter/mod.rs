//! Promptable video segmenter interface, its wire types, a flood-fill mock,
//! and a contract suite every implementation must pass.

pub mod contract;
pub mod mock;
pub mod rle;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::prompting::PixelPrompt;
use crate::{Error, Result};

pub use mock::MockSegmenter;
pub use rle::Rle;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegMask {
    pub frame: usize,
    pub object_id: u32,
    pub rle: Rle,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionHandle {
    pub id: String,
    pub frame_count: usize,
    pub width: u32,
    pub height: u32,
}

/// Sessions are independent; calls on one session are serialized by the
/// implementation, calls on different sessions may run concurrently.
pub trait Segmenter: Send + Sync {
    fn open_session(&self, frames: &[RgbImage]) -> Result<SessionHandle>;
    /// Mask for `frame` containing every positive and no negative point.
    fn add_prompt(&self, session: &str, frame: usize, object_id: u32, points: &[PixelPrompt]) -> Result<SegMask>;
    /// Masks for every `(frame, object)` the session can resolve.
    fn propagate(&self, session: &str) -> Result<Vec<SegMask>>;
    fn close_session(&self, session: &str) -> Result<()>;
}

/// Non-empty, uniformly sized frames; returns `(width, height)`.
pub fn check_frames(frames: &[RgbImage]) -> Result<(u32, u32)> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Protocol("session needs at least one frame".into()))?;
    let dims = first.dimensions();
    if dims.0 == 0 || dims.1 == 0 {
        return Err(Error::Protocol("frames must be non-empty".into()));
    }
    if frames.iter().any(|f| f.dimensions() != dims) {
        return Err(Error::Protocol("frames have mixed dimensions".into()));
    }
    Ok(dims)
}

pub fn check_prompt(points: &[PixelPrompt], width: u32, height: u32) -> Result<()> {
    if !points.iter().any(|p| p.positive) {
        return Err(Error::Protocol("prompt needs at least one positive point".into()));
    }
    if let Some(p) = points.iter().find(|p| p.x >= width || p.y >= height) {
        return Err(Error::Protocol(format!(
            "point ({}, {}) outside {width}×{height} raster",
            p.x, p.y
        )));
    }
    Ok(())
}

/// JSON bodies of the HTTP protocol.
pub mod wire {
    use super::*;

    #[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct OpenSessionRequest {
        /// PNG files, base64 (standard alphabet, padded).
        pub frames: Vec<String>,
    }

    #[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
    pub struct OpenSessionResponse {
        pub session_id: String,
    }

    #[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct PromptRequest {
        pub frame: usize,
        pub object_id: u32,
        pub points: Vec<PixelPrompt>,
    }

    #[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
    pub struct PromptResponse {
        pub mask: Rle,
    }

    #[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
    pub struct PropagateResponse {
        pub masks: Vec<SegMask>,
    }

    #[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
    pub struct ErrorResponse {
        /// `protocol` or `prompt_infeasible`.
        pub kind: String,
        pub error: String,
    }

    impl ErrorResponse {
        pub fn from_error(e: &Error) -> Self {
            let kind = match e {
                Error::PromptInfeasible(_) => "prompt_infeasible",
                _ => "protocol",
            };
            Self {
                kind: kind.into(),
                error: e.to_string(),
            }
        }

        pub fn into_error(self) -> Error {
            match self.kind.as_str() {
                "prompt_infeasible" => Error::PromptInfeasible(self.error),
                _ => Error::Protocol(self.error),
            }
        }
    }
}
