//! Blocking client for a segmenter reached over the HTTP/JSON protocol.

use std::io::Cursor;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{ImageFormat, RgbImage};
use preseg::prompting::PixelPrompt;
use preseg::segmenter::wire::{ErrorResponse, OpenSessionRequest, OpenSessionResponse, PromptRequest, PromptResponse, PropagateResponse};
use preseg::segmenter::{check_frames, SegMask, Segmenter, SessionHandle};
use preseg::{Error, Result};
use reqwest::blocking::{Client, Response};
use serde::de::DeserializeOwned;

pub const URL_ENV: &str = "PRESEG_SEGMENTER_URL";

pub struct RemoteSegmenter {
    base: String,
    client: Client,
}

pub fn encode_png(img: &RgbImage) -> Result<String> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| Error::Protocol(format!("png encode: {e}")))?;
    Ok(STANDARD.encode(buf.into_inner()))
}

pub fn decode_png(b64: &str) -> Result<RgbImage> {
    let bytes = STANDARD
        .decode(b64)
        .map_err(|e| Error::Protocol(format!("frame is not base64: {e}")))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| Error::Protocol(format!("frame is not a png: {e}")))?;
    Ok(img.to_rgb8())
}

fn transport(e: reqwest::Error) -> Error {
    Error::Protocol(format!("segmenter unreachable: {e}"))
}

impl RemoteSegmenter {
    pub fn new(base: &str) -> Result<Self> {
        let client = Client::builder()
            .timeout(Duration::from_secs(600))
            .build()
            .map_err(transport)?;
        Ok(Self {
            base: base.trim_end_matches('/').to_string(),
            client,
        })
    }

    /// `PRESEG_SEGMENTER_URL` if set, else `configured`.
    pub fn from_env_or(configured: Option<&str>) -> Result<Self> {
        match std::env::var(URL_ENV).ok().filter(|s| !s.is_empty()) {
            Some(url) => Self::new(&url),
            None => match configured {
                Some(url) => Self::new(url),
                None => Err(Error::Config(format!("remote segmenter needs a url or {URL_ENV}"))),
            },
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn read<R: DeserializeOwned>(resp: Response) -> Result<R> {
        let status = resp.status();
        let body = resp.bytes().map_err(transport)?;
        if status.is_success() {
            return serde_json::from_slice(&body).map_err(|e| Error::Protocol(format!("bad response body: {e}")));
        }
        match serde_json::from_slice::<ErrorResponse>(&body) {
            Ok(e) => Err(e.into_error()),
            Err(_) => Err(Error::Protocol(format!("segmenter returned {status}"))),
        }
    }
}

impl Segmenter for RemoteSegmenter {
    fn open_session(&self, frames: &[RgbImage]) -> Result<SessionHandle> {
        let (width, height) = check_frames(frames)?;
        let req = OpenSessionRequest {
            frames: frames.iter().map(encode_png).collect::<Result<_>>()?,
        };
        let resp = self.client.post(self.url("/session")).json(&req).send().map_err(transport)?;
        let r: OpenSessionResponse = Self::read(resp)?;
        Ok(SessionHandle {
            id: r.session_id,
            frame_count: frames.len(),
            width,
            height,
        })
    }

    fn add_prompt(&self, session: &str, frame: usize, object_id: u32, points: &[PixelPrompt]) -> Result<SegMask> {
        let req = PromptRequest {
            frame,
            object_id,
            points: points.to_vec(),
        };
        let resp = self
            .client
            .post(self.url(&format!("/session/{session}/prompts")))
            .json(&req)
            .send()
            .map_err(transport)?;
        let r: PromptResponse = Self::read(resp)?;
        r.mask.validate()?;
        Ok(SegMask {
            frame,
            object_id,
            rle: r.mask,
        })
    }

    fn propagate(&self, session: &str) -> Result<Vec<SegMask>> {
        let resp = self
            .client
            .post(self.url(&format!("/session/{session}/propagate")))
            .send()
            .map_err(transport)?;
        let r: PropagateResponse = Self::read(resp)?;
        for m in &r.masks {
            m.rle.validate()?;
        }
        Ok(r.masks)
    }

    fn close_session(&self, session: &str) -> Result<()> {
        let resp = self
            .client
            .delete(self.url(&format!("/session/{session}")))
            .send()
            .map_err(transport)?;
        if resp.status().is_success() {
            return Ok(());
        }
        Self::read::<serde_json::Value>(resp).map(|_| ())
    }
}
