//! Client side of the detect/segment backend.
//!
//! A [`Backend`] is either the remote inference service or a fixture that
//! replays a recorded sidecar. Both return every candidate box; the
//! highest-confidence selection rule lives here in [`detect`] so that it is
//! applied identically to live and replayed responses.

mod fixture;
mod remote;
mod rle;

use std::sync::{Condvar, Mutex};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;

pub use fixture::{load_fixture, FixtureBackend, ReplayBackend};
pub use remote::{HealthStatus, RemoteBackend};
pub use rle::{rle_decode, rle_encode, MaskRle};

pub const DEFAULT_BOX_THRESHOLD: f64 = 0.3;
pub const DEFAULT_TEXT_THRESHOLD: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("backend protocol error: {0}")]
    BackendError(String),
    #[error("segmentation returned an empty mask")]
    EmptySegmentation,
    #[error("malformed RLE mask: {0}")]
    MalformedRle(String),
    #[error("malformed fixture: {0}")]
    MalformedFixture(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionParams {
    pub box_threshold: f64,
    pub text_threshold: f64,
}

impl Default for DetectionParams {
    fn default() -> Self {
        DetectionParams {
            box_threshold: DEFAULT_BOX_THRESHOLD,
            text_threshold: DEFAULT_TEXT_THRESHOLD,
        }
    }
}

impl DetectionParams {
    pub fn validate(&self) -> Result<(), ClientError> {
        for (name, v) in [
            ("box_threshold", self.box_threshold),
            ("text_threshold", self.text_threshold),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(ClientError::InvalidRequest(format!("{name} {v} is outside (0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
    pub phrase: String,
}

/// Where a keyframe result came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Live,
    FallbackBox,
    Fixture,
}

/// A frame handed to the backend. Fixture backends key on `index`; the
/// remote backend ships `image`.
#[derive(Debug, Clone, Copy)]
pub struct FrameRef<'a> {
    pub index: u64,
    pub image: &'a RgbImage,
}

/// Everything a backend returned for one detect request.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidates {
    pub detections: Vec<Detection>,
    pub source: Source,
}

pub trait Backend: Send + Sync {
    /// All detections the backend reports for `prompt`, unfiltered.
    fn detect_candidates(
        &self,
        frame: FrameRef<'_>,
        prompt: &str,
        params: &DetectionParams,
    ) -> Result<Candidates, ClientError>;

    /// Mask for a box prompt. May be empty.
    fn segment_box(&self, frame: FrameRef<'_>, bbox: &BBox) -> Result<MaskRle, ClientError>;
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn detect_candidates(
        &self,
        frame: FrameRef<'_>,
        prompt: &str,
        params: &DetectionParams,
    ) -> Result<Candidates, ClientError> {
        (**self).detect_candidates(frame, prompt, params)
    }

    fn segment_box(&self, frame: FrameRef<'_>, bbox: &BBox) -> Result<MaskRle, ClientError> {
        (**self).segment_box(frame, bbox)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectOutcome {
    /// The selected detection, or `None` when nothing clears the box threshold.
    pub best: Option<Detection>,
    pub candidates: Vec<Detection>,
    pub source: Source,
}

/// Index of the detection to keep: highest score at or above `box_threshold`,
/// then smaller area, then earliest in the list.
pub fn select_best(detections: &[Detection], box_threshold: f64) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, d) in detections.iter().enumerate() {
        if d.score.is_nan() || d.score < box_threshold {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(j) => {
                let cur = &detections[j];
                let better = d.score > cur.score || (d.score == cur.score && d.bbox.area() < cur.bbox.area());
                Some(if better { i } else { j })
            }
        };
    }
    best
}

fn check_frame(frame: FrameRef<'_>) -> Result<(), ClientError> {
    if frame.image.width() == 0 || frame.image.height() == 0 {
        return Err(ClientError::InvalidRequest("frame is empty".into()));
    }
    Ok(())
}

/// Clamps a reported box to the frame; `None` if nothing of it remains.
fn clamp_to_frame(bbox: BBox, width: u32, height: u32) -> Option<BBox> {
    let b = BBox::new(
        bbox.x0.clamp(0.0, width as f64),
        bbox.y0.clamp(0.0, height as f64),
        bbox.x1.clamp(0.0, width as f64),
        bbox.y1.clamp(0.0, height as f64),
    );
    b.fits(width as usize, height as usize).then_some(b)
}

/// Runs detection and keeps the single highest-confidence box.
pub fn detect(
    frame: FrameRef<'_>,
    prompt: &str,
    params: &DetectionParams,
    backend: &dyn Backend,
) -> Result<DetectOutcome, ClientError> {
    check_frame(frame)?;
    if prompt.trim().is_empty() {
        return Err(ClientError::InvalidRequest("prompt is empty".into()));
    }
    params.validate()?;
    let Candidates { detections, source } = backend.detect_candidates(frame, prompt, params)?;
    for d in &detections {
        if !d.score.is_finite() || d.bbox.to_array().iter().any(|v| !v.is_finite()) {
            return Err(ClientError::BackendError(format!("non-finite detection {d:?}")));
        }
    }
    let (w, h) = frame.image.dimensions();
    let usable: Vec<Detection> = detections
        .iter()
        .filter_map(|d| match clamp_to_frame(d.bbox, w, h) {
            Some(bbox) => Some(Detection { bbox, ..d.clone() }),
            None => {
                log::warn!("dropping detection with no area inside the frame: {:?}", d.bbox);
                None
            }
        })
        .collect();
    let best = select_best(&usable, params.box_threshold).map(|i| usable[i].clone());
    Ok(DetectOutcome {
        best,
        candidates: detections,
        source,
    })
}

/// Box-prompted segmentation. An all-zero mask is reported as
/// [`ClientError::EmptySegmentation`].
pub fn segment(frame: FrameRef<'_>, bbox: &BBox, backend: &dyn Backend) -> Result<MaskRle, ClientError> {
    check_frame(frame)?;
    let (w, h) = frame.image.dimensions();
    if !bbox.fits(w as usize, h as usize) {
        return Err(ClientError::InvalidRequest(format!(
            "box {:?} is not inside the {w}x{h} frame",
            bbox.to_array()
        )));
    }
    let mask = backend.segment_box(frame, bbox)?;
    mask.validate().map_err(|e| ClientError::BackendError(e.to_string()))?;
    if (mask.width, mask.height) != (w as usize, h as usize) {
        return Err(ClientError::BackendError(format!(
            "mask is {}x{}, frame is {w}x{h}",
            mask.width, mask.height
        )));
    }
    if mask.is_empty() {
        return Err(ClientError::EmptySegmentation);
    }
    Ok(mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    Fixture,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "remote" => Ok(BackendKind::Remote),
            "fixture" => Ok(BackendKind::Fixture),
            other => Err(format!("unknown backend {other:?} (expected remote or fixture)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint_url: Option<String>,
    pub fixture_path: Option<std::path::PathBuf>,
    pub request_timeout_ms: u64,
    pub max_in_flight: usize,
}

impl BackendConfig {
    pub fn remote(endpoint_url: impl Into<String>) -> Self {
        BackendConfig {
            kind: BackendKind::Remote,
            endpoint_url: Some(endpoint_url.into()),
            fixture_path: None,
            request_timeout_ms: remote::DEFAULT_REQUEST_TIMEOUT_MS,
            max_in_flight: remote::DEFAULT_MAX_IN_FLIGHT,
        }
    }

    pub fn fixture(path: impl Into<std::path::PathBuf>) -> Self {
        BackendConfig {
            kind: BackendKind::Fixture,
            endpoint_url: None,
            fixture_path: Some(path.into()),
            request_timeout_ms: remote::DEFAULT_REQUEST_TIMEOUT_MS,
            max_in_flight: remote::DEFAULT_MAX_IN_FLIGHT,
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        let bad = |m: &str| Err(ClientError::InvalidRequest(m.to_string()));
        match self.kind {
            BackendKind::Remote if self.endpoint_url.is_none() => bad("remote backend needs an endpoint URL"),
            BackendKind::Remote if self.fixture_path.is_some() => bad("remote backend does not take a fixture path"),
            BackendKind::Fixture if self.fixture_path.is_none() => bad("fixture backend needs a fixture path"),
            BackendKind::Fixture if self.endpoint_url.is_some() => bad("fixture backend does not take an endpoint URL"),
            _ if self.max_in_flight == 0 => bad("max_in_flight must be at least 1"),
            _ => Ok(()),
        }
    }

    pub fn connect(&self) -> Result<std::sync::Arc<dyn Backend>, ClientError> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::Remote => std::sync::Arc::new(RemoteBackend::new(
                self.endpoint_url.as_deref().unwrap_or_default(),
                self.request_timeout_ms,
                self.max_in_flight,
            )?),
            BackendKind::Fixture => {
                std::sync::Arc::new(load_fixture(self.fixture_path.as_deref().expect("validated"))?)
            }
        })
    }
}

/// Counting semaphore bounding concurrent requests on a shared handle.
#[derive(Debug)]
pub(crate) struct InFlight {
    limit: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

pub(crate) struct Permit<'a>(&'a InFlight);

impl InFlight {
    pub(crate) fn new(limit: usize) -> Self {
        InFlight {
            limit: limit.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub(crate) fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().unwrap_or_else(|e| e.into_inner());
        while *used >= self.limit {
            used = self.freed.wait(used).unwrap_or_else(|e| e.into_inner());
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut used = self.0.used.lock().unwrap_or_else(|e| e.into_inner());
        *used -= 1;
        self.0.freed.notify_one();
    }
}
