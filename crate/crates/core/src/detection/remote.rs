//! HTTP client for the inference service.
//!
//! Endpoints: `POST /v1/detect`, `POST /v1/segment`, `GET /v1/health`.
//! Frames travel as base64 PNG. Transport failures are retried once.

use std::io::Cursor;
use std::time::Duration;

use base64::{engine::general_purpose::STANDARD as B64, Engine as _};
use image::{ImageFormat, RgbImage};
use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{Backend, Candidates, ClientError, Detection, DetectionParams, FrameRef, InFlight, MaskRle, Source};
use crate::geometry::BBox;

pub const DEFAULT_REQUEST_TIMEOUT_MS: u64 = 30_000;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 2;

#[derive(Serialize)]
struct DetectRequest<'a> {
    image_png_b64: String,
    prompt: &'a str,
    box_threshold: f64,
    text_threshold: f64,
}

#[derive(Deserialize)]
struct DetectResponse {
    detections: Vec<Detection>,
}

#[derive(Serialize)]
struct SegmentRequest {
    image_png_b64: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

#[derive(Deserialize)]
struct SegmentResponse {
    mask: MaskRle,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct HealthStatus {
    pub status: String,
    pub detector: String,
    pub segmenter: String,
}

pub struct RemoteBackend {
    base: String,
    client: Client,
    in_flight: InFlight,
}

fn encode_png(image: &RgbImage) -> Result<String, ClientError> {
    let mut buf = Cursor::new(Vec::new());
    image
        .write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| ClientError::InvalidRequest(format!("cannot encode frame: {e}")))?;
    Ok(B64.encode(buf.into_inner()))
}

impl RemoteBackend {
    pub fn new(endpoint_url: &str, request_timeout_ms: u64, max_in_flight: usize) -> Result<Self, ClientError> {
        let client = Client::builder()
            .timeout(Duration::from_millis(request_timeout_ms))
            .build()
            .map_err(|e| ClientError::BackendUnavailable(format!("cannot build HTTP client: {e}")))?;
        Ok(RemoteBackend {
            base: endpoint_url.trim_end_matches('/').to_string(),
            client,
            in_flight: InFlight::new(max_in_flight),
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    /// Sends once, and once more if the first attempt fails in transport
    /// or the service is still loading.
    fn send<F>(&self, build: F) -> Result<Response, ClientError>
    where
        F: Fn() -> reqwest::blocking::RequestBuilder,
    {
        let _permit = self.in_flight.acquire();
        let mut last = String::new();
        for attempt in 0..2 {
            match build().send() {
                Ok(resp) if resp.status() == StatusCode::SERVICE_UNAVAILABLE => {
                    last = "service is loading (503)".into();
                }
                Ok(resp) if resp.status().is_server_error() => {
                    last = format!("server error {}", resp.status());
                }
                Ok(resp) => return Ok(resp),
                Err(e) => {
                    last = e.to_string();
                }
            }
            log::warn!("request attempt {} failed: {last}", attempt + 1);
        }
        Err(ClientError::BackendUnavailable(last))
    }

    fn decode<T: for<'de> Deserialize<'de>>(resp: Response) -> Result<T, ClientError> {
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(ClientError::BackendError(format!("HTTP {status}: {body}")));
        }
        let bytes = resp
            .bytes()
            .map_err(|e| ClientError::BackendUnavailable(format!("reading response: {e}")))?;
        serde_json::from_slice(&bytes).map_err(|e| ClientError::BackendError(format!("bad response body: {e}")))
    }

    pub fn health(&self) -> Result<HealthStatus, ClientError> {
        let resp = self.send(|| self.client.get(self.url("/v1/health")))?;
        Self::decode(resp)
    }
}

impl Backend for RemoteBackend {
    fn detect_candidates(
        &self,
        frame: FrameRef<'_>,
        prompt: &str,
        params: &DetectionParams,
    ) -> Result<Candidates, ClientError> {
        let body = DetectRequest {
            image_png_b64: encode_png(frame.image)?,
            prompt,
            box_threshold: params.box_threshold,
            text_threshold: params.text_threshold,
        };
        let resp = self.send(|| self.client.post(self.url("/v1/detect")).json(&body))?;
        let parsed: DetectResponse = Self::decode(resp)?;
        Ok(Candidates {
            detections: parsed.detections,
            source: Source::Live,
        })
    }

    fn segment_box(&self, frame: FrameRef<'_>, bbox: &BBox) -> Result<MaskRle, ClientError> {
        let body = SegmentRequest {
            image_png_b64: encode_png(frame.image)?,
            bbox: bbox.to_array(),
        };
        let resp = self.send(|| self.client.post(self.url("/v1/segment")).json(&body))?;
        let parsed: SegmentResponse = Self::decode(resp)?;
        Ok(parsed.mask)
    }
}
