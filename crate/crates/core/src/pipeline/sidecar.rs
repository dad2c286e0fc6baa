//! Sidecar files: the per-run record of keyframe detections and masks.
//!
//! The same JSON schema doubles as the fixture format for replaying runs.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{Detection, DetectionParams, MaskRle, Source};

pub const SIDECAR_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SidecarError {
    #[error("cannot access sidecar {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed sidecar {path}: {reason}")]
    Malformed { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarRecord {
    pub frame_index: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cue_id: Option<String>,
    pub prompt: String,
    pub params: DetectionParams,
    pub detection: Option<Detection>,
    pub mask: Option<MaskRle>,
    pub source: Source,
    /// Full response list from the detector, when it held more than the
    /// selected detection.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<Detection>,
}

impl SidecarRecord {
    fn check(&self) -> Result<(), String> {
        if self.detection.is_none() && self.mask.is_some() {
            return Err(format!(
                "record for frame {} ({:?}) has a mask but no detection",
                self.frame_index, self.prompt
            ));
        }
        if let Some(mask) = &self.mask {
            mask.validate()
                .map_err(|e| format!("frame {}: {e}", self.frame_index))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarFile {
    pub version: u32,
    pub params: DetectionParams,
    pub records: Vec<SidecarRecord>,
}

impl SidecarFile {
    pub fn new(params: DetectionParams, records: Vec<SidecarRecord>) -> Self {
        SidecarFile {
            version: SIDECAR_VERSION,
            params,
            records,
        }
    }
}

pub fn parse_sidecar(text: &str, path: &str) -> Result<SidecarFile, SidecarError> {
    let malformed = |reason: String| SidecarError::Malformed {
        path: path.to_string(),
        reason,
    };
    let file: SidecarFile = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    if file.version != SIDECAR_VERSION {
        return Err(malformed(format!(
            "version {} is not supported (expected {SIDECAR_VERSION})",
            file.version
        )));
    }
    for r in &file.records {
        r.check().map_err(malformed)?;
    }
    Ok(file)
}

pub fn load_sidecar(path: &Path) -> Result<SidecarFile, SidecarError> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| SidecarError::Io {
        path: display.clone(),
        source,
    })?;
    parse_sidecar(&text, &display)
}

/// Writes atomically (temp file then rename) so a crash never leaves a
/// truncated sidecar behind.
pub fn write_sidecar(file: &SidecarFile, path: &Path) -> Result<(), SidecarError> {
    let io = |source| SidecarError::Io {
        path: path.display().to_string(),
        source,
    };
    let json = serde_json::to_vec_pretty(file).expect("sidecar serialises");
    let tmp = path.with_extension("json.partial");
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(&json).map_err(io)?;
    f.write_all(b"\n").map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io)
}
