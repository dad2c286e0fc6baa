//! Deterministic backends that replay a sidecar file.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use super::{Backend, Candidates, ClientError, DetectionParams, FrameRef, MaskRle, Source};
use crate::geometry::BBox;
use crate::pipeline::sidecar::{load_sidecar, SidecarError, SidecarFile, SidecarRecord};

/// Read-only replay of recorded results, keyed by `(frame_index, prompt)`.
#[derive(Debug, Clone, Default)]
pub struct FixtureBackend {
    records: Vec<SidecarRecord>,
    by_key: HashMap<(u64, String), usize>,
}

impl FixtureBackend {
    /// First record wins when a key repeats (several cues sharing a prompt).
    pub fn from_records(records: Vec<SidecarRecord>) -> Self {
        let mut by_key = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            by_key.entry((r.frame_index, r.prompt.clone())).or_insert(i);
        }
        FixtureBackend { records, by_key }
    }

    pub fn from_sidecar(file: SidecarFile) -> Self {
        Self::from_records(file.records)
    }

    pub fn lookup(&self, frame_index: u64, prompt: &str) -> Option<&SidecarRecord> {
        self.by_key
            .get(&(frame_index, prompt.to_string()))
            .map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[SidecarRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn replay_candidates(record: &SidecarRecord) -> Vec<super::Detection> {
        if record.candidates.is_empty() {
            record.detection.iter().cloned().collect()
        } else {
            record.candidates.clone()
        }
    }

    fn mask_for(&self, frame_index: u64, bbox: &BBox) -> Option<Result<MaskRle, ClientError>> {
        let record = self
            .records
            .iter()
            .find(|r| r.frame_index == frame_index && r.detection.as_ref().is_some_and(|d| d.bbox == *bbox))?;
        Some(match (&record.mask, record.source) {
            // Replays the original failure so the caller takes the same fallback.
            (_, Source::FallbackBox) | (None, _) => Err(ClientError::EmptySegmentation),
            (Some(mask), _) => Ok(mask.clone()),
        })
    }
}

impl Backend for FixtureBackend {
    fn detect_candidates(
        &self,
        frame: FrameRef<'_>,
        prompt: &str,
        _params: &DetectionParams,
    ) -> Result<Candidates, ClientError> {
        let detections = match self.lookup(frame.index, prompt) {
            Some(r) => Self::replay_candidates(r),
            None => {
                log::warn!("fixture has no entry for frame {} prompt {prompt:?}", frame.index);
                Vec::new()
            }
        };
        Ok(Candidates {
            detections,
            source: Source::Fixture,
        })
    }

    fn segment_box(&self, frame: FrameRef<'_>, bbox: &BBox) -> Result<MaskRle, ClientError> {
        self.mask_for(frame.index, bbox).unwrap_or_else(|| {
            log::warn!(
                "fixture has no mask for frame {} box {:?}",
                frame.index,
                bbox.to_array()
            );
            Err(ClientError::EmptySegmentation)
        })
    }
}

pub fn load_fixture(path: &Path) -> Result<FixtureBackend, ClientError> {
    load_sidecar(path)
        .map(FixtureBackend::from_sidecar)
        .map_err(|e| match e {
            SidecarError::Io { .. } | SidecarError::Malformed { .. } => ClientError::MalformedFixture(e.to_string()),
        })
}

/// Serves keys present in a previous run's sidecar and forwards everything
/// else to `fallback`. With no fallback, missing keys are misses.
pub struct ReplayBackend {
    recorded: FixtureBackend,
    fallback: Option<Arc<dyn Backend>>,
}

impl ReplayBackend {
    pub fn new(recorded: FixtureBackend, fallback: Option<Arc<dyn Backend>>) -> Self {
        ReplayBackend { recorded, fallback }
    }
}

impl Backend for ReplayBackend {
    fn detect_candidates(
        &self,
        frame: FrameRef<'_>,
        prompt: &str,
        params: &DetectionParams,
    ) -> Result<Candidates, ClientError> {
        match (self.recorded.lookup(frame.index, prompt), &self.fallback) {
            (Some(r), _) => Ok(Candidates {
                detections: FixtureBackend::replay_candidates(r),
                source: if r.source == Source::Live {
                    Source::Live
                } else {
                    Source::Fixture
                },
            }),
            (None, Some(live)) => live.detect_candidates(frame, prompt, params),
            (None, None) => self.recorded.detect_candidates(frame, prompt, params),
        }
    }

    fn segment_box(&self, frame: FrameRef<'_>, bbox: &BBox) -> Result<MaskRle, ClientError> {
        match (self.recorded.mask_for(frame.index, bbox), &self.fallback) {
            (Some(result), _) => result,
            (None, Some(live)) => live.segment_box(frame, bbox),
            (None, None) => self.recorded.segment_box(frame, bbox),
        }
    }
}
