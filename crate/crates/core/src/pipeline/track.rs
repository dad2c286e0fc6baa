//! Per-cue target tracking across keyframes.
//!
//! Between keyframes the last accepted mask is held, translated by the gap
//! between the exponentially smoothed box centre and the centre of the box
//! the mask was taken from.

use crate::detection::{
    detect, rle_decode, rle_encode, segment, Backend, ClientError, Detection, DetectionParams, FrameRef, MaskRle,
    Source,
};
use crate::geometry::Mask;
use crate::pipeline::sidecar::SidecarRecord;
use crate::script::Cue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegionStatus {
    Active,
    Held,
    Lost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionState {
    pub cue_id: String,
    pub status: RegionStatus,
    /// Latest accepted detection.
    pub detection: Option<Detection>,
    /// Latest non-empty mask (possibly the filled detection box).
    pub mask: Option<MaskRle>,
    /// Centre of the box `mask` was captured with.
    pub mask_center: Option<(f64, f64)>,
    pub smoothed_center: Option<(f64, f64)>,
    /// Keyframes since the last successful detection.
    pub held_keyframes: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackConfig {
    pub params: DetectionParams,
    pub grace_keyframes: u32,
    pub ema_alpha: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        TrackConfig {
            params: DetectionParams::default(),
            grace_keyframes: 2,
            ema_alpha: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeStep {
    pub state: RegionState,
    /// `None` when the backend could not be reached; outages are not cached.
    pub record: Option<SidecarRecord>,
    pub unavailable: bool,
}

fn missed(prev: Option<&RegionState>, cue: &Cue, grace: u32) -> RegionState {
    let held_keyframes = prev.map_or(0, |p| p.held_keyframes).saturating_add(1);
    let status = if held_keyframes <= grace {
        RegionStatus::Held
    } else {
        RegionStatus::Lost
    };
    match prev {
        Some(p) => RegionState {
            status,
            held_keyframes,
            ..p.clone()
        },
        None => RegionState {
            cue_id: cue.id.clone(),
            status,
            detection: None,
            mask: None,
            mask_center: None,
            smoothed_center: None,
            held_keyframes,
        },
    }
}

/// Queries the backend at one keyframe and advances the cue's state.
///
/// Misses (no detection, or an unreachable backend) hold the previous mask
/// for up to `grace_keyframes` keyframes, after which the target is lost.
/// An empty segmentation falls back to the filled detection box. Only
/// protocol-level failures are returned as errors.
pub fn step_keyframe(
    prev: Option<&RegionState>,
    frame: FrameRef<'_>,
    cue: &Cue,
    backend: &dyn Backend,
    config: &TrackConfig,
) -> Result<KeyframeStep, ClientError> {
    let unavailable = |prev| {
        log::warn!("cue {} frame {}: backend unavailable, holding", cue.id, frame.index);
        Ok(KeyframeStep {
            state: missed(prev, cue, config.grace_keyframes),
            record: None,
            unavailable: true,
        })
    };

    let outcome = match detect(frame, &cue.prompt, &config.params, backend) {
        Ok(o) => o,
        Err(ClientError::BackendUnavailable(_)) => return unavailable(prev),
        Err(e) => return Err(e),
    };
    let mut record = SidecarRecord {
        frame_index: frame.index,
        cue_id: Some(cue.id.clone()),
        prompt: cue.prompt.clone(),
        params: config.params,
        detection: None,
        mask: None,
        source: outcome.source,
        candidates: Vec::new(),
    };
    if outcome.candidates.as_slice() != outcome.best.as_slice() {
        record.candidates = outcome.candidates.clone();
    }

    let Some(det) = outcome.best else {
        return Ok(KeyframeStep {
            state: missed(prev, cue, config.grace_keyframes),
            record: Some(record),
            unavailable: false,
        });
    };

    let (mask, source) = match segment(frame, &det.bbox, backend) {
        Ok(m) => (m, outcome.source),
        Err(ClientError::EmptySegmentation) => {
            let (w, h) = frame.image.dimensions();
            let filled = Mask::from_bbox(w as usize, h as usize, &det.bbox);
            (rle_encode(&filled), Source::FallbackBox)
        }
        Err(ClientError::BackendUnavailable(_)) => return unavailable(prev),
        Err(e) => return Err(e),
    };

    let center = det.bbox.center();
    let smoothed = match prev.and_then(|p| p.smoothed_center.filter(|_| p.status != RegionStatus::Lost)) {
        Some((ox, oy)) => {
            let a = config.ema_alpha;
            (a * center.0 + (1.0 - a) * ox, a * center.1 + (1.0 - a) * oy)
        }
        None => center,
    };
    record.detection = Some(det.clone());
    record.mask = Some(mask.clone());
    record.source = source;
    Ok(KeyframeStep {
        state: RegionState {
            cue_id: cue.id.clone(),
            status: RegionStatus::Active,
            detection: Some(det),
            mask: Some(mask),
            mask_center: Some(center),
            smoothed_center: Some(smoothed),
            held_keyframes: 0,
        },
        record: Some(record),
        unavailable: false,
    })
}

/// Integer translation applied to the held mask.
pub fn mask_shift(state: &RegionState) -> (i64, i64) {
    match (state.smoothed_center, state.mask_center) {
        (Some((sx, sy)), Some((mx, my))) => ((sx - mx).round() as i64, (sy - my).round() as i64),
        _ => (0, 0),
    }
}

/// A frame's target mask and the smoothed box centre it was moved to.
pub type Region = (Mask, (f64, f64));

/// The held mask translated to the smoothed centre, with horizontal wrap.
/// `None` once the target is lost or before any mask was captured.
pub fn region_for_frame(state: &RegionState) -> Result<Option<Region>, ClientError> {
    if state.status == RegionStatus::Lost {
        return Ok(None);
    }
    let (Some(rle), Some(center)) = (&state.mask, state.smoothed_center) else {
        return Ok(None);
    };
    let mask = rle_decode(rle)?;
    let (dx, dy) = mask_shift(state);
    let mask = if (dx, dy) == (0, 0) {
        mask
    } else {
        mask.shifted(dx, dy, false)
    };
    Ok(Some((mask, center)))
}
