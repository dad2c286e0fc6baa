use thiserror::Error;

use crate::script::Cue;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("cue {0} covers no whole frame")]
    EmptySpan(String),
    #[error("invalid planning parameters: {0}")]
    BadParams(String),
}

/// Inclusive range of frame indices whose timestamps fall inside the cue.
///
/// Frame `i` sits at `i * 1000 / fps` ms, so the first active frame is
/// `ceil(start * fps / 1000)` and the last `ceil(end * fps / 1000) - 1`.
pub fn cue_frame_span(cue: &Cue, fps: f64) -> Option<(u64, u64)> {
    let first = (cue.start.millis() as f64 * fps / 1000.0).ceil() as u64;
    let past = (cue.end.millis() as f64 * fps / 1000.0).ceil() as u64;
    (past > first).then(|| (first, past - 1))
}

fn check(fps: f64, interval: u64) -> Result<(), PlanError> {
    if !(fps.is_finite() && fps > 0.0) {
        return Err(PlanError::BadParams(format!("fps must be positive, got {fps}")));
    }
    if interval == 0 {
        return Err(PlanError::BadParams("keyframe interval must be at least 1".into()));
    }
    Ok(())
}

fn progression(first: u64, last: u64, interval: u64) -> Vec<u64> {
    let mut frames: Vec<u64> = (first..=last).step_by(interval as usize).collect();
    if frames.last() != Some(&last) {
        frames.push(last);
    }
    frames
}

/// Every `interval`-th frame of the cue starting at its first frame, plus
/// the last frame.
pub fn plan_keyframes(cue: &Cue, fps: f64, interval: u64) -> Result<Vec<u64>, PlanError> {
    check(fps, interval)?;
    let (first, last) = cue_frame_span(cue, fps).ok_or_else(|| PlanError::EmptySpan(cue.id.clone()))?;
    Ok(progression(first, last, interval))
}

/// The cue's frame span intersected with the frames actually present.
pub fn clipped_span(cue: &Cue, fps: f64, available: (u64, u64)) -> Option<(u64, u64)> {
    let (first, last) = cue_frame_span(cue, fps)?;
    let first = first.max(available.0);
    let last = last.min(available.1);
    (first <= last).then_some((first, last))
}

/// Like [`plan_keyframes`] over [`clipped_span`]; empty when the cue lies
/// entirely outside the available frames.
pub fn plan_keyframes_within(cue: &Cue, fps: f64, interval: u64, available: (u64, u64)) -> Result<Vec<u64>, PlanError> {
    check(fps, interval)?;
    cue_frame_span(cue, fps).ok_or_else(|| PlanError::EmptySpan(cue.id.clone()))?;
    Ok(clipped_span(cue, fps, available)
        .map(|(first, last)| progression(first, last, interval))
        .unwrap_or_default())
}
