//! Three-panel previews of a single frame: (a) the original, (b) the
//! detected box and segmentation mask, (c) the frame with the effect applied.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use thiserror::Error;

use crate::detection::{Backend, ClientError, Detection, FrameRef};
use crate::effects::{combine_cues, AttenuationField, CueLayer, EffectError};
use crate::geometry::{BBox, Mask};
use crate::pipeline::frames::{copy_atomic, load_rgb, write_png_atomic};
use crate::pipeline::{region_for_frame, step_keyframe, PipelineError, TrackConfig};
use crate::script::{Cue, EffectKind, Timecode};

pub const OUTLINE_PX: u32 = 3;
pub const OUTLINE_COLOR: Rgb<u8> = Rgb([255, 0, 0]);
pub const TINT_COLOR: Rgb<u8> = Rgb([0, 255, 0]);
pub const TINT_ALPHA: f32 = 0.4;

#[derive(Debug, Error)]
pub enum PreviewError {
    #[error("no detection for {prompt:?} in frame {frame_index}")]
    NoDetection { prompt: String, frame_index: u64 },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Effect(#[from] EffectError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreviewPaths {
    pub original: PathBuf,
    pub detected: PathBuf,
    pub effect: PathBuf,
}

impl PreviewPaths {
    pub fn for_frame(frame_path: &Path, out_dir: &Path) -> Self {
        let stem = frame_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "frame".into());
        PreviewPaths {
            original: out_dir.join(format!("{stem}.a.png")),
            detected: out_dir.join(format!("{stem}.b.png")),
            effect: out_dir.join(format!("{stem}.c.png")),
        }
    }
}

/// Mask tinted at 40% and the box outlined 3 px wide (inside its edges).
pub fn overlay_panel(frame: &RgbImage, bbox: &BBox, mask: &Mask) -> RgbImage {
    let mut out = frame.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        if mask.get(x as usize, y as usize) {
            for c in 0..3 {
                let v = px[c] as f32 * (1.0 - TINT_ALPHA) + TINT_COLOR[c] as f32 * TINT_ALPHA;
                px[c] = v.round() as u8;
            }
        }
    }
    let (x0, y0, x1, y1) = bbox.pixel_span(frame.width() as usize, frame.height() as usize);
    let (x0, y0, x1, y1) = (x0 as u32, y0 as u32, x1 as u32, y1 as u32);
    for y in y0..y1 {
        for x in x0..x1 {
            let edge = x < x0 + OUTLINE_PX || x + OUTLINE_PX >= x1 || y < y0 + OUTLINE_PX || y + OUTLINE_PX >= y1;
            if edge {
                out.put_pixel(x, y, OUTLINE_COLOR);
            }
        }
    }
    out
}

/// Effect panel at full envelope.
pub fn effect_panel(
    frame: &RgbImage,
    field: &AttenuationField,
    cue: &Cue,
    effect: EffectKind,
) -> Result<RgbImage, EffectError> {
    combine_cues(
        frame,
        &[CueLayer {
            field,
            strength: cue.strength,
            floor_luma: cue.floor_luma,
            envelope: 1.0,
            effect,
        }],
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreviewOutput {
    pub paths: PreviewPaths,
    pub detection: Detection,
}

/// Writes the (a)/(b)/(c) panels for `frame_path`.
///
/// `cue` supplies the prompt and effect parameters; its timing is ignored.
/// Panel (a) is written first and is a byte copy of the input, so it exists
/// even when nothing is detected.
pub fn preview_frame(
    frame_path: &Path,
    frame_index: u64,
    cue: &Cue,
    effect: EffectKind,
    track: &TrackConfig,
    backend: &dyn Backend,
    out_dir: &Path,
) -> Result<PreviewOutput, PreviewError> {
    std::fs::create_dir_all(out_dir).map_err(|e| PipelineError::Io(format!("{}: {e}", out_dir.display())))?;
    let paths = PreviewPaths::for_frame(frame_path, out_dir);
    let frame = load_rgb(frame_path)?;
    copy_atomic(frame_path, &paths.original)?;

    let step = step_keyframe(
        None,
        FrameRef {
            index: frame_index,
            image: &frame,
        },
        cue,
        backend,
        track,
    )?;
    if step.unavailable {
        return Err(ClientError::BackendUnavailable("backend did not answer".into()).into());
    }
    let no_detection = || PreviewError::NoDetection {
        prompt: cue.prompt.clone(),
        frame_index,
    };
    let detection = step.state.detection.clone().ok_or_else(no_detection)?;
    let (mask, _) = region_for_frame(&step.state)?.ok_or_else(no_detection)?;

    write_png_atomic(&overlay_panel(&frame, &detection.bbox, &mask), &paths.detected)?;
    let field = crate::effects::attenuation_field(&mask, cue.feather_inner_px, cue.feather_outer_px)?;
    write_png_atomic(&effect_panel(&frame, &field, cue, effect)?, &paths.effect)?;
    Ok(PreviewOutput { paths, detection })
}

/// A cue carrying `prompt` and default parameters, for previews.
pub fn preview_cue(prompt: &str) -> Cue {
    Cue::new("preview", Timecode(0), Timecode(1), prompt)
}
