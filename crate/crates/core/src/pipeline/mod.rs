//! End-to-end runs: keyframe planning, per-cue tracking, compositing and
//! sidecar persistence.
//!
//! A run has two phases. The detection phase walks each cue's keyframes in
//! order (cues in parallel, bounded by the backend's in-flight limit) and
//! records one sidecar entry per keyframe. The render phase composites every
//! frame from the tracked states; frames are rendered in parallel and written
//! strictly in index order.

pub mod frames;
pub mod plan;
pub mod sidecar;
pub mod track;

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::detection::{Backend, ClientError, DetectionParams, FrameRef, Source};
use crate::effects::{attenuation_field, combine_cues, envelope_at, AttenuationField, CueLayer, EffectError};
use crate::script::{EffectKind, Script};

pub use frames::{frame_name, FrameSequence};
pub use plan::{clipped_span, cue_frame_span, plan_keyframes, plan_keyframes_within, PlanError};
pub use sidecar::{load_sidecar, write_sidecar, SidecarError, SidecarFile, SidecarRecord};
pub use track::{region_for_frame, step_keyframe, KeyframeStep, Region, RegionState, RegionStatus, TrackConfig};

pub const DEFAULT_KEYFRAME_INTERVAL: u64 = 15;
pub const DEFAULT_GRACE_KEYFRAMES: u32 = 2;
pub const DEFAULT_EMA_ALPHA: f64 = 0.5;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("input missing: {0}")]
    InputMissing(String),
    #[error("inconsistent frame dimensions: {0}")]
    DimsInconsistent(String),
    #[error("image error: {0}")]
    Image(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Sidecar(#[from] SidecarError),
    #[error("backend failure at frame {frame_index} (cue {cue_id}): {source}; partial sidecar kept")]
    Backend {
        frame_index: u64,
        cue_id: String,
        #[source]
        source: ClientError,
    },
    #[error(transparent)]
    Effect(#[from] EffectError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub frames_dir: PathBuf,
    pub out_dir: PathBuf,
    pub sidecar_path: PathBuf,
    pub fps: f64,
    pub keyframe_interval: u64,
    pub grace_keyframes: u32,
    pub ema_alpha: f64,
    pub params: DetectionParams,
    /// Compositing threads; `None` uses every available CPU.
    pub workers: Option<usize>,
    pub effect_override: Option<EffectKind>,
    /// Skip output frames that already exist.
    pub resume: bool,
    /// Stop after writing this many frames (simulates an interrupted run).
    pub frame_limit: Option<usize>,
}

impl RunConfig {
    pub fn new(frames_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>, fps: f64) -> Self {
        let out_dir = out_dir.into();
        RunConfig {
            frames_dir: frames_dir.into(),
            sidecar_path: out_dir.join("sidecar.json"),
            out_dir,
            fps,
            keyframe_interval: DEFAULT_KEYFRAME_INTERVAL,
            grace_keyframes: DEFAULT_GRACE_KEYFRAMES,
            ema_alpha: DEFAULT_EMA_ALPHA,
            params: DetectionParams::default(),
            workers: None,
            effect_override: None,
            resume: false,
            frame_limit: None,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(PipelineError::Config(format!("fps must be positive, got {}", self.fps)));
        }
        if self.keyframe_interval == 0 {
            return Err(PipelineError::Config("keyframe interval must be at least 1".into()));
        }
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return Err(PipelineError::Config(format!(
                "ema_alpha {} is outside (0, 1]",
                self.ema_alpha
            )));
        }
        if self.workers == Some(0) {
            return Err(PipelineError::Config("workers must be at least 1".into()));
        }
        self.params.validate().map_err(|e| PipelineError::Config(e.to_string()))
    }

    fn track_config(&self) -> TrackConfig {
        TrackConfig {
            params: self.params,
            grace_keyframes: self.grace_keyframes,
            ema_alpha: self.ema_alpha,
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool, PipelineError> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.workers {
            b = b.num_threads(n);
        }
        b.build()
            .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct KeyframeCounts {
    pub active: usize,
    pub held: usize,
    pub lost: usize,
    pub fallback_box: usize,
    pub unavailable: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunSummary {
    pub frames_total: u64,
    pub frames_rendered: usize,
    pub frames_copied: usize,
    pub frames_skipped: usize,
    pub keyframes: KeyframeCounts,
    pub detect_ms: u128,
    pub render_ms: u128,
    pub aborted: bool,
    pub sidecar_path: String,
}

/// One cue's keyframes and the tracked state after each.
#[derive(Debug)]
pub struct CueTimeline {
    pub cue_index: usize,
    pub span: (u64, u64),
    pub keyframes: Vec<u64>,
    pub states: Vec<RegionState>,
    fields: Vec<OnceLock<Option<Arc<AttenuationField>>>>,
}

impl CueTimeline {
    /// State governing `frame_index`: the latest keyframe at or before it.
    pub fn state_at(&self, frame_index: u64) -> Option<(usize, &RegionState)> {
        if frame_index < self.span.0 || frame_index > self.span.1 {
            return None;
        }
        let j = self.keyframes.partition_point(|&k| k <= frame_index).checked_sub(1)?;
        self.states.get(j).map(|s| (j, s))
    }
}

#[derive(Debug)]
pub struct DetectionPhase {
    pub timelines: Vec<CueTimeline>,
    pub records: Vec<SidecarRecord>,
    pub counts: KeyframeCounts,
    /// First fatal error, if the phase stopped early.
    pub failure: Option<PipelineError>,
}

/// `(cue index, clipped frame span, keyframes)`.
pub type CuePlan = (usize, Option<(u64, u64)>, Vec<u64>);

/// Planned keyframes per cue, clipped to the available frames. Cues that
/// fall entirely outside the sequence get an empty plan.
pub fn plan_run(script: &Script, seq: &FrameSequence, config: &RunConfig) -> Result<Vec<CuePlan>, PipelineError> {
    let available = (seq.first, seq.last());
    script
        .cues
        .iter()
        .enumerate()
        .map(|(i, cue)| {
            let keyframes = plan_keyframes_within(cue, config.fps, config.keyframe_interval, available)?;
            if keyframes.is_empty() {
                log::warn!("cue {} lies outside the available frames", cue.id);
            }
            Ok((i, clipped_span(cue, config.fps, available), keyframes))
        })
        .collect()
}

fn count_step(counts: &mut KeyframeCounts, step: &KeyframeStep) {
    match step.state.status {
        RegionStatus::Active => counts.active += 1,
        RegionStatus::Held => counts.held += 1,
        RegionStatus::Lost => counts.lost += 1,
    }
    if step.unavailable {
        counts.unavailable += 1;
    }
    if step.record.as_ref().is_some_and(|r| r.source == Source::FallbackBox) {
        counts.fallback_box += 1;
    }
}

/// Runs every cue's keyframes against `backend`.
///
/// Cues run concurrently; each cue's keyframes run in order. A fatal
/// backend error stops the affected cue and is reported in
/// [`DetectionPhase::failure`] alongside every record gathered so far.
pub fn run_detection(
    script: &Script,
    seq: &FrameSequence,
    config: &RunConfig,
    backend: &dyn Backend,
) -> Result<DetectionPhase, PipelineError> {
    let plans = plan_run(script, seq, config)?;
    let track = config.track_config();

    struct CueResult {
        timeline: CueTimeline,
        records: Vec<SidecarRecord>,
        counts: KeyframeCounts,
        failure: Option<PipelineError>,
    }

    let pool = config.pool()?;
    let results: Vec<CueResult> = pool.install(|| {
        plans
            .into_par_iter()
            .filter_map(|(cue_index, span, keyframes)| span.map(|span| (cue_index, span, keyframes)))
            .map(|(cue_index, span, keyframes)| {
                let cue = &script.cues[cue_index];
                let mut states: Vec<RegionState> = Vec::with_capacity(keyframes.len());
                let mut records = Vec::new();
                let mut counts = KeyframeCounts::default();
                let mut failure = None;
                for &k in &keyframes {
                    let step = seq.load(k).and_then(|image| {
                        step_keyframe(
                            states.last(),
                            FrameRef {
                                index: k,
                                image: &image,
                            },
                            cue,
                            backend,
                            &track,
                        )
                        .map_err(|source| PipelineError::Backend {
                            frame_index: k,
                            cue_id: cue.id.clone(),
                            source,
                        })
                    });
                    match step {
                        Ok(step) => {
                            count_step(&mut counts, &step);
                            records.extend(step.record);
                            states.push(step.state);
                        }
                        Err(e) => {
                            failure = Some(e);
                            break;
                        }
                    }
                }
                let done = states.len();
                CueResult {
                    timeline: CueTimeline {
                        cue_index,
                        span,
                        keyframes: keyframes[..done].to_vec(),
                        fields: (0..done).map(|_| OnceLock::new()).collect(),
                        states,
                    },
                    records,
                    counts,
                    failure,
                }
            })
            .collect()
    });

    let mut phase = DetectionPhase {
        timelines: Vec::new(),
        records: Vec::new(),
        counts: KeyframeCounts::default(),
        failure: None,
    };
    let mut keyed: Vec<(u64, usize, SidecarRecord)> = Vec::new();
    for r in results {
        let ci = r.timeline.cue_index;
        keyed.extend(r.records.into_iter().map(|rec| (rec.frame_index, ci, rec)));
        phase.counts.active += r.counts.active;
        phase.counts.held += r.counts.held;
        phase.counts.lost += r.counts.lost;
        phase.counts.fallback_box += r.counts.fallback_box;
        phase.counts.unavailable += r.counts.unavailable;
        if phase.failure.is_none() {
            phase.failure = r.failure;
        }
        phase.timelines.push(r.timeline);
    }
    keyed.sort_by_key(|(f, c, _)| (*f, *c));
    phase.records = keyed.into_iter().map(|(_, _, r)| r).collect();
    Ok(phase)
}

enum Rendered {
    Copy,
    Png(Vec<u8>),
}

fn field_for(
    timeline: &CueTimeline,
    j: usize,
    script: &Script,
) -> Result<Option<Arc<AttenuationField>>, PipelineError> {
    if let Some(f) = timeline.fields[j].get() {
        return Ok(f.clone());
    }
    let cue = &script.cues[timeline.cue_index];
    let region = region_for_frame(&timeline.states[j]).map_err(|source| PipelineError::Backend {
        frame_index: timeline.keyframes[j],
        cue_id: cue.id.clone(),
        source,
    })?;
    let field = match region {
        Some((mask, _)) => Some(Arc::new(attenuation_field(
            &mask,
            cue.feather_inner_px,
            cue.feather_outer_px,
        )?)),
        None => None,
    };
    Ok(timeline.fields[j].get_or_init(|| field).clone())
}

fn render_frame(
    index: u64,
    seq: &FrameSequence,
    script: &Script,
    timelines: &[CueTimeline],
    config: &RunConfig,
) -> Result<Rendered, PipelineError> {
    let t_ms = index as f64 * 1000.0 / config.fps;
    let mut active: Vec<(Arc<AttenuationField>, usize)> = Vec::new();
    for tl in timelines {
        if let Some((j, _)) = tl.state_at(index) {
            if let Some(field) = field_for(tl, j, script)? {
                active.push((field, tl.cue_index));
            }
        }
    }
    if active.is_empty() {
        return Ok(Rendered::Copy);
    }
    let frame = seq.load(index)?;
    let layers: Vec<CueLayer<'_>> = active
        .iter()
        .map(|(field, ci)| {
            let cue = &script.cues[*ci];
            CueLayer {
                field: field.as_ref(),
                strength: cue.strength,
                floor_luma: cue.floor_luma,
                envelope: envelope_at(cue, t_ms) as f32,
                effect: config.effect_override.unwrap_or(cue.effect),
            }
        })
        .collect();
    let out = combine_cues(&frame, &layers)?;
    if out == frame {
        return Ok(Rendered::Copy);
    }
    let mut buf = std::io::Cursor::new(Vec::new());
    out.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| PipelineError::Image(e.to_string()))?;
    Ok(Rendered::Png(buf.into_inner()))
}

fn write_phase_sidecar(config: &RunConfig, records: &[SidecarRecord]) -> Result<(), PipelineError> {
    if let Some(parent) = config.sidecar_path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| PipelineError::Io(format!("{}: {e}", parent.display())))?;
    }
    write_sidecar(&SidecarFile::new(config.params, records.to_vec()), &config.sidecar_path)?;
    Ok(())
}

/// Detection phase only: plans keyframes, queries the backend and writes
/// the sidecar. Nothing is rendered.
pub fn detect_video(
    config: &RunConfig,
    script: &Script,
    backend: &dyn Backend,
) -> Result<(DetectionPhase, RunSummary), PipelineError> {
    config.validate()?;
    let seq = FrameSequence::open(&config.frames_dir)?;
    let started = Instant::now();
    let mut phase = run_detection(script, &seq, config, backend)?;
    write_phase_sidecar(config, &phase.records)?;
    if let Some(e) = phase.failure.take() {
        return Err(e);
    }
    let summary = RunSummary {
        frames_total: seq.count,
        keyframes: phase.counts,
        detect_ms: started.elapsed().as_millis(),
        sidecar_path: config.sidecar_path.display().to_string(),
        ..RunSummary::default()
    };
    Ok((phase, summary))
}

/// Full run: detection phase, sidecar, then every frame composited and
/// written to `out_dir` in index order. Frames without a visible effect are
/// byte-identical copies of their inputs.
pub fn process_video(config: &RunConfig, script: &Script, backend: &dyn Backend) -> Result<RunSummary, PipelineError> {
    config.validate()?;
    let seq = FrameSequence::open(&config.frames_dir)?;
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| PipelineError::Io(format!("{}: {e}", config.out_dir.display())))?;

    let started = Instant::now();
    let mut phase = run_detection(script, &seq, config, backend)?;
    write_phase_sidecar(config, &phase.records)?;
    if let Some(e) = phase.failure.take() {
        return Err(e);
    }
    let mut summary = RunSummary {
        frames_total: seq.count,
        keyframes: phase.counts,
        detect_ms: started.elapsed().as_millis(),
        sidecar_path: config.sidecar_path.display().to_string(),
        ..RunSummary::default()
    };

    let render_started = Instant::now();
    let pool = config.pool()?;
    let batch = pool.current_num_threads().max(1) * 2;
    let mut pending: Vec<u64> = Vec::new();
    for index in seq.indices() {
        let out = config.out_dir.join(frame_name(index));
        if config.resume && out.exists() {
            summary.frames_skipped += 1;
        } else {
            pending.push(index);
        }
    }
    let mut written = 0usize;
    'batches: for chunk in pending.chunks(batch) {
        let rendered: Vec<Result<Rendered, PipelineError>> = pool.install(|| {
            chunk
                .par_iter()
                .map(|&i| render_frame(i, &seq, script, &phase.timelines, config))
                .collect()
        });
        for (&index, result) in chunk.iter().zip(rendered) {
            if config.frame_limit.is_some_and(|limit| written >= limit) {
                summary.aborted = true;
                break 'batches;
            }
            let dst = config.out_dir.join(frame_name(index));
            match result? {
                Rendered::Copy => {
                    frames::copy_atomic(&seq.path(index), &dst)?;
                    summary.frames_copied += 1;
                }
                Rendered::Png(bytes) => {
                    write_bytes_atomic(&bytes, &dst)?;
                    summary.frames_rendered += 1;
                }
            }
            written += 1;
        }
    }
    summary.render_ms = render_started.elapsed().as_millis();
    Ok(summary)
}

fn write_bytes_atomic(bytes: &[u8], dst: &std::path::Path) -> Result<(), PipelineError> {
    let mut tmp_name = dst.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".partial");
    let tmp = dst.with_file_name(tmp_name);
    let io = |e: std::io::Error| PipelineError::Io(format!("{}: {e}", dst.display()));
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, dst).map_err(io)
}
