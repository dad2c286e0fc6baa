//! Command-line front end.
//!
//! Exit codes follow sysexits: 64 usage, 65 bad data, 66 missing input,
//! 69 backend unavailable, 74 I/O failure, 76 backend protocol error.
//! `validate` exits 2 on a malformed script.
//!
//! Settings are resolved as flags, then the config file (`--config`, or
//! `scriptfocus.toml` in the working directory), then built-in defaults.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::detection::{
    load_fixture, Backend, BackendConfig, BackendKind, ClientError, DetectionParams, FixtureBackend, ReplayBackend,
    DEFAULT_BOX_THRESHOLD, DEFAULT_TEXT_THRESHOLD,
};
use crate::pipeline::frames::parse_frame_name;
use crate::pipeline::{
    detect_video, plan_keyframes_within, process_video, FrameSequence, PipelineError, RunConfig, RunSummary,
    TrackConfig, DEFAULT_EMA_ALPHA, DEFAULT_GRACE_KEYFRAMES, DEFAULT_KEYFRAME_INTERVAL,
};
use crate::preview::{preview_cue, preview_frame, PreviewError};
use crate::script::{load_script, EffectKind, LoadError, Script};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID_SCRIPT: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DATA: i32 = 65;
pub const EXIT_NO_INPUT: i32 = 66;
pub const EXIT_UNAVAILABLE: i32 = 69;
pub const EXIT_IO: i32 = 74;
pub const EXIT_PROTOCOL: i32 = 76;

pub const DEFAULT_CONFIG_FILE: &str = "scriptfocus.toml";

/// Focus viewer attention in 360° video by following a time-coded script.
///
/// Video containers are not read directly. Convert to and from numbered
/// PNG frames with any ffmpeg-compatible tool, e.g.
///
///   ffmpeg -i tour.mp4 -start_number 0 frames/frame_%06d.png
///
///   ffmpeg -framerate 30 -start_number 0 -i out/frame_%06d.png -c:v libx264 -pix_fmt yuv420p tour_focus.mp4
#[derive(Debug, Parser)]
#[command(name = "scriptfocus", version, verbatim_doc_comment)]
pub struct Cli {
    /// Config file of `key = value` settings (default: ./scriptfocus.toml if present).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a script and print its cues.
    Validate {
        /// Script file (alternatively --script).
        #[arg(value_name = "SCRIPT", required_unless_present = "script")]
        path: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        script: Option<PathBuf>,
    },
    /// Run keyframe detection and segmentation only, writing the sidecar.
    Detect {
        #[command(flatten)]
        run: RunArgs,
        /// Print the planned keyframes per cue without calling the backend.
        #[arg(long)]
        dry_run: bool,
    },
    /// Run the full pipeline and write processed frames.
    Process {
        #[command(flatten)]
        run: RunArgs,
        /// Apply this effect to every cue instead of each cue's own.
        #[arg(long, value_name = "vignette|desaturate")]
        effect: Option<EffectKind>,
        /// Keep output frames that already exist and reuse the output sidecar.
        #[arg(long)]
        resume: bool,
    },
    /// Write (a) original, (b) detection overlay and (c) effect panels for one frame.
    Preview {
        /// Input frame (PNG).
        #[arg(value_name = "FRAME")]
        frame: PathBuf,
        /// Object to look for; a leading "Look at the" is dropped.
        #[arg(long)]
        prompt: String,
        /// Frame index for fixture lookups (default: parsed from frame_NNNNNN.png).
        #[arg(long, value_name = "N")]
        frame_index: Option<u64>,
        #[arg(long, value_name = "DIR", default_value = ".")]
        out: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        look: LookArgs,
        #[arg(long, value_name = "vignette|desaturate")]
        effect: Option<EffectKind>,
    },
}

#[derive(Debug, Args, Clone, Default)]
pub struct BackendArgs {
    /// Detection backend.
    #[arg(long, value_name = "remote|fixture")]
    pub backend: Option<BackendKind>,
    /// Inference service base URL (remote backend).
    #[arg(long, value_name = "URL")]
    pub endpoint: Option<String>,
    /// Sidecar file replayed by the fixture backend.
    #[arg(long, value_name = "PATH")]
    pub fixture: Option<PathBuf>,
    /// Replay this sidecar; keys it lacks go to --backend if one is given.
    #[arg(long, value_name = "PATH")]
    pub reuse_sidecar: Option<PathBuf>,
    /// Minimum box confidence [default: 0.3].
    #[arg(long, value_name = "T")]
    pub box_threshold: Option<f64>,
    /// Minimum text-token confidence [default: 0.25].
    #[arg(long, value_name = "T")]
    pub text_threshold: Option<f64>,
}

#[derive(Debug, Args, Clone)]
pub struct RunArgs {
    /// Directory of frame_NNNNNN.png inputs.
    #[arg(long, value_name = "DIR")]
    pub frames: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub script: PathBuf,
    /// Output directory (frames and sidecar.json).
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Frame rate of the sequence.
    #[arg(long, value_name = "F")]
    pub fps: Option<f64>,
    /// Query the backend on every N-th frame of a cue [default: 15].
    #[arg(long, value_name = "N")]
    pub keyframe_interval: Option<u64>,
    /// Compositing threads [default: available CPUs].
    #[arg(long, value_name = "N")]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args, Clone, Default)]
pub struct LookArgs {
    /// Effect strength in [0, 1] [default: 0.8].
    #[arg(long)]
    pub strength: Option<f32>,
    /// Feather radii in pixels, inner then outer [default: 12 48].
    #[arg(long, num_args = 2, value_names = ["INNER", "OUTER"])]
    pub feather: Option<Vec<f32>>,
    /// Darkening floor in [0, 1] [default: 0.15].
    #[arg(long)]
    pub floor: Option<f32>,
}

/// Settings accepted in the config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub fps: Option<f64>,
    pub keyframe_interval: Option<u64>,
    pub grace_keyframes: Option<u32>,
    pub ema_alpha: Option<f64>,
    pub workers: Option<usize>,
    pub effect: Option<EffectKind>,
    pub backend: Option<BackendKind>,
    pub endpoint: Option<String>,
    pub fixture: Option<PathBuf>,
    pub box_threshold: Option<f64>,
    pub text_threshold: Option<f64>,
    pub request_timeout_ms: Option<u64>,
    pub max_in_flight: Option<usize>,
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

fn load_file_config(explicit: Option<&Path>) -> Result<FileConfig, Failure> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let p = PathBuf::from(DEFAULT_CONFIG_FILE);
            if !p.exists() {
                return Ok(FileConfig::default());
            }
            p
        }
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Failure::new(EXIT_NO_INPUT, format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::new(EXIT_USAGE, format!("bad config {}: {e}", path.display())))
}

fn client_exit(e: &ClientError) -> i32 {
    match e {
        ClientError::BackendUnavailable(_) => EXIT_UNAVAILABLE,
        ClientError::BackendError(_) | ClientError::MalformedRle(_) => EXIT_PROTOCOL,
        ClientError::MalformedFixture(_) | ClientError::EmptySegmentation => EXIT_DATA,
        ClientError::InvalidRequest(_) => EXIT_USAGE,
    }
}

fn pipeline_failure(e: PipelineError) -> Failure {
    let code = match &e {
        PipelineError::InputMissing(_) => EXIT_NO_INPUT,
        PipelineError::DimsInconsistent(_)
        | PipelineError::Image(_)
        | PipelineError::Plan(_)
        | PipelineError::Effect(_) => EXIT_DATA,
        PipelineError::Io(_) => EXIT_IO,
        PipelineError::Config(_) => EXIT_USAGE,
        PipelineError::Sidecar(crate::pipeline::SidecarError::Io { .. }) => EXIT_IO,
        PipelineError::Sidecar(_) => EXIT_DATA,
        PipelineError::Backend { source, .. } => client_exit(source),
    };
    Failure::new(code, e.to_string())
}

fn read_script(path: &Path, malformed_code: i32) -> Result<Script, Failure> {
    load_script(path).map_err(|e| match e {
        LoadError::Io { .. } => Failure::new(EXIT_NO_INPUT, e.to_string()),
        LoadError::Parse { .. } => Failure::new(malformed_code, e.to_string()),
    })
}

fn detection_params(args: &BackendArgs, file: &FileConfig) -> Result<DetectionParams, Failure> {
    let params = DetectionParams {
        box_threshold: args
            .box_threshold
            .or(file.box_threshold)
            .unwrap_or(DEFAULT_BOX_THRESHOLD),
        text_threshold: args
            .text_threshold
            .or(file.text_threshold)
            .unwrap_or(DEFAULT_TEXT_THRESHOLD),
    };
    params.validate().map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?;
    Ok(params)
}

/// The configured backend, if any. Only fields relevant to the chosen kind
/// are taken from the config file.
fn backend_config(args: &BackendArgs, file: &FileConfig) -> Result<Option<BackendConfig>, Failure> {
    let kind = args.backend.or(file.backend).or_else(|| {
        if args.fixture.is_some() {
            Some(BackendKind::Fixture)
        } else if args.endpoint.is_some() {
            Some(BackendKind::Remote)
        } else {
            None
        }
    });
    let Some(kind) = kind else {
        return Ok(None);
    };
    let mut cfg = match kind {
        BackendKind::Remote => BackendConfig::remote(
            args.endpoint
                .clone()
                .or_else(|| file.endpoint.clone())
                .ok_or_else(|| Failure::new(EXIT_USAGE, "--backend remote needs --endpoint"))?,
        ),
        BackendKind::Fixture => BackendConfig::fixture(
            args.fixture
                .clone()
                .or_else(|| file.fixture.clone())
                .ok_or_else(|| Failure::new(EXIT_USAGE, "--backend fixture needs --fixture"))?,
        ),
    };
    if kind == BackendKind::Remote && args.fixture.is_some() {
        return Err(Failure::new(
            EXIT_USAGE,
            "--fixture only applies to the fixture backend",
        ));
    }
    if kind == BackendKind::Fixture && args.endpoint.is_some() {
        return Err(Failure::new(
            EXIT_USAGE,
            "--endpoint only applies to the remote backend",
        ));
    }
    if let Some(t) = file.request_timeout_ms {
        cfg.request_timeout_ms = t;
    }
    if let Some(n) = file.max_in_flight {
        cfg.max_in_flight = n;
    }
    Ok(Some(cfg))
}

fn connect(cfg: &BackendConfig) -> Result<Arc<dyn Backend>, Failure> {
    cfg.connect().map_err(|e| {
        let code = match (&e, cfg.kind) {
            (ClientError::MalformedFixture(_), BackendKind::Fixture)
                if cfg.fixture_path.as_ref().is_some_and(|p| !p.exists()) =>
            {
                EXIT_NO_INPUT
            }
            _ => client_exit(&e),
        };
        Failure::new(code, e.to_string())
    })
}

/// Backend for a run: an optional replayed sidecar layered over the
/// configured backend.
fn resolve_backend(
    args: &BackendArgs,
    file: &FileConfig,
    reuse: Option<&Path>,
    needed: bool,
) -> Result<Arc<dyn Backend>, Failure> {
    let live = backend_config(args, file)?.map(|c| connect(&c)).transpose()?;
    match (reuse, live) {
        (Some(path), live) => {
            if !path.exists() {
                return Err(Failure::new(
                    EXIT_NO_INPUT,
                    format!("sidecar {} does not exist", path.display()),
                ));
            }
            let recorded = load_fixture(path).map_err(|e| Failure::new(EXIT_DATA, e.to_string()))?;
            Ok(Arc::new(ReplayBackend::new(recorded, live)))
        }
        (None, Some(live)) => Ok(live),
        (None, None) if !needed => Ok(Arc::new(FixtureBackend::default())),
        (None, None) => Err(Failure::new(
            EXIT_USAGE,
            "no backend configured: pass --backend with --endpoint or --fixture, or --reuse-sidecar",
        )),
    }
}

fn run_config(run: &RunArgs, file: &FileConfig) -> Result<RunConfig, Failure> {
    let fps = run
        .fps
        .or(file.fps)
        .ok_or_else(|| Failure::new(EXIT_USAGE, "--fps is required (flag or config file)"))?;
    let mut cfg = RunConfig::new(&run.frames, &run.out, fps);
    cfg.keyframe_interval = run
        .keyframe_interval
        .or(file.keyframe_interval)
        .unwrap_or(DEFAULT_KEYFRAME_INTERVAL);
    cfg.grace_keyframes = file.grace_keyframes.unwrap_or(DEFAULT_GRACE_KEYFRAMES);
    cfg.ema_alpha = file.ema_alpha.unwrap_or(DEFAULT_EMA_ALPHA);
    cfg.workers = run.workers.or(file.workers);
    cfg.params = detection_params(&run.backend, file)?;
    cfg.validate().map_err(pipeline_failure)?;
    Ok(cfg)
}

fn print_summary(out: &mut dyn Write, summary: &RunSummary) {
    let _ = writeln!(
        out,
        "{}",
        serde_json::to_string_pretty(summary).expect("summary serialises")
    );
}

fn unavailable_outcome(summary: &RunSummary) -> Result<(), Failure> {
    if summary.keyframes.unavailable > 0 {
        return Err(Failure::new(
            EXIT_UNAVAILABLE,
            format!(
                "backend unavailable for {} keyframe(s); those keyframes are missing from {}",
                summary.keyframes.unavailable, summary.sidecar_path
            ),
        ));
    }
    Ok(())
}

fn cmd_validate(path: &Path, out: &mut dyn Write) -> Result<(), Failure> {
    let script = read_script(path, EXIT_INVALID_SCRIPT)?;
    let _ = writeln!(out, "{} cue(s) in {}", script.cues.len(), script.source_path);
    if !script.cues.is_empty() {
        let _ = writeln!(
            out,
            "{:<12} {:<12} {:<12} {:<10} {:>8}  prompt",
            "id", "start", "end", "effect", "strength"
        );
    }
    for c in &script.cues {
        let _ = writeln!(
            out,
            "{:<12} {:<12} {:<12} {:<10} {:>8}  {}",
            c.id,
            c.start.to_string(),
            c.end.to_string(),
            c.effect.to_string(),
            c.strength,
            c.prompt
        );
    }
    Ok(())
}

fn cmd_detect(run: &RunArgs, dry_run: bool, file: &FileConfig, out: &mut dyn Write) -> Result<(), Failure> {
    let script = read_script(&run.script, EXIT_DATA)?;
    let cfg = run_config(run, file)?;
    if dry_run {
        let seq = FrameSequence::open(&cfg.frames_dir).map_err(pipeline_failure)?;
        for cue in &script.cues {
            let frames = plan_keyframes_within(cue, cfg.fps, cfg.keyframe_interval, (seq.first, seq.last()))
                .map_err(|e| pipeline_failure(e.into()))?;
            let list: Vec<String> = frames.iter().map(u64::to_string).collect();
            let _ = writeln!(out, "{}\t{}\tkeyframes: {}", cue.id, cue.prompt, list.join(" "));
        }
        return Ok(());
    }
    let backend = resolve_backend(
        &run.backend,
        file,
        run.backend.reuse_sidecar.as_deref(),
        !script.cues.is_empty(),
    )?;
    let (_, summary) = detect_video(&cfg, &script, backend.as_ref()).map_err(pipeline_failure)?;
    print_summary(out, &summary);
    unavailable_outcome(&summary)
}

fn cmd_process(
    run: &RunArgs,
    effect: Option<EffectKind>,
    resume: bool,
    file: &FileConfig,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let script = read_script(&run.script, EXIT_DATA)?;
    let mut cfg = run_config(run, file)?;
    cfg.effect_override = effect.or(file.effect);
    cfg.resume = resume;
    let mut reuse = run.backend.reuse_sidecar.clone();
    if resume && reuse.is_none() && cfg.sidecar_path.exists() {
        reuse = Some(cfg.sidecar_path.clone());
    }
    let backend = resolve_backend(&run.backend, file, reuse.as_deref(), !script.cues.is_empty())?;
    let summary = process_video(&cfg, &script, backend.as_ref()).map_err(pipeline_failure)?;
    print_summary(out, &summary);
    unavailable_outcome(&summary)
}

#[allow(clippy::too_many_arguments)]
fn cmd_preview(
    frame: &Path,
    prompt: &str,
    frame_index: Option<u64>,
    out_dir: &Path,
    backend_args: &BackendArgs,
    look: &LookArgs,
    effect: Option<EffectKind>,
    file: &FileConfig,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    if !frame.exists() {
        return Err(Failure::new(
            EXIT_NO_INPUT,
            format!("{} does not exist", frame.display()),
        ));
    }
    let index = frame_index
        .or_else(|| frame.file_name().and_then(|n| n.to_str()).and_then(parse_frame_name))
        .unwrap_or(0);
    let mut cue = preview_cue(prompt);
    if cue.prompt.is_empty() {
        return Err(Failure::new(EXIT_USAGE, "--prompt names no object"));
    }
    if let Some(s) = look.strength {
        cue.strength = s;
    }
    if let Some(f) = look.floor {
        cue.floor_luma = f;
    }
    if let Some(f) = &look.feather {
        cue.feather_inner_px = f[0];
        cue.feather_outer_px = f[1];
    }
    let unit = |v: f32| (0.0..=1.0).contains(&v);
    if !unit(cue.strength)
        || !unit(cue.floor_luma)
        || !(cue.feather_inner_px >= 0.0 && cue.feather_outer_px > cue.feather_inner_px)
    {
        return Err(Failure::new(
            EXIT_USAGE,
            "strength/floor must be in [0, 1] and 0 <= inner < outer feather",
        ));
    }
    let track = TrackConfig {
        params: detection_params(backend_args, file)?,
        ..TrackConfig::default()
    };
    let backend = resolve_backend(backend_args, file, backend_args.reuse_sidecar.as_deref(), true)?;
    let effect = effect.or(file.effect).unwrap_or(cue.effect);
    match preview_frame(frame, index, &cue, effect, &track, backend.as_ref(), out_dir) {
        Ok(p) => {
            let _ = writeln!(
                out,
                "{}\n{}\n{}\nscore {:.3} box {:?}",
                p.paths.original.display(),
                p.paths.detected.display(),
                p.paths.effect.display(),
                p.detection.score,
                p.detection.bbox.to_array()
            );
            Ok(())
        }
        Err(e @ PreviewError::NoDetection { .. }) => Err(Failure::new(EXIT_DATA, e.to_string())),
        Err(PreviewError::Pipeline(e)) => Err(pipeline_failure(e)),
        Err(PreviewError::Client(e)) => Err(Failure::new(client_exit(&e), e.to_string())),
        Err(e @ PreviewError::Effect(_)) => Err(Failure::new(EXIT_DATA, e.to_string())),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{rendered}");
            } else {
                let _ = write!(out, "{rendered}");
            }
            return code;
        }
    };
    let result = load_file_config(cli.config.as_deref()).and_then(|file| match &cli.command {
        Command::Validate { path, script } => {
            cmd_validate(path.as_deref().or(script.as_deref()).expect("clap requires one"), out)
        }
        Command::Detect { run, dry_run } => cmd_detect(run, *dry_run, &file, out),
        Command::Process { run, effect, resume } => cmd_process(run, *effect, *resume, &file, out),
        Command::Preview {
            frame,
            prompt,
            frame_index,
            out: out_dir,
            backend,
            look,
            effect,
        } => cmd_preview(frame, prompt, *frame_index, out_dir, backend, look, *effect, &file, out),
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}
