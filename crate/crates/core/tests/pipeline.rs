mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use image::RgbImage;

use common::*;
use scriptfocus::detection::{
    Backend, Candidates, ClientError, DetectionParams, FixtureBackend, FrameRef, MaskRle, ReplayBackend, Source,
};
use scriptfocus::geometry::BBox;
use scriptfocus::pipeline::{detect_video, frame_name, load_sidecar, process_video, PipelineError, RunConfig};
use scriptfocus::script::{parse_script, EffectKind, Script};

fn scene_config(root: &std::path::Path, files: &SceneFiles, out: &str) -> RunConfig {
    let mut c = RunConfig::new(&files.frames, root.join(out), SCENE_FPS);
    c.keyframe_interval = SCENE_INTERVAL;
    c
}

fn scene_script(files: &SceneFiles) -> Script {
    parse_script(&std::fs::read_to_string(&files.script).unwrap()).unwrap()
}

fn fixture(files: &SceneFiles) -> FixtureBackend {
    FixtureBackend::from_sidecar(load_sidecar(&files.fixture).unwrap())
}

#[test]
fn matches_reference_compositor_frame_by_frame() {
    let cues = golden_cues();
    let tmp = tempfile::tempdir().unwrap();
    let files = write_scene(tmp.path(), &cues);
    for (desat, name) in [(false, "v"), (true, "d")] {
        let mut config = scene_config(tmp.path(), &files, name);
        config.effect_override = desat.then_some(EffectKind::Desaturate);
        let summary = process_video(&config, &scene_script(&files), &fixture(&files)).unwrap();
        assert_eq!(summary.frames_total, SCENE_FRAMES);
        assert_eq!(summary.frames_rendered + summary.frames_copied, SCENE_FRAMES as usize);
        for (i, want) in ref_render_scene(&cues, desat).iter().enumerate() {
            let got = image::open(config.out_dir.join(frame_name(i as u64)))
                .unwrap()
                .into_rgb8();
            let bad = got.pixels().zip(want.pixels()).filter(|(a, b)| a != b).count();
            assert_eq!(bad, 0, "frame {i} ({name}): {bad} pixels differ");
        }
    }
}

#[test]
fn sidecar_records_every_keyframe_in_order() {
    let tmp = tempfile::tempdir().unwrap();
    let files = write_scene(tmp.path(), &golden_cues());
    let config = scene_config(tmp.path(), &files, "out");
    let (_, summary) = detect_video(&config, &scene_script(&files), &fixture(&files)).unwrap();
    assert_eq!(summary.keyframes.active, 6);
    assert_eq!(summary.keyframes.held, 1);
    assert_eq!(summary.keyframes.fallback_box, 1);
    // Detection only: nothing rendered.
    assert!(!config.out_dir.join(frame_name(0)).exists());

    let side = load_sidecar(&config.sidecar_path).unwrap();
    let keys: Vec<(u64, &str)> = side
        .records
        .iter()
        .map(|r| (r.frame_index, r.cue_id.as_deref().unwrap()))
        .collect();
    assert_eq!(
        keys,
        [
            (0, "ball"),
            (3, "ball"),
            (3, "seam"),
            (6, "ball"),
            (6, "seam"),
            (7, "ball"),
            (9, "seam")
        ]
    );
    let first = &side.records[0];
    assert_eq!(first.detection.as_ref().unwrap().score, 0.42);
    assert_eq!(first.candidates.len(), 2);
    let miss = &side.records[3];
    assert!(miss.detection.is_none() && miss.mask.is_none());
    assert_eq!(miss.candidates.len(), 1);
    assert_eq!(side.records[4].source, Source::FallbackBox);
    assert_eq!(side.records[4].mask.as_ref().unwrap().area(), 22 * 40);
    assert_eq!(side.records[1].source, Source::Fixture);
}

#[test]
fn reusing_a_sidecar_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let files = write_scene(tmp.path(), &golden_cues());
    let script = scene_script(&files);
    let first = scene_config(tmp.path(), &files, "first");
    process_video(&first, &script, &fixture(&files)).unwrap();

    let replay = ReplayBackend::new(
        FixtureBackend::from_sidecar(load_sidecar(&first.sidecar_path).unwrap()),
        None,
    );
    let second = scene_config(tmp.path(), &files, "second");
    process_video(&second, &script, &replay).unwrap();
    for i in 0..SCENE_FRAMES {
        let a = std::fs::read(first.out_dir.join(frame_name(i))).unwrap();
        let b = std::fs::read(second.out_dir.join(frame_name(i))).unwrap();
        assert!(a == b, "frame {i}");
    }
    let r1 = load_sidecar(&first.sidecar_path).unwrap().records;
    let r2 = load_sidecar(&second.sidecar_path).unwrap().records;
    assert_eq!(r1.len(), r2.len());
    for (a, b) in r1.iter().zip(&r2) {
        assert_eq!(
            (a.frame_index, &a.detection, &a.mask),
            (b.frame_index, &b.detection, &b.mask)
        );
    }
}

/// Counts calls and fails every one of them the same way.
struct Failing {
    error: ClientError,
    calls: AtomicUsize,
}

impl Backend for Failing {
    fn detect_candidates(&self, _: FrameRef<'_>, _: &str, _: &DetectionParams) -> Result<Candidates, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Err(self.error.clone())
    }
    fn segment_box(&self, _: FrameRef<'_>, _: &BBox) -> Result<MaskRle, ClientError> {
        Err(self.error.clone())
    }
}

#[test]
fn unavailable_backend_holds_and_keeps_going() {
    let tmp = tempfile::tempdir().unwrap();
    let files = write_scene(tmp.path(), &golden_cues());
    let config = scene_config(tmp.path(), &files, "out");
    let backend = Failing {
        error: ClientError::BackendUnavailable("down".into()),
        calls: AtomicUsize::new(0),
    };
    let summary = process_video(&config, &scene_script(&files), &backend).unwrap();
    assert_eq!(summary.keyframes.unavailable, 7);
    assert_eq!(backend.calls.load(Ordering::SeqCst), 7);
    assert_eq!(summary.frames_copied, SCENE_FRAMES as usize);
    assert!(load_sidecar(&config.sidecar_path).unwrap().records.is_empty());
}

#[test]
fn protocol_error_stops_the_run_but_writes_the_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    let files = write_scene(tmp.path(), &golden_cues());
    let config = scene_config(tmp.path(), &files, "out");
    let backend = Failing {
        error: ClientError::BackendError("HTTP 422".into()),
        calls: AtomicUsize::new(0),
    };
    let err = process_video(&config, &scene_script(&files), &backend).unwrap_err();
    assert!(
        matches!(
            err,
            PipelineError::Backend {
                source: ClientError::BackendError(_),
                ..
            }
        ),
        "{err}"
    );
    assert!(config.sidecar_path.exists());
    assert!(!config.out_dir.join(frame_name(0)).exists());
}

#[test]
fn replay_falls_through_to_live_backend_for_missing_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let files = write_scene(tmp.path(), &golden_cues());
    let mut recorded = load_sidecar(&files.fixture).unwrap();
    recorded.records.retain(|r| r.frame_index != 9);
    let live = Arc::new(Failing {
        error: ClientError::BackendUnavailable("down".into()),
        calls: AtomicUsize::new(0),
    });
    let replay = ReplayBackend::new(FixtureBackend::from_sidecar(recorded), Some(live.clone()));
    let config = scene_config(tmp.path(), &files, "out");
    let summary = process_video(&config, &scene_script(&files), &replay).unwrap();
    assert_eq!(live.calls.load(Ordering::SeqCst), 1);
    assert_eq!(summary.keyframes.unavailable, 1);
}

#[test]
fn cues_past_the_last_frame_are_clipped() {
    let tmp = tempfile::tempdir().unwrap();
    let frames = tmp.path().join("frames");
    std::fs::create_dir_all(&frames).unwrap();
    for i in 0..4 {
        RgbImage::new(32, 16).save(frames.join(frame_name(i))).unwrap();
    }
    let script =
        parse_script("00:00:00.200 --> 00:00:09.000\nprompt: a\n\n00:00:05.000 --> 00:00:06.000\nprompt: b\n").unwrap();
    let config = RunConfig::new(&frames, tmp.path().join("out"), 10.0);
    let summary = process_video(&config, &script, &FixtureBackend::default()).unwrap();
    // Cue a: frames 2..3, keyframes 2 and 3. Cue b starts after the sequence.
    assert_eq!(summary.keyframes.held + summary.keyframes.lost, 2);
    assert_eq!(load_sidecar(&config.sidecar_path).unwrap().records.len(), 2);
}

#[test]
fn bad_sequences_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let frames = tmp.path().join("frames");
    std::fs::create_dir_all(&frames).unwrap();
    RgbImage::new(32, 16).save(frames.join(frame_name(0))).unwrap();
    RgbImage::new(30, 15).save(frames.join(frame_name(1))).unwrap();
    let config = RunConfig::new(&frames, tmp.path().join("out"), 10.0);
    let script = Script::default();
    assert!(matches!(
        process_video(&config, &script, &FixtureBackend::default()),
        Err(PipelineError::DimsInconsistent(_))
    ));
    let missing = RunConfig::new(tmp.path().join("nope"), tmp.path().join("out"), 10.0);
    assert!(matches!(
        process_video(&missing, &script, &FixtureBackend::default()),
        Err(PipelineError::InputMissing(_))
    ));
    let mut bad_fps = config.clone();
    bad_fps.fps = 0.0;
    assert!(matches!(
        process_video(&bad_fps, &script, &FixtureBackend::default()),
        Err(PipelineError::Config(_))
    ));
}
