//! Shared fixtures and reference implementations for the integration tests.
//!
//! The references here are written per pixel, straight from the formulas,
//! and share no code with the library kernels they check.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use sha2::{Digest, Sha256};

use scriptfocus::detection::{rle_encode, Detection, DetectionParams, Source};
use scriptfocus::geometry::{BBox, Grid, Mask};
use scriptfocus::pipeline::{frame_name, write_sidecar, SidecarFile, SidecarRecord};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn random_frame(rng: &mut StdRng, w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
}

/// A few random discs plus scattered single pixels; never empty.
pub fn random_mask(rng: &mut StdRng, w: usize, h: usize) -> Mask {
    let mut m = Grid::filled(w, h, false);
    for _ in 0..rng.random_range(1..4) {
        let (cx, cy) = (rng.random_range(0..w) as i64, rng.random_range(0..h) as i64);
        let r = rng.random_range(0..6i64);
        for y in (cy - r).max(0)..(cy + r + 1).min(h as i64) {
            for dx in -r..=r {
                let dy = y - cy;
                if dx * dx + dy * dy <= r * r {
                    m.set((cx + dx).rem_euclid(w as i64) as usize, y as usize, true);
                }
            }
        }
    }
    for _ in 0..rng.random_range(0..8) {
        m.set(rng.random_range(0..w), rng.random_range(0..h), true);
    }
    m
}

fn wrap_dx(a: usize, b: usize, w: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(w - d)
}

/// Exact Euclidean distance to the nearest set pixel, columns wrapping.
pub fn exact_wrap_distance(mask: &Mask) -> Vec<f64> {
    let (w, h) = mask.dims();
    let set: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| mask.get(x, y))
        .collect();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let best = set
                .iter()
                .map(|&(sx, sy)| {
                    let dx = wrap_dx(x, sx, w) as f64;
                    let dy = y.abs_diff(sy) as f64;
                    dx * dx + dy * dy
                })
                .fold(f64::INFINITY, f64::min);
            out.push(best.sqrt());
        }
    }
    out
}

/// 3-4 chamfer distance by brute force: `(3 * max + min) / 3` over the
/// wrapped offset to every boundary pixel of the mask.
pub fn brute_chamfer_distance(mask: &Mask) -> Vec<f32> {
    let (w, h) = mask.dims();
    let is_set = |x: i64, y: i64| y >= 0 && y < h as i64 && mask.get(x.rem_euclid(w as i64) as usize, y as usize);
    let mut boundary = Vec::new();
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            if !is_set(x, y) {
                continue;
            }
            let edge = (-1..=1).any(|dy| {
                (-1..=1).any(|dx| {
                    let ny = y + dy;
                    (0..h as i64).contains(&ny) && !is_set(x + dx, ny)
                })
            });
            if edge {
                boundary.push((x as usize, y as usize));
            }
        }
    }
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                out.push(0.0);
                continue;
            }
            let best = boundary
                .iter()
                .map(|&(bx, by)| {
                    let dx = wrap_dx(x, bx, w) as u32;
                    let dy = y.abs_diff(by) as u32;
                    3 * dx.max(dy) + dx.min(dy)
                })
                .min()
                .expect("mask is not empty");
            out.push(best as f32 / 3.0);
        }
    }
    out
}

pub fn ref_smoothstep(e0: f32, e1: f32, x: f32) -> f32 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

pub fn ref_attenuation(mask: &Mask, inner: f32, outer: f32) -> Vec<f32> {
    brute_chamfer_distance(mask)
        .into_iter()
        .map(|d| ref_smoothstep(inner, outer, d))
        .collect()
}

pub fn ref_multiplier(a: f32, strength: f32, e: f32, floor: f32) -> f32 {
    (1.0 - a * strength * e * (1.0 - floor)).clamp(floor, 1.0)
}

pub fn ref_luma(p: [u8; 3]) -> f32 {
    (0.2126f32 * p[0] as f32 + 0.7152 * p[1] as f32 + 0.0722 * p[2] as f32).round()
}

pub fn ref_lerp_pixel(p: [u8; 3], t: f32) -> [u8; 3] {
    let g = ref_luma(p);
    p.map(|c| (c as f32 + (g - c as f32) * t).round() as u8)
}

pub fn ref_vignette(frame: &RgbImage, field: &[f32], strength: f32, floor: f32, e: f32) -> RgbImage {
    let w = frame.width() as usize;
    RgbImage::from_fn(frame.width(), frame.height(), |x, y| {
        let m = ref_multiplier(field[y as usize * w + x as usize], strength, e, floor);
        Rgb(frame.get_pixel(x, y).0.map(|c| (c as f32 * m).round() as u8))
    })
}

pub fn ref_desaturate(frame: &RgbImage, field: &[f32], strength: f32, e: f32) -> RgbImage {
    let w = frame.width() as usize;
    RgbImage::from_fn(frame.width(), frame.height(), |x, y| {
        let a = field[y as usize * w + x as usize];
        Rgb(ref_lerp_pixel(frame.get_pixel(x, y).0, a * strength * e))
    })
}

pub fn pixel_sha256(img: &RgbImage) -> String {
    let mut h = Sha256::new();
    h.update(img.width().to_le_bytes());
    h.update(img.height().to_le_bytes());
    h.update(img.as_raw());
    hex::encode(h.finalize())
}

// ---------------------------------------------------------------------------
// Synthetic golden scene: a red ball drifting right and a blue box crossing
// the left/right seam, 10 frames at 10 fps, 512x256.

pub const SCENE_W: u32 = 512;
pub const SCENE_H: u32 = 256;
pub const SCENE_FRAMES: u64 = 10;
pub const SCENE_FPS: f64 = 10.0;
pub const SCENE_INTERVAL: u64 = 3;

#[derive(Debug, Clone)]
pub struct KeyEntry {
    pub frame: u64,
    /// `(score, box)` as the detector reported them.
    pub candidates: Vec<(f64, [f64; 4])>,
    /// `None` means segmentation came back empty.
    pub mask: Option<Mask>,
}

#[derive(Debug, Clone)]
pub struct SceneCue {
    pub id: &'static str,
    pub start_ms: u64,
    pub end_ms: u64,
    pub text: &'static str,
    pub prompt: &'static str,
    pub desaturate: bool,
    pub strength: f32,
    pub feather: (f32, f32),
    pub ramp: (u64, u64),
    pub floor: f32,
    pub keys: Vec<KeyEntry>,
}

fn ball_center(i: u64) -> (i64, i64) {
    (150 + 20 * i as i64, 128)
}

fn seam_box_x0(i: u64) -> i64 {
    484 + i as i64
}

pub fn scene_frame(i: u64) -> RgbImage {
    let (bx, by) = ball_center(i);
    let sx = seam_box_x0(i);
    RgbImage::from_fn(SCENE_W, SCENE_H, |x, y| {
        let (xi, yi) = (x as i64, y as i64);
        if (xi - bx).pow(2) + (yi - by).pow(2) <= 400 {
            return Rgb([230, 40, 40]);
        }
        if (100..140).contains(&yi) && (xi - sx).rem_euclid(SCENE_W as i64) < 36 {
            return Rgb([40, 60, 235]);
        }
        let noise = ((x * 7 + y * 13 + i as u32 * 31) % 17) as u8;
        Rgb([(x / 2) as u8, y as u8, 90u8.wrapping_add(noise)])
    })
}

fn disc_mask(c: (i64, i64)) -> Mask {
    Grid::from_fn(SCENE_W as usize, SCENE_H as usize, |x, y| {
        (x as i64 - c.0).pow(2) + (y as i64 - c.1).pow(2) <= 400
    })
}

fn seam_mask(x0: i64) -> Mask {
    Grid::from_fn(SCENE_W as usize, SCENE_H as usize, |x, y| {
        (100..140).contains(&y) && (x as i64 - x0).rem_euclid(SCENE_W as i64) < 36
    })
}

fn ball_box(i: u64) -> [f64; 4] {
    let (cx, cy) = ball_center(i);
    [(cx - 20) as f64, (cy - 20) as f64, (cx + 21) as f64, (cy + 21) as f64]
}

pub fn golden_cues() -> Vec<SceneCue> {
    vec![
        SceneCue {
            id: "ball",
            start_ms: 0,
            end_ms: 800,
            text: "Look at the red ball",
            prompt: "red ball",
            desaturate: false,
            strength: 0.9,
            feather: (6.0, 30.0),
            ramp: (200, 200),
            floor: 0.15,
            keys: vec![
                KeyEntry {
                    frame: 0,
                    candidates: vec![(0.31, [300.0, 50.0, 340.0, 90.0]), (0.42, ball_box(0))],
                    mask: Some(disc_mask(ball_center(0))),
                },
                KeyEntry {
                    frame: 3,
                    candidates: vec![(0.8, ball_box(3))],
                    mask: Some(disc_mask(ball_center(3))),
                },
                KeyEntry {
                    frame: 6,
                    candidates: vec![(0.29, ball_box(6))],
                    mask: None,
                },
                KeyEntry {
                    frame: 7,
                    candidates: vec![(0.7, ball_box(7))],
                    mask: Some(disc_mask(ball_center(7))),
                },
            ],
        },
        SceneCue {
            id: "seam",
            start_ms: 300,
            end_ms: 1000,
            text: "Look at the blue box",
            prompt: "blue box",
            desaturate: false,
            strength: 0.7,
            feather: (4.0, 24.0),
            ramp: (100, 0),
            floor: 0.3,
            keys: vec![
                KeyEntry {
                    frame: 3,
                    candidates: vec![(0.9, [seam_box_x0(3) as f64, 100.0, 512.0, 140.0])],
                    mask: Some(seam_mask(seam_box_x0(3))),
                },
                KeyEntry {
                    frame: 6,
                    candidates: vec![(0.6, [seam_box_x0(6) as f64, 100.0, 512.0, 140.0])],
                    mask: None,
                },
                KeyEntry {
                    frame: 9,
                    candidates: vec![(0.85, [seam_box_x0(9) as f64, 100.0, 512.0, 140.0])],
                    mask: Some(seam_mask(seam_box_x0(9))),
                },
            ],
        },
    ]
}

fn timecode(ms: u64) -> String {
    format!(
        "{:02}:{:02}:{:02}.{:03}",
        ms / 3_600_000,
        ms / 60_000 % 60,
        ms / 1000 % 60,
        ms % 1000
    )
}

pub fn script_text(cues: &[SceneCue]) -> String {
    let mut s = String::from("# synthetic scene\n\n");
    for c in cues {
        s += &format!(
            "{} --> {}\nid: {}\nprompt: {}\neffect: {}\nstrength: {}\nfeather: {} {}\nramp: {} {}\nfloor: {}\n\n",
            timecode(c.start_ms),
            timecode(c.end_ms),
            c.id,
            c.text,
            if c.desaturate { "desaturate" } else { "vignette" },
            c.strength,
            c.feather.0,
            c.feather.1,
            c.ramp.0,
            c.ramp.1,
            c.floor
        );
    }
    s
}

/// Sidecar records the fixture backend replays for `cues`.
pub fn fixture_records(cues: &[SceneCue]) -> Vec<SidecarRecord> {
    let params = DetectionParams::default();
    let mut out = Vec::new();
    for c in cues {
        for k in &c.keys {
            let dets: Vec<Detection> = k
                .candidates
                .iter()
                .map(|&(score, b)| Detection {
                    bbox: BBox::from_array(b),
                    score,
                    phrase: c.prompt.to_string(),
                })
                .collect();
            let best = dets
                .iter()
                .filter(|d| d.score >= params.box_threshold)
                .max_by(|a, b| a.score.total_cmp(&b.score))
                .cloned();
            let candidates = if dets.as_slice() == best.as_slice() {
                Vec::new()
            } else {
                dets
            };
            let (mask, source) = match (&best, &k.mask) {
                (Some(_), Some(m)) => (Some(rle_encode(m)), Source::Live),
                (Some(d), None) => (
                    Some(rle_encode(&Mask::from_bbox(
                        SCENE_W as usize,
                        SCENE_H as usize,
                        &d.bbox,
                    ))),
                    Source::FallbackBox,
                ),
                (None, _) => (None, Source::Live),
            };
            out.push(SidecarRecord {
                frame_index: k.frame,
                cue_id: Some(c.id.to_string()),
                prompt: c.prompt.to_string(),
                params,
                detection: best,
                mask,
                source,
                candidates,
            });
        }
    }
    out
}

pub struct SceneFiles {
    pub frames: PathBuf,
    pub script: PathBuf,
    pub fixture: PathBuf,
}

pub fn write_scene(root: &Path, cues: &[SceneCue]) -> SceneFiles {
    let frames = root.join("frames");
    std::fs::create_dir_all(&frames).unwrap();
    for i in 0..SCENE_FRAMES {
        scene_frame(i).save(frames.join(frame_name(i))).unwrap();
    }
    let script = root.join("scene.cues");
    std::fs::write(&script, script_text(cues)).unwrap();
    let fixture = root.join("fixture.json");
    write_sidecar(
        &SidecarFile::new(DetectionParams::default(), fixture_records(cues)),
        &fixture,
    )
    .unwrap();
    SceneFiles {
        frames,
        script,
        fixture,
    }
}

// Reference compositor ------------------------------------------------------

struct RefState {
    mask: Vec<bool>,
    center: (f64, f64),
    smoothed: (f64, f64),
}

/// Tracked region for every keyframe of `cue`, `None` once lost or before
/// the first hit. Grace of two keyframes, EMA weight 0.5.
/// Mask, box centre and smoothed centre.
type RefRegion = (Vec<bool>, (f64, f64), (f64, f64));

fn ref_track(cue: &SceneCue, keyframes: &[u64]) -> Vec<Option<RefRegion>> {
    let (w, h) = (SCENE_W as usize, SCENE_H as usize);
    let mut state: Option<RefState> = None;
    let mut misses = 0u32;
    let mut out = Vec::new();
    for &k in keyframes {
        let entry = cue.keys.iter().find(|e| e.frame == k);
        let best = entry.and_then(|e| {
            e.candidates
                .iter()
                .filter(|c| c.0 >= 0.3)
                .fold(None::<(f64, [f64; 4])>, |acc, &c| match acc {
                    Some(a) if a.0 >= c.0 => Some(a),
                    _ => Some(c),
                })
        });
        match best {
            Some((_, b)) => {
                let center = ((b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0);
                let mask = match &entry.unwrap().mask {
                    Some(m) => m.as_slice().to_vec(),
                    None => {
                        let (x0, y0) = (b[0].floor() as usize, b[1].floor() as usize);
                        let (x1, y1) = (b[2].ceil() as usize, b[3].ceil() as usize);
                        (0..w * h)
                            .map(|i| (x0..x1).contains(&(i % w)) && (y0..y1).contains(&(i / w)))
                            .collect()
                    }
                };
                let smoothed = match &state {
                    Some(s) if misses <= 2 => {
                        (0.5 * center.0 + 0.5 * s.smoothed.0, 0.5 * center.1 + 0.5 * s.smoothed.1)
                    }
                    _ => center,
                };
                misses = 0;
                state = Some(RefState { mask, center, smoothed });
            }
            None => misses += 1,
        }
        out.push(match &state {
            Some(s) if misses <= 2 => Some((s.mask.clone(), s.center, s.smoothed)),
            _ => None,
        });
    }
    out
}

fn ref_envelope(cue: &SceneCue, t: f64) -> f64 {
    let (s, e) = (cue.start_ms as f64, cue.end_ms as f64);
    if t < s || t >= e {
        return 0.0;
    }
    let (mut a, mut r) = (cue.ramp.0 as f64, cue.ramp.1 as f64);
    if a + r > e - s {
        let k = (e - s) / (a + r);
        a *= k;
        r *= k;
    }
    let up = if a == 0.0 { 1.0 } else { (t - s) / a };
    let down = if r == 0.0 { 1.0 } else { (e - t) / r };
    up.min(down).clamp(0.0, 1.0)
}

fn ref_keyframes(cue: &SceneCue) -> Vec<u64> {
    let first = (cue.start_ms as f64 * SCENE_FPS / 1000.0).ceil() as u64;
    let last = ((cue.end_ms as f64 * SCENE_FPS / 1000.0).ceil() as u64 - 1).min(SCENE_FRAMES - 1);
    let mut k: Vec<u64> = (first..=last).step_by(SCENE_INTERVAL as usize).collect();
    if *k.last().unwrap() != last {
        k.push(last);
    }
    k
}

/// Expected output for every frame of the scene. `force_desaturate`
/// mirrors `--effect desaturate`.
pub fn ref_render_scene(cues: &[SceneCue], force_desaturate: bool) -> Vec<RgbImage> {
    let (w, h) = (SCENE_W as usize, SCENE_H as usize);
    struct Track {
        keyframes: Vec<u64>,
        fields: Vec<Option<Vec<f32>>>,
    }
    let tracks: Vec<Track> = cues
        .iter()
        .map(|c| {
            let keyframes = ref_keyframes(c);
            let fields = ref_track(c, &keyframes)
                .into_iter()
                .map(|r| {
                    r.map(|(mask, center, smoothed)| {
                        let dx = (smoothed.0 - center.0).round() as i64;
                        let dy = (smoothed.1 - center.1).round() as i64;
                        let moved: Vec<bool> = (0..w * h)
                            .map(|i| {
                                let (x, y) = ((i % w) as i64, (i / w) as i64);
                                let (sx, sy) = ((x - dx).rem_euclid(w as i64), y - dy);
                                (0..h as i64).contains(&sy) && mask[sy as usize * w + sx as usize]
                            })
                            .collect();
                        ref_attenuation(&Grid::from_vec(w, h, moved).unwrap(), c.feather.0, c.feather.1)
                    })
                })
                .collect();
            Track { keyframes, fields }
        })
        .collect();

    (0..SCENE_FRAMES)
        .map(|i| {
            let t = i as f64 * 1000.0 / SCENE_FPS;
            let frame = scene_frame(i);
            let mut layers: Vec<(&SceneCue, &Vec<f32>, f32)> = Vec::new();
            for (c, tr) in cues.iter().zip(&tracks) {
                let last = *tr.keyframes.last().unwrap();
                if i < tr.keyframes[0] || i > last {
                    continue;
                }
                let j = tr.keyframes.iter().rposition(|&k| k <= i).unwrap();
                if let Some(f) = &tr.fields[j] {
                    layers.push((c, f, ref_envelope(c, t) as f32));
                }
            }
            let desat = |c: &SceneCue| force_desaturate || c.desaturate;
            let mut out = RgbImage::from_fn(SCENE_W, SCENE_H, |x, y| {
                let p = y as usize * w + x as usize;
                let ms: Vec<f32> = layers
                    .iter()
                    .filter(|(c, _, _)| !desat(c))
                    .map(|(c, f, e)| ref_multiplier(f[p], c.strength, *e, c.floor))
                    .collect();
                let px = frame.get_pixel(x, y).0;
                match ms.into_iter().reduce(f32::max) {
                    Some(m) => Rgb(px.map(|v| (v as f32 * m).round() as u8)),
                    None => Rgb(px),
                }
            });
            for (c, f, e) in layers.iter().filter(|(c, _, _)| desat(c)) {
                out = ref_desaturate(&out, f, c.strength, *e);
            }
            out
        })
        .collect()
}

pub fn goldens_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/goldens")
}

/// Reads `<hash>  <name>` lines.
pub fn read_golden(name: &str) -> Vec<(String, String)> {
    let text = std::fs::read_to_string(goldens_dir().join(name))
        .unwrap_or_else(|e| panic!("golden {name} missing ({e}); regenerate with UPDATE_GOLDENS=1"));
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (hash, file) = l.split_once("  ").expect("`<hash>  <file>` line");
            (hash.to_string(), file.to_string())
        })
        .collect()
}

/// Golden hashes for the scene, regenerated from the reference compositor
/// when `UPDATE_GOLDENS` is set.
pub fn scene_golden(name: &str, cues: &[SceneCue], force_desaturate: bool) -> Vec<(String, String)> {
    if std::env::var_os("UPDATE_GOLDENS").is_some() {
        let lines: String = ref_render_scene(cues, force_desaturate)
            .iter()
            .enumerate()
            .map(|(i, img)| format!("{}  {}\n", pixel_sha256(img), frame_name(i as u64)))
            .collect();
        std::fs::create_dir_all(goldens_dir()).unwrap();
        std::fs::write(goldens_dir().join(name), lines).unwrap();
    }
    read_golden(name)
}

/// Pixel hashes of every frame in `dir`, in golden-file form.
pub fn output_hashes(dir: &Path) -> Vec<(String, String)> {
    (0..SCENE_FRAMES)
        .map(|i| {
            let name = frame_name(i);
            let img = image::open(dir.join(&name)).unwrap().into_rgb8();
            (pixel_sha256(&img), name)
        })
        .collect()
}

pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("scriptfocus").chain(args.iter().copied());
    let code = scriptfocus::cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
