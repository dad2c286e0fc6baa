//! Attention scripts: time-coded object descriptions plus effect parameters.
//!
//! A script is a sequence of cue blocks separated by blank lines:
//!
//! ```text
//! # comment
//! 00:00:12.500 --> 00:00:20.000
//! prompt: Look at the sculpture of a person on the right side
//! effect: vignette
//! strength: 0.8
//! feather: 12 48
//! ramp: 500 500
//! ```
//!
//! The first line of a block is the half-open time range `[start, end)`.
//! The remaining `key: value` lines may appear in any order; only `prompt`
//! is mandatory. Recognised keys are `id`, `prompt`, `effect`, `strength`,
//! `feather` (inner then outer pixels), `ramp` (attack then release
//! milliseconds) and `floor` (darkening floor luma).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_STRENGTH: f32 = 0.8;
pub const DEFAULT_FEATHER_INNER_PX: f32 = 12.0;
pub const DEFAULT_FEATHER_OUTER_PX: f32 = 48.0;
pub const DEFAULT_ATTACK_MS: u64 = 500;
pub const DEFAULT_RELEASE_MS: u64 = 500;
pub const DEFAULT_FLOOR_LUMA: f32 = 0.15;

const IMPERATIVE_PREFIX: &str = "look at the ";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScriptError {
    #[error("malformed timecode {0:?}")]
    MalformedTimecode(String),
    #[error("line {line}: {reason}")]
    MalformedCue { line: usize, reason: String },
}

impl ScriptError {
    /// Line number the error refers to, if any (1-based).
    pub fn line(&self) -> Option<usize> {
        match self {
            ScriptError::MalformedCue { line, .. } => Some(*line),
            ScriptError::MalformedTimecode(_) => None,
        }
    }
}

fn cue_err(line: usize, reason: impl Into<String>) -> ScriptError {
    ScriptError::MalformedCue {
        line,
        reason: reason.into(),
    }
}

/// Milliseconds from the start of the video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timecode(pub u64);

impl Timecode {
    pub fn from_millis(millis: u64) -> Self {
        Timecode(millis)
    }

    pub fn millis(self) -> u64 {
        self.0
    }
}

/// Parses `HH:MM:SS.mmm` or `MM:SS.mmm`.
///
/// Hours take one or more digits; minutes and seconds exactly two (each
/// below 60); milliseconds exactly three.
pub fn parse_timecode(text: &str) -> Result<Timecode, ScriptError> {
    let bad = || ScriptError::MalformedTimecode(text.to_string());
    let (clock, frac) = text.split_once('.').ok_or_else(bad)?;
    if frac.len() != 3 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let fields: Vec<&str> = clock.split(':').collect();
    let (hours, minutes, seconds) = match fields.as_slice() {
        [h, m, s] => (*h, *m, *s),
        [m, s] => ("0", *m, *s),
        _ => return Err(bad()),
    };
    let digits = |s: &str, exact: Option<usize>| -> Option<u64> {
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        if exact.is_some_and(|n| s.len() != n) {
            return None;
        }
        s.parse().ok()
    };
    let h = digits(hours, None).ok_or_else(bad)?;
    let m = digits(minutes, Some(2)).ok_or_else(bad)?;
    let s = digits(seconds, Some(2)).ok_or_else(bad)?;
    let ms: u64 = frac.parse().map_err(|_| bad())?;
    if m >= 60 || s >= 60 {
        return Err(bad());
    }
    h.checked_mul(60)
        .and_then(|v| v.checked_add(m))
        .and_then(|v| v.checked_mul(60))
        .and_then(|v| v.checked_add(s))
        .and_then(|v| v.checked_mul(1000))
        .and_then(|v| v.checked_add(ms))
        .map(Timecode)
        .ok_or_else(bad)
}

impl FromStr for Timecode {
    type Err = ScriptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_timecode(s)
    }
}

/// Canonical form is always `HH:MM:SS.mmm`, with hours zero-padded to two digits.
impl fmt::Display for Timecode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ms = self.0 % 1000;
        let total_s = self.0 / 1000;
        let s = total_s % 60;
        let m = (total_s / 60) % 60;
        let h = total_s / 3600;
        write!(f, "{h:02}:{m:02}:{s:02}.{ms:03}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectKind {
    #[default]
    Vignette,
    Desaturate,
}

impl FromStr for EffectKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vignette" => Ok(EffectKind::Vignette),
            "desaturate" => Ok(EffectKind::Desaturate),
            other => Err(format!("unknown effect {other:?}")),
        }
    }
}

impl fmt::Display for EffectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EffectKind::Vignette => "vignette",
            EffectKind::Desaturate => "desaturate",
        })
    }
}

/// One scripted attention target. Every field is populated at parse time.
#[derive(Debug, Clone, PartialEq)]
pub struct Cue {
    pub id: String,
    pub start: Timecode,
    pub end: Timecode,
    /// Noun phrase sent to the detector.
    pub prompt: String,
    /// The prompt exactly as written in the script (trimmed).
    pub script_text: String,
    pub effect: EffectKind,
    pub strength: f32,
    pub feather_inner_px: f32,
    pub feather_outer_px: f32,
    pub attack_ms: u64,
    pub release_ms: u64,
    pub floor_luma: f32,
}

impl Cue {
    /// A cue with default effect parameters. `text` is normalised the same
    /// way the parser does it.
    pub fn new(id: impl Into<String>, start: Timecode, end: Timecode, text: &str) -> Self {
        let script_text = text.trim().to_string();
        Cue {
            id: id.into(),
            start,
            end,
            prompt: normalize_prompt(&script_text),
            script_text,
            effect: EffectKind::Vignette,
            strength: DEFAULT_STRENGTH,
            feather_inner_px: DEFAULT_FEATHER_INNER_PX,
            feather_outer_px: DEFAULT_FEATHER_OUTER_PX,
            attack_ms: DEFAULT_ATTACK_MS,
            release_ms: DEFAULT_RELEASE_MS,
            floor_luma: DEFAULT_FLOOR_LUMA,
        }
    }

    pub fn duration_ms(&self) -> u64 {
        self.end.0 - self.start.0
    }

    /// Half-open membership: `start <= t < end`.
    pub fn contains(&self, t: Timecode) -> bool {
        self.start <= t && t < self.end
    }
}

/// Strips a leading "Look at the " (any case) so the detector receives a noun phrase.
pub fn normalize_prompt(text: &str) -> String {
    let text = text.trim();
    // The trailing space of the prefix may have been trimmed away already.
    let word = IMPERATIVE_PREFIX.trim_end();
    let stripped = match text.get(..word.len()) {
        Some(head)
            if head.eq_ignore_ascii_case(word) && text[word.len()..].chars().next().is_none_or(char::is_whitespace) =>
        {
            &text[word.len()..]
        }
        _ => text,
    };
    stripped.trim().to_string()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Script {
    pub cues: Vec<Cue>,
    pub source_path: String,
}

impl Script {
    /// Every cue with `start <= t < end`, in script order.
    pub fn active_cues(&self, t: Timecode) -> Vec<&Cue> {
        self.cues.iter().filter(|c| c.contains(t)).collect()
    }

    pub fn cue(&self, id: &str) -> Option<&Cue> {
        self.cues.iter().find(|c| c.id == id)
    }
}

pub fn active_cues(script: &Script, t: Timecode) -> Vec<&Cue> {
    script.active_cues(t)
}

struct PendingCue {
    line: usize,
    start: Timecode,
    end: Timecode,
    id: Option<String>,
    text: Option<String>,
    effect: Option<EffectKind>,
    strength: Option<f32>,
    feather: Option<(f32, f32)>,
    ramp: Option<(u64, u64)>,
    floor: Option<f32>,
}

fn parse_range(line_no: usize, line: &str) -> Result<(Timecode, Timecode), ScriptError> {
    let (a, b) = line
        .split_once("-->")
        .ok_or_else(|| cue_err(line_no, format!("expected `start --> end`, found {line:?}")))?;
    let start = parse_timecode(a.trim()).map_err(|e| cue_err(line_no, e.to_string()))?;
    let end = parse_timecode(b.trim()).map_err(|e| cue_err(line_no, e.to_string()))?;
    if end <= start {
        return Err(cue_err(line_no, format!("end {end} is not after start {start}")));
    }
    Ok((start, end))
}

fn parse_real(line_no: usize, key: &str, s: &str) -> Result<f32, ScriptError> {
    let v: f32 = s
        .trim()
        .parse()
        .map_err(|_| cue_err(line_no, format!("{key}: expected a number, found {s:?}")))?;
    if !v.is_finite() {
        return Err(cue_err(line_no, format!("{key}: value must be finite")));
    }
    Ok(v)
}

fn parse_unit(line_no: usize, key: &str, s: &str) -> Result<f32, ScriptError> {
    let v = parse_real(line_no, key, s)?;
    if !(0.0..=1.0).contains(&v) {
        return Err(cue_err(line_no, format!("{key}: {v} is outside [0, 1]")));
    }
    Ok(v)
}

fn two_fields<'a>(line_no: usize, key: &str, s: &'a str) -> Result<(&'a str, &'a str), ScriptError> {
    let parts: Vec<&str> = s.split_whitespace().collect();
    match parts.as_slice() {
        [a, b] => Ok((a, b)),
        _ => Err(cue_err(line_no, format!("{key}: expected two values, found {s:?}"))),
    }
}

impl PendingCue {
    fn set_key(&mut self, line_no: usize, key: &str, value: &str) -> Result<(), ScriptError> {
        let dup = |k: &str| cue_err(line_no, format!("duplicate key {k:?}"));
        match key {
            "id" => {
                let v = value.trim();
                if v.is_empty() || v.chars().any(char::is_whitespace) {
                    return Err(cue_err(line_no, "id must be a non-empty token"));
                }
                if self.id.replace(v.to_string()).is_some() {
                    return Err(dup(key));
                }
            }
            "prompt" => {
                let v = value.trim();
                if v.is_empty() {
                    return Err(cue_err(line_no, "prompt is empty"));
                }
                if normalize_prompt(v).is_empty() {
                    return Err(cue_err(line_no, "prompt names no object"));
                }
                if self.text.replace(v.to_string()).is_some() {
                    return Err(dup(key));
                }
            }
            "effect" => {
                let e = value.parse().map_err(|e: String| cue_err(line_no, e))?;
                if self.effect.replace(e).is_some() {
                    return Err(dup(key));
                }
            }
            "strength" => {
                let v = parse_unit(line_no, key, value)?;
                if self.strength.replace(v).is_some() {
                    return Err(dup(key));
                }
            }
            "floor" => {
                let v = parse_unit(line_no, key, value)?;
                if self.floor.replace(v).is_some() {
                    return Err(dup(key));
                }
            }
            "feather" => {
                let (a, b) = two_fields(line_no, key, value)?;
                let inner = parse_real(line_no, key, a)?;
                let outer = parse_real(line_no, key, b)?;
                if inner < 0.0 {
                    return Err(cue_err(line_no, "feather: inner radius is negative"));
                }
                if outer <= inner {
                    return Err(cue_err(line_no, "feather: outer radius must exceed inner"));
                }
                if self.feather.replace((inner, outer)).is_some() {
                    return Err(dup(key));
                }
            }
            "ramp" => {
                let (a, b) = two_fields(line_no, key, value)?;
                let ms = |s: &str| -> Result<u64, ScriptError> {
                    s.parse()
                        .map_err(|_| cue_err(line_no, format!("ramp: expected milliseconds, found {s:?}")))
                };
                if self.ramp.replace((ms(a)?, ms(b)?)).is_some() {
                    return Err(dup(key));
                }
            }
            other => return Err(cue_err(line_no, format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    fn finish(self, ordinal: usize) -> Result<Cue, ScriptError> {
        let text = self.text.ok_or_else(|| cue_err(self.line, "cue has no prompt line"))?;
        let mut cue = Cue::new(
            self.id.unwrap_or_else(|| format!("cue-{ordinal}")),
            self.start,
            self.end,
            &text,
        );
        if let Some(e) = self.effect {
            cue.effect = e;
        }
        if let Some(s) = self.strength {
            cue.strength = s;
        }
        if let Some((inner, outer)) = self.feather {
            cue.feather_inner_px = inner;
            cue.feather_outer_px = outer;
        }
        if let Some((attack, release)) = self.ramp {
            cue.attack_ms = attack;
            cue.release_ms = release;
        }
        if let Some(f) = self.floor {
            cue.floor_luma = f;
        }
        Ok(cue)
    }
}

/// Parses the cue-block format. Blank lines end a block; `#` lines are
/// ignored everywhere.
pub fn parse_script(text: &str) -> Result<Script, ScriptError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut cues: Vec<(usize, Cue)> = Vec::new();
    let mut pending: Option<PendingCue> = None;
    let mut ordinal = 0usize;

    let mut close = |pending: &mut Option<PendingCue>, cues: &mut Vec<(usize, Cue)>| -> Result<(), ScriptError> {
        if let Some(p) = pending.take() {
            ordinal += 1;
            let line = p.line;
            let cue = p.finish(ordinal)?;
            if cues.iter().any(|(_, c)| c.id == cue.id) {
                return Err(cue_err(line, format!("duplicate cue id {:?}", cue.id)));
            }
            cues.push((line, cue));
        }
        Ok(())
    };

    for (idx, raw) in text.split('\n').enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let trimmed = line.trim();
        if trimmed.is_empty() {
            close(&mut pending, &mut cues)?;
            continue;
        }
        if trimmed.starts_with('#') {
            continue;
        }
        match pending.as_mut() {
            None => {
                let (start, end) = parse_range(line_no, trimmed)?;
                pending = Some(PendingCue {
                    line: line_no,
                    start,
                    end,
                    id: None,
                    text: None,
                    effect: None,
                    strength: None,
                    feather: None,
                    ramp: None,
                    floor: None,
                });
            }
            Some(p) => {
                let (key, value) = trimmed
                    .split_once(':')
                    .ok_or_else(|| cue_err(line_no, format!("expected `key: value`, found {trimmed:?}")))?;
                p.set_key(line_no, &key.trim().to_ascii_lowercase(), value)?;
            }
        }
    }
    close(&mut pending, &mut cues)?;

    // Stable sort keeps file order among equal starts.
    cues.sort_by_key(|(_, c)| c.start);
    Ok(Script {
        cues: cues.into_iter().map(|(_, c)| c).collect(),
        source_path: String::new(),
    })
}

/// Like [`parse_script`] but accepts arbitrary bytes; invalid UTF-8 is
/// reported against the line it occurs on.
pub fn parse_script_bytes(bytes: &[u8]) -> Result<Script, ScriptError> {
    match std::str::from_utf8(bytes) {
        Ok(text) => parse_script(text),
        Err(e) => {
            let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
            Err(cue_err(line, "invalid UTF-8"))
        }
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: ScriptError,
    },
}

pub fn load_script(path: &Path) -> Result<Script, LoadError> {
    let display = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| LoadError::Io {
        path: display.clone(),
        source,
    })?;
    let mut script = parse_script_bytes(&bytes).map_err(|source| LoadError::Parse {
        path: display.clone(),
        source,
    })?;
    script.source_path = display;
    Ok(script)
}

/// Writes the canonical form; every key is emitted explicitly.
pub fn format_script(script: &Script) -> String {
    let mut out = String::new();
    for (i, cue) in script.cues.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("{} --> {}\n", cue.start, cue.end));
        out.push_str(&format!("id: {}\n", cue.id));
        out.push_str(&format!("prompt: {}\n", cue.script_text));
        out.push_str(&format!("effect: {}\n", cue.effect));
        out.push_str(&format!("strength: {}\n", cue.strength));
        out.push_str(&format!("feather: {} {}\n", cue.feather_inner_px, cue.feather_outer_px));
        out.push_str(&format!("ramp: {} {}\n", cue.attack_ms, cue.release_ms));
        out.push_str(&format!("floor: {}\n", cue.floor_luma));
    }
    out
}
