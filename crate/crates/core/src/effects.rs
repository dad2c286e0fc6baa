//! Attention-cue rendering: feathered attenuation fields, the temporal
//! envelope, and the per-pixel vignette and desaturation kernels.
//!
//! All kernels work directly on 8-bit sRGB values. Rows are processed in
//! parallel, but every output byte depends only on its own input pixel, so
//! results do not depend on the worker count.

use image::RgbImage;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{wrap_distance_transform, GeometryError, Grid, Mask};
use crate::script::{Cue, EffectKind, Timecode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EffectError {
    #[error("field is {field_w}x{field_h} but frame is {frame_w}x{frame_h}")]
    DimsMismatch {
        field_w: usize,
        field_h: usize,
        frame_w: usize,
        frame_h: usize,
    },
    #[error("mask has no set pixels")]
    EmptyMask,
    #[error("feather radii must satisfy 0 <= inner < outer (got {inner}, {outer})")]
    BadFeather { inner: f32, outer: f32 },
    #[error("no cue layers to combine")]
    NoLayers,
}

/// Per-pixel attenuation weight: 0 keeps the pixel untouched (target), 1 is
/// full periphery.
#[derive(Debug, Clone, PartialEq)]
pub struct AttenuationField(pub Grid<f32>);

impl AttenuationField {
    /// The identity field (no attenuation anywhere).
    pub fn zeros(width: usize, height: usize) -> Self {
        AttenuationField(Grid::filled(width, height, 0.0))
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.0.get(x, y)
    }

    pub fn as_slice(&self) -> &[f32] {
        self.0.as_slice()
    }

    /// Rotates right by `dx` columns (wrapping) and down by `dy` rows.
    /// Rows entering from outside are full periphery.
    pub fn shifted(&self, dx: i64, dy: i64) -> Self {
        AttenuationField(self.0.shifted(dx, dy, 1.0))
    }
}

pub fn smoothstep(e0: f32, e1: f32, x: f32) -> f32 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

pub fn attenuation_from_distance(
    distance: &Grid<f32>,
    inner: f32,
    outer: f32,
) -> Result<AttenuationField, EffectError> {
    if !(inner >= 0.0 && outer > inner) {
        return Err(EffectError::BadFeather { inner, outer });
    }
    let data = distance
        .as_slice()
        .iter()
        .map(|&d| smoothstep(inner, outer, d))
        .collect();
    Ok(AttenuationField(
        Grid::from_vec(distance.width(), distance.height(), data).expect("same size"),
    ))
}

/// `smoothstep(inner, outer, D)` where `D` is the wrap-aware distance to the mask.
pub fn attenuation_field(mask: &Mask, inner: f32, outer: f32) -> Result<AttenuationField, EffectError> {
    let distance = wrap_distance_transform(mask).map_err(|e| match e {
        GeometryError::EmptyMask => EffectError::EmptyMask,
        other => unreachable!("distance transform only fails on empty masks: {other}"),
    })?;
    attenuation_from_distance(&distance, inner, outer)
}

/// Envelope at `t_ms` milliseconds (fractional, for frame timestamps).
///
/// Rises linearly over the attack, holds at 1, falls linearly over the
/// release, and is 0 outside `[start, end)`. When attack and release do not
/// fit in the cue they are scaled down proportionally.
pub fn envelope_at(cue: &Cue, t_ms: f64) -> f64 {
    let start = cue.start.millis() as f64;
    let end = cue.end.millis() as f64;
    if !(t_ms >= start && t_ms < end) {
        return 0.0;
    }
    let len = end - start;
    let (mut attack, mut release) = (cue.attack_ms as f64, cue.release_ms as f64);
    if attack + release > len {
        let scale = len / (attack + release);
        attack *= scale;
        release *= scale;
    }
    let rise = if attack > 0.0 { (t_ms - start) / attack } else { 1.0 };
    let fall = if release > 0.0 { (end - t_ms) / release } else { 1.0 };
    rise.min(fall).clamp(0.0, 1.0)
}

pub fn envelope(cue: &Cue, t: Timecode) -> f64 {
    envelope_at(cue, t.millis() as f64)
}

/// Vignette brightness multiplier for attenuation `a`, clamped to `[floor_luma, 1]`.
#[inline]
pub fn vignette_multiplier(a: f32, strength: f32, envelope: f32, floor_luma: f32) -> f32 {
    // Evaluated left to right as written so reference implementations agree bit for bit.
    (1.0 - a * strength * envelope * (1.0 - floor_luma)).clamp(floor_luma.min(1.0), 1.0)
}

#[inline]
fn scale_channel(c: u8, m: f32) -> u8 {
    (c as f32 * m).round() as u8
}

/// Rec. 709 luma, rounded.
#[inline]
pub fn luma709(r: u8, g: u8, b: u8) -> u8 {
    (0.2126f32 * r as f32 + 0.7152 * g as f32 + 0.0722 * b as f32).round() as u8
}

#[inline]
fn desaturate_pixel(px: &mut [u8], w: f32) {
    let gray = luma709(px[0], px[1], px[2]) as f32;
    for c in px.iter_mut() {
        let v = *c as f32;
        *c = (v + (gray - v) * w).round() as u8;
    }
}

fn check_dims(frame: &RgbImage, field: &AttenuationField) -> Result<(), EffectError> {
    let (fw, fh) = (frame.width() as usize, frame.height() as usize);
    if (field.width(), field.height()) != (fw, fh) {
        return Err(EffectError::DimsMismatch {
            field_w: field.width(),
            field_h: field.height(),
            frame_w: fw,
            frame_h: fh,
        });
    }
    Ok(())
}

/// Runs `f(row_pixels, row_index)` over every row in parallel.
fn for_each_row(frame: &mut RgbImage, f: impl Fn(&mut [u8], usize) + Sync) {
    let row_bytes = frame.width() as usize * 3;
    if row_bytes == 0 {
        return;
    }
    let buf: &mut [u8] = frame;
    buf.par_chunks_mut(row_bytes).enumerate().for_each(|(y, row)| f(row, y));
}

/// Darkens each pixel by `m = 1 - a * strength * e * (1 - floor_luma)`.
pub fn apply_vignette(
    frame: &RgbImage,
    field: &AttenuationField,
    strength: f32,
    floor_luma: f32,
    envelope: f32,
) -> Result<RgbImage, EffectError> {
    check_dims(frame, field)?;
    let mut out = frame.clone();
    let width = field.width();
    for_each_row(&mut out, |row, y| {
        let a_row = field.0.row(y);
        for (px, &a) in row.chunks_exact_mut(3).zip(a_row) {
            let m = vignette_multiplier(a, strength, envelope, floor_luma);
            for c in px {
                *c = scale_channel(*c, m);
            }
        }
        debug_assert_eq!(a_row.len(), width);
    });
    Ok(out)
}

/// Blends each pixel toward its Rec. 709 gray by `a * strength * e`.
pub fn apply_desaturate(
    frame: &RgbImage,
    field: &AttenuationField,
    strength: f32,
    envelope: f32,
) -> Result<RgbImage, EffectError> {
    check_dims(frame, field)?;
    let mut out = frame.clone();
    for_each_row(&mut out, |row, y| {
        for (px, &a) in row.chunks_exact_mut(3).zip(field.0.row(y)) {
            desaturate_pixel(px, a * strength * envelope);
        }
    });
    Ok(out)
}

/// One active cue's contribution to a frame.
#[derive(Debug, Clone, Copy)]
pub struct CueLayer<'a> {
    pub field: &'a AttenuationField,
    pub strength: f32,
    pub floor_luma: f32,
    pub envelope: f32,
    pub effect: EffectKind,
}

/// Composites several simultaneous cues.
///
/// Vignette layers are merged by taking, per pixel, the largest multiplier
/// (a pixel inside any target stays bright) and applying it once.
/// Desaturation layers follow, one after another in the given order.
pub fn combine_cues(frame: &RgbImage, layers: &[CueLayer<'_>]) -> Result<RgbImage, EffectError> {
    if layers.is_empty() {
        return Err(EffectError::NoLayers);
    }
    for l in layers {
        check_dims(frame, l.field)?;
    }
    let vignettes: Vec<&CueLayer<'_>> = layers.iter().filter(|l| l.effect == EffectKind::Vignette).collect();
    let mut out = frame.clone();
    if !vignettes.is_empty() {
        for_each_row(&mut out, |row, y| {
            for (x, px) in row.chunks_exact_mut(3).enumerate() {
                let m = vignettes
                    .iter()
                    .map(|l| vignette_multiplier(l.field.get(x, y), l.strength, l.envelope, l.floor_luma))
                    .fold(f32::NEG_INFINITY, f32::max);
                for c in px {
                    *c = scale_channel(*c, m);
                }
            }
        });
    }
    for l in layers.iter().filter(|l| l.effect == EffectKind::Desaturate) {
        out = apply_desaturate(&out, l.field, l.strength, l.envelope)?;
    }
    Ok(out)
}
