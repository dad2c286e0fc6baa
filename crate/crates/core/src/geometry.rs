//! Equirectangular frame geometry.
//!
//! Longitude maps linearly to x and latitude to y; the left and right edges
//! of the frame meet at the ±180° seam. Angles are degrees at the API
//! boundary.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("frame must be 2:1 with non-zero size, got {width}x{height}")]
    BadDims { width: usize, height: usize },
    #[error("pixel ({x}, {y}) lies outside a {width}x{height} frame")]
    OutOfFrame {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    #[error("latitude {0} is outside [-90, 90]")]
    BadLatitude(f64),
    #[error("box has zero area")]
    DegenerateBox,
    #[error("box {0:?} does not fit the frame")]
    InvalidBox([f64; 4]),
    #[error("mask has no set pixels")]
    EmptyMask,
}

/// Size of a full equirectangular frame (`width == 2 * height`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameDims {
    width: usize,
    height: usize,
}

impl FrameDims {
    pub fn new(width: usize, height: usize) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 || width != 2 * height {
            return Err(GeometryError::BadDims { width, height });
        }
        Ok(FrameDims { width, height })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpherePoint {
    lat: f64,
    lon: f64,
}

impl SpherePoint {
    /// Longitude is wrapped into `[-180, 180)`.
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeometryError> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeometryError::BadLatitude(lat));
        }
        let mut lon = (lon + 180.0).rem_euclid(360.0) - 180.0;
        if lon >= 180.0 {
            lon -= 360.0;
        }
        Ok(SpherePoint { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Samples the pixel centre.
pub fn pixel_to_sphere(x: usize, y: usize, dims: FrameDims) -> Result<SpherePoint, GeometryError> {
    if x >= dims.width || y >= dims.height {
        return Err(GeometryError::OutOfFrame {
            x,
            y,
            width: dims.width,
            height: dims.height,
        });
    }
    let lon = (x as f64 + 0.5) / dims.width as f64 * 360.0 - 180.0;
    let lat = 90.0 - (y as f64 + 0.5) / dims.height as f64 * 180.0;
    Ok(SpherePoint { lat, lon })
}

/// Pixel containing the point, clamped to the frame.
pub fn sphere_to_pixel(p: SpherePoint, dims: FrameDims) -> (usize, usize) {
    let fx = ((p.lon + 180.0) / 360.0 * dims.width as f64).floor();
    let fy = ((90.0 - p.lat) / 180.0 * dims.height as f64).floor();
    let x = fx.clamp(0.0, (dims.width - 1) as f64) as usize;
    let y = fy.clamp(0.0, (dims.height - 1) as f64) as usize;
    (x, y)
}

/// Great-circle angle in degrees, haversine form.
pub fn angular_distance(a: SpherePoint, b: SpherePoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    let h = h.clamp(0.0, 1.0);
    (2.0 * h.sqrt().atan2((1.0 - h).sqrt())).to_degrees()
}

/// Axis-aligned box in sub-pixel frame coordinates, origin top-left.
/// Serialised as `[x0, y0, x1, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox { x0, y0, x1, y1 }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        BBox::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    /// True when the box is non-degenerate and lies within `width x height`.
    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
            && 0.0 <= self.x0
            && self.x0 < self.x1
            && self.x1 <= width as f64
            && 0.0 <= self.y0
            && self.y0 < self.y1
            && self.y1 <= height as f64
    }

    /// Integer pixel range `[x0, x1) x [y0, y1)` of pixels the box touches.
    pub fn pixel_span(&self, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let clamp = |v: f64, hi: usize| v.max(0.0).min(hi as f64) as usize;
        (
            clamp(self.x0.floor(), width),
            clamp(self.y0.floor(), height),
            clamp(self.x1.ceil(), width),
            clamp(self.y1.ceil(), height),
        )
    }
}

impl From<[f64; 4]> for BBox {
    fn from(a: [f64; 4]) -> Self {
        BBox::from_array(a)
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

/// Splits a box whose right edge runs past the seam into its two visible parts.
pub fn split_wrapped_bbox(raw: [f64; 4], dims: FrameDims) -> Result<Vec<BBox>, GeometryError> {
    let [mut x0, y0, mut x1, y1] = raw;
    let w = dims.width as f64;
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::InvalidBox(raw));
    }
    if x1 <= x0 || y1 <= y0 {
        return Err(GeometryError::DegenerateBox);
    }
    if x0 < 0.0 {
        x0 += w;
        x1 += w;
    }
    if y0 < 0.0 || y1 > dims.height as f64 || x1 - x0 > w || x0 >= w {
        return Err(GeometryError::InvalidBox(raw));
    }
    if x1 <= w {
        Ok(vec![BBox::new(x0, y0, x1, y1)])
    } else {
        Ok(vec![BBox::new(x0, y0, w, y1), BBox::new(0.0, y0, x1 - w, y1)])
    }
}

/// Dense row-major 2-D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Binary mask; `true` marks target pixels.
pub type Mask = Grid<bool>;

impl<T: Copy> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == width * height).then_some(Grid { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Grid { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Moves content right by `dx` columns with horizontal wrap and down by
    /// `dy` rows; rows shifted in from outside take `fill`.
    pub fn shifted(&self, dx: i64, dy: i64, fill: T) -> Self {
        let (w, h) = (self.width, self.height);
        if w == 0 || h == 0 {
            return self.clone();
        }
        let rot = dx.rem_euclid(w as i64) as usize;
        let mut out = Grid::filled(w, h, fill);
        for y in 0..h {
            let src_y = y as i64 - dy;
            if src_y < 0 || src_y >= h as i64 {
                continue;
            }
            let src = self.row(src_y as usize);
            let dst = &mut out.data[y * w..(y + 1) * w];
            dst[rot..].copy_from_slice(&src[..w - rot]);
            dst[..rot].copy_from_slice(&src[w - rot..]);
        }
        out
    }
}

impl Mask {
    pub fn count_set(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&v| v)
    }

    /// Filled rectangle covering every pixel the box touches.
    pub fn from_bbox(width: usize, height: usize, bbox: &BBox) -> Self {
        let (x0, y0, x1, y1) = bbox.pixel_span(width, height);
        Grid::from_fn(width, height, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1)
    }
}

const CHAMFER_ORTHO: u32 = 3;
const CHAMFER_DIAG: u32 = 4;

/// Approximate Euclidean distance (pixels) from each pixel to the nearest
/// set pixel, treating the left and right edges as adjacent.
///
/// Two-pass 3-4 chamfer over the mask tiled three times horizontally; the
/// middle copy is returned. Distances are the integer chamfer cost divided
/// by 3, so the result is bit-exactly equivariant under horizontal rotation.
/// The poles do not wrap.
pub fn wrap_distance_transform(mask: &Mask) -> Result<Grid<f32>, GeometryError> {
    if !mask.any() {
        return Err(GeometryError::EmptyMask);
    }
    let (w, h) = mask.dims();
    let tw = 3 * w;
    const INF: u32 = u32::MAX / 2;
    let mut cost = vec![INF; tw * h];
    for y in 0..h {
        let src = mask.row(y);
        for tile in 0..3 {
            let dst = &mut cost[y * tw + tile * w..y * tw + (tile + 1) * w];
            for (d, &s) in dst.iter_mut().zip(src) {
                if s {
                    *d = 0;
                }
            }
        }
    }

    // Forward pass: neighbours above and to the left.
    for y in 0..h {
        for x in 0..tw {
            let i = y * tw + x;
            let mut best = cost[i];
            if x > 0 {
                best = best.min(cost[i - 1] + CHAMFER_ORTHO);
            }
            if y > 0 {
                let up = i - tw;
                best = best.min(cost[up] + CHAMFER_ORTHO);
                if x > 0 {
                    best = best.min(cost[up - 1] + CHAMFER_DIAG);
                }
                if x + 1 < tw {
                    best = best.min(cost[up + 1] + CHAMFER_DIAG);
                }
            }
            cost[i] = best;
        }
    }
    // Backward pass: neighbours below and to the right.
    for y in (0..h).rev() {
        for x in (0..tw).rev() {
            let i = y * tw + x;
            let mut best = cost[i];
            if x + 1 < tw {
                best = best.min(cost[i + 1] + CHAMFER_ORTHO);
            }
            if y + 1 < h {
                let down = i + tw;
                best = best.min(cost[down] + CHAMFER_ORTHO);
                if x + 1 < tw {
                    best = best.min(cost[down + 1] + CHAMFER_DIAG);
                }
                if x > 0 {
                    best = best.min(cost[down - 1] + CHAMFER_DIAG);
                }
            }
            cost[i] = best;
        }
    }

    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        let band = &cost[y * tw + w..y * tw + 2 * w];
        data.extend(band.iter().map(|&c| c as f32 / CHAMFER_ORTHO as f32));
    }
    Ok(Grid {
        width: w,
        height: h,
        data,
    })
}
