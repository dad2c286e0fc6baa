//! Numbered frame sequences (`frame_%06d.png`).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};

use super::PipelineError;
use crate::geometry::FrameDims;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub dir: PathBuf,
    /// First frame index.
    pub first: u64,
    pub count: u64,
    pub dims: FrameDims,
}

pub fn frame_name(index: u64) -> String {
    format!("frame_{index:06}.png")
}

/// Parses `frame_<digits>.png` (at least six digits).
pub fn parse_frame_name(name: &str) -> Option<u64> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".png")?;
    if digits.len() < 6 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

impl FrameSequence {
    /// Scans `dir` for a contiguous run of numbered frames sharing one 2:1 size.
    pub fn open(dir: &Path) -> Result<Self, PipelineError> {
        let entries = fs::read_dir(dir).map_err(|e| PipelineError::InputMissing(format!("{}: {e}", dir.display())))?;
        let mut indices: Vec<u64> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().and_then(parse_frame_name))
            .collect();
        indices.sort_unstable();
        let (Some(&first), Some(&last)) = (indices.first(), indices.last()) else {
            return Err(PipelineError::InputMissing(format!(
                "no frame_NNNNNN.png files in {}",
                dir.display()
            )));
        };
        if let Some(w) = indices.windows(2).find(|w| w[1] != w[0] + 1) {
            return Err(PipelineError::InputMissing(format!(
                "frame sequence in {} has a gap after {}",
                dir.display(),
                frame_name(w[0])
            )));
        }
        let mut dims: Option<(u32, u32)> = None;
        for &i in &indices {
            let path = dir.join(frame_name(i));
            let d =
                image::image_dimensions(&path).map_err(|e| PipelineError::Image(format!("{}: {e}", path.display())))?;
            match dims {
                None => dims = Some(d),
                Some(prev) if prev != d => {
                    return Err(PipelineError::DimsInconsistent(format!(
                        "{} is {}x{}, earlier frames are {}x{}",
                        path.display(),
                        d.0,
                        d.1,
                        prev.0,
                        prev.1
                    )))
                }
                Some(_) => {}
            }
        }
        let (w, h) = dims.expect("at least one frame");
        let dims =
            FrameDims::new(w as usize, h as usize).map_err(|e| PipelineError::DimsInconsistent(e.to_string()))?;
        Ok(FrameSequence {
            dir: dir.to_path_buf(),
            first,
            count: last - first + 1,
            dims,
        })
    }

    pub fn last(&self) -> u64 {
        self.first + self.count - 1
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<u64> {
        self.first..=self.last()
    }

    pub fn path(&self, index: u64) -> PathBuf {
        self.dir.join(frame_name(index))
    }

    pub fn load(&self, index: u64) -> Result<RgbImage, PipelineError> {
        load_rgb(&self.path(index))
    }
}

pub fn load_rgb(path: &Path) -> Result<RgbImage, PipelineError> {
    image::open(path)
        .map(|img| img.into_rgb8())
        .map_err(|e| PipelineError::Image(format!("{}: {e}", path.display())))
}

fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

/// Encodes to a temporary name and renames, so an interrupted run never
/// leaves a truncated frame behind.
pub fn write_png_atomic(image: &RgbImage, path: &Path) -> Result<(), PipelineError> {
    let tmp = partial_path(path);
    let io = |e: std::io::Error| PipelineError::Io(format!("{}: {e}", path.display()));
    {
        let file = fs::File::create(&tmp).map_err(io)?;
        let mut w = BufWriter::new(file);
        image
            .write_to(&mut w, ImageFormat::Png)
            .map_err(|e| PipelineError::Image(format!("{}: {e}", path.display())))?;
        w.flush().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}

pub fn copy_atomic(src: &Path, dst: &Path) -> Result<(), PipelineError> {
    let tmp = partial_path(dst);
    let io = |e: std::io::Error| PipelineError::Io(format!("{} -> {}: {e}", src.display(), dst.display()));
    fs::copy(src, &tmp).map_err(io)?;
    fs::rename(&tmp, dst).map_err(io)
}
