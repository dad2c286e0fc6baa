//! Row-major, zero-first run-length mask codec.
//!
//! `counts` alternates zero-runs and one-runs over the flattened mask and
//! always starts with a zero-run, which is empty when the first pixel is set.

use serde::{Deserialize, Serialize};

use super::ClientError;
use crate::geometry::{Grid, Mask};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRle {
    pub height: usize,
    pub width: usize,
    pub counts: Vec<u64>,
}

impl MaskRle {
    /// Checks that the runs cover exactly `width * height` pixels.
    pub fn validate(&self) -> Result<(), ClientError> {
        let mut total: u64 = 0;
        for &c in &self.counts {
            total = total
                .checked_add(c)
                .ok_or_else(|| ClientError::MalformedRle("run counts overflow".into()))?;
        }
        let expected = (self.width as u64) * (self.height as u64);
        if total != expected {
            return Err(ClientError::MalformedRle(format!(
                "runs cover {total} pixels, mask is {}x{} = {expected}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// Number of set pixels, without decoding.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }
}

pub fn rle_encode(mask: &Mask) -> MaskRle {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run: u64 = 0;
    for &v in mask.as_slice() {
        if v != current {
            counts.push(run);
            run = 0;
            current = v;
        }
        run += 1;
    }
    counts.push(run);
    MaskRle {
        height: mask.height(),
        width: mask.width(),
        counts,
    }
}

pub fn rle_decode(rle: &MaskRle) -> Result<Mask, ClientError> {
    rle.validate()?;
    let mut data = Vec::with_capacity(rle.width * rle.height);
    let mut value = false;
    for &c in &rle.counts {
        data.extend(std::iter::repeat_n(value, c as usize));
        value = !value;
    }
    Ok(Grid::from_vec(rle.width, rle.height, data).expect("validated length"))
}
