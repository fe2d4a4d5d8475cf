//! Pixel grids and axis-aligned boxes.
//!
//! Pixels are stored as `f32` in `[0, 1]`, row-major with interleaved
//! channels, so that images round-trip bit-exactly through dataset blobs.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Shape of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageDims {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl ImageDims {
    pub const fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
        }
    }

    pub const fn len(&self) -> usize {
        self.width * self.height * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    dims: ImageDims,
    pixels: Vec<f32>,
}

impl Image {
    pub fn filled(dims: ImageDims, value: f32) -> Self {
        Self {
            dims,
            pixels: vec![value; dims.len()],
        }
    }

    pub fn from_pixels(dims: ImageDims, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != dims.len() {
            return Err(LabError::DimensionMismatch {
                expected: dims.len(),
                actual: pixels.len(),
            });
        }
        if dims.channels != 1 && dims.channels != 3 {
            return Err(LabError::InvalidConfig(format!(
                "images have 1 or 3 channels, got {}",
                dims.channels
            )));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(LabError::InvalidConfig(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Self { dims, pixels })
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn channels(&self) -> usize {
        self.dims.channels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.pixels[(y * self.dims.width + x) * self.dims.channels + c]
    }

    /// Writes a value, clamped to `[0, 1]`.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f32) {
        let idx = (y * self.dims.width + x) * self.dims.channels + c;
        self.pixels[idx] = value.clamp(0.0, 1.0);
    }

    pub fn full_box(&self) -> BBox {
        BBox::new(0, 0, self.dims.width, self.dims.height)
    }

    pub fn crop(&self, bbox: BBox) -> Result<Image> {
        bbox.check_within(self.dims.width, self.dims.height)?;
        let c = self.dims.channels;
        let mut pixels = Vec::with_capacity(bbox.w * bbox.h * c);
        for y in bbox.y..bbox.y + bbox.h {
            let start = (y * self.dims.width + bbox.x) * c;
            pixels.extend_from_slice(&self.pixels[start..start + bbox.w * c]);
        }
        Ok(Image {
            dims: ImageDims::new(bbox.w, bbox.h, c),
            pixels,
        })
    }

    /// Nearest-neighbour resize using pixel-centre sampling.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Image {
        if width == self.dims.width && height == self.dims.height {
            return self.clone();
        }
        let c = self.dims.channels;
        let mut pixels = Vec::with_capacity(width * height * c);
        for y in 0..height {
            let sy = nearest_source(y, height, self.dims.height);
            for x in 0..width {
                let sx = nearest_source(x, width, self.dims.width);
                let start = (sy * self.dims.width + sx) * c;
                pixels.extend_from_slice(&self.pixels[start..start + c]);
            }
        }
        Image {
            dims: ImageDims::new(width, height, c),
            pixels,
        }
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        let (w, c) = (self.dims.width, self.dims.channels);
        for y in 0..self.dims.height {
            for x in 0..w {
                let src = (y * w + (w - 1 - x)) * c;
                let dst = (y * w + x) * c;
                out.pixels[dst..dst + c].copy_from_slice(&self.pixels[src..src + c]);
            }
        }
        out
    }

    /// Converts between grayscale and RGB. RGB to gray averages the channels;
    /// gray to RGB replicates the single channel.
    pub fn to_channels(&self, channels: usize) -> Result<Image> {
        match (self.dims.channels, channels) {
            (a, b) if a == b => Ok(self.clone()),
            (3, 1) => {
                let pixels = self
                    .pixels
                    .chunks_exact(3)
                    .map(|p| ((p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0) as f32)
                    .collect();
                Ok(Image {
                    dims: ImageDims::new(self.dims.width, self.dims.height, 1),
                    pixels,
                })
            }
            (1, 3) => {
                let pixels = self.pixels.iter().flat_map(|&p| [p, p, p]).collect();
                Ok(Image {
                    dims: ImageDims::new(self.dims.width, self.dims.height, 3),
                    pixels,
                })
            }
            (_, b) => Err(LabError::InvalidConfig(format!(
                "cannot convert {} channels to {b}",
                self.dims.channels
            ))),
        }
    }

    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64> {
        if self.dims != other.dims {
            return Err(LabError::DimensionMismatch {
                expected: self.dims.len(),
                actual: other.dims.len(),
            });
        }
        let total: f64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .sum();
        Ok(total / self.pixels.len() as f64)
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }
}

#[inline]
fn nearest_source(dst: usize, dst_len: usize, src_len: usize) -> usize {
    let pos = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64).floor() as usize;
    pos.min(src_len - 1)
}

/// Axis-aligned box in pixel units: top-left corner plus extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BBox {
    pub const fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub const fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn check_within(&self, width: usize, height: usize) -> Result<()> {
        if self.w == 0 || self.h == 0 || self.x + self.w > width || self.y + self.h > height {
            return Err(LabError::DegenerateBox(*self));
        }
        Ok(())
    }

    pub fn intersection(&self, other: &BBox) -> usize {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.w).min(other.x + other.w);
        let y1 = (self.y + self.h).min(other.y + other.h);
        x1.saturating_sub(x0) * y1.saturating_sub(y0)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}
