use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::image::{BBox, Image, ImageDims};

/// Parameters of the random view generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Crop area as a fraction of the source, drawn uniformly.
    pub crop_area: (f64, f64),
    pub flip_prob: f64,
    /// Brightness factor is drawn from `1 +- brightness`.
    pub brightness: f64,
    /// Contrast factor around the image mean is drawn from `1 +- contrast`.
    pub contrast: f64,
    /// Probability of a 3x3 binomial blur.
    pub blur_prob: f64,
    /// Probability of converting RGB input to gray. Identity on 1 channel.
    pub grayscale_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop_area: (0.2, 1.0),
            flip_prob: 0.5,
            brightness: 0.4,
            contrast: 0.4,
            blur_prob: 0.5,
            grayscale_prob: 0.2,
        }
    }
}

impl AugmentConfig {
    /// No-op augmentation.
    pub fn identity() -> Self {
        Self {
            crop_area: (1.0, 1.0),
            flip_prob: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            blur_prob: 0.0,
            grayscale_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_area;
        let probs = [self.flip_prob, self.blur_prob, self.grayscale_prob];
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            Err(LabError::InvalidConfig(format!(
                "crop area range ({lo}, {hi}) must lie in (0, 1]"
            )))
        } else if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            Err(LabError::InvalidConfig("probabilities must lie in [0, 1]".into()))
        } else if !(0.0..1.0).contains(&self.brightness) || !(0.0..1.0).contains(&self.contrast) {
            Err(LabError::InvalidConfig(
                "brightness and contrast jitter must lie in [0, 1)".into(),
            ))
        } else {
            Ok(())
        }
    }
}

/// Draws a crop box; returns it with the sampled area fraction.
pub fn sample_crop(width: usize, height: usize, area: (f64, f64), rng: &mut impl Rng) -> (BBox, f64) {
    let fraction = if area.0 < area.1 {
        rng.random_range(area.0..=area.1)
    } else {
        area.0
    };
    let side = fraction.sqrt();
    let w = ((side * width as f64).round() as usize).clamp(1, width);
    let h = ((side * height as f64).round() as usize).clamp(1, height);
    let x = rng.random_range(0..=width - w);
    let y = rng.random_range(0..=height - h);
    (BBox::new(x, y, w, h), fraction)
}

/// Produces a random view of `image` at `out` dimensions: crop and resize,
/// flip, brightness and contrast jitter, then optional blur. Output channels
/// follow `out.channels`.
pub fn augment(image: &Image, config: &AugmentConfig, out: ImageDims, rng: &mut impl Rng) -> Result<Image> {
    let (bbox, _) = sample_crop(image.width(), image.height(), config.crop_area, rng);
    let mut view = image.crop(bbox)?.resize_nearest(out.width, out.height);
    if rng.random_bool(config.flip_prob) {
        view = view.flip_horizontal();
    }
    if view.channels() == 3 && rng.random_bool(config.grayscale_prob) {
        view = view.to_channels(1)?.to_channels(3)?;
    }
    let b = jitter_factor(config.brightness, rng);
    let c = jitter_factor(config.contrast, rng);
    if b != 1.0 || c != 1.0 {
        let mean = view.pixels().iter().map(|&p| p as f64).sum::<f64>() / view.pixels().len() as f64;
        let bm = b * mean;
        for p in view.pixels_mut() {
            *p = (((*p as f64) * b - bm) * c + bm).clamp(0.0, 1.0) as f32;
        }
    }
    if rng.random_bool(config.blur_prob) {
        view = blur3(&view);
    }
    view.to_channels(out.channels)
}

fn jitter_factor(range: f64, rng: &mut impl Rng) -> f64 {
    if range > 0.0 {
        rng.random_range(1.0 - range..=1.0 + range)
    } else {
        1.0
    }
}

/// Separable `[1, 2, 1] / 4` blur with clamped borders.
fn blur3(image: &Image) -> Image {
    let (w, h, c) = (image.width(), image.height(), image.channels());
    let src = image.pixels();
    let idx = |x: usize, y: usize, ch: usize| (y * w + x) * c + ch;
    let mut tmp = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let (l, r) = (x.saturating_sub(1), (x + 1).min(w - 1));
            for ch in 0..c {
                tmp[idx(x, y, ch)] = 0.25 * src[idx(l, y, ch)] + 0.5 * src[idx(x, y, ch)] + 0.25 * src[idx(r, y, ch)];
            }
        }
    }
    let mut out = image.clone();
    let dst = out.pixels_mut();
    for y in 0..h {
        let (u, d) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            for ch in 0..c {
                dst[idx(x, y, ch)] =
                    (0.25 * tmp[idx(x, u, ch)] + 0.5 * tmp[idx(x, y, ch)] + 0.25 * tmp[idx(x, d, ch)]).clamp(0.0, 1.0);
            }
        }
    }
    out
}
