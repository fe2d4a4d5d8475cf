//! Object specifications and the silhouette renderer.
//!
//! Objects live in a normalised frame `[-1, 1]^2`. Pose rotates the frame
//! in-plane, the instance latent scales it and chooses the stripe marking,
//! illumination direction applies a linear shading ramp in image space and
//! illumination colour multiplies each channel.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::image::{Image, ImageDims};

/// Number of silhouette families the renderer knows about.
pub const MAX_CATEGORIES: usize = 8;

pub const SIZE_RANGE: (f64, f64) = (0.55, 0.95);
pub const ASPECT_RANGE: (f64, f64) = (0.7, 1.4);
pub const MARKING_FREQ_RANGE: (f64, f64) = (1.0, 3.0);
pub const ALBEDO_RANGE: (f64, f64) = (0.55, 0.95);
pub const GAIN_RANGE: (f64, f64) = (0.5, 1.5);

/// Continuous per-instance appearance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceLatent {
    pub size: f64,
    pub aspect: f64,
    pub marking_freq: f64,
    /// Radians in `[0, 2π)`.
    pub marking_phase: f64,
    pub albedo: f64,
}

impl InstanceLatent {
    pub fn lerp(&self, other: &InstanceLatent, t: f64) -> InstanceLatent {
        let mix = |a: f64, b: f64| a + (b - a) * t;
        InstanceLatent {
            size: mix(self.size, other.size),
            aspect: mix(self.aspect, other.aspect),
            marking_freq: mix(self.marking_freq, other.marking_freq),
            marking_phase: mix(self.marking_phase, other.marking_phase),
            albedo: mix(self.albedo, other.albedo),
        }
    }
}

/// Edge of the object the rectangular occluder slides in from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OccluderSide {
    Left,
    Right,
    Top,
    Bottom,
}

impl OccluderSide {
    pub const ALL: [OccluderSide; 4] = [
        OccluderSide::Left,
        OccluderSide::Right,
        OccluderSide::Top,
        OccluderSide::Bottom,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub category: usize,
    pub instance_id: u32,
    pub instance: InstanceLatent,
    /// Degrees in `[0, 360)`.
    pub pose: f64,
    /// Fraction of object pixels hidden, in `[0, 1]`.
    pub occlusion: f64,
    pub occluder_side: OccluderSide,
    /// Degrees in `[0, 360)`.
    pub illum_dir: f64,
    pub illum_color: [f64; 3],
}

fn check_range(name: &str, value: f64, lo: f64, hi: f64, hi_inclusive: bool) -> Result<()> {
    let ok = value.is_finite() && value >= lo && if hi_inclusive { value <= hi } else { value < hi };
    if ok {
        Ok(())
    } else {
        Err(LabError::InvalidSpec(format!(
            "{name} = {value} outside [{lo}, {hi}{}",
            if hi_inclusive { "]" } else { ")" }
        )))
    }
}

impl ObjectSpec {
    pub fn validate(&self) -> Result<()> {
        if self.category >= MAX_CATEGORIES {
            return Err(LabError::InvalidSpec(format!(
                "category {} >= {MAX_CATEGORIES}",
                self.category
            )));
        }
        let inst = &self.instance;
        check_range("size", inst.size, SIZE_RANGE.0, SIZE_RANGE.1, true)?;
        check_range("aspect", inst.aspect, ASPECT_RANGE.0, ASPECT_RANGE.1, true)?;
        check_range(
            "marking_freq",
            inst.marking_freq,
            MARKING_FREQ_RANGE.0,
            MARKING_FREQ_RANGE.1,
            true,
        )?;
        check_range("marking_phase", inst.marking_phase, 0.0, 2.0 * PI, false)?;
        check_range("albedo", inst.albedo, ALBEDO_RANGE.0, ALBEDO_RANGE.1, true)?;
        check_range("pose", self.pose, 0.0, 360.0, false)?;
        check_range("occlusion", self.occlusion, 0.0, 1.0, true)?;
        check_range("illum_dir", self.illum_dir, 0.0, 360.0, false)?;
        for (c, gain) in self.illum_color.iter().enumerate() {
            check_range(&format!("illum_color[{c}]"), *gain, GAIN_RANGE.0, GAIN_RANGE.1, true)?;
        }
        Ok(())
    }
}

/// Wraps an angle into `[0, 360)`.
pub fn wrap_degrees(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360.0 for tiny negative inputs
    if wrapped >= 360.0 {
        0.0
    } else {
        wrapped
    }
}

/// Silhouette membership test in the object's unit frame.
fn inside(category: usize, a: f64, b: f64) -> bool {
    match category {
        // disk
        0 => a * a + b * b <= 1.0,
        // square
        1 => a.abs().max(b.abs()) <= 0.8,
        // triangle, apex up
        2 => {
            let t = (b + 0.75) / 1.6;
            (0.0..=1.0).contains(&t) && a.abs() <= 0.95 * t
        }
        // plus sign
        3 => (a.abs() <= 0.3 && b.abs() <= 0.95) || (b.abs() <= 0.3 && a.abs() <= 0.95),
        // ring
        4 => {
            let r2 = a * a + b * b;
            (0.36..=1.0).contains(&r2)
        }
        // L shape
        5 => {
            let in_box = a.abs() <= 0.85 && b.abs() <= 0.85;
            in_box && (a <= -0.25 || b >= 0.25)
        }
        // diamond
        6 => a.abs() + b.abs() <= 1.0,
        // horizontal bar pair
        _ => a.abs() <= 0.9 && (0.25..=0.75).contains(&b.abs()),
    }
}

/// Pipeline stages that can be toggled for equivalence checks.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RenderStages {
    pub illum_color: bool,
}

impl Default for RenderStages {
    fn default() -> Self {
        Self { illum_color: true }
    }
}

/// An object rendered on a transparent canvas: the image plus the mask of
/// visible object pixels (occluded pixels are not visible).
#[derive(Debug, Clone)]
pub struct RenderedObject {
    pub image: Image,
    pub visible: Vec<bool>,
    /// Number of pixels covered by the silhouette before occlusion.
    pub object_pixels: usize,
    /// Number of silhouette pixels hidden by the occluder.
    pub occluded_pixels: usize,
}

/// Renders `spec` on a black background.
pub fn render(spec: &ObjectSpec, dims: ImageDims) -> Result<Image> {
    Ok(render_object(spec, dims)?.image)
}

pub fn render_object(spec: &ObjectSpec, dims: ImageDims) -> Result<RenderedObject> {
    render_with(spec, dims, RenderStages::default())
}

pub(crate) fn render_with(
    spec: &ObjectSpec,
    dims: ImageDims,
    stages: RenderStages,
) -> Result<RenderedObject> {
    spec.validate()?;
    if dims.channels != 1 && dims.channels != 3 {
        return Err(LabError::InvalidConfig(format!(
            "render supports 1 or 3 channels, got {}",
            dims.channels
        )));
    }
    if dims.width == 0 || dims.height == 0 {
        return Err(LabError::InvalidConfig("render target has zero size".into()));
    }
    let (w, h) = (dims.width, dims.height);
    let inst = &spec.instance;
    let (sin_p, cos_p) = spec.pose.to_radians().sin_cos();
    let (sin_l, cos_l) = spec.illum_dir.to_radians().sin_cos();
    let sx = inst.size * inst.aspect.sqrt();
    let sy = inst.size / inst.aspect.sqrt();

    // intensity before illumination colour, per pixel; None outside silhouette
    let mut shade: Vec<Option<f64>> = vec![None; w * h];
    for y in 0..h {
        let v = (y as f64 + 0.5) / h as f64 * 2.0 - 1.0;
        for x in 0..w {
            let u = (x as f64 + 0.5) / w as f64 * 2.0 - 1.0;
            // rotate image coordinates into the object frame
            let a = (cos_p * u + sin_p * v) / sx;
            let b = (-sin_p * u + cos_p * v) / sy;
            if !inside(spec.category, a, b) {
                continue;
            }
            let stripe = if (PI * inst.marking_freq * a + inst.marking_phase).sin() > 0.0 {
                1.0
            } else {
                0.6
            };
            let ramp = 1.0 + 0.35 * (u * cos_l + v * sin_l) / std::f64::consts::SQRT_2;
            shade[y * w + x] = Some(inst.albedo * stripe * ramp);
        }
    }

    let object_pixels = shade.iter().filter(|s| s.is_some()).count();
    let occluded = occluded_set(&shade, w, spec.occlusion, spec.occluder_side);
    let occluded_pixels = occluded.iter().filter(|&&o| o).count();

    let gains: Vec<f64> = if dims.channels == 3 {
        spec.illum_color.to_vec()
    } else {
        vec![spec.illum_color.iter().sum::<f64>() / 3.0]
    };
    let mut image = Image::filled(dims, 0.0);
    let mut visible = vec![false; w * h];
    for (idx, s) in shade.iter().enumerate() {
        let Some(base) = s else { continue };
        if occluded[idx] {
            continue;
        }
        visible[idx] = true;
        let (x, y) = (idx % w, idx / w);
        for (c, gain) in gains.iter().enumerate() {
            let value = if stages.illum_color { base * gain } else { *base };
            image.set(x, y, c, value as f32);
        }
    }
    Ok(RenderedObject {
        image,
        visible,
        object_pixels,
        occluded_pixels,
    })
}

/// Marks the first `round(fraction * n)` silhouette pixels in sweep order
/// from the occluder side; the hidden set is the part of the silhouette
/// covered by an axis-aligned rectangle sliding in from that side.
fn occluded_set(shade: &[Option<f64>], w: usize, fraction: f64, side: OccluderSide) -> Vec<bool> {
    let mut order: Vec<(usize, usize, usize)> = shade
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_some())
        .map(|(idx, _)| (idx % w, idx / w, idx))
        .collect();
    let big = usize::MAX / 2;
    order.sort_by_key(|&(x, y, _)| match side {
        OccluderSide::Left => (x, y),
        OccluderSide::Right => (big - x, y),
        OccluderSide::Top => (y, x),
        OccluderSide::Bottom => (big - y, x),
    });
    let hidden = (fraction * order.len() as f64).round() as usize;
    let mut mask = vec![false; shade.len()];
    for &(_, _, idx) in order.iter().take(hidden) {
        mask[idx] = true;
    }
    mask
}
