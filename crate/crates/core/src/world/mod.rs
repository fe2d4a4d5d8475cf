//! Procedurally generated labelled images, transformation trajectories,
//! videos with region proposals and the scene/box dataset pair.
//!
//! Every generator is a pure function of its config and seed.

mod bias;
mod render;
pub mod store;
mod trajectory;
mod video;

use rand::seq::IndexedRandom;
use rand::Rng;

pub use bias::{make_bias_datasets, BiasConfig, BiasDatasets, Scene};
pub use render::{
    render, render_object, wrap_degrees, InstanceLatent, ObjectSpec, OccluderSide,
    RenderedObject, ALBEDO_RANGE, ASPECT_RANGE, GAIN_RANGE, MARKING_FREQ_RANGE, MAX_CATEGORIES,
    SIZE_RANGE,
};
pub use trajectory::{
    make_trajectory_dataset, Trajectory, TrajectoryConfig, Transformation,
    MAX_TRAJECTORY_OCCLUSION,
};
pub use video::{make_video_dataset, GtTrack, PlacedObject, Region, Video, VideoConfig};

use crate::error::{LabError, Result};
use crate::image::{Image, ImageDims};
use crate::rng::LabRng;

/// Size of isolated object images and of the encoder input.
pub const DEFAULT_OBJECT_DIMS: ImageDims = ImageDims::new(16, 16, 1);

/// An image with its ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub category: usize,
    pub instance_id: u32,
    pub spec: ObjectSpec,
}

impl Sample {
    /// Labels are always derived from the spec.
    pub fn new(spec: ObjectSpec, image: Image) -> Self {
        Self {
            image,
            category: spec.category,
            instance_id: spec.instance_id,
            spec,
        }
    }
}

pub(crate) fn check_class_count(n_classes: usize) -> Result<()> {
    if n_classes == 0 || n_classes > MAX_CATEGORIES {
        return Err(LabError::InvalidConfig(format!(
            "n_classes must be in 1..={MAX_CATEGORIES}, got {n_classes}"
        )));
    }
    Ok(())
}

pub(crate) fn random_latent(rng: &mut LabRng) -> InstanceLatent {
    InstanceLatent {
        size: rng.random_range(SIZE_RANGE.0..=SIZE_RANGE.1),
        aspect: rng.random_range(ASPECT_RANGE.0..=ASPECT_RANGE.1),
        marking_freq: rng.random_range(MARKING_FREQ_RANGE.0..=MARKING_FREQ_RANGE.1),
        marking_phase: rng.random_range(0.0..2.0 * std::f64::consts::PI),
        albedo: rng.random_range(ALBEDO_RANGE.0..=ALBEDO_RANGE.1),
    }
}

/// A random, unoccluded, white-lit object of the given category.
pub(crate) fn random_spec(category: usize, instance_id: u32, rng: &mut LabRng) -> ObjectSpec {
    let instance = random_latent(rng);
    let pose = rng.random_range(0.0..360.0);
    let illum_dir = rng.random_range(0.0..360.0);
    let occluder_side = *OccluderSide::ALL.choose(rng).expect("non-empty");
    ObjectSpec {
        category,
        instance_id,
        instance,
        pose,
        occlusion: 0.0,
        occluder_side,
        illum_dir,
        illum_color: [1.0; 3],
    }
}

/// Low-amplitude i.i.d. texture around `base`.
pub(crate) fn textured_background(dims: ImageDims, base: f64, amplitude: f64, rng: &mut LabRng) -> Image {
    let mut image = Image::filled(dims, 0.0);
    for px in image.pixels_mut() {
        let v = base + amplitude * rng.random_range(-1.0..=1.0);
        *px = v.clamp(0.0, 1.0) as f32;
    }
    image
}

/// Copies the visible pixels of a rendered object onto `canvas` at `(x, y)`.
pub(crate) fn paste(canvas: &mut Image, object: &RenderedObject, x: usize, y: usize) {
    let dims = object.image.dims();
    for oy in 0..dims.height {
        for ox in 0..dims.width {
            if !object.visible[oy * dims.width + ox] {
                continue;
            }
            for c in 0..dims.channels {
                canvas.set(x + ox, y + oy, c, object.image.get(ox, oy, c));
            }
        }
    }
}
