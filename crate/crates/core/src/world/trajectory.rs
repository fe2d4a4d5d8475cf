use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::render::{render, wrap_degrees, ObjectSpec};
use super::{random_spec, Sample, DEFAULT_OBJECT_DIMS};
use crate::error::{LabError, Result};
use crate::image::ImageDims;
use crate::rng;

/// Largest occlusion fraction reached by occlusion trajectories.
pub const MAX_TRAJECTORY_OCCLUSION: f64 = 0.5;

/// The transformation axis a trajectory sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Transformation {
    #[serde(rename = "viewpoint")]
    Viewpoint,
    #[serde(rename = "occlusion")]
    Occlusion,
    #[serde(rename = "illum_dir")]
    IllumDir,
    #[serde(rename = "illum_color")]
    IllumColor,
    #[serde(rename = "instance")]
    Instance,
    #[serde(rename = "instance+viewpoint")]
    InstanceViewpoint,
}

impl Transformation {
    pub const ALL: [Transformation; 6] = [
        Transformation::Occlusion,
        Transformation::Viewpoint,
        Transformation::IllumDir,
        Transformation::IllumColor,
        Transformation::Instance,
        Transformation::InstanceViewpoint,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Transformation::Viewpoint => "viewpoint",
            Transformation::Occlusion => "occlusion",
            Transformation::IllumDir => "illum_dir",
            Transformation::IllumColor => "illum_color",
            Transformation::Instance => "instance",
            Transformation::InstanceViewpoint => "instance+viewpoint",
        }
    }

    /// Colour trajectories are only meaningful with three channels.
    pub fn default_channels(&self) -> usize {
        match self {
            Transformation::IllumColor => 3,
            _ => 1,
        }
    }

    fn varies_instance(&self) -> bool {
        matches!(
            self,
            Transformation::Instance | Transformation::InstanceViewpoint
        )
    }
}

impl fmt::Display for Transformation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Transformation {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        Transformation::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s || t.name().replace('_', "-") == s)
            .ok_or_else(|| LabError::UnknownTransformation(s.to_string()))
    }
}

/// A set of transformed versions of one reference object.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub transformation: Transformation,
    pub category: usize,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub transformation: Transformation,
    pub n_classes: usize,
    pub n_trajectories_per_class: usize,
    pub steps: usize,
    pub seed: u64,
    #[serde(default = "default_size")]
    pub width: usize,
    #[serde(default = "default_size")]
    pub height: usize,
    /// Defaults to 3 for colour trajectories and 1 otherwise.
    #[serde(default)]
    pub channels: Option<usize>,
}

fn default_size() -> usize {
    DEFAULT_OBJECT_DIMS.width
}

impl TrajectoryConfig {
    pub fn new(
        transformation: Transformation,
        n_classes: usize,
        n_trajectories_per_class: usize,
        steps: usize,
        seed: u64,
    ) -> Self {
        Self {
            transformation,
            n_classes,
            n_trajectories_per_class,
            steps,
            seed,
            width: DEFAULT_OBJECT_DIMS.width,
            height: DEFAULT_OBJECT_DIMS.height,
            channels: None,
        }
    }

    pub fn dims(&self) -> ImageDims {
        ImageDims::new(
            self.width,
            self.height,
            self.channels
                .unwrap_or_else(|| self.transformation.default_channels()),
        )
    }
}

/// Parameters of step `k` of `steps` along the swept axis. Grids:
///
/// * viewpoint and illumination direction: `base + 360 k / steps` degrees,
///   covering the full circle without repeating the start;
/// * occlusion: `0.5 k / (steps - 1)`, i.e. from unoccluded to half hidden;
/// * illumination colour: a cosine palette `1 + 0.5 cos(φ + 2πk/steps - 2πc/3)`
///   per channel `c`, which keeps every gain in `[0.5, 1.5]`;
/// * instance: linear interpolation between two random instance latents.
fn step_spec(
    base: &ObjectSpec,
    other_instance: &ObjectSpec,
    transformation: Transformation,
    k: usize,
    steps: usize,
    palette_phase: f64,
) -> ObjectSpec {
    let mut spec = *base;
    let frac_closed = k as f64 / (steps - 1) as f64;
    let frac_circle = k as f64 / steps as f64;
    match transformation {
        Transformation::Viewpoint => spec.pose = wrap_degrees(base.pose + 360.0 * frac_circle),
        Transformation::Occlusion => spec.occlusion = MAX_TRAJECTORY_OCCLUSION * frac_closed,
        Transformation::IllumDir => {
            spec.illum_dir = wrap_degrees(base.illum_dir + 360.0 * frac_circle)
        }
        Transformation::IllumColor => {
            let phi = palette_phase + 2.0 * std::f64::consts::PI * frac_circle;
            for (c, gain) in spec.illum_color.iter_mut().enumerate() {
                let offset = 2.0 * std::f64::consts::PI * c as f64 / 3.0;
                *gain = (1.0 + 0.5 * (phi - offset).cos()).clamp(0.5, 1.5);
            }
        }
        Transformation::Instance => {
            spec.instance = base.instance.lerp(&other_instance.instance, frac_closed);
        }
        Transformation::InstanceViewpoint => {
            spec.instance = base.instance.lerp(&other_instance.instance, frac_closed);
            spec.pose = wrap_degrees(base.pose + 360.0 * frac_circle);
        }
    }
    spec
}

/// Builds `n_classes * n_trajectories_per_class` trajectories, class-balanced
/// and ordered by class then trajectory index.
pub fn make_trajectory_dataset(config: &TrajectoryConfig) -> Result<Vec<Trajectory>> {
    if config.steps < 2 {
        return Err(LabError::InvalidConfig(format!(
            "trajectories need at least 2 steps, got {}",
            config.steps
        )));
    }
    super::check_class_count(config.n_classes)?;
    let dims = config.dims();
    let transformation = config.transformation;
    let steps = config.steps;
    let mut out = Vec::with_capacity(config.n_classes * config.n_trajectories_per_class);
    for category in 0..config.n_classes {
        for t in 0..config.n_trajectories_per_class {
            let index = (category * config.n_trajectories_per_class + t) as u64;
            let mut rng = rng::stream(config.seed, transformation.name(), index);
            let base_id = (index * steps as u64) as u32;
            let mut base = random_spec(category, base_id, &mut rng);
            base.occlusion = 0.0;
            let other = random_spec(category, base_id + 1, &mut rng);
            let palette_phase = rng.random_range(0.0..2.0 * std::f64::consts::PI);
            let samples = (0..steps)
                .map(|k| {
                    let mut spec =
                        step_spec(&base, &other, transformation, k, steps, palette_phase);
                    if transformation.varies_instance() {
                        spec.instance_id = base_id + k as u32;
                    }
                    Ok(Sample::new(spec, render(&spec, dims)?))
                })
                .collect::<Result<Vec<_>>>()?;
            out.push(Trajectory {
                transformation,
                category,
                samples,
            });
        }
    }
    Ok(out)
}
