use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::render::render_object;
use super::video::PlacedObject;
use super::{paste, random_spec, textured_background, Sample};
use crate::error::{LabError, Result};
use crate::image::{BBox, Image, ImageDims};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiasConfig {
    pub n_scenes: usize,
    pub objects_per_scene: usize,
    pub n_classes: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Box side range of the dominant (largest) object.
    pub dominant_size: (usize, usize),
    /// Box side range of the other objects; must stay below `dominant_size`.
    pub secondary_size: (usize, usize),
    /// Probability that a secondary object's category is the partner
    /// `(dominant + 1) mod n_classes` instead of uniform.
    pub cooccurrence: f64,
    /// Side of the resized cropped-box images.
    pub box_size: usize,
    pub background_level: f64,
    pub background_amplitude: f64,
}

impl Default for BiasConfig {
    fn default() -> Self {
        Self {
            n_scenes: 100,
            objects_per_scene: 2,
            n_classes: 4,
            seed: 0,
            width: 32,
            height: 32,
            channels: 1,
            dominant_size: (14, 16),
            secondary_size: (9, 12),
            cooccurrence: 0.5,
            box_size: 16,
            background_level: 0.08,
            background_amplitude: 0.04,
        }
    }
}

/// A multi-object scene. Its classification label is the category of the
/// largest box.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: Image,
    pub objects: Vec<PlacedObject>,
    pub label: usize,
}

impl Scene {
    /// Multiset of object categories, sorted.
    pub fn categories(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.objects.iter().map(|o| o.spec.category).collect();
        c.sort_unstable();
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasDatasets {
    pub scenes: Vec<Scene>,
    /// One cropped box per scene, resized to `box_size`.
    pub boxes: Vec<Sample>,
}

/// Builds `n_scenes` scenes and one cropped box per scene.
///
/// Sampling rule for the box set: scene `k` contains an object of category
/// `k mod n_classes`, placed as the dominant or a secondary object with equal
/// probability, and that object's box is the one cropped. The box set is
/// therefore class-balanced up to one sample per class.
pub fn make_bias_datasets(config: &BiasConfig) -> Result<BiasDatasets> {
    super::check_class_count(config.n_classes)?;
    let cell = config.dominant_size.1.max(config.secondary_size.1);
    let cols = config.width / cell;
    let rows = config.height / cell;
    if config.objects_per_scene == 0 || config.objects_per_scene > cols * rows {
        return Err(LabError::PlacementCapacity {
            requested: config.objects_per_scene,
            capacity: cols * rows,
        });
    }
    if config.secondary_size.1 >= config.dominant_size.0
        || config.secondary_size.0 < 4
        || config.dominant_size.0 > config.dominant_size.1
        || config.secondary_size.0 > config.secondary_size.1
    {
        return Err(LabError::InvalidConfig(
            "secondary sizes must be non-empty and strictly below dominant sizes".into(),
        ));
    }
    let dims = ImageDims::new(config.width, config.height, config.channels);
    let cell_w = config.width / cols;
    let cell_h = config.height / rows;

    let mut scenes = Vec::with_capacity(config.n_scenes);
    let mut boxes = Vec::with_capacity(config.n_scenes);
    for k in 0..config.n_scenes {
        let mut rng = rng::stream(config.seed, "bias-scene", k as u64);
        let chosen_category = k % config.n_classes;
        let chosen_slot = if config.objects_per_scene > 1 && rng.random_bool(0.5) {
            rng.random_range(1..config.objects_per_scene)
        } else {
            0
        };
        // slot 0 is the dominant object
        let dominant = if chosen_slot == 0 {
            chosen_category
        } else {
            rng.random_range(0..config.n_classes)
        };
        let mut categories = Vec::with_capacity(config.objects_per_scene);
        for slot in 0..config.objects_per_scene {
            let category = if slot == chosen_slot {
                chosen_category
            } else if slot == 0 {
                dominant
            } else if rng.random_bool(config.cooccurrence.clamp(0.0, 1.0)) {
                (dominant + 1) % config.n_classes
            } else {
                rng.random_range(0..config.n_classes)
            };
            categories.push(category);
        }

        let mut cells: Vec<(usize, usize)> = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (c * cell_w, r * cell_h)))
            .collect();
        cells.shuffle(&mut rng);

        let mut image = textured_background(
            dims,
            config.background_level,
            config.background_amplitude,
            &mut rng,
        );
        let mut objects = Vec::with_capacity(config.objects_per_scene);
        for (slot, &category) in categories.iter().enumerate() {
            let (lo, hi) = if slot == 0 {
                config.dominant_size
            } else {
                config.secondary_size
            };
            let side = rng.random_range(lo..=hi);
            let (cx, cy) = cells[slot];
            let x = cx + rng.random_range(0..=cell_w - side);
            let y = cy + rng.random_range(0..=cell_h - side);
            let instance_id = (k * config.objects_per_scene + slot) as u32;
            let spec = random_spec(category, instance_id, &mut rng);
            let rendered = render_object(&spec, ImageDims::new(side, side, config.channels))?;
            paste(&mut image, &rendered, x, y);
            objects.push(PlacedObject {
                spec,
                bbox: BBox::new(x, y, side, side),
            });
        }

        let chosen = objects[chosen_slot];
        let crop = image
            .crop(chosen.bbox)?
            .resize_nearest(config.box_size, config.box_size);
        boxes.push(Sample::new(chosen.spec, crop));
        scenes.push(Scene {
            image,
            label: objects[0].spec.category,
            objects,
        });
    }
    Ok(BiasDatasets { scenes, boxes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(n: usize) -> BiasConfig {
        BiasConfig {
            n_scenes: n,
            seed: 3,
            ..BiasConfig::default()
        }
    }

    #[test]
    fn construction_contract() {
        let data = make_bias_datasets(&config(100)).unwrap();
        assert_eq!(data.scenes.len(), 100);
        assert_eq!(data.boxes.len(), 100);
        for scene in &data.scenes {
            assert_eq!(scene.objects.len(), 2);
            let largest = scene
                .objects
                .iter()
                .max_by_key(|o| o.bbox.area())
                .unwrap();
            assert_eq!(scene.label, largest.spec.category);
        }
    }

    #[test]
    fn cropped_boxes_contain_one_object() {
        let data = make_bias_datasets(&config(60)).unwrap();
        for (scene, sample) in data.scenes.iter().zip(&data.boxes) {
            let owner: Vec<_> = scene
                .objects
                .iter()
                .filter(|o| o.spec == sample.spec)
                .collect();
            assert_eq!(owner.len(), 1);
            for other in scene.objects.iter().filter(|o| o.spec != sample.spec) {
                assert_eq!(other.bbox.intersection(&owner[0].bbox), 0);
            }
        }
    }

    #[test]
    fn box_labels_are_near_uniform() {
        let data = make_bias_datasets(&config(100)).unwrap();
        let mut hist = [0usize; 4];
        for s in &data.boxes {
            hist[s.category] += 1;
        }
        for count in hist {
            assert!((20..=30).contains(&count), "{hist:?}");
        }
    }

    #[test]
    fn partner_categories_are_valid() {
        let cfg = BiasConfig {
            cooccurrence: 1.0,
            ..config(40)
        };
        let data = make_bias_datasets(&cfg).unwrap();
        for scene in &data.scenes {
            assert!(scene.categories().iter().all(|&c| c < cfg.n_classes));
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            make_bias_datasets(&config(20)).unwrap(),
            make_bias_datasets(&config(20)).unwrap()
        );
    }
}
