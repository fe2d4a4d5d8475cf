use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::render::{render_object, wrap_degrees, ObjectSpec};
use super::{paste, random_spec, textured_background};
use crate::error::{LabError, Result};
use crate::image::{BBox, Image, ImageDims};
use crate::rng::{self, LabRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VideoConfig {
    pub n_videos: usize,
    pub frames_per_video: usize,
    pub objects_per_scene: usize,
    /// Jittered copies of object boxes plus random background boxes, per frame.
    pub distractors_per_frame: usize,
    pub n_classes: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Side of every object's bounding box, in pixels.
    pub object_size: usize,
    /// Largest per-frame pose change, degrees.
    pub max_pose_delta: f64,
    /// Smallest drift speed of the pose walk, degrees per frame.
    pub min_pose_speed: f64,
    pub max_occlusion_delta: f64,
    pub max_occlusion: f64,
    pub max_illum_delta: f64,
    /// Largest relative jitter of distractor boxes (position and scale).
    pub jitter: f64,
    /// Probability that a distractor is a jittered object box rather than a
    /// random background box.
    pub jittered_fraction: f64,
    pub background_level: f64,
    pub background_amplitude: f64,
}

impl Default for VideoConfig {
    fn default() -> Self {
        Self {
            n_videos: 64,
            frames_per_video: 12,
            objects_per_scene: 2,
            distractors_per_frame: 3,
            n_classes: 4,
            seed: 0,
            width: 32,
            height: 32,
            channels: 1,
            object_size: 14,
            max_pose_delta: 15.0,
            min_pose_speed: 6.0,
            max_occlusion_delta: 0.03,
            max_occlusion: 0.4,
            max_illum_delta: 6.0,
            jitter: 0.3,
            jittered_fraction: 0.5,
            background_level: 0.08,
            background_amplitude: 0.04,
        }
    }
}

impl VideoConfig {
    pub fn frame_dims(&self) -> ImageDims {
        ImageDims::new(self.width, self.height, self.channels)
    }

    fn grid(&self) -> (usize, usize) {
        let cell = self.object_size + 2;
        (self.width / cell, self.height / cell)
    }

    /// Objects are confined to disjoint cells, so at most this many fit.
    pub fn capacity(&self) -> usize {
        let (cols, rows) = self.grid();
        cols * rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub id: usize,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacedObject {
    pub spec: ObjectSpec,
    pub bbox: BBox,
}

/// Ground-truth correspondence of one object's boxes across frames.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtTrack {
    pub object: usize,
    pub category: usize,
    pub instance_id: u32,
    /// `(frame, region id)` in strictly increasing frame order.
    pub entries: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub id: usize,
    pub frames: Vec<Image>,
    /// Region proposals per frame; a region's id is its index in the list.
    pub regions: Vec<Vec<Region>>,
    /// Ground-truth objects per frame, indexed by object.
    pub objects: Vec<Vec<PlacedObject>>,
    pub gt_tracks: Vec<GtTrack>,
}

impl Video {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn region(&self, frame: usize, region: usize) -> Option<&Region> {
        self.regions.get(frame)?.get(region)
    }

    /// Region id on `frame` of the ground-truth box of `object`.
    pub fn gt_region(&self, object: usize, frame: usize) -> Option<usize> {
        self.gt_tracks
            .iter()
            .find(|t| t.object == object)?
            .entries
            .iter()
            .find(|(f, _)| *f == frame)
            .map(|(_, r)| *r)
    }
}

struct ObjectWalk {
    spec: ObjectSpec,
    cell: (usize, usize),
    offset: (usize, usize),
    max_offset: (usize, usize),
    pose_speed: f64,
}

impl ObjectWalk {
    fn bbox(&self, size: usize) -> BBox {
        BBox::new(
            self.cell.0 + self.offset.0,
            self.cell.1 + self.offset.1,
            size,
            size,
        )
    }

    /// Advances one frame; every field moves by a bounded amount.
    fn step(&mut self, config: &VideoConfig, rng: &mut LabRng) {
        let wobble = 0.25 * config.max_pose_delta;
        let delta = (self.pose_speed + rng.random_range(-wobble..=wobble))
            .clamp(-config.max_pose_delta, config.max_pose_delta);
        self.spec.pose = wrap_degrees(self.spec.pose + delta);

        let occ = self.spec.occlusion
            + rng.random_range(-config.max_occlusion_delta..=config.max_occlusion_delta);
        self.spec.occlusion = occ.clamp(0.0, config.max_occlusion);

        let illum = rng.random_range(-config.max_illum_delta..=config.max_illum_delta);
        self.spec.illum_dir = wrap_degrees(self.spec.illum_dir + illum);

        let walk = |pos: usize, max: usize, rng: &mut LabRng| -> usize {
            match rng.random_range(0..3) {
                0 if pos > 0 => pos - 1,
                1 if pos < max => pos + 1,
                _ => pos,
            }
        };
        self.offset.0 = walk(self.offset.0, self.max_offset.0, rng);
        self.offset.1 = walk(self.offset.1, self.max_offset.1, rng);
    }
}

fn distractor(
    config: &VideoConfig,
    objects: &[PlacedObject],
    rng: &mut LabRng,
) -> BBox {
    let (fw, fh) = (config.width, config.height);
    if !objects.is_empty() && rng.random_bool(config.jittered_fraction.clamp(0.0, 1.0)) {
        let base = objects[rng.random_range(0..objects.len())].bbox;
        let j = config.jitter;
        let scale = rng.random_range(1.0 - j..=1.0 + j);
        let side = ((base.w as f64 * scale).round() as usize).clamp(4, fw.min(fh));
        let cx = base.x as f64 + base.w as f64 / 2.0 + rng.random_range(-j..=j) * base.w as f64;
        let cy = base.y as f64 + base.h as f64 / 2.0 + rng.random_range(-j..=j) * base.h as f64;
        let x = (cx - side as f64 / 2.0).round().clamp(0.0, (fw - side) as f64) as usize;
        let y = (cy - side as f64 / 2.0).round().clamp(0.0, (fh - side) as f64) as usize;
        BBox::new(x, y, side, side)
    } else {
        let max_side = (config.object_size + 2).min(fw).min(fh);
        let side = rng.random_range(4.min(max_side)..=max_side);
        let x = rng.random_range(0..=fw - side);
        let y = rng.random_range(0..=fh - side);
        BBox::new(x, y, side, side)
    }
}

fn make_video(config: &VideoConfig, id: usize) -> Result<Video> {
    let mut rng = rng::stream(config.seed, "video", id as u64);
    let dims = config.frame_dims();
    let object_dims = ImageDims::new(config.object_size, config.object_size, config.channels);
    let (cols, rows) = config.grid();
    let cell_w = config.width / cols;
    let cell_h = config.height / rows;
    let mut cells: Vec<(usize, usize)> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (c * cell_w, r * cell_h)))
        .collect();
    cells.shuffle(&mut rng);

    let mut walks: Vec<ObjectWalk> = (0..config.objects_per_scene)
        .map(|o| {
            let category = rng.random_range(0..config.n_classes);
            let instance_id = (id * config.objects_per_scene + o) as u32;
            let mut spec = random_spec(category, instance_id, &mut rng);
            spec.occlusion = rng.random_range(0.0..=config.max_occlusion / 2.0);
            let speed = rng.random_range(config.min_pose_speed..=0.75 * config.max_pose_delta);
            let pose_speed = if rng.random_bool(0.5) { speed } else { -speed };
            let max_offset = (cell_w - config.object_size, cell_h - config.object_size);
            let offset = (
                rng.random_range(0..=max_offset.0),
                rng.random_range(0..=max_offset.1),
            );
            ObjectWalk {
                spec,
                cell: cells[o],
                offset,
                max_offset,
                pose_speed,
            }
        })
        .collect();

    let background = textured_background(
        dims,
        config.background_level,
        config.background_amplitude,
        &mut rng,
    );

    let mut frames = Vec::with_capacity(config.frames_per_video);
    let mut regions = Vec::with_capacity(config.frames_per_video);
    let mut objects = Vec::with_capacity(config.frames_per_video);
    let mut gt_tracks: Vec<GtTrack> = walks
        .iter()
        .enumerate()
        .map(|(o, w)| GtTrack {
            object: o,
            category: w.spec.category,
            instance_id: w.spec.instance_id,
            entries: Vec::with_capacity(config.frames_per_video),
        })
        .collect();

    for frame_idx in 0..config.frames_per_video {
        if frame_idx > 0 {
            for walk in &mut walks {
                walk.step(config, &mut rng);
            }
        }
        let mut frame = background.clone();
        let placed: Vec<PlacedObject> = walks
            .iter()
            .map(|w| PlacedObject {
                spec: w.spec,
                bbox: w.bbox(config.object_size),
            })
            .collect();
        for p in &placed {
            let rendered = render_object(&p.spec, object_dims)?;
            paste(&mut frame, &rendered, p.bbox.x, p.bbox.y);
        }

        // proposals: ground-truth boxes first, then distractors, then shuffled
        let mut boxes: Vec<(Option<usize>, BBox)> =
            placed.iter().enumerate().map(|(o, p)| (Some(o), p.bbox)).collect();
        for _ in 0..config.distractors_per_frame {
            boxes.push((None, distractor(config, &placed, &mut rng)));
        }
        boxes.shuffle(&mut rng);
        let mut frame_regions = Vec::with_capacity(boxes.len());
        for (rid, (owner, bbox)) in boxes.into_iter().enumerate() {
            if let Some(o) = owner {
                gt_tracks[o].entries.push((frame_idx, rid));
            }
            frame_regions.push(Region { id: rid, bbox });
        }

        frames.push(frame);
        regions.push(frame_regions);
        objects.push(placed);
    }

    Ok(Video {
        id,
        frames,
        regions,
        objects,
        gt_tracks,
    })
}

/// Generates `n_videos` videos. Objects stay in disjoint cells of the frame
/// and drift smoothly in pose, occlusion, illumination direction and
/// position; region proposals are the object boxes plus distractors.
pub fn make_video_dataset(config: &VideoConfig) -> Result<Vec<Video>> {
    super::check_class_count(config.n_classes)?;
    if config.frames_per_video < 2 {
        return Err(LabError::InvalidConfig(
            "videos need at least 2 frames".into(),
        ));
    }
    if config.object_size < 4 || config.object_size + 2 > config.width.min(config.height) {
        return Err(LabError::InvalidConfig(format!(
            "object size {} does not fit a {}x{} frame",
            config.object_size, config.width, config.height
        )));
    }
    if config.objects_per_scene > config.capacity() {
        return Err(LabError::PlacementCapacity {
            requested: config.objects_per_scene,
            capacity: config.capacity(),
        });
    }
    if config.max_pose_delta < config.min_pose_speed || config.min_pose_speed < 0.0 {
        return Err(LabError::InvalidConfig(
            "pose speed range is empty".into(),
        ));
    }
    (0..config.n_videos).map(|id| make_video(config, id)).collect()
}
