//! On-disk dataset format.
//!
//! A dataset directory holds `manifest.json` and `pixels.bin`. The manifest
//! lists every image's dimensions in blob order and the dataset structure
//! (trajectories, videos or bias scenes) with images referenced by index.
//! The blob is the concatenation of all images as little-endian `f32`,
//! row-major with interleaved channels.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bias::{BiasDatasets, Scene};
use super::render::ObjectSpec;
use super::trajectory::{Trajectory, Transformation};
use super::video::{GtTrack, PlacedObject, Region, Video};
use super::Sample;
use crate::error::{LabError, Result};
use crate::image::{Image, ImageDims};

pub const FORMAT: &str = "invariance-lab-dataset/1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PIXELS_FILE: &str = "pixels.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Trajectories,
    Videos,
    Bias,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Trajectories(Vec<Trajectory>),
    Videos(Vec<Video>),
    Bias(BiasDatasets),
}

impl Dataset {
    pub fn kind(&self) -> DatasetKind {
        match self {
            Dataset::Trajectories(_) => DatasetKind::Trajectories,
            Dataset::Videos(_) => DatasetKind::Videos,
            Dataset::Bias(_) => DatasetKind::Bias,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub image: usize,
    pub category: usize,
    pub instance_id: u32,
    pub spec: ObjectSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub transformation: Transformation,
    pub category: usize,
    pub samples: Vec<SampleRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: usize,
    pub frames: Vec<usize>,
    pub regions: Vec<Vec<Region>>,
    pub objects: Vec<Vec<PlacedObject>>,
    pub gt_tracks: Vec<GtTrack>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub image: usize,
    pub label: usize,
    pub objects: Vec<PlacedObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub kind: DatasetKind,
    pub seed: u64,
    pub n_classes: usize,
    /// Generator configuration, verbatim.
    pub config: serde_json::Value,
    /// Image dimensions in blob order.
    pub images: Vec<ImageDims>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trajectories: Vec<TrajectoryRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub videos: Vec<VideoRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scenes: Vec<SceneRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub boxes: Vec<SampleRecord>,
}

#[derive(Default)]
struct BlobWriter {
    dims: Vec<ImageDims>,
    bytes: Vec<u8>,
}

impl BlobWriter {
    fn push(&mut self, image: &Image) -> usize {
        self.dims.push(image.dims());
        for p in image.pixels() {
            self.bytes.extend_from_slice(&p.to_le_bytes());
        }
        self.dims.len() - 1
    }

    fn sample(&mut self, sample: &Sample) -> SampleRecord {
        SampleRecord {
            image: self.push(&sample.image),
            category: sample.category,
            instance_id: sample.instance_id,
            spec: sample.spec,
        }
    }
}

/// Serializes a dataset to `(manifest JSON bytes, pixel blob bytes)`.
pub fn encode(
    dataset: &Dataset,
    seed: u64,
    n_classes: usize,
    config: serde_json::Value,
) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut blob = BlobWriter::default();
    let mut manifest = DatasetManifest {
        format: FORMAT.to_string(),
        kind: dataset.kind(),
        seed,
        n_classes,
        config,
        images: Vec::new(),
        trajectories: Vec::new(),
        videos: Vec::new(),
        scenes: Vec::new(),
        boxes: Vec::new(),
    };
    match dataset {
        Dataset::Trajectories(trajs) => {
            for t in trajs {
                let samples = t.samples.iter().map(|s| blob.sample(s)).collect();
                manifest.trajectories.push(TrajectoryRecord {
                    transformation: t.transformation,
                    category: t.category,
                    samples,
                });
            }
        }
        Dataset::Videos(videos) => {
            for v in videos {
                let frames = v.frames.iter().map(|f| blob.push(f)).collect();
                manifest.videos.push(VideoRecord {
                    id: v.id,
                    frames,
                    regions: v.regions.clone(),
                    objects: v.objects.clone(),
                    gt_tracks: v.gt_tracks.clone(),
                });
            }
        }
        Dataset::Bias(bias) => {
            for s in &bias.scenes {
                manifest.scenes.push(SceneRecord {
                    image: blob.push(&s.image),
                    label: s.label,
                    objects: s.objects.clone(),
                });
            }
            for b in &bias.boxes {
                let record = blob.sample(b);
                manifest.boxes.push(record);
            }
        }
    }
    manifest.images = blob.dims;
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    Ok((json, blob.bytes))
}

pub fn save(
    dir: &Path,
    dataset: &Dataset,
    seed: u64,
    n_classes: usize,
    config: serde_json::Value,
) -> Result<()> {
    let (json, blob) = encode(dataset, seed, n_classes, config)?;
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, json).map_err(|e| LabError::io(&manifest_path, e))?;
    let blob_path = dir.join(PIXELS_FILE);
    fs::write(&blob_path, blob).map_err(|e| LabError::io(&blob_path, e))?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<(Dataset, DatasetManifest)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = fs::read(&manifest_path).map_err(|e| LabError::io(&manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_slice(&json)?;
    if manifest.format != FORMAT {
        return Err(LabError::Format {
            path: manifest_path,
            reason: format!("unsupported format `{}`", manifest.format),
        });
    }
    let blob_path = dir.join(PIXELS_FILE);
    let blob = fs::read(&blob_path).map_err(|e| LabError::io(&blob_path, e))?;
    let images = decode_images(&manifest.images, &blob).map_err(|reason| LabError::Format {
        path: blob_path.clone(),
        reason,
    })?;
    let dataset = decode(&manifest, images).map_err(|reason| LabError::Format {
        path: manifest_path,
        reason,
    })?;
    Ok((dataset, manifest))
}

fn decode_images(dims: &[ImageDims], blob: &[u8]) -> std::result::Result<Vec<Image>, String> {
    let expected: usize = dims.iter().map(|d| d.len() * 4).sum();
    if expected != blob.len() {
        return Err(format!(
            "blob has {} bytes, manifest describes {expected}",
            blob.len()
        ));
    }
    let mut offset = 0;
    dims.iter()
        .map(|d| {
            let n = d.len();
            let pixels = blob[offset..offset + 4 * n]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            offset += 4 * n;
            Image::from_pixels(*d, pixels).map_err(|e| e.to_string())
        })
        .collect()
}

fn decode(manifest: &DatasetManifest, images: Vec<Image>) -> std::result::Result<Dataset, String> {
    let take = |idx: usize| -> std::result::Result<Image, String> {
        images
            .get(idx)
            .cloned()
            .ok_or_else(|| format!("image index {idx} out of range"))
    };
    let sample = |r: &SampleRecord| -> std::result::Result<Sample, String> {
        if r.category != r.spec.category || r.instance_id != r.spec.instance_id {
            return Err(format!("sample labels disagree with spec at image {}", r.image));
        }
        Ok(Sample::new(r.spec, take(r.image)?))
    };
    Ok(match manifest.kind {
        DatasetKind::Trajectories => Dataset::Trajectories(
            manifest
                .trajectories
                .iter()
                .map(|t| {
                    Ok(Trajectory {
                        transformation: t.transformation,
                        category: t.category,
                        samples: t.samples.iter().map(sample).collect::<std::result::Result<_, String>>()?,
                    })
                })
                .collect::<std::result::Result<_, String>>()?,
        ),
        DatasetKind::Videos => Dataset::Videos(
            manifest
                .videos
                .iter()
                .map(|v| {
                    Ok(Video {
                        id: v.id,
                        frames: v.frames.iter().map(|&i| take(i)).collect::<std::result::Result<_, String>>()?,
                        regions: v.regions.clone(),
                        objects: v.objects.clone(),
                        gt_tracks: v.gt_tracks.clone(),
                    })
                })
                .collect::<std::result::Result<_, String>>()?,
        ),
        DatasetKind::Bias => Dataset::Bias(BiasDatasets {
            scenes: manifest
                .scenes
                .iter()
                .map(|s| {
                    Ok(Scene {
                        image: take(s.image)?,
                        label: s.label,
                        objects: s.objects.clone(),
                    })
                })
                .collect::<std::result::Result<_, String>>()?,
            boxes: manifest.boxes.iter().map(sample).collect::<std::result::Result<_, String>>()?,
        }),
    })
}
