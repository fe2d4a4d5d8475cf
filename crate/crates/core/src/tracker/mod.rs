//! Unsupervised region tracks.
//!
//! Regions in consecutive sampled frames are linked by the clamped cosine
//! similarity of their embeddings. The score of a track from region `r` at
//! frame `i` to region `r'` at frame `j` is
//!
//! ```text
//! S(i -> i+1, r') = c_i(r, r')
//! S(i -> j, r')   = (j-i-1)/(j-i) * sum_k S(i -> j-1, k) * c_{j-1}(k, r')
//! ```
//!
//! which telescopes to `1/(j-i)` times the sum over all region paths of the
//! product of the clamped cosines along the path.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::encoder::{check_unit_rows, embed_images, EncoderParams};
use crate::error::{LabError, Result};
use crate::rng;
use crate::world::Video;

/// A chain of `(frame, region id)` with its endpoint score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub video: usize,
    pub entries: Vec<(usize, usize)>,
    pub score: f64,
}

impl Track {
    pub fn start(&self) -> (usize, usize) {
        self.entries[0]
    }

    pub fn end(&self) -> (usize, usize) {
        *self.entries.last().expect("tracks have at least two entries")
    }

    /// Checks that frames increase with a uniform stride.
    pub fn validate(&self) -> Result<()> {
        if self.entries.len() < 2 {
            return Err(LabError::InvalidTrack("a track needs two entries".into()));
        }
        let stride = self.entries[1].0 as isize - self.entries[0].0 as isize;
        let uniform = self
            .entries
            .windows(2)
            .all(|w| w[1].0 as isize - w[0].0 as isize == stride);
        if stride <= 0 || !uniform {
            return Err(LabError::InvalidTrack(
                "frames must increase with a uniform stride".into(),
            ));
        }
        if !(self.score >= 0.0) {
            return Err(LabError::InvalidTrack(format!("negative score {}", self.score)));
        }
        Ok(())
    }
}

/// Clamped cosine similarities between the regions of two frames.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchMatrix {
    pub from_frame: usize,
    pub to_frame: usize,
    /// `from regions x to regions`, entries `max(0, cos)`.
    pub values: Array2<f64>,
}

/// Tolerance for feature rows passed to the matcher.
pub const FEATURE_NORM_TOLERANCE: f64 = 1e-6;

fn check_features(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(LabError::Empty("region feature set".into()));
    }
    if a.ncols() != b.ncols() {
        return Err(LabError::DimensionMismatch {
            expected: a.ncols(),
            actual: b.ncols(),
        });
    }
    check_unit_rows(a, FEATURE_NORM_TOLERANCE)?;
    check_unit_rows(b, FEATURE_NORM_TOLERANCE)
}

/// `max(0, a_r . b_s)` for unit-norm rows.
pub fn clamped_cosines(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    check_features(a, b)?;
    Ok(a.dot(&b.t()).mapv(|c| c.max(0.0)))
}

impl MatchMatrix {
    pub fn new(from_frame: usize, to_frame: usize, a: &Array2<f64>, b: &Array2<f64>) -> Result<Self> {
        Ok(Self {
            from_frame,
            to_frame,
            values: clamped_cosines(a, b)?,
        })
    }
}

/// Best match in `b` for every region of `a`; ties go to the lowest index.
pub fn match_regions(a: &Array2<f64>, b: &Array2<f64>) -> Result<Vec<usize>> {
    check_features(a, b)?;
    let sims = a.dot(&b.t());
    Ok(sims
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (s, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = s;
                }
            }
            best
        })
        .collect())
}

/// Runs the score recursion from region `start` of the first frame through
/// every matrix. Returns the scores over the last frame's regions and, per
/// step after the first, the argmax predecessor of each region.
pub fn score_from(matrices: &[Array2<f64>], start: usize) -> Result<(Array1<f64>, Vec<Vec<usize>>)> {
    let first = matrices
        .first()
        .ok_or_else(|| LabError::InvalidTrack("track needs at least one frame step".into()))?;
    if start >= first.nrows() {
        return Err(LabError::InvalidTrack(format!(
            "start region {start} out of range ({} regions)",
            first.nrows()
        )));
    }
    let mut scores = first.row(start).to_owned();
    let mut backpointers = Vec::with_capacity(matrices.len().saturating_sub(1));
    for (step, m) in matrices.iter().enumerate().skip(1) {
        if m.nrows() != scores.len() {
            return Err(LabError::DimensionMismatch {
                expected: scores.len(),
                actual: m.nrows(),
            });
        }
        let span = (step + 1) as f64;
        let weight = (span - 1.0) / span;
        let mut next = Array1::zeros(m.ncols());
        let mut back = vec![0; m.ncols()];
        for to in 0..m.ncols() {
            let mut total = 0.0;
            let mut best = f64::NEG_INFINITY;
            for (k, &s) in scores.iter().enumerate() {
                let contrib = s * m[[k, to]];
                total += contrib;
                if contrib > best {
                    best = contrib;
                    back[to] = k;
                }
            }
            next[to] = weight * total;
        }
        scores = next;
        backpointers.push(back);
    }
    Ok((scores, backpointers))
}

/// Score from `(i, r)` to `(j, r')`, where `matrices[t]` links frame `t` to
/// frame `t + 1` of the sampled sequence.
pub fn track_score(matrices: &[Array2<f64>], start: (usize, usize), end: (usize, usize)) -> Result<f64> {
    let ((i, r), (j, r_end)) = (start, end);
    if i >= j {
        return Err(LabError::InvalidTrack(format!("start frame {i} is not before end frame {j}")));
    }
    if j > matrices.len() {
        return Err(LabError::InvalidTrack(format!(
            "end frame {j} beyond the {} available steps",
            matrices.len()
        )));
    }
    let (scores, _) = score_from(&matrices[i..j], r)?;
    scores
        .get(r_end)
        .copied()
        .ok_or_else(|| LabError::InvalidTrack(format!("end region {r_end} out of range")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Frame stride between consecutive track entries.
    pub stride: usize,
    /// Frames between track start and end; must be a multiple of `stride`.
    pub horizon: usize,
    /// Minimum accepted score.
    pub threshold: f64,
    /// Regions kept per frame; `None` keeps all.
    pub top_r: Option<usize>,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            stride: 1,
            horizon: 8,
            threshold: 0.0,
            top_r: None,
            seed: 0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.horizon == 0 || !self.horizon.is_multiple_of(self.stride) {
            return Err(LabError::InvalidConfig(format!(
                "horizon {} must be a positive multiple of stride {}",
                self.horizon, self.stride
            )));
        }
        if self.top_r == Some(0) {
            return Err(LabError::InvalidConfig("top_r must be positive".into()));
        }
        Ok(())
    }
}

/// Embedded regions of one frame.
#[derive(Debug, Clone)]
pub struct FrameRegions {
    pub frame: usize,
    pub region_ids: Vec<usize>,
    /// Unit-norm embeddings, one row per entry of `region_ids`.
    pub features: Array2<f64>,
}

/// Embeds the (possibly subsampled) regions of every frame that is a
/// multiple of the stride. Boxes smaller than 2x2 are dropped.
pub fn embed_video_regions(params: &EncoderParams, video: &Video, config: &TrackerConfig) -> Result<Vec<FrameRegions>> {
    config.validate()?;
    let mut out = Vec::new();
    for frame in (0..video.len()).step_by(config.stride) {
        let mut candidates: Vec<usize> = video.regions[frame]
            .iter()
            .filter(|r| r.bbox.area() >= 4)
            .map(|r| r.id)
            .collect();
        if let Some(r) = config.top_r.filter(|&r| r < candidates.len()) {
            let mut sub = rng::stream(config.seed, "top-r", (video.id as u64) << 32 | frame as u64);
            candidates = candidates.choose_multiple(&mut sub, r).copied().collect();
            candidates.sort_unstable();
        }
        let crops = candidates
            .iter()
            .map(|&id| video.frames[frame].crop(video.regions[frame][id].bbox))
            .collect::<Result<Vec<_>>>()?;
        let features = if crops.is_empty() {
            Array2::zeros((0, params.embedding_dim()))
        } else {
            embed_images(params, &crops)?.into_values()
        };
        out.push(FrameRegions {
            frame,
            region_ids: candidates,
            features,
        });
    }
    Ok(out)
}

/// Every `(start, end)` track of the video with its score, before
/// thresholding. Start frames are multiples of the horizon.
pub fn track_candidates(params: &EncoderParams, video: &Video, config: &TrackerConfig) -> Result<Vec<Track>> {
    let frames = embed_video_regions(params, video, config)?;
    if frames.iter().any(|f| f.region_ids.is_empty()) {
        log::warn!("video {} has frames without regions; no tracks", video.id);
        return Ok(Vec::new());
    }
    let matrices = frames
        .windows(2)
        .map(|w| clamped_cosines(&w[0].features, &w[1].features))
        .collect::<Result<Vec<_>>>()?;
    let steps = config.horizon / config.stride;
    let mut tracks = Vec::new();
    let mut first = 0;
    while first + steps < frames.len() {
        let window = &matrices[first..first + steps];
        for start in 0..frames[first].region_ids.len() {
            let (scores, back) = score_from(window, start)?;
            for (end, &score) in scores.iter().enumerate() {
                let mut path = vec![end];
                for b in back.iter().rev() {
                    path.push(b[*path.last().expect("non-empty")]);
                }
                path.push(start);
                path.reverse();
                // path now lists one local region per sampled frame
                let entries = path
                    .iter()
                    .enumerate()
                    .map(|(t, &local)| {
                        let fr = &frames[first + t];
                        (fr.frame, fr.region_ids[local])
                    })
                    .collect();
                tracks.push(Track {
                    video: video.id,
                    entries,
                    score,
                });
            }
        }
        first += steps;
    }
    Ok(tracks)
}

/// Tracks whose score reaches `config.threshold`.
pub fn build_tracks(params: &EncoderParams, video: &Video, config: &TrackerConfig) -> Result<Vec<Track>> {
    let mut tracks = track_candidates(params, video, config)?;
    tracks.retain(|t| t.score >= config.threshold);
    Ok(tracks)
}

/// The `quantile` of candidate track scores over `videos` (linear
/// interpolation between order statistics).
pub fn calibrate_threshold(params: &EncoderParams, videos: &[Video], config: &TrackerConfig, quantile: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&quantile) {
        return Err(LabError::InvalidConfig(format!("quantile {quantile} outside [0, 1]")));
    }
    let mut scores = Vec::new();
    for video in videos {
        scores.extend(track_candidates(params, video, config)?.into_iter().map(|t| t.score));
    }
    if scores.is_empty() {
        return Err(LabError::Empty("no candidate tracks to calibrate on".into()));
    }
    scores.sort_by(f64::total_cmp);
    let pos = quantile * (scores.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(scores[lo] + (pos - lo as f64) * (scores[hi] - scores[lo]))
}

/// Ground-truth objects whose box overlaps the region with IoU >= 0.5.
fn covering_objects(video: &Video, frame: usize, region: usize) -> Vec<usize> {
    let Some(r) = video.region(frame, region) else {
        return Vec::new();
    };
    video.objects[frame]
        .iter()
        .enumerate()
        .filter(|(_, o)| o.bbox.iou(&r.bbox) >= 0.5)
        .map(|(i, _)| i)
        .collect()
}

/// Whether both endpoints of the track lie on the same ground-truth object.
pub fn is_pure(track: &Track, video: &Video) -> bool {
    let (f0, r0) = track.start();
    let (f1, r1) = track.end();
    let a = covering_objects(video, f0, r0);
    let b = covering_objects(video, f1, r1);
    a.iter().any(|o| b.contains(o))
}

/// Fraction of pure tracks; 0 for an empty set.
pub fn track_purity(tracks: &[Track], video: &Video) -> f64 {
    if tracks.is_empty() {
        return 0.0;
    }
    tracks.iter().filter(|t| is_pure(t, video)).count() as f64 / tracks.len() as f64
}

pub fn save_tracks(path: &Path, tracks: &[Track]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| LabError::io(parent, e))?;
    }
    let json = serde_json::to_string_pretty(tracks)?;
    fs::write(path, json).map_err(|e| LabError::io(path, e))
}

pub fn load_tracks(path: &Path) -> Result<Vec<Track>> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    let tracks: Vec<Track> = serde_json::from_str(&text).map_err(|e| LabError::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    for t in &tracks {
        t.validate().map_err(|e| LabError::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    }
    Ok(tracks)
}
