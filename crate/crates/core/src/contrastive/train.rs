use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentConfig};
use super::loss::contrastive_loss;
use super::pairs::{default_gap, sample_pairs, FramePair};
use super::queue::NegativeQueue;
use crate::encoder::checkpoint::Checkpoint;
use crate::encoder::{
    backward, forward, momentum_update, sgd_step, EncoderConfig, EncoderParams, MomentumBuffer,
    SgdConfig,
};
use crate::error::{LabError, Result};
use crate::image::Image;
use crate::rng;
use crate::tracker::Track;
use crate::world::Video;

/// Weight of each term when the patch loss is active.
pub const PATCH_LOSS_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Two views of the same image.
    Baseline,
    /// Views of frames `i` and `i + gap` of a video.
    FrameTemporal,
    /// Frame pairs plus patch pairs from unsupervised tracks.
    RegionTracker,
    /// Frame pairs plus patch pairs from ground-truth tracks.
    GtTracks,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::Baseline,
        Regime::FrameTemporal,
        Regime::RegionTracker,
        Regime::GtTracks,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Baseline => "baseline",
            Regime::FrameTemporal => "frame-temporal",
            Regime::RegionTracker => "region-tracker",
            Regime::GtTracks => "gt-tracks",
        }
    }

    pub fn uses_tracks(self) -> bool {
        matches!(self, Regime::RegionTracker | Regime::GtTracks)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('_', "-");
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == norm)
            .ok_or_else(|| LabError::UnknownRegime(s.to_string()))
    }
}

/// Training hyper-parameters. Serialised as the JSON config of `lab train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub regime: Regime,
    /// Softmax temperature of the contrastive loss.
    pub temperature: f64,
    /// Momentum of the key encoder average.
    pub momentum: f64,
    pub lr: f64,
    /// Momentum of the SGD optimiser.
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub queue_size: usize,
    /// Frames between the two members of a pair; defaults to two thirds of
    /// the shortest video.
    pub frame_gap: Option<usize>,
    pub augment: AugmentConfig,
    pub encoder: EncoderConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Baseline,
            temperature: 0.07,
            momentum: 0.999,
            lr: 0.03,
            sgd_momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 32,
            steps: 300,
            queue_size: 512,
            frame_gap: None,
            augment: AugmentConfig::default(),
            encoder: EncoderConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LabError::InvalidConfig(msg));
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1]", self.momentum));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad(format!("learning rate {} must be finite and non-negative", self.lr));
        }
        if !(0.0..1.0).contains(&self.sgd_momentum) || !(self.weight_decay >= 0.0) {
            return bad("sgd momentum must lie in [0, 1) and weight decay be non-negative".into());
        }
        if self.batch_size == 0 || self.queue_size == 0 {
            return bad("batch size and queue size must be positive".into());
        }
        if self.frame_gap == Some(0) {
            return bad("frame gap must be at least 1".into());
        }
        self.augment.validate()
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.sgd_momentum,
            weight_decay: self.weight_decay,
        }
    }
}

/// Training input.
#[derive(Debug, Clone, Copy)]
pub enum TrainData<'a> {
    /// Still images; baseline only.
    Images(&'a [Image]),
    /// Videos, with unsupervised tracks for the region-tracker regime.
    Videos {
        videos: &'a [Video],
        tracks: Option<&'a [Track]>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub frame_loss: f64,
    pub patch_loss: Option<f64>,
    pub queue_size: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<StepRecord>,
    pub frame_gap: Option<usize>,
    pub skipped_videos: usize,
    /// Sampled frame pairs that carried a patch pair.
    pub patch_pairs: usize,
    /// Sampled frame pairs of a track regime without any track.
    pub fallback_pairs: usize,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub report: TrainReport,
}

/// What a training sample is drawn from.
enum Items<'a> {
    Images(Vec<&'a Image>),
    Pairs {
        videos: &'a [Video],
        pairs: Vec<FramePair>,
        /// Tracks per pair index.
        tracks: Vec<Vec<Track>>,
    },
}

impl Items<'_> {
    fn len(&self) -> usize {
        match self {
            Items::Images(v) => v.len(),
            Items::Pairs { pairs, .. } => pairs.len(),
        }
    }

    fn any_image(&self, rng: &mut impl Rng) -> &Image {
        match self {
            Items::Images(v) => v[rng.random_range(0..v.len())],
            Items::Pairs { videos, pairs, .. } => {
                let p = pairs[rng.random_range(0..pairs.len())];
                let frame = if rng.random_bool(0.5) { p.a } else { p.b };
                &videos[p.video].frames[frame]
            }
        }
    }
}

fn video_position(videos: &[Video]) -> HashMap<usize, usize> {
    videos.iter().enumerate().map(|(i, v)| (v.id, i)).collect()
}

/// Ground-truth tracks restricted to each pair's frame span.
fn gt_tracks_for(videos: &[Video], pairs: &[FramePair]) -> Vec<Vec<Track>> {
    pairs
        .iter()
        .map(|p| {
            let video = &videos[p.video];
            video
                .gt_tracks
                .iter()
                .filter_map(|gt| {
                    let entries: Vec<(usize, usize)> = gt
                        .entries
                        .iter()
                        .copied()
                        .filter(|(f, _)| (p.a..=p.b).contains(f))
                        .collect();
                    let spans = entries.first().map(|e| e.0) == Some(p.a)
                        && entries.last().map(|e| e.0) == Some(p.b);
                    spans.then(|| Track {
                        video: video.id,
                        entries,
                        score: 1.0,
                    })
                })
                .collect()
        })
        .collect()
}

/// Accepted tracks grouped by the frame pair their endpoints span.
fn tracks_for(videos: &[Video], pairs: &[FramePair], tracks: &[Track]) -> Result<Vec<Vec<Track>>> {
    let position = video_position(videos);
    let mut by_span: HashMap<(usize, usize, usize), Vec<Track>> = HashMap::new();
    for t in tracks {
        t.validate()?;
        let v = *position
            .get(&t.video)
            .ok_or_else(|| LabError::InvalidTrack(format!("track refers to unknown video {}", t.video)))?;
        for &(f, r) in &t.entries {
            if videos[v].region(f, r).is_none() {
                return Err(LabError::InvalidTrack(format!(
                    "video {} has no region {r} on frame {f}",
                    t.video
                )));
            }
        }
        by_span
            .entry((v, t.start().0, t.end().0))
            .or_default()
            .push(t.clone());
    }
    Ok(pairs
        .iter()
        .map(|p| by_span.get(&(p.video, p.a, p.b)).cloned().unwrap_or_default())
        .collect())
}

fn prepare_items<'a>(data: TrainData<'a>, config: &TrainConfig, report: &mut TrainReport) -> Result<Items<'a>> {
    let items = match (config.regime, data) {
        (Regime::Baseline, TrainData::Images(images)) => Items::Images(images.iter().collect()),
        (regime, TrainData::Images(_)) => {
            return Err(LabError::InvalidConfig(format!("regime {regime} trains on videos")));
        }
        (regime, TrainData::Videos { videos, tracks }) => {
            let gap = config.frame_gap.unwrap_or_else(|| default_gap(videos));
            let set = sample_pairs(videos, gap)?;
            report.frame_gap = Some(gap);
            report.skipped_videos = set.skipped_videos;
            match regime {
                Regime::Baseline => {
                    // the frames that the temporal regimes see, each on its own
                    let mut frames: Vec<(usize, usize)> = set
                        .pairs
                        .iter()
                        .flat_map(|p| [(p.video, p.a), (p.video, p.b)])
                        .collect();
                    frames.sort_unstable();
                    frames.dedup();
                    Items::Images(frames.iter().map(|&(v, f)| &videos[v].frames[f]).collect())
                }
                Regime::FrameTemporal => Items::Pairs {
                    videos,
                    tracks: vec![Vec::new(); set.pairs.len()],
                    pairs: set.pairs,
                },
                Regime::GtTracks => {
                    if videos.iter().all(|v| v.gt_tracks.is_empty()) {
                        return Err(LabError::MissingTracks(regime.to_string()));
                    }
                    Items::Pairs {
                        videos,
                        tracks: gt_tracks_for(videos, &set.pairs),
                        pairs: set.pairs,
                    }
                }
                Regime::RegionTracker => {
                    let tracks = tracks.ok_or_else(|| LabError::MissingTracks(regime.to_string()))?;
                    Items::Pairs {
                        videos,
                        tracks: tracks_for(videos, &set.pairs, tracks)?,
                        pairs: set.pairs,
                    }
                }
            }
        }
    };
    if items.len() == 0 {
        return Err(LabError::Empty("no training samples".into()));
    }
    Ok(items)
}

struct Batch {
    queries: Vec<Image>,
    keys: Vec<Image>,
    patch_queries: Vec<Image>,
    patch_keys: Vec<Image>,
    fallback: usize,
}

fn draw_batch(items: &Items<'_>, config: &TrainConfig, rng: &mut impl Rng) -> Result<Batch> {
    let dims = config.encoder.input;
    let aug = &config.augment;
    let mut batch = Batch {
        queries: Vec::with_capacity(config.batch_size),
        keys: Vec::with_capacity(config.batch_size),
        patch_queries: Vec::new(),
        patch_keys: Vec::new(),
        fallback: 0,
    };
    for _ in 0..config.batch_size {
        let idx = rng.random_range(0..items.len());
        match items {
            Items::Images(images) => {
                let img = images[idx];
                batch.queries.push(augment(img, aug, dims, rng)?);
                batch.keys.push(augment(img, aug, dims, rng)?);
            }
            Items::Pairs { videos, pairs, tracks } => {
                let p = pairs[idx];
                let video = &videos[p.video];
                let swap = rng.random_bool(0.5);
                let (fq, fk) = if swap { (p.b, p.a) } else { (p.a, p.b) };
                batch.queries.push(augment(&video.frames[fq], aug, dims, rng)?);
                batch.keys.push(augment(&video.frames[fk], aug, dims, rng)?);
                if !config.regime.uses_tracks() {
                    continue;
                }
                let candidates = &tracks[idx];
                if candidates.is_empty() {
                    batch.fallback += 1;
                    continue;
                }
                let track = &candidates[rng.random_range(0..candidates.len())];
                let (start, end) = (track.start(), track.end());
                let (rq, rk) = if swap { (end, start) } else { (start, end) };
                let crop = |(f, r): (usize, usize)| -> Result<Image> {
                    let bbox = video.regions[f][r].bbox;
                    video.frames[f].crop(bbox)
                };
                batch.patch_queries.push(augment(&crop(rq)?, aug, dims, rng)?);
                batch.patch_keys.push(augment(&crop(rk)?, aug, dims, rng)?);
            }
        }
    }
    Ok(batch)
}

/// Trains a query encoder with a momentum key encoder and a FIFO queue of
/// negatives. The queue is filled from the initial key encoder before the
/// first step. Returns the query encoder.
pub fn train(data: TrainData<'_>, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let mut report = TrainReport::default();
    let items = prepare_items(data, config, &mut report)?;

    let mut init_rng = rng::stream(config.seed, "train-init", 0);
    let mut query = EncoderParams::init(&config.encoder, &mut init_rng)?;
    let mut key = query.clone();
    let mut velocity = MomentumBuffer::new(&query);
    let sgd = config.sgd();

    let mut queue = NegativeQueue::new(config.queue_size, query.embedding_dim())?;
    let mut fill_rng = rng::stream(config.seed, "train-queue", 0);
    while queue.len() < queue.capacity() {
        let n = (queue.capacity() - queue.len()).min(256);
        let views = (0..n)
            .map(|_| {
                let img = items.any_image(&mut fill_rng);
                augment(img, &config.augment, config.encoder.input, &mut fill_rng)
            })
            .collect::<Result<Vec<_>>>()?;
        queue.push(&forward(&key, &views)?.0)?;
    }

    for step in 0..config.steps {
        let mut step_rng = rng::stream(config.seed, "train-step", step as u64);
        let batch = draw_batch(&items, config, &mut step_rng)?;
        report.fallback_pairs += batch.fallback;
        report.patch_pairs += batch.patch_queries.len();

        let (q, q_cache) = forward(&query, &batch.queries)?;
        let (k, _) = forward(&key, &batch.keys)?;
        let frame = contrastive_loss(&q, &k, &queue, config.temperature)?;

        let mut patch_loss = None;
        let mut patch_keys = None;
        let grads = if batch.patch_queries.is_empty() {
            backward(&query, &q_cache, &frame.grad_q)?
        } else {
            let (qp, qp_cache) = forward(&query, &batch.patch_queries)?;
            let (kp, _) = forward(&key, &batch.patch_keys)?;
            let patch = contrastive_loss(&qp, &kp, &queue, config.temperature)?;
            let mut g = backward(&query, &q_cache, &(&frame.grad_q * PATCH_LOSS_WEIGHT))?;
            g.scaled_add(1.0, &backward(&query, &qp_cache, &(&patch.grad_q * PATCH_LOSS_WEIGHT))?);
            patch_loss = Some(patch.loss);
            patch_keys = Some(kp);
            g
        };
        let loss = match patch_loss {
            Some(p) => PATCH_LOSS_WEIGHT * frame.loss + PATCH_LOSS_WEIGHT * p,
            None => frame.loss,
        };
        if !loss.is_finite() {
            return Err(LabError::InvalidConfig(format!("loss diverged at step {step}")));
        }

        sgd_step(&mut query, &grads, &sgd, &mut velocity)?;
        momentum_update(&mut key, &query, config.momentum)?;
        queue.push(&k)?;
        if let Some(kp) = &patch_keys {
            queue.push(kp)?;
        }

        report.records.push(StepRecord {
            step,
            loss,
            frame_loss: frame.loss,
            patch_loss,
            queue_size: queue.len(),
            lr: config.lr,
        });
        if step % 50 == 0 || step + 1 == config.steps {
            log::debug!("{} step {step}: loss {loss:.4}", config.regime);
        }
    }
    if report.fallback_pairs > 0 {
        log::info!(
            "{} of {} sampled pairs had no track and used the frame loss only",
            report.fallback_pairs,
            report.fallback_pairs + report.patch_pairs
        );
    }

    let config_json = serde_json::to_value(config)?;
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(query, config.steps as u64, config_json),
        report,
    })
}

/// Writes `step,loss,queue_size,lr` rows.
pub fn write_metrics_csv(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut out = String::from("step,loss,queue_size,lr\n");
    for r in records {
        out.push_str(&format!("{},{},{},{}\n", r.step, r.loss, r.queue_size, r.lr));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| LabError::io(parent, e))?;
    }
    fs::write(path, out).map_err(|e| LabError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImageDims;
    use crate::world::{make_video_dataset, VideoConfig};

    fn tiny_encoder() -> EncoderConfig {
        EncoderConfig {
            input: ImageDims::new(8, 8, 1),
            hidden: vec![16],
            embedding_dim: 8,
            hidden_bias: 0.0,
        }
    }

    fn tiny_videos() -> Vec<Video> {
        let cfg = VideoConfig {
            n_videos: 3,
            frames_per_video: 6,
            ..VideoConfig::default()
        };
        make_video_dataset(&cfg).unwrap()
    }

    #[test]
    fn regime_names_roundtrip() {
        for r in Regime::ALL {
            assert_eq!(r.name().parse::<Regime>().unwrap(), r);
        }
        assert_eq!("frame_temporal".parse::<Regime>().unwrap(), Regime::FrameTemporal);
        assert!("moco".parse::<Regime>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { temperature: 0.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { momentum: 1.5, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn track_regimes_need_tracks() {
        let videos = tiny_videos();
        let cfg = TrainConfig {
            regime: Regime::RegionTracker,
            steps: 1,
            encoder: tiny_encoder(),
            ..TrainConfig::default()
        };
        let data = TrainData::Videos { videos: &videos, tracks: None };
        assert!(matches!(train(data, &cfg), Err(LabError::MissingTracks(_))));

        let mut stripped = videos.clone();
        stripped.iter_mut().for_each(|v| v.gt_tracks.clear());
        let cfg = TrainConfig { regime: Regime::GtTracks, ..cfg };
        let data = TrainData::Videos { videos: &stripped, tracks: None };
        assert!(matches!(train(data, &cfg), Err(LabError::MissingTracks(_))));
    }

    #[test]
    fn gt_tracks_span_their_pair() {
        let videos = tiny_videos();
        let set = sample_pairs(&videos, 2).unwrap();
        let tracks = gt_tracks_for(&videos, &set.pairs);
        for (p, ts) in set.pairs.iter().zip(&tracks) {
            assert_eq!(ts.len(), videos[p.video].gt_tracks.len());
            for t in ts {
                assert_eq!(t.start().0, p.a);
                assert_eq!(t.end().0, p.b);
                assert_eq!(t.entries.len(), 3);
            }
        }
    }

    #[test]
    fn gt_regime_uses_patches() {
        let videos = tiny_videos();
        let cfg = TrainConfig {
            regime: Regime::GtTracks,
            steps: 2,
            batch_size: 4,
            queue_size: 16,
            frame_gap: Some(2),
            encoder: tiny_encoder(),
            ..TrainConfig::default()
        };
        let out = train(TrainData::Videos { videos: &videos, tracks: None }, &cfg).unwrap();
        assert_eq!(out.report.patch_pairs, 8);
        assert_eq!(out.report.fallback_pairs, 0);
        assert!(out.report.records.iter().all(|r| r.patch_loss.is_some()));
    }

    #[test]
    fn metrics_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rec = StepRecord { step: 0, loss: 1.5, frame_loss: 1.5, patch_loss: None, queue_size: 4, lr: 0.1 };
        write_metrics_csv(&path, &[rec]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "step,loss,queue_size,lr\n0,1.5,4,0.1\n");
    }
}
