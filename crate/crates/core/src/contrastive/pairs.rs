use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::world::Video;

/// Two frames of one video, `gap` frames apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FramePair {
    pub video: usize,
    pub a: usize,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairSet {
    pub pairs: Vec<FramePair>,
    /// Videos shorter than `gap + 1` frames.
    pub skipped_videos: usize,
}

/// Pairs `(i, i + gap)` for every `i` divisible by `gap`, per video.
pub fn sample_pairs_from_lengths(lengths: &[usize], gap: usize) -> Result<PairSet> {
    if gap == 0 {
        return Err(LabError::InvalidConfig("frame gap must be at least 1".into()));
    }
    let mut set = PairSet::default();
    for (video, &len) in lengths.iter().enumerate() {
        if len < gap + 1 {
            set.skipped_videos += 1;
            continue;
        }
        set.pairs.extend(
            (0..len - gap)
                .step_by(gap)
                .map(|a| FramePair { video, a, b: a + gap }),
        );
    }
    if set.skipped_videos > 0 {
        log::warn!(
            "{} of {} videos are shorter than {} frames and were skipped",
            set.skipped_videos,
            lengths.len(),
            gap + 1
        );
    }
    Ok(set)
}

pub fn sample_pairs(videos: &[Video], gap: usize) -> Result<PairSet> {
    let lengths: Vec<usize> = videos.iter().map(Video::len).collect();
    sample_pairs_from_lengths(&lengths, gap)
}

/// Default gap: two thirds of the shortest video, at least 1.
pub fn default_gap(videos: &[Video]) -> usize {
    let shortest = videos.iter().map(Video::len).min().unwrap_or(0);
    ((2 * shortest) as f64 / 3.0).round().max(1.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(set: &PairSet) -> Vec<(usize, usize)> {
        set.pairs.iter().map(|p| (p.a, p.b)).collect()
    }

    #[test]
    fn gap_four_on_ten_frames() {
        let set = sample_pairs_from_lengths(&[10], 4).unwrap();
        assert_eq!(frames(&set), vec![(0, 4), (4, 8)]);
    }

    #[test]
    fn gap_one_on_three_frames() {
        let set = sample_pairs_from_lengths(&[3], 1).unwrap();
        assert_eq!(frames(&set), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn short_videos_are_counted() {
        let set = sample_pairs_from_lengths(&[4, 5, 12], 4).unwrap();
        assert_eq!(set.skipped_videos, 1);
        assert_eq!(set.pairs.len(), 1 + 2);
        assert!(set.pairs.iter().all(|p| p.video != 0));
    }

    #[test]
    fn zero_gap_is_rejected() {
        assert!(sample_pairs_from_lengths(&[5], 0).is_err());
    }
}
