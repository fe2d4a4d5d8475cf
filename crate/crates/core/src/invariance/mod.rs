//! Firing-rate invariance of hidden units.
//!
//! A unit `i` fires on `x` for class `y` when `s * h_i(x) > t`, with the
//! sign `s` and threshold `t` calibrated per class so the unit fires on a
//! `P(y)` fraction of the whole dataset. The local firing rate `L_y(i)` is
//! the mean firing over transformation trajectories of class `y`, and the
//! target-conditioned invariance is `I_y(i) = L_y(i) / G_y(i)`. The Top-K
//! score averages the `K` most invariant units of every class and reports
//! the result as a percentage of the largest achievable value.

mod report;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use report::{
    evaluate_all, evaluate_transformation, render_markdown, EncoderFeatures, FeatureExtractor,
    LayerReport, RisMetadata, RisReport, TransformationReport,
};

use crate::error::{LabError, Result};

/// How firing thresholds are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FiringMode {
    /// Per-class thresholds with `G_y(i) = P(y)` and per-class Top-K.
    ClassAdaptive,
    /// One threshold per unit firing at `rate`, global local rate and
    /// global Top-K.
    FixedRate { rate: f64 },
}

impl FiringMode {
    pub fn name(&self) -> &'static str {
        match self {
            FiringMode::ClassAdaptive => "class-adaptive",
            FiringMode::FixedRate { .. } => "fixed-rate",
        }
    }
}

pub const DEFAULT_FIXED_RATE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FiringConfig {
    pub mode: FiringMode,
    pub top_k: Vec<usize>,
}

impl Default for FiringConfig {
    fn default() -> Self {
        Self {
            mode: FiringMode::ClassAdaptive,
            top_k: vec![10, 25],
        }
    }
}

impl FiringConfig {
    pub fn validate(&self) -> Result<()> {
        if let FiringMode::FixedRate { rate } = self.mode {
            if !(rate > 0.0 && rate < 1.0) {
                return Err(LabError::InvalidConfig(format!("firing rate {rate} outside (0, 1)")));
            }
        }
        if self.top_k.contains(&0) {
            return Err(LabError::InvalidConfig("top-k values must be positive".into()));
        }
        Ok(())
    }
}

/// Activations of every sample plus the trajectory structure.
#[derive(Debug, Clone, PartialEq)]
pub struct FiringData {
    /// `samples x units`.
    pub activations: Array2<f64>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    /// Sample indices of each trajectory, with its class.
    pub trajectories: Vec<(usize, Vec<usize>)>,
}

impl FiringData {
    pub fn new(
        activations: Array2<f64>,
        labels: Vec<usize>,
        n_classes: usize,
        trajectories: Vec<(usize, Vec<usize>)>,
    ) -> Result<Self> {
        let n = activations.nrows();
        if labels.len() != n {
            return Err(LabError::DimensionMismatch {
                expected: n,
                actual: labels.len(),
            });
        }
        if n < 2 {
            return Err(LabError::Empty("calibration needs at least two samples".into()));
        }
        if labels.iter().any(|&y| y >= n_classes) {
            return Err(LabError::InvalidConfig("label outside the class range".into()));
        }
        for y in 0..n_classes {
            if !labels.contains(&y) {
                return Err(LabError::MissingClass(y));
            }
        }
        for (class, samples) in &trajectories {
            if samples.is_empty() {
                return Err(LabError::Empty("trajectory without samples".into()));
            }
            if let Some(&bad) = samples.iter().find(|&&s| s >= n || labels[s] != *class) {
                return Err(LabError::InvalidConfig(format!(
                    "trajectory sample {bad} is out of range or not of class {class}"
                )));
            }
        }
        Ok(Self {
            activations,
            labels,
            n_classes,
            trajectories,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.activations.nrows()
    }

    pub fn n_units(&self) -> usize {
        self.activations.ncols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// Threshold so that exactly `m` of `values` exceed it when the `m`-th and
/// `(m+1)`-th largest differ: their midpoint. `None` when `m` is 0 or `n`.
pub fn quantile_threshold(values: &[f64], m: usize) -> Option<f64> {
    if m == 0 || m >= values.len() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Some(0.5 * (sorted[m - 1] + sorted[m]))
}

/// Mean over trajectories of the fraction of firing samples.
pub fn local_firing_rate(fires: &[bool], trajectories: &[&[usize]]) -> Result<f64> {
    if trajectories.is_empty() {
        return Err(LabError::Empty("no trajectories".into()));
    }
    let mut total = 0.0;
    for t in trajectories {
        if t.is_empty() {
            return Err(LabError::Empty("trajectory without samples".into()));
        }
        total += t.iter().filter(|&&s| fires[s]).count() as f64 / t.len() as f64;
    }
    Ok(total / trajectories.len() as f64)
}

/// Calibration of one unit for one class (or globally in fixed-rate mode).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitStats {
    pub sign: i8,
    pub threshold: f64,
    /// Achieved global firing rate.
    pub global_rate: f64,
    pub local_rate: f64,
    /// `local_rate / global_rate`, 0 when degenerate.
    pub invariance: f64,
    pub degenerate: bool,
}

impl UnitStats {
    const DEGENERATE: UnitStats = UnitStats {
        sign: 1,
        threshold: f64::NAN,
        global_rate: 0.0,
        local_rate: 0.0,
        invariance: 0.0,
        degenerate: true,
    };
}

/// Signs, thresholds and rates for every `(group, unit)`. Groups are the
/// classes in class-adaptive mode and a single global group otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitCalibration {
    pub mode: FiringMode,
    /// Target firing rate of each group.
    pub target_rates: Vec<f64>,
    /// `stats[group][unit]`.
    pub stats: Vec<Vec<UnitStats>>,
}

impl UnitCalibration {
    pub fn n_units(&self) -> usize {
        self.stats.first().map_or(0, Vec::len)
    }

    /// `I_y(i)` as a `groups x units` table.
    pub fn invariance_table(&self) -> Vec<Vec<f64>> {
        self.stats
            .iter()
            .map(|row| row.iter().map(|s| s.invariance).collect())
            .collect()
    }
}

fn calibrate_unit(values: &[f64], m: usize, trajectories: &[&[usize]]) -> Result<UnitStats> {
    let n = values.len();
    let mut best: Option<UnitStats> = None;
    for sign in [1i8, -1] {
        let signed: Vec<f64> = values.iter().map(|&v| sign as f64 * v).collect();
        let stats = match quantile_threshold(&signed, m) {
            None => UnitStats { sign, ..UnitStats::DEGENERATE },
            Some(t) => {
                let fires: Vec<bool> = signed.iter().map(|&v| v > t).collect();
                let count = fires.iter().filter(|&&f| f).count();
                if count == 0 {
                    UnitStats { sign, threshold: t, ..UnitStats::DEGENERATE }
                } else {
                    let global_rate = count as f64 / n as f64;
                    let local_rate = local_firing_rate(&fires, trajectories)?;
                    UnitStats {
                        sign,
                        threshold: t,
                        global_rate,
                        local_rate,
                        invariance: local_rate / global_rate,
                        degenerate: false,
                    }
                }
            }
        };
        // ties keep the positive sign
        if best.is_none_or(|b| stats.invariance > b.invariance) {
            best = Some(stats);
        }
    }
    Ok(best.expect("two signs tried"))
}

/// Calibrates every unit and measures its local firing rate.
pub fn calibrate(data: &FiringData, mode: FiringMode) -> Result<UnitCalibration> {
    let n = data.n_samples();
    let columns: Vec<Vec<f64>> = data.activations.columns().into_iter().map(|c| c.to_vec()).collect();
    let groups: Vec<(f64, Vec<&[usize]>)> = match mode {
        FiringMode::ClassAdaptive => {
            let counts = data.class_counts();
            (0..data.n_classes)
                .map(|y| {
                    let trajs: Vec<&[usize]> = data
                        .trajectories
                        .iter()
                        .filter(|(c, _)| *c == y)
                        .map(|(_, s)| s.as_slice())
                        .collect();
                    (counts[y] as f64 / n as f64, trajs)
                })
                .collect()
        }
        FiringMode::FixedRate { rate } => {
            let trajs = data.trajectories.iter().map(|(_, s)| s.as_slice()).collect();
            vec![(rate, trajs)]
        }
    };
    let mut stats = Vec::with_capacity(groups.len());
    for (y, (rate, trajs)) in groups.iter().enumerate() {
        if trajs.is_empty() {
            return Err(LabError::Empty(format!("no trajectories for class {y}")));
        }
        let m = (rate * n as f64).round() as usize;
        stats.push(
            columns
                .iter()
                .map(|col| calibrate_unit(col, m, trajs))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(UnitCalibration {
        mode,
        target_rates: groups.iter().map(|g| g.0).collect(),
        stats,
    })
}

/// Top-K result of one calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKScore {
    pub k: usize,
    /// `100 * I / I_max`.
    pub percentage: f64,
    /// Mean top-K invariance per group.
    pub group_scores: Vec<f64>,
    /// Mean top-K of `1 / G` per group.
    pub group_max: Vec<f64>,
    /// Selected units per group, best first.
    pub selected: Vec<Vec<usize>>,
}

/// Indices of the `k` largest values, ties broken by lower index.
fn top_k_indices(values: &[(usize, f64)], k: usize) -> Vec<usize> {
    let mut order = values.to_vec();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    order.into_iter().take(k).map(|(i, _)| i).collect()
}

/// Top-K invariance score as a percentage of its maximum.
///
/// Only non-degenerate units compete. A group without any contributes 0
/// and its nominal maximum `1 / target rate`; a group with fewer than `k`
/// is an error.
pub fn top_k_ris(calibration: &UnitCalibration, k: usize) -> Result<TopKScore> {
    let n_units = calibration.n_units();
    if k == 0 || k > n_units {
        return Err(LabError::TopKTooLarge {
            k,
            available: n_units,
            class: None,
        });
    }
    let multi_group = calibration.stats.len() > 1;
    let mut score = TopKScore {
        k,
        percentage: 0.0,
        group_scores: Vec::new(),
        group_max: Vec::new(),
        selected: Vec::new(),
    };
    for (g, row) in calibration.stats.iter().enumerate() {
        let live: Vec<(usize, &UnitStats)> = row.iter().enumerate().filter(|(_, s)| !s.degenerate).collect();
        if live.is_empty() {
            log::warn!("every unit is degenerate for group {g}; it contributes 0");
            score.group_scores.push(0.0);
            score.group_max.push(1.0 / calibration.target_rates[g]);
            score.selected.push(Vec::new());
            continue;
        }
        if live.len() < k {
            return Err(LabError::TopKTooLarge {
                k,
                available: live.len(),
                class: multi_group.then_some(g),
            });
        }
        let inv: Vec<(usize, f64)> = live.iter().map(|(i, s)| (*i, s.invariance)).collect();
        let chosen = top_k_indices(&inv, k);
        let mean_inv = chosen.iter().map(|&i| row[i].invariance).sum::<f64>() / k as f64;
        let caps: Vec<(usize, f64)> = live.iter().map(|(i, s)| (*i, 1.0 / s.global_rate)).collect();
        let cap_units = top_k_indices(&caps, k);
        let mean_cap = cap_units.iter().map(|&i| 1.0 / row[i].global_rate).sum::<f64>() / k as f64;
        score.group_scores.push(mean_inv);
        score.group_max.push(mean_cap);
        score.selected.push(chosen);
    }
    let groups = score.group_scores.len() as f64;
    let total: f64 = score.group_scores.iter().sum::<f64>() / groups;
    let max: f64 = score.group_max.iter().sum::<f64>() / groups;
    score.percentage = (100.0 * total / max).clamp(0.0, 100.0);
    Ok(score)
}
