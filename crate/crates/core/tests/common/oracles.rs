//! Brute-force oracles written without reference to the library code.

use std::collections::VecDeque;

use invariance_lab::image::{Image, ImageDims};
use invariance_lab::invariance::FeatureExtractor;
use invariance_lab::world::{InstanceLatent, ObjectSpec, OccluderSide, Sample, Trajectory, Transformation};
use invariance_lab::Result;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Activations over trajectories laid out back to back.
#[derive(Debug, Clone)]
pub struct RisInstance {
    pub activations: Array2<f64>,
    /// `(class, length)` of each trajectory, in sample order.
    pub trajectories: Vec<(usize, usize)>,
    pub n_classes: usize,
}

impl RisInstance {
    /// At most 4 classes, 8 units and 30 samples. Half of the units take a
    /// handful of integer values so that ties and degenerate units are common.
    pub fn random(r: &mut impl Rng) -> Self {
        let n_classes = r.random_range(1..=4);
        let n_units = r.random_range(1..=8);
        let mut trajectories: Vec<(usize, usize)> = (0..n_classes).map(|y| (y, r.random_range(1..=4))).collect();
        let budget = r.random_range(2..=30usize.min(4 * n_classes + 14));
        while trajectories.iter().map(|t| t.1).sum::<usize>() < budget {
            let len = r.random_range(1..=4);
            if trajectories.iter().map(|t| t.1).sum::<usize>() + len > 30 {
                break;
            }
            trajectories.push((r.random_range(0..n_classes), len));
        }
        if trajectories.iter().map(|t| t.1).sum::<usize>() < 2 {
            trajectories[0].1 = 2;
        }
        trajectories.shuffle(r);
        let n: usize = trajectories.iter().map(|t| t.1).sum();
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut activations = Array2::zeros((n, n_units));
        for mut col in activations.columns_mut() {
            match r.random_range(0..4) {
                0 => col.fill(r.random_range(-1.0..1.0)),
                1 => col.mapv_inplace(|_| r.random_range(-1..3) as f64),
                _ => col.mapv_inplace(|_| normal.sample(r)),
            }
        }
        Self {
            activations,
            trajectories,
            n_classes,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.activations.nrows()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.trajectories
            .iter()
            .flat_map(|&(y, len)| std::iter::repeat_n(y, len))
            .collect()
    }

    /// Sample indices of each trajectory with its class.
    pub fn index(&self) -> Vec<(usize, Vec<usize>)> {
        let mut start = 0;
        self.trajectories
            .iter()
            .map(|&(y, len)| {
                start += len;
                (y, (start - len..start).collect())
            })
            .collect()
    }

    /// Placeholder trajectories whose samples carry the right labels.
    pub fn as_trajectories(&self) -> Vec<Trajectory> {
        self.trajectories
            .iter()
            .map(|&(y, len)| Trajectory {
                transformation: Transformation::Viewpoint,
                category: y,
                samples: (0..len).map(|_| dummy_sample(y)).collect(),
            })
            .collect()
    }
}

pub fn dummy_sample(category: usize) -> Sample {
    let spec = ObjectSpec {
        category,
        instance_id: 0,
        instance: InstanceLatent {
            size: 0.7,
            aspect: 1.0,
            marking_freq: 2.0,
            marking_phase: 0.0,
            albedo: 0.7,
        },
        pose: 0.0,
        occlusion: 0.0,
        occluder_side: OccluderSide::Left,
        illum_dir: 0.0,
        illum_color: [1.0; 3],
    };
    Sample::new(spec, Image::filled(ImageDims::new(4, 4, 1), 0.0))
}

/// Returns a fixed matrix for any request of the right size.
pub struct FixedActivations(pub Array2<f64>);

impl FeatureExtractor for FixedActivations {
    fn name(&self) -> String {
        "fixed".into()
    }

    fn extract(&self, samples: &[&Sample]) -> Result<Array2<f64>> {
        assert_eq!(samples.len(), self.0.nrows());
        Ok(self.0.clone())
    }
}

/// `copies` indicator units per class: unit `u` is 1 on class `u / copies`.
pub struct OneHotClasses {
    pub n_classes: usize,
    pub copies: usize,
}

impl FeatureExtractor for OneHotClasses {
    fn name(&self) -> String {
        "one-hot".into()
    }

    fn extract(&self, samples: &[&Sample]) -> Result<Array2<f64>> {
        let units = self.n_classes * self.copies;
        Ok(Array2::from_shape_fn((samples.len(), units), |(s, u)| {
            if u / self.copies == samples[s].category {
                1.0
            } else {
                0.0
            }
        }))
    }
}

/// One unit's firing statistics for one group under one sign.
#[derive(Debug, Clone, Copy)]
struct Firing {
    live: bool,
    global: f64,
    invariance: f64,
}

fn firing(values: &[f64], sign: f64, m: usize, trajectories: &[&Vec<usize>]) -> Firing {
    let dead = Firing {
        live: false,
        global: 0.0,
        invariance: 0.0,
    };
    let n = values.len();
    if m == 0 || m >= n {
        return dead;
    }
    let signed: Vec<f64> = values.iter().map(|v| sign * v).collect();
    let mut sorted = signed.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let (a, b) = (sorted[m - 1], sorted[m]);
    // distinct order statistics: exactly the top m fire; tied: only values
    // strictly above the tie fire
    let fires: Vec<bool> = signed.iter().map(|&v| if a > b { v >= a } else { v > a }).collect();
    let count = fires.iter().filter(|&&f| f).count();
    if count == 0 {
        return dead;
    }
    let global = count as f64 / n as f64;
    let mut local = 0.0;
    for t in trajectories {
        local += t.iter().filter(|&&s| fires[s]).count() as f64 / t.len() as f64;
    }
    local /= trajectories.len() as f64;
    Firing {
        live: true,
        global,
        invariance: local / global,
    }
}

fn mean_of_largest(mut values: Vec<f64>, k: usize) -> f64 {
    values.sort_by(|a, b| b.partial_cmp(a).unwrap());
    values[..k].iter().sum::<f64>() / k as f64
}

/// Top-K percentage by exhaustive recomputation, `None` when the library
/// must reject `k`. `fixed_rate` selects the single-threshold mode.
pub fn ris_oracle(inst: &RisInstance, fixed_rate: Option<f64>, k: usize) -> Option<f64> {
    let n = inst.n_samples();
    let n_units = inst.activations.ncols();
    if k == 0 || k > n_units {
        return None;
    }
    let labels = inst.labels();
    let index = inst.index();
    let groups: Vec<(f64, Vec<&Vec<usize>>)> = match fixed_rate {
        Some(rate) => vec![(rate, index.iter().map(|t| &t.1).collect())],
        None => (0..inst.n_classes)
            .map(|y| {
                let p = labels.iter().filter(|&&l| l == y).count() as f64 / n as f64;
                (p, index.iter().filter(|t| t.0 == y).map(|t| &t.1).collect())
            })
            .collect(),
    };
    let (mut score_sum, mut max_sum) = (0.0, 0.0);
    for (rate, trajs) in &groups {
        let m = (rate * n as f64).round() as usize;
        let chosen: Vec<Firing> = inst
            .activations
            .columns()
            .into_iter()
            .map(|col| {
                let v = col.to_vec();
                let pos = firing(&v, 1.0, m, trajs);
                let neg = firing(&v, -1.0, m, trajs);
                if neg.invariance > pos.invariance {
                    neg
                } else {
                    pos
                }
            })
            .collect();
        let live: Vec<&Firing> = chosen.iter().filter(|f| f.live).collect();
        if live.is_empty() {
            max_sum += 1.0 / rate;
            continue;
        }
        if live.len() < k {
            return None;
        }
        score_sum += mean_of_largest(live.iter().map(|f| f.invariance).collect(), k);
        max_sum += mean_of_largest(live.iter().map(|f| 1.0 / f.global).collect(), k);
    }
    Some((100.0 * score_sum / max_sum).clamp(0.0, 100.0))
}

/// Sum over every region path from `start` to `end` of the product of its
/// cosines, divided by the number of steps.
pub fn path_sum_score(matrices: &[Array2<f64>], start: usize, end: usize) -> f64 {
    fn walk(matrices: &[Array2<f64>], at: usize, end: usize) -> f64 {
        match matrices {
            [] => 0.0,
            [last] => last[[at, end]],
            [first, rest @ ..] => (0..first.ncols()).map(|next| first[[at, next]] * walk(rest, next, end)).sum(),
        }
    }
    walk(matrices, start, end) / matrices.len() as f64
}

/// Replays pushes on a plain list, dropping from the front past capacity.
pub fn queue_replay(capacity: usize, batches: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let mut list = VecDeque::new();
    for batch in batches {
        for row in batch {
            list.push_back(row.clone());
            while list.len() > capacity {
                list.pop_front();
            }
        }
    }
    list.into_iter().collect()
}

/// `p_q + m^n (p_k - p_q)`.
pub fn momentum_closed_form(key: &[f64], query: &[f64], m: f64, n: i32) -> Vec<f64> {
    key.iter().zip(query).map(|(k, q)| q + m.powi(n) * (k - q)).collect()
}

/// Average precision from each positive's rank, counted directly: an item
/// precedes another when its score is higher, or equal with a lower index.
pub fn ap_oracle(scores: &[f64], positive: &[bool]) -> f64 {
    let before = |i: usize, j: usize| scores[i] > scores[j] || (scores[i] == scores[j] && i < j);
    let n = scores.len();
    let mut total = 0.0;
    let mut n_pos = 0;
    for j in (0..n).filter(|&j| positive[j]) {
        n_pos += 1;
        let rank = 1 + (0..n).filter(|&i| before(i, j)).count();
        let pos_at_or_above = 1 + (0..n).filter(|&i| positive[i] && before(i, j)).count();
        total += pos_at_or_above as f64 / rank as f64;
    }
    total / n_pos as f64
}

/// Every `(a, a + gap)` with `a` a multiple of `gap` inside each video.
pub fn pairs_oracle(lengths: &[usize], gap: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for (v, &len) in lengths.iter().enumerate() {
        for a in 0..len {
            for b in a + 1..len {
                if b - a == gap && a % gap == 0 {
                    out.push((v, a, b));
                }
            }
        }
    }
    out
}
