use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::probe::{probe_encoder, MetricKind, ProbeConfig, ProbeResult, ProbeSplit};
use crate::contrastive::{train, Regime, TrainConfig, TrainData};
use crate::encoder::FeatureLayer;
use crate::error::{LabError, Result};
use crate::image::Image;
use crate::world::{make_bias_datasets, BiasConfig, BiasDatasets};

pub const SCENE_TRAINED: &str = "scene-trained";
pub const BOX_TRAINED: &str = "box-trained";
pub const SCENE_EVAL: &str = "scenes";
pub const BOX_EVAL: &str = "boxes";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiasExperimentConfig {
    /// Generator of the training scenes and boxes.
    pub data: BiasConfig,
    /// Scenes in the held-out evaluation set.
    pub eval_scenes: usize,
    pub eval_seed: u64,
    pub scene_train: TrainConfig,
    pub box_train: TrainConfig,
    pub probe: ProbeConfig,
    /// Share of the evaluation set used to fit the probe.
    pub probe_train_fraction: f64,
    pub layer: FeatureLayer,
    pub seeds: Vec<u64>,
}

impl Default for BiasExperimentConfig {
    fn default() -> Self {
        Self {
            data: BiasConfig {
                n_scenes: 1000,
                ..BiasConfig::default()
            },
            eval_scenes: 400,
            eval_seed: 1_000_003,
            scene_train: TrainConfig::default(),
            box_train: TrainConfig::default(),
            probe: ProbeConfig::default(),
            probe_train_fraction: 0.5,
            layer: FeatureLayer::PreNorm,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

impl BiasExperimentConfig {
    /// Both arms must run the baseline regime with the same budget.
    pub fn check_budget(&self) -> Result<()> {
        for (name, c) in [(SCENE_TRAINED, &self.scene_train), (BOX_TRAINED, &self.box_train)] {
            if c.regime != Regime::Baseline {
                return Err(LabError::InvalidConfig(format!(
                    "{name} arm must use the baseline regime, got {}",
                    c.regime
                )));
            }
        }
        let (a, b) = (&self.scene_train, &self.box_train);
        let budget = |c: &TrainConfig| (c.steps, c.batch_size, c.queue_size);
        if budget(a) != budget(b) {
            return Err(LabError::UnmatchedBudget(format!(
                "(steps, batch, queue) {:?} vs {:?}",
                budget(a),
                budget(b)
            )));
        }
        Ok(())
    }
}

/// Probe results of one seed: both encoders on both evaluation sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub seed: u64,
    pub results: Vec<ProbeResult>,
}

impl BiasRow {
    pub fn get(&self, trained: &str, eval: &str) -> Option<f64> {
        self.results
            .iter()
            .find(|r| r.checkpoint == trained && r.task == eval)
            .map(|r| r.value)
    }

    /// Box-trained minus scene-trained accuracy on `eval`.
    pub fn gap(&self, eval: &str) -> Option<f64> {
        Some(self.get(BOX_TRAINED, eval)? - self.get(SCENE_TRAINED, eval)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasVerdict {
    /// Seeds where the box-trained encoder wins on cropped boxes.
    pub box_wins: usize,
    pub seeds: usize,
    pub mean_gap_boxes: f64,
    pub mean_gap_scenes: f64,
    /// Box training wins on boxes in a majority of seeds, and its advantage
    /// is smaller (or reversed) on scenes.
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasTable {
    pub rows: Vec<BiasRow>,
    pub verdict: BiasVerdict,
}

/// Trains a scene-trained and a box-trained encoder per seed and probes both
/// on scene-level and cropped-box classification of `eval`.
pub fn bias_experiment(
    training: &BiasDatasets,
    eval: &BiasDatasets,
    n_classes: usize,
    config: &BiasExperimentConfig,
    seeds: &[u64],
) -> Result<BiasTable> {
    config.check_budget()?;
    if seeds.is_empty() {
        return Err(LabError::Empty("bias experiment seeds".into()));
    }
    let scene_images: Vec<Image> = training.scenes.iter().map(|s| s.image.clone()).collect();
    let box_images: Vec<Image> = training.boxes.iter().map(|s| s.image.clone()).collect();
    let splits = [
        (SCENE_EVAL, ProbeSplit::scenes(eval, config.probe_train_fraction)?),
        (BOX_EVAL, ProbeSplit::boxes(eval, config.probe_train_fraction)?),
    ];

    let mut rows = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut results = Vec::with_capacity(4);
        for (name, images, base) in [
            (SCENE_TRAINED, &scene_images, &config.scene_train),
            (BOX_TRAINED, &box_images, &config.box_train),
        ] {
            let cfg = TrainConfig {
                seed,
                ..base.clone()
            };
            let outcome = train(TrainData::Images(images), &cfg)?;
            for (task, split) in &splits {
                let (value, train_size, test_size) = probe_encoder(
                    &outcome.checkpoint.params,
                    split,
                    n_classes,
                    config.layer,
                    &config.probe,
                    seed,
                )?;
                log::info!("seed {seed}: {name} on {task}: top-1 {value:.4}");
                results.push(ProbeResult {
                    task: task.to_string(),
                    metric: MetricKind::Top1,
                    value,
                    train_size,
                    test_size,
                    seed,
                    checkpoint: name.to_string(),
                });
            }
        }
        rows.push(BiasRow { seed, results });
    }
    let verdict = verdict(&rows);
    Ok(BiasTable { rows, verdict })
}

fn verdict(rows: &[BiasRow]) -> BiasVerdict {
    let gaps = |eval| rows.iter().filter_map(|r| r.gap(eval)).collect::<Vec<f64>>();
    let boxes = gaps(BOX_EVAL);
    let scenes = gaps(SCENE_EVAL);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let box_wins = boxes.iter().filter(|&&g| g > 0.0).count();
    let mean_gap_boxes = mean(&boxes);
    let mean_gap_scenes = mean(&scenes);
    BiasVerdict {
        box_wins,
        seeds: rows.len(),
        mean_gap_boxes,
        mean_gap_scenes,
        holds: 2 * box_wins > rows.len() && mean_gap_scenes < mean_gap_boxes,
    }
}

/// Generates the training and evaluation sets from `config` and runs the
/// experiment over `config.seeds`.
pub fn run_bias_experiment(config: &BiasExperimentConfig) -> Result<BiasTable> {
    let training = make_bias_datasets(&config.data)?;
    let eval = make_bias_datasets(&BiasConfig {
        n_scenes: config.eval_scenes,
        seed: config.eval_seed,
        ..config.data.clone()
    })?;
    bias_experiment(&training, &eval, config.data.n_classes, config, &config.seeds)
}

pub fn render_bias_markdown(table: &BiasTable) -> String {
    let mut out = String::from("# Dataset bias\n\n| Seed | Trained on | Scenes top-1 | Boxes top-1 |\n|---:|---|---:|---:|\n");
    for row in &table.rows {
        for trained in [SCENE_TRAINED, BOX_TRAINED] {
            let cell = |eval| row.get(trained, eval).map_or("-".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(out, "| {} | {trained} | {} | {} |", row.seed, cell(SCENE_EVAL), cell(BOX_EVAL));
        }
    }
    let v = &table.verdict;
    let _ = writeln!(
        out,
        "\nBox-trained wins on boxes in {}/{} seeds; mean gap {:+.4} on boxes, {:+.4} on scenes. Verdict: {}.",
        v.box_wins,
        v.seeds,
        v.mean_gap_boxes,
        v.mean_gap_scenes,
        if v.holds { "holds" } else { "does not hold" }
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> BiasExperimentConfig {
        let mut cfg = BiasExperimentConfig::default();
        cfg.data.n_scenes = 24;
        cfg.eval_scenes = 24;
        for t in [&mut cfg.scene_train, &mut cfg.box_train] {
            t.steps = 2;
            t.batch_size = 4;
            t.queue_size = 8;
            t.encoder.hidden = vec![8];
            t.encoder.embedding_dim = 4;
        }
        cfg.probe.steps = 5;
        cfg.seeds = vec![0, 1];
        cfg
    }

    #[test]
    fn unmatched_budget_is_rejected() {
        let mut cfg = tiny();
        cfg.box_train.steps = 3;
        assert!(matches!(run_bias_experiment(&cfg), Err(LabError::UnmatchedBudget(_))));
        let mut cfg = tiny();
        cfg.scene_train.regime = Regime::FrameTemporal;
        assert!(matches!(run_bias_experiment(&cfg), Err(LabError::InvalidConfig(_))));
    }

    #[test]
    fn table_has_four_results_per_seed() {
        let table = run_bias_experiment(&tiny()).unwrap();
        assert_eq!(table.rows.len(), 2);
        for row in &table.rows {
            assert_eq!(row.results.len(), 4);
            for t in [SCENE_TRAINED, BOX_TRAINED] {
                for e in [SCENE_EVAL, BOX_EVAL] {
                    let v = row.get(t, e).unwrap();
                    assert!((0.0..=1.0).contains(&v));
                }
            }
        }
        assert!(render_bias_markdown(&table).contains("box-trained"));
    }

    #[test]
    fn identical_arms_are_symmetric() {
        let cfg = tiny();
        let data = make_bias_datasets(&cfg.data).unwrap();
        let same = BiasDatasets {
            scenes: data.scenes.clone(),
            boxes: data
                .scenes
                .iter()
                .map(|s| crate::world::Sample::new(s.objects[0].spec, s.image.clone()))
                .collect(),
        };
        let table = bias_experiment(&same, &data, 4, &cfg, &cfg.seeds).unwrap();
        for row in &table.rows {
            assert_eq!(row.gap(SCENE_EVAL), Some(0.0));
            assert_eq!(row.gap(BOX_EVAL), Some(0.0));
        }
    }
}
