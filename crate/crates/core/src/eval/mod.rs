//! Downstream evaluation and experiment orchestration.

mod bias;
mod probe;

pub use probe::{
    average_precision, fit_probe, linear_probe, mean_ap, probe_encoder, top1, LinearProbe,
    MetricKind, ProbeConfig, ProbeResult, ProbeScores, ProbeSplit,
};
pub use bias::{
    bias_experiment, render_bias_markdown, run_bias_experiment, BiasExperimentConfig, BiasRow,
    BiasTable, BiasVerdict, BOX_EVAL, BOX_TRAINED, SCENE_EVAL, SCENE_TRAINED,
};
