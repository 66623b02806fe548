#![allow(dead_code)]

use std::path::Path;

use hrcae::config::{Experiment, Paths, RunConfig};
use hrcae_core::nets::Family;
use hrcae_core::synth::GeneratorConfig;
use hrcae_core::train::TrainSchedule;

/// A few seconds of training: narrow two-layer nets, a handful of steps.
pub fn quick_experiment(family: Family) -> Experiment {
    let mut e = Experiment::for_family(family, 2);
    e.model.width_divisor = 8;
    e.model.latent_dim = Some(16);
    e.model.cnn_fc_hidden = 8;
    e.pretrain = TrainSchedule { max_epochs: 2, max_steps_per_epoch: Some(2), batch_size: 8, ..TrainSchedule::default() };
    e.finetune = TrainSchedule { max_epochs: 1, max_steps_per_epoch: Some(2), batch_size: 8, ..TrainSchedule::default() };
    e
}

pub fn quick_config(root: &Path) -> RunConfig {
    RunConfig {
        paths: Paths { data_dir: root.join("data"), cache_dir: root.join("cache"), output_dir: root.join("out") },
        generator: GeneratorConfig { sample_interval_secs: 300, ..GeneratorConfig::tiny() },
        experiment: quick_experiment(Family::ContrastiveCae),
        ..RunConfig::default()
    }
}
