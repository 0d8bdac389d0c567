#![allow(dead_code)]

use std::sync::OnceLock;

use legimod::diffusion::TrainConfig;
use legimod::env::SceneSpec;
use legimod::guided_policy::PolicyConfig;
use legimod::path_diffuser::Stage1Config;
use legimod::qd::{generate_all_targets, Dataset, QdConfig};
use legimod::reference::Pipeline;

/// Small networks and short runs; enough to exercise the plumbing.
pub fn tiny_train(steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 16,
        seed,
        hidden: 24,
        blocks: 1,
        time_embed: 8,
        cond_embed: 16,
        ..TrainConfig::default()
    }
}

pub fn small_dataset(spec: &SceneSpec) -> Dataset {
    let mut config = QdConfig::for_scene(spec, 3);
    config.cells = vec![5; spec.dim()];
    config.budget = 600;
    generate_all_targets(spec, &config).unwrap()
}

pub fn tiny_stage1(seed: u64) -> Stage1Config {
    Stage1Config {
        train: tiny_train(150, seed),
        ..Stage1Config::default()
    }
}

pub fn tiny_policy(seed: u64) -> PolicyConfig {
    PolicyConfig {
        train: tiny_train(150, seed),
        stride: 8,
        augment_copies: 0,
        ..PolicyConfig::default()
    }
}

/// A briefly trained 2D pipeline shared by the tests of one binary.
pub fn tiny_pipeline() -> &'static Pipeline {
    static P: OnceLock<Pipeline> = OnceLock::new();
    P.get_or_init(|| {
        let spec = SceneSpec::default_2d();
        Pipeline::train_on(small_dataset(&spec), &tiny_stage1(1), &tiny_policy(2)).unwrap()
    })
}
