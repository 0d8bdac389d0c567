//! The pinned reference configuration: dataset seed, training settings and
//! evaluation seed used by the CLI defaults, the examples and the acceptance
//! suite.

use crate::diffusion::DiffusionModel;
use crate::env::SceneSpec;
use crate::error::Result;
use crate::guided_policy::{train_stage2, PolicyConfig};
use crate::path_diffuser::{train_stage1, Stage1Config};
use crate::qd::{generate_all_targets, Dataset, QdConfig};

pub const DATASET_SEED: u64 = 7;
pub const DIFFUSER_SEED: u64 = 1;
pub const POLICY_SEED: u64 = 2;
pub const EVAL_SEED: u64 = 11;

pub fn qd_config(spec: &SceneSpec) -> QdConfig {
    QdConfig::for_scene(spec, DATASET_SEED)
}

pub fn stage1_config(seed: u64) -> Stage1Config {
    let mut c = Stage1Config::default();
    c.train.seed = seed;
    c
}

pub fn policy_config(seed: u64) -> PolicyConfig {
    let mut c = PolicyConfig::default();
    c.train.seed = seed;
    c
}

/// A dataset and both trained stages.
pub struct Pipeline {
    pub spec: SceneSpec,
    pub dataset: Dataset,
    pub diffuser: DiffusionModel,
    pub policy: DiffusionModel,
}

impl Pipeline {
    /// Generates the dataset and trains both stages with the reference
    /// settings. Takes a few minutes in 2D.
    pub fn train(spec: &SceneSpec) -> Result<Self> {
        let dataset = generate_all_targets(spec, &qd_config(spec))?;
        Pipeline::train_on(dataset, &stage1_config(DIFFUSER_SEED), &policy_config(POLICY_SEED))
    }

    pub fn train_on(dataset: Dataset, stage1: &Stage1Config, policy: &PolicyConfig) -> Result<Self> {
        log::info!("training path diffuser ({} steps)", stage1.train.steps);
        let diffuser = train_stage1(&dataset, stage1)?;
        log::info!("training policy ({} steps)", policy.train.steps);
        let policy = train_stage2(&dataset, policy)?;
        Ok(Pipeline {
            spec: dataset.spec.clone(),
            dataset,
            diffuser,
            policy,
        })
    }
}
